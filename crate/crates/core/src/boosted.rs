//! Gradient boosting over oblivious trees with ordered target statistics.
//!
//! Categorical columns are replaced by target statistics computed along
//! random permutations of the training rows: a row's encoding only uses the
//! labels of rows that precede it in the permutation. Several permutations
//! are averaged for the training matrix; inference uses statistics over the
//! full training history. Boosting itself is plain second-order gradient
//! boosting on the encoded matrix, one symmetric tree per iteration.
//!
//! This is a simplification of full ordered boosting, which additionally
//! keeps one model per permutation to compute unbiased gradients.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoostLoss {
    /// Logistic for two classes, softmax otherwise.
    #[default]
    Auto,
    Logistic,
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub depth: usize,
    pub loss: BoostLoss,
    pub l2_leaf_reg: f64,
    pub permutation_count: usize,
    /// Maximum number of split borders per numeric column.
    pub border_count: usize,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            iterations: 100,
            learning_rate: 0.1,
            depth: 6,
            loss: BoostLoss::Auto,
            l2_leaf_reg: 3.0,
            permutation_count: 4,
            border_count: 254,
            seed: 0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.depth < 1 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        if self.depth > 16 {
            return Err(Error::Config("depth above 16 is not supported".into()));
        }
        if !(self.l2_leaf_reg >= 0.0) {
            return Err(Error::Config("l2_leaf_reg must be >= 0".into()));
        }
        if self.permutation_count < 1 {
            return Err(Error::Config("permutation_count must be >= 1".into()));
        }
        if self.border_count < 1 {
            return Err(Error::Config("border_count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Ordered target statistic of a categorical column along `permutation`.
///
/// The row at permutation position `t` with category `c` is encoded as
/// `(positives among earlier rows of c + prior) / (earlier rows of c + 1)`.
/// `targets` holds the 0/1 indicator being encoded, indexed by row.
pub fn ordered_target_stat(
    column: &[f64],
    targets: &[f64],
    permutation: &[usize],
    prior: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; column.len()];
    let mut history: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for &i in permutation {
        let key = category_key(column[i]);
        let (pos, count) = history.get(&key).copied().unwrap_or((0.0, 0.0));
        out[i] = (pos + prior) / (count + 1.0);
        let entry = history.entry(key).or_insert((0.0, 0.0));
        entry.0 += targets[i];
        entry.1 += 1.0;
    }
    out
}

fn category_key(v: f64) -> u64 {
    // +0.0 and -0.0 are the same category
    if v == 0.0 {
        0
    } else {
        v.to_bits()
    }
}

/// Full-history target statistics for one categorical feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryTable {
    pub feature: usize,
    /// One prior per encoded target dimension.
    pub priors: Vec<f64>,
    /// `(category value, positives per dimension, count)`, sorted by value bits.
    pub entries: Vec<(f64, Vec<f64>, f64)>,
}

impl CategoryTable {
    fn encode(&self, value: f64, dim: usize) -> f64 {
        let key = category_key(value);
        match self
            .entries
            .binary_search_by_key(&key, |(v, _, _)| category_key(*v))
        {
            Ok(pos) => {
                let (_, positives, count) = &self.entries[pos];
                (positives[dim] + self.priors[dim]) / (count + 1.0)
            }
            Err(_) => self.priors[dim],
        }
    }
}

/// Maps raw feature rows to the encoded matrix the trees split on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub n_features: usize,
    /// Original feature of every encoded column.
    pub column_source: Vec<usize>,
    /// For encoded columns backed by a category table: (table index, dimension).
    pub column_stat: Vec<Option<(usize, usize)>>,
    pub tables: Vec<CategoryTable>,
}

impl FeatureEncoder {
    pub fn n_columns(&self) -> usize {
        self.column_source.len()
    }

    pub fn encode(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                got: rows.ncols(),
            });
        }
        let mut out = Array2::zeros((rows.nrows(), self.n_columns()));
        for (c, (&src, stat)) in self.column_source.iter().zip(&self.column_stat).enumerate() {
            for i in 0..rows.nrows() {
                let v = rows[[i, src]];
                out[[i, c]] = match stat {
                    None => v,
                    Some((t, dim)) => self.tables[*t].encode(v, *dim),
                };
            }
        }
        Ok(out)
    }
}

/// One symmetric tree: level `l` sends a row right when
/// `x[column] > threshold`, and the leaf index is the bit string of those
/// decisions, first level most significant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObliviousTree {
    pub levels: Vec<Level>,
    /// `2^depth` leaves, each holding one value per output.
    pub leaf_values: Vec<Vec<f64>>,
    /// Training rows that reached each leaf.
    pub leaf_covers: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Level {
    /// Column of the encoded matrix.
    pub column: usize,
    /// Original feature the column derives from.
    pub feature: usize,
    pub threshold: f64,
}

impl ObliviousTree {
    pub fn leaf_index(&self, encoded_row: &[f64]) -> usize {
        self.levels.iter().fold(0, |acc, l| {
            (acc << 1) | usize::from(encoded_row[l.column] > l.threshold)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub config: BoostConfig,
    pub n_classes: usize,
    /// Number of margin outputs: 1 for logistic, `n_classes` for softmax.
    pub n_outputs: usize,
    pub base_score: Vec<f64>,
    pub encoder: FeatureEncoder,
    pub stages: Vec<ObliviousTree>,
    /// Mean training log-loss before the first stage and after every stage.
    pub train_loss: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// In-place softmax of one row of margins.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn margins_to_proba(margin: &[f64], n_classes: usize) -> Vec<f64> {
    if margin.len() == 1 {
        let p = sigmoid(margin[0]);
        vec![1.0 - p, p]
    } else {
        debug_assert_eq!(margin.len(), n_classes);
        let mut v = margin.to_vec();
        softmax_in_place(&mut v);
        v
    }
}

/// Mean negative log-likelihood of the labels under the margins.
fn log_loss(margins: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let m = margins.row(i);
        if m.len() == 1 {
            // -log sigmoid(z) = softplus(-z)
            let z = if y == 1 { m[0] } else { -m[0] };
            total += softplus(-z);
        } else {
            let max = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + m.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - m[y];
        }
    }
    total / n as f64
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Split borders of one column: midpoints between distinct values when
/// there are few, otherwise midpoints at evenly spaced quantiles.
fn column_borders(values: &mut [f64], max_borders: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let mut distinct: Vec<f64> = Vec::new();
    for &v in values.iter() {
        if distinct.last() != Some(&v) {
            distinct.push(v);
        }
    }
    let midpoint = |a: f64, b: f64| {
        let m = 0.5 * (a + b);
        if m >= b {
            a
        } else {
            m
        }
    };
    if distinct.len() <= max_borders + 1 {
        return distinct.windows(2).map(|w| midpoint(w[0], w[1])).collect();
    }
    let n = values.len();
    let mut borders = Vec::with_capacity(max_borders);
    for q in 1..=max_borders {
        let pos = (q * n / (max_borders + 1)).clamp(1, n - 1);
        let (a, b) = (values[pos - 1], values[pos]);
        if a < b {
            let m = midpoint(a, b);
            if borders.last().is_none_or(|&last| m > last) {
                borders.push(m);
            }
        }
    }
    borders
}

fn bin_of(borders: &[f64], v: f64) -> usize {
    // number of borders strictly below v; x <= borders[k] iff bin <= k
    borders.partition_point(|&b| b < v)
}

struct Training<'a> {
    bins: &'a Array2<u16>,
    borders: &'a [Vec<f64>],
    column_source: &'a [usize],
    n_outputs: usize,
    l2: f64,
}

impl Training<'_> {
    /// Best border of column `c` for the current leaf assignment:
    /// `(score, border index)`, or `None` for a constant column.
    fn best_border(
        &self,
        c: usize,
        g: &Array2<f64>,
        h: &Array2<f64>,
        leaf_of: &[usize],
        n_leaves: usize,
    ) -> Option<(f64, usize)> {
        let nb = self.borders[c].len() + 1;
        if nb < 2 {
            return None;
        }
        let k = self.n_outputs;
        let stride = nb * k;
        let mut gs = vec![0.0; n_leaves * stride];
        let mut hs = vec![0.0; n_leaves * stride];
        let mut tot_g = vec![0.0; n_leaves * k];
        let mut tot_h = vec![0.0; n_leaves * k];
        for (i, &leaf) in leaf_of.iter().enumerate() {
            let slot = leaf * stride + self.bins[[i, c]] as usize * k;
            for o in 0..k {
                gs[slot + o] += g[[i, o]];
                hs[slot + o] += h[[i, o]];
                tot_g[leaf * k + o] += g[[i, o]];
                tot_h[leaf * k + o] += h[[i, o]];
            }
        }
        let mut left_g = vec![0.0; n_leaves * k];
        let mut left_h = vec![0.0; n_leaves * k];
        let mut best: Option<(f64, usize)> = None;
        for b in 0..nb - 1 {
            let mut score = 0.0;
            for leaf in 0..n_leaves {
                let slot = leaf * stride + b * k;
                for o in 0..k {
                    let lk = leaf * k + o;
                    left_g[lk] += gs[slot + o];
                    left_h[lk] += hs[slot + o];
                    let rg = tot_g[lk] - left_g[lk];
                    let rh = tot_h[lk] - left_h[lk];
                    score += left_g[lk] * left_g[lk] / (left_h[lk] + self.l2)
                        + rg * rg / (rh + self.l2);
                }
            }
            if best.is_none_or(|(s, _)| improves(score, s)) {
                best = Some((score, b));
            }
        }
        best
    }

    /// Grows one symmetric tree on gradients `g` and hessians `h` (n x K).
    /// Returns the levels and the leaf reached by every training row.
    fn grow(&self, g: &Array2<f64>, h: &Array2<f64>, depth: usize) -> (Vec<Level>, Vec<usize>) {
        let n = g.nrows();
        let mut leaf_of = vec![0usize; n];
        let mut levels = Vec::with_capacity(depth);
        for level in 0..depth {
            let n_leaves = 1 << level;
            let per_column: Vec<Option<(f64, usize)>> = (0..self.borders.len())
                .into_par_iter()
                .map(|c| self.best_border(c, g, h, &leaf_of, n_leaves))
                .collect();
            let mut best: Option<(f64, usize, usize)> = None;
            for (c, cand) in per_column.into_iter().enumerate() {
                if let Some((score, b)) = cand {
                    if best.is_none_or(|(s, _, _)| improves(score, s)) {
                        best = Some((score, c, b));
                    }
                }
            }
            let (lvl, split_bin) = match best {
                Some((_, c, b)) => (
                    Level {
                        column: c,
                        feature: self.column_source[c],
                        threshold: self.borders[c][b],
                    },
                    b,
                ),
                // every column is constant: a level that sends all rows left
                None => (
                    Level {
                        column: 0,
                        feature: self.column_source[0],
                        threshold: f64::MAX,
                    },
                    usize::MAX,
                ),
            };
            for (i, leaf) in leaf_of.iter_mut().enumerate() {
                let right = (self.bins[[i, lvl.column]] as usize) > split_bin;
                *leaf = (*leaf << 1) | usize::from(right);
            }
            levels.push(lvl);
        }
        (levels, leaf_of)
    }
}

/// Strict improvement with a relative tolerance, so that ties resolve to the
/// earlier (lower column, lower border) candidate.
fn improves(score: f64, best: f64) -> bool {
    score > best + 1e-12 * best.abs().max(1e-300)
}

fn build_encoder(
    train: &Dataset,
    n_outputs: usize,
    config: &BoostConfig,
) -> (FeatureEncoder, Array2<f64>) {
    let rows = train.rows();
    let labels = train.labels();
    let n = train.n_rows();
    let categorical = train.schema().categorical_indices();
    // binary: one indicator (label == 1); softmax: one per class
    let targets: Vec<Vec<f64>> = if n_outputs == 1 {
        vec![labels.iter().map(|&l| f64::from(u8::from(l == 1))).collect()]
    } else {
        (0..n_outputs)
            .map(|k| labels.iter().map(|&l| f64::from(u8::from(l == k))).collect())
            .collect()
    };
    let priors: Vec<f64> = targets
        .iter()
        .map(|t| t.iter().sum::<f64>() / n as f64)
        .collect();
    let permutations: Vec<Vec<usize>> = (0..config.permutation_count)
        .map(|p| {
            let mut rng = seed::rng(seed::derive(
                seed::derive_named(config.seed, "ts-permutation"),
                p as u64,
            ));
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            perm
        })
        .collect();

    let mut column_source = Vec::new();
    let mut column_stat = Vec::new();
    let mut tables = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for j in 0..train.n_features() {
        let col: Vec<f64> = rows.column(j).to_vec();
        if !categorical.contains(&j) {
            column_source.push(j);
            column_stat.push(None);
            columns.push(col);
            continue;
        }
        let mut history: BTreeMap<u64, (f64, Vec<f64>, f64)> = BTreeMap::new();
        for (i, &v) in col.iter().enumerate() {
            let e = history
                .entry(category_key(v))
                .or_insert_with(|| (v, vec![0.0; targets.len()], 0.0));
            for (d, t) in targets.iter().enumerate() {
                e.1[d] += t[i];
            }
            e.2 += 1.0;
        }
        let table_idx = tables.len();
        tables.push(CategoryTable {
            feature: j,
            priors: priors.clone(),
            entries: history.into_values().collect(),
        });
        for (d, t) in targets.iter().enumerate() {
            let mut acc = vec![0.0; n];
            for perm in &permutations {
                let enc = ordered_target_stat(&col, t, perm, priors[d]);
                acc.iter_mut().zip(enc).for_each(|(a, e)| *a += e);
            }
            let p = permutations.len() as f64;
            acc.iter_mut().for_each(|a| *a /= p);
            column_source.push(j);
            column_stat.push(Some((table_idx, d)));
            columns.push(acc);
        }
    }
    let encoded = Array2::from_shape_fn((n, columns.len()), |(i, c)| columns[c][i]);
    (
        FeatureEncoder {
            n_features: train.n_features(),
            column_source,
            column_stat,
            tables,
        },
        encoded,
    )
}

/// Fits the boosted ensemble; rejects training data with a single class.
pub fn fit_boosted(train: &Dataset, config: &BoostConfig) -> Result<BoostedModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("cannot fit boosting on zero rows".into()));
    }
    let n = train.n_rows();
    let k_classes = train.n_classes();
    let counts = train.class_counts();
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::SingleClass);
    }
    let n_outputs = match (config.loss, k_classes) {
        (BoostLoss::Auto, 2) | (BoostLoss::Logistic, 2) => 1,
        (BoostLoss::Logistic, _) => {
            return Err(Error::Config("logistic loss needs exactly two classes".into()))
        }
        (_, k) => k,
    };
    let labels = train.labels();

    let base_score: Vec<f64> = if n_outputs == 1 {
        let p = counts[1] as f64 / n as f64;
        vec![(p / (1.0 - p)).ln()]
    } else {
        counts
            .iter()
            .map(|&c| ((c as f64).max(1e-12) / n as f64).ln())
            .collect()
    };

    let (encoder, encoded) = build_encoder(train, n_outputs, config);
    let borders: Vec<Vec<f64>> = (0..encoded.ncols())
        .map(|c| column_borders(&mut encoded.column(c).to_vec(), config.border_count))
        .collect();
    let bins = Array2::from_shape_fn(encoded.raw_dim(), |(i, c)| {
        bin_of(&borders[c], encoded[[i, c]]) as u16
    });
    let training = Training {
        bins: &bins,
        borders: &borders,
        column_source: &encoder.column_source,
        n_outputs,
        l2: config.l2_leaf_reg,
    };

    let mut margins = Array2::from_shape_fn((n, n_outputs), |(_, o)| base_score[o]);
    let mut train_loss = vec![log_loss(&margins, labels)];
    let mut stages = Vec::with_capacity(config.iterations);
    let mut g = Array2::zeros((n, n_outputs));
    let mut h = Array2::zeros((n, n_outputs));
    for _ in 0..config.iterations {
        for i in 0..n {
            let p = margins_to_proba(margins.row(i).as_slice().unwrap(), k_classes);
            if n_outputs == 1 {
                let y = f64::from(u8::from(labels[i] == 1));
                g[[i, 0]] = p[1] - y;
                h[[i, 0]] = p[1] * (1.0 - p[1]);
            } else {
                for o in 0..n_outputs {
                    let y = f64::from(u8::from(labels[i] == o));
                    g[[i, o]] = p[o] - y;
                    h[[i, o]] = p[o] * (1.0 - p[o]);
                }
            }
        }
        let (levels, leaf_of) = training.grow(&g, &h, config.depth);
        let n_leaves = 1 << config.depth;
        let mut gl = vec![vec![0.0; n_outputs]; n_leaves];
        let mut hl = vec![vec![0.0; n_outputs]; n_leaves];
        let mut covers = vec![0.0; n_leaves];
        for (i, &leaf) in leaf_of.iter().enumerate() {
            covers[leaf] += 1.0;
            for o in 0..n_outputs {
                gl[leaf][o] += g[[i, o]];
                hl[leaf][o] += h[[i, o]];
            }
        }
        let leaf_values: Vec<Vec<f64>> = (0..n_leaves)
            .map(|l| {
                (0..n_outputs)
                    .map(|o| {
                        let denom = hl[l][o] + config.l2_leaf_reg;
                        if denom > 0.0 {
                            -config.learning_rate * gl[l][o] / denom
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        for (i, &leaf) in leaf_of.iter().enumerate() {
            for o in 0..n_outputs {
                margins[[i, o]] += leaf_values[leaf][o];
            }
        }
        train_loss.push(log_loss(&margins, labels));
        stages.push(ObliviousTree {
            levels,
            leaf_values,
            leaf_covers: covers,
        });
    }

    Ok(BoostedModel {
        config: config.clone(),
        n_classes: k_classes,
        n_outputs,
        base_score,
        encoder,
        stages,
        train_loss,
    })
}

impl BoostedModel {
    /// Raw margins (log-odds or per-class logits), one row per input row.
    pub fn predict_margin(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let encoded = self.encoder.encode(rows)?;
        Ok(self.margin_encoded(&encoded))
    }

    pub(crate) fn margin_encoded(&self, encoded: &Array2<f64>) -> Array2<f64> {
        let k = self.n_outputs;
        let flat: Vec<f64> = (0..encoded.nrows())
            .into_par_iter()
            .flat_map_iter(|i| {
                let row = encoded.row(i);
                let row = row.as_slice().expect("standard layout");
                let mut m = self.base_score.clone();
                for stage in &self.stages {
                    let leaf = &stage.leaf_values[stage.leaf_index(row)];
                    for (a, v) in m.iter_mut().zip(leaf) {
                        *a += v;
                    }
                }
                m
            })
            .collect();
        Array2::from_shape_vec((encoded.nrows(), k), flat).expect("n*k buffer")
    }

    pub fn predict_proba(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let margins = self.predict_margin(rows)?;
        let mut out = Array2::zeros((rows.nrows(), self.n_classes));
        for (i, m) in margins.outer_iter().enumerate() {
            let p = margins_to_proba(m.as_slice().unwrap(), self.n_classes);
            for (c, v) in p.into_iter().enumerate() {
                out[[i, c]] = v;
            }
        }
        Ok(out)
    }

    /// Copy of the model truncated to its first `n` stages.
    pub fn truncated(&self, n: usize) -> BoostedModel {
        let mut m = self.clone();
        m.stages.truncate(n);
        m.train_loss.truncate(n + 1);
        m
    }
}
