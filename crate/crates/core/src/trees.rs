//! Entropy-criterion decision trees and the bootstrap-aggregated forest.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::seed;

/// A node of a binary tree stored in a flat array; children always have
/// larger ids than their parent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Number of training rows (with bootstrap multiplicity) reaching the node.
        cover: f64,
    },
    Leaf {
        value: Vec<f64>,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => *cover,
        }
    }
}

/// Binary tree with vector-valued leaves; rows go left when
/// `x[feature] <= threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: Vec<f64>, cover: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value, cover }],
        }
    }

    /// Index of the leaf reached by `row`.
    pub fn apply(&self, row: ArrayView1<'_, f64>) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { .. } => return id,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    id = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn predict_row(&self, row: ArrayView1<'_, f64>) -> &[f64] {
        match &self.nodes[self.apply(row)] {
            Node::Leaf { value, .. } => value,
            Node::Split { .. } => unreachable!("apply always ends at a leaf"),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, id: usize) -> usize {
            match &t.nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }

    pub fn output_len(&self) -> usize {
        self.nodes
            .iter()
            .find_map(|n| match n {
                Node::Leaf { value, .. } => Some(value.len()),
                Node::Split { .. } => None,
            })
            .unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Entropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeaturesPerSplit {
    Sqrt,
    All,
    Count(usize),
}

impl FeaturesPerSplit {
    pub fn resolve(self, d: usize) -> usize {
        match self {
            FeaturesPerSplit::Sqrt => ((d as f64).sqrt() as usize).max(1),
            FeaturesPerSplit::All => d,
            FeaturesPerSplit::Count(k) => k.clamp(1, d.max(1)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub criterion: Criterion,
    pub bootstrap: bool,
    pub features_per_split: FeaturesPerSplit,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_estimators: 50,
            max_depth: 20,
            min_samples_split: 10,
            min_samples_leaf: 2,
            criterion: Criterion::Entropy,
            bootstrap: true,
            features_per_split: FeaturesPerSplit::Sqrt,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators < 1 {
            return Err(Error::Config("n_estimators must be >= 1".into()));
        }
        if self.max_depth < 1 {
            return Err(Error::Config("max_depth must be >= 1".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::Config("min_samples_leaf must be >= 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Config("min_samples_split must be >= 2".into()));
        }
        Ok(())
    }
}

/// Shannon entropy in bits of a class-count vector.
pub fn entropy(counts: &[f64]) -> Result<f64> {
    let total: f64 = counts.iter().sum();
    if counts.iter().any(|&c| c < 0.0) {
        return Err(Error::Config("negative class count".into()));
    }
    if total <= 0.0 {
        return Err(Error::Empty("entropy of all-zero counts".into()));
    }
    Ok(entropy_unchecked(counts, total))
}

fn entropy_unchecked(counts: &[f64], total: f64) -> f64 {
    let mut h = 0.0;
    for &c in counts {
        if c > 0.0 {
            let p = c / total;
            h -= p * p.log2();
        }
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

const GAIN_EPS: f64 = 1e-12;

/// Best entropy split of the rows listed in `idx`.
///
/// Thresholds are midpoints between consecutive distinct values. A split
/// with zero gain is still returned for an impure node as long as both
/// children are legal; otherwise symmetric patterns such as XOR could never
/// be separated by greedy growth.
fn best_split_idx(
    rows: ArrayView2<'_, f64>,
    labels: &[usize],
    n_classes: usize,
    idx: &[usize],
    candidates: &[usize],
    min_samples_leaf: usize,
) -> Option<SplitChoice> {
    let n = idx.len();
    if n < 2 * min_samples_leaf.max(1) {
        return None;
    }
    let mut parent = vec![0.0; n_classes];
    for &i in idx {
        parent[labels[i]] += 1.0;
    }
    let parent_h = entropy_unchecked(&parent, n as f64);
    if parent_h <= 0.0 {
        return None;
    }
    let mut best: Option<SplitChoice> = None;
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut left = vec![0.0; n_classes];
    let mut right = vec![0.0; n_classes];
    for &f in candidates {
        order.clear();
        order.extend(idx.iter().map(|&i| (rows[[i, f]], labels[i])));
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        left.iter_mut().for_each(|v| *v = 0.0);
        right.copy_from_slice(&parent);
        for pos in 0..n - 1 {
            let (v, l) = order[pos];
            left[l] += 1.0;
            right[l] -= 1.0;
            let next = order[pos + 1].0;
            if next <= v {
                continue;
            }
            let n_left = pos + 1;
            let n_right = n - n_left;
            if n_left < min_samples_leaf || n_right < min_samples_leaf {
                continue;
            }
            let h = (n_left as f64 * entropy_unchecked(&left, n_left as f64)
                + n_right as f64 * entropy_unchecked(&right, n_right as f64))
                / n as f64;
            let gain = (parent_h - h).max(0.0);
            let better = match best {
                None => true,
                Some(b) => gain > b.gain + GAIN_EPS,
            };
            if better {
                let mut threshold = 0.5 * (v + next);
                // midpoint of adjacent floats can round up to `next`
                if threshold >= next {
                    threshold = v;
                }
                best = Some(SplitChoice {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

/// Best entropy split over `candidates` using every row of `rows`.
pub fn best_split(
    rows: ArrayView2<'_, f64>,
    labels: &[usize],
    n_classes: usize,
    candidates: &[usize],
    min_samples_leaf: usize,
) -> Option<SplitChoice> {
    let idx: Vec<usize> = (0..rows.nrows()).collect();
    best_split_idx(rows, labels, n_classes, &idx, candidates, min_samples_leaf)
}

struct Grower<'a, R: Rng> {
    rows: ArrayView2<'a, f64>,
    labels: &'a [usize],
    n_classes: usize,
    config: &'a ForestConfig,
    n_candidates: usize,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

impl<R: Rng> Grower<'_, R> {
    fn leaf(&self, idx: &[usize]) -> Node {
        let mut value = vec![0.0; self.n_classes];
        for &i in idx {
            value[self.labels[i]] += 1.0;
        }
        let n = idx.len() as f64;
        value.iter_mut().for_each(|v| *v /= n);
        Node::Leaf { value, cover: n }
    }

    fn candidates(&mut self) -> Vec<usize> {
        let d = self.rows.ncols();
        if self.n_candidates >= d {
            return (0..d).collect();
        }
        let mut picked = rand::seq::index::sample(self.rng, d, self.n_candidates).into_vec();
        picked.sort_unstable();
        picked
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: Vec::new(),
            cover: 0.0,
        });
        let cfg = self.config;
        let split = if depth >= cfg.max_depth || idx.len() < cfg.min_samples_split {
            None
        } else {
            let candidates = self.candidates();
            best_split_idx(
                self.rows,
                self.labels,
                self.n_classes,
                &idx,
                &candidates,
                cfg.min_samples_leaf,
            )
        };
        match split {
            None => {
                self.nodes[id] = self.leaf(&idx);
            }
            Some(s) => {
                let cover = idx.len() as f64;
                let (l, r): (Vec<usize>, Vec<usize>) = idx
                    .into_iter()
                    .partition(|&i| self.rows[[i, s.feature]] <= s.threshold);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                    cover,
                };
            }
        }
        id
    }
}

fn fit_tree_on<R: Rng>(
    rows: ArrayView2<'_, f64>,
    labels: &[usize],
    n_classes: usize,
    idx: Vec<usize>,
    config: &ForestConfig,
    rng: &mut R,
) -> Tree {
    let mut grower = Grower {
        rows,
        labels,
        n_classes,
        config,
        n_candidates: config.features_per_split.resolve(rows.ncols()),
        rng,
        nodes: Vec::new(),
    };
    grower.grow(idx, 0);
    Tree {
        nodes: grower.nodes,
    }
}

/// Greedy recursive tree on every training row (no bootstrap).
pub fn fit_tree<R: Rng>(train: &Dataset, config: &ForestConfig, rng: &mut R) -> Result<Tree> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("cannot fit a tree on zero rows".into()));
    }
    Ok(fit_tree_on(
        train.rows().view(),
        train.labels(),
        train.n_classes(),
        (0..train.n_rows()).collect(),
        config,
        rng,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub config: ForestConfig,
    pub n_classes: usize,
    pub feature_count: usize,
}

impl Forest {
    /// Soft vote: mean of per-tree leaf class distributions.
    pub fn predict_proba(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.feature_count {
            return Err(Error::Dimension {
                expected: self.feature_count,
                got: rows.ncols(),
            });
        }
        let k = self.n_classes;
        let scale = 1.0 / self.trees.len() as f64;
        let flat: Vec<f64> = (0..rows.nrows())
            .into_par_iter()
            .flat_map_iter(|i| {
                let row = rows.row(i);
                let mut acc = vec![0.0; k];
                for t in &self.trees {
                    for (a, v) in acc.iter_mut().zip(t.predict_row(row)) {
                        *a += v;
                    }
                }
                acc.into_iter().map(move |a| a * scale)
            })
            .collect();
        Ok(Array2::from_shape_vec((rows.nrows(), k), flat).expect("n*k buffer"))
    }

    /// Hard majority vote over per-tree argmax classes; ties go to the lower class.
    pub fn predict_vote(&self, rows: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        if rows.ncols() != self.feature_count {
            return Err(Error::Dimension {
                expected: self.feature_count,
                got: rows.ncols(),
            });
        }
        Ok(rows
            .outer_iter()
            .map(|row| {
                let mut votes = vec![0usize; self.n_classes];
                for t in &self.trees {
                    votes[argmax(t.predict_row(row))] += 1;
                }
                argmax_count(&votes)
            })
            .collect())
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn argmax_count(v: &[usize]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Trains `n_estimators` trees in parallel; tree `t` draws its bootstrap
/// sample and split candidates from a stream derived from `(seed, t)`.
pub fn fit_forest(train: &Dataset, config: &ForestConfig) -> Result<Forest> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("cannot fit a forest on zero rows".into()));
    }
    let rows = train.rows().view();
    let labels = train.labels();
    let n = train.n_rows();
    let trees: Vec<Tree> = (0..config.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed::derive(config.seed, t as u64));
            let idx: Vec<usize> = if config.bootstrap {
                let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                idx.sort_unstable();
                idx
            } else {
                (0..n).collect()
            };
            fit_tree_on(rows, labels, train.n_classes(), idx, config, &mut rng)
        })
        .collect();
    Ok(Forest {
        trees,
        config: config.clone(),
        n_classes: train.n_classes(),
        feature_count: train.n_features(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::ColumnSchema;
    use ndarray::array;
    use std::collections::BTreeMap;

    fn dataset(rows: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Dataset {
        let cols = (0..rows.ncols()).map(|j| format!("f{j}")).collect();
        let schema = ColumnSchema::new(cols, "y", BTreeMap::new()).unwrap();
        let names = (0..n_classes).map(|c| format!("c{c}")).collect();
        Dataset::new(rows, labels, schema, names).unwrap()
    }

    fn exact_config(max_depth: usize) -> ForestConfig {
        ForestConfig {
            n_estimators: 1,
            max_depth,
            min_samples_split: 2,
            min_samples_leaf: 1,
            bootstrap: false,
            features_per_split: FeaturesPerSplit::All,
            ..ForestConfig::default()
        }
    }

    fn accuracy(tree: &Tree, d: &Dataset) -> f64 {
        let hits = d
            .rows()
            .outer_iter()
            .zip(d.labels())
            .filter(|(r, &l)| argmax(tree.predict_row(r.view())) == l)
            .count();
        hits as f64 / d.n_rows() as f64
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy(&[10.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[5.0, 5.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((entropy(&[1.0, 1.0, 2.0]).unwrap() - 1.5).abs() < 1e-15);
        assert!(entropy(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn split_on_sorted_feature() {
        let rows = array![[1.0], [2.0], [3.0], [4.0]];
        let s = best_split(rows.view(), &[0, 0, 1, 1], 2, &[0], 1).unwrap();
        assert_eq!(s.feature, 0);
        assert_eq!(s.threshold, 2.5);
        assert!((s.gain - 1.0).abs() < 1e-15);
    }

    #[test]
    fn no_split_for_pure_or_constant() {
        let rows = array![[1.0], [2.0], [3.0]];
        assert!(best_split(rows.view(), &[1, 1, 1], 2, &[0], 1).is_none());
        let flat = array![[5.0], [5.0], [5.0]];
        assert!(best_split(flat.view(), &[0, 1, 0], 2, &[0], 1).is_none());
    }

    #[test]
    fn min_samples_leaf_respected_by_split() {
        let rows = array![[1.0], [2.0], [3.0], [4.0]];
        let s = best_split(rows.view(), &[0, 1, 1, 1], 2, &[0], 2).unwrap();
        assert_eq!(s.threshold, 2.5);
    }

    #[test]
    fn single_class_is_one_leaf() {
        let d = dataset(array![[1.0], [2.0]], vec![1, 1], 2);
        let t = fit_tree(&d, &exact_config(5), &mut seed::rng(0)).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict_row(array![0.0].view()), &[0.0, 1.0]);
    }

    #[test]
    fn xor_needs_depth_two() {
        let d = dataset(
            array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]],
            vec![0, 1, 1, 0],
            2,
        );
        let deep = fit_tree(&d, &exact_config(2), &mut seed::rng(0)).unwrap();
        assert_eq!(accuracy(&deep, &d), 1.0);
        let stump = fit_tree(&d, &exact_config(1), &mut seed::rng(0)).unwrap();
        assert_eq!(accuracy(&stump, &d), 0.5);
    }

    #[test]
    fn empty_training_set_rejected() {
        let d = dataset(Array2::zeros((0, 1)), vec![], 2);
        assert!(fit_tree(&d, &exact_config(2), &mut seed::rng(0)).is_err());
        assert!(fit_forest(&d, &exact_config(2)).is_err());
    }

    #[test]
    fn forest_of_one_tree_matches_tree() {
        let d = dataset(
            array![[0.1, 3.0], [0.4, 1.0], [0.35, 2.0], [0.8, 0.5], [0.9, 0.1], [0.2, 2.2]],
            vec![0, 1, 0, 1, 1, 0],
            2,
        );
        let cfg = exact_config(4);
        let tree = fit_tree(&d, &cfg, &mut seed::rng(cfg.seed)).unwrap();
        let forest = fit_forest(&d, &cfg).unwrap();
        let p = forest.predict_proba(d.rows().view()).unwrap();
        for (i, row) in d.rows().outer_iter().enumerate() {
            assert_eq!(p.row(i).to_vec(), tree.predict_row(row).to_vec());
        }
    }

    #[test]
    fn soft_vote_means() {
        let forest = Forest {
            trees: vec![Tree::leaf(vec![1.0, 0.0], 1.0), Tree::leaf(vec![0.0, 1.0], 1.0)],
            config: ForestConfig::default(),
            n_classes: 2,
            feature_count: 1,
        };
        let p = forest.predict_proba(array![[0.3], [0.9]].view()).unwrap();
        assert_eq!(p, array![[0.5, 0.5], [0.5, 0.5]]);
        assert_eq!(forest.predict_vote(array![[0.3]].view()).unwrap(), vec![0]);
        assert!(forest.predict_proba(array![[0.3, 1.0]].view()).is_err());

        let same = Forest {
            trees: vec![Tree::leaf(vec![0.3, 0.7], 1.0); 3],
            ..forest
        };
        let p = same.predict_proba(array![[0.0]].view()).unwrap();
        assert!((p[[0, 0]] - 0.3).abs() < 1e-15 && (p[[0, 1]] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn five_tree_hand_average() {
        let leaves = [[0.2, 0.8], [0.6, 0.4], [1.0, 0.0], [0.5, 0.5], [0.1, 0.9]];
        let forest = Forest {
            trees: leaves
                .iter()
                .map(|l| Tree {
                    nodes: vec![
                        Node::Split {
                            feature: 0,
                            threshold: 0.5,
                            left: 1,
                            right: 2,
                            cover: 2.0,
                        },
                        Node::Leaf {
                            value: l.to_vec(),
                            cover: 1.0,
                        },
                        Node::Leaf {
                            value: vec![0.0, 1.0],
                            cover: 1.0,
                        },
                    ],
                })
                .collect(),
            config: ForestConfig::default(),
            n_classes: 2,
            feature_count: 1,
        };
        let p = forest.predict_proba(array![[0.1], [0.9]].view()).unwrap();
        // (0.2+0.6+1.0+0.5+0.1)/5 = 0.48
        assert!((p[[0, 0]] - 0.48).abs() < 1e-15);
        assert!((p[[0, 1]] - 0.52).abs() < 1e-15);
        assert_eq!(p.row(1).to_vec(), vec![0.0, 1.0]);
    }
}
