//! Label encoding, min-max scaling and chi-squared feature selection.
//!
//! All three are fit on the training split only and replayed on held-out
//! data.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEncoder {
    classes: Vec<String>,
}

impl LabelEncoder {
    pub fn new(classes: &[String]) -> Result<Self> {
        let mut sorted: Vec<&String> = classes.iter().collect();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate class name".into()));
        }
        Ok(LabelEncoder {
            classes: classes.to_vec(),
        })
    }

    pub fn fit(d: &Dataset) -> Result<Self> {
        LabelEncoder::new(d.class_names())
    }

    pub fn encode(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    pub fn decode(&self, index: usize) -> Option<&str> {
        self.classes.get(index).map(String::as_str)
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Per-column affine map onto `[0, 1]`.
///
/// Constant columns map to 0. Values outside the fitted range are clipped
/// unless `clip` is off.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub columns: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub constant: Vec<bool>,
    pub clip: bool,
}

impl MinMaxScaler {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("cannot fit a scaler on zero rows".into()));
        }
        let mut min = Vec::with_capacity(train.n_features());
        let mut max = Vec::with_capacity(train.n_features());
        for (j, col) in train.rows().columns().into_iter().enumerate() {
            let (lo, hi) = col
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::NonFinite(format!(
                    "column `{}` must be cleaned before scaling",
                    train.schema().feature_columns[j]
                )));
            }
            min.push(lo);
            max.push(hi);
        }
        let constant = min.iter().zip(&max).map(|(a, b)| a == b).collect();
        Ok(MinMaxScaler {
            columns: train.schema().feature_columns.clone(),
            min,
            max,
            constant,
            clip: true,
        })
    }

    pub fn with_clip(mut self, clip: bool) -> Self {
        self.clip = clip;
        self
    }

    pub fn n_features(&self) -> usize {
        self.min.len()
    }

    pub fn scale_value(&self, j: usize, x: f64) -> f64 {
        if self.constant[j] {
            return 0.0;
        }
        let v = (x - self.min[j]) / (self.max[j] - self.min[j]);
        if self.clip {
            v.clamp(0.0, 1.0)
        } else {
            v
        }
    }

    pub fn transform_matrix(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                got: rows.ncols(),
            });
        }
        let mut out = rows.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.scale_value(j, *v);
            }
        }
        Ok(out)
    }

    pub fn transform(&self, d: &Dataset) -> Result<Dataset> {
        if d.schema().feature_columns != self.columns {
            return Err(Error::SchemaMismatch(
                "scaler was fit on different feature columns".into(),
            ));
        }
        d.with_rows(self.transform_matrix(d.rows().view())?)
    }

    /// Maps scaled values back; constant columns return their fitted value.
    pub fn inverse_transform_matrix(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                got: rows.ncols(),
            });
        }
        let mut out = rows.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.min[j] + *v * (self.max[j] - self.min[j]);
            }
        }
        Ok(out)
    }
}

/// Chi-squared score of every feature against the class labels.
///
/// Feature values act as frequencies: the observed mass of feature `f` in
/// class `c` is the sum of `x_f` over the rows of `c`, the expected mass is
/// the feature total times the class share of rows.
pub fn chi2_scores(train: &Dataset) -> Result<Vec<f64>> {
    chi2_scores_matrix(train.rows().view(), train.labels(), train.n_classes())
}

pub fn chi2_scores_matrix(
    rows: ArrayView2<'_, f64>,
    labels: &[usize],
    n_classes: usize,
) -> Result<Vec<f64>> {
    let n = rows.nrows();
    if labels.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: labels.len(),
        });
    }
    let d = rows.ncols();
    let mut observed = vec![vec![0.0; d]; n_classes];
    let mut class_count = vec![0usize; n_classes];
    for (i, row) in rows.outer_iter().enumerate() {
        let c = labels[i];
        class_count[c] += 1;
        for (j, &v) in row.iter().enumerate() {
            if v < 0.0 || v.is_nan() {
                return Err(Error::NegativeFeature {
                    feature: j,
                    row: i,
                    value: v,
                });
            }
            observed[c][j] += v;
        }
    }
    let mut scores = vec![0.0; d];
    if n == 0 {
        return Ok(scores);
    }
    for (j, score) in scores.iter_mut().enumerate() {
        let total: f64 = observed.iter().map(|o| o[j]).sum();
        for c in 0..n_classes {
            let expected = total * class_count[c] as f64 / n as f64;
            if expected > 0.0 {
                let diff = observed[c][j] - expected;
                *score += diff * diff / expected;
            }
        }
    }
    Ok(scores)
}

/// The `k` highest-scoring features, stored in ascending column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chi2Selector {
    pub scores: Vec<f64>,
    pub selected: Vec<usize>,
    pub input_columns: Vec<String>,
}

impl Chi2Selector {
    pub fn from_scores(scores: Vec<f64>, k: usize, input_columns: Vec<String>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        // stable sort keeps lower index first among equal scores
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let mut selected: Vec<usize> = order.into_iter().take(k).collect();
        selected.sort_unstable();
        Ok(Chi2Selector {
            scores,
            selected,
            input_columns,
        })
    }

    pub fn transform(&self, d: &Dataset) -> Result<Dataset> {
        if d.schema().feature_columns != self.input_columns {
            return Err(Error::SchemaMismatch(
                "selector was fit on different feature columns".into(),
            ));
        }
        Ok(d.select_columns(&self.selected))
    }

    pub fn transform_matrix(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.scores.len() {
            return Err(Error::Dimension {
                expected: self.scores.len(),
                got: rows.ncols(),
            });
        }
        Ok(rows.select(Axis(1), &self.selected))
    }

    pub fn selected_names(&self) -> Vec<String> {
        self.selected
            .iter()
            .map(|&i| self.input_columns[i].clone())
            .collect()
    }
}

/// Scores every feature and keeps the `k` best; `k > d` keeps all.
pub fn select_k_best(train: &Dataset, k: usize) -> Result<Chi2Selector> {
    let scores = chi2_scores(train)?;
    Chi2Selector::from_scores(scores, k, train.schema().feature_columns.clone())
}
