//! Stacked ensemble: random forest and ordered boosting as base learners,
//! multinomial logistic regression over their out-of-fold probabilities.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boosted::{fit_boosted, BoostConfig, BoostedModel};
use crate::dataio::{stratified_folds, CleanPolicy, Cleaner, ColumnSchema, Dataset};
use crate::error::{Error, Result};
use crate::linear::{fit_logistic, LogisticModel, SolveConfig};
use crate::preprocess::{select_k_best, Chi2Selector, LabelEncoder, MinMaxScaler};
use crate::seed;
use crate::trees::{argmax, fit_forest, Forest, ForestConfig};

/// How base learners feed the meta-learner. Both learners expose class
/// probabilities, so `auto` resolves to them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackMethod {
    #[default]
    #[serde(alias = "auto")]
    PredictProba,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackConfig {
    pub cv_folds: usize,
    pub stack_method: StackMethod,
    pub passthrough: bool,
    pub forest: ForestConfig,
    pub boosted: BoostConfig,
    pub meta: SolveConfig,
    /// Root seed; the component seeds are derived from it.
    pub seed: u64,
    pub use_forest: bool,
    pub use_boosted: bool,
}

impl Default for StackConfig {
    fn default() -> Self {
        StackConfig {
            cv_folds: 3,
            stack_method: StackMethod::PredictProba,
            passthrough: false,
            forest: ForestConfig::default(),
            boosted: BoostConfig::default(),
            meta: SolveConfig::default(),
            seed: 0,
            use_forest: true,
            use_boosted: true,
        }
    }
}

impl StackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cv_folds < 2 {
            return Err(Error::Config("cv_folds must be >= 2".into()));
        }
        if self.passthrough {
            return Err(Error::Config("passthrough is not supported".into()));
        }
        if !self.use_forest && !self.use_boosted {
            return Err(Error::Config("at least one base learner must be enabled".into()));
        }
        self.forest.validate()?;
        self.boosted.validate()?;
        self.meta.validate()
    }

    fn forest_for(&self, fold: Option<usize>) -> ForestConfig {
        let base = seed::derive_named(self.seed, "forest");
        ForestConfig {
            seed: fold.map_or(base, |f| seed::derive(base, f as u64)),
            ..self.forest.clone()
        }
    }

    fn boosted_for(&self, fold: Option<usize>) -> BoostConfig {
        let base = seed::derive_named(self.seed, "boosted");
        BoostConfig {
            seed: fold.map_or(base, |f| seed::derive(base, f as u64)),
            ..self.boosted.clone()
        }
    }

    fn n_models(&self) -> usize {
        usize::from(self.use_forest) + usize::from(self.use_boosted)
    }
}

/// Fitted base learners and meta-learner, working on prepared features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackEnsemble {
    pub n_classes: usize,
    pub forest: Option<Forest>,
    pub boosted: Option<BoostedModel>,
    pub meta: LogisticModel,
}

struct Bases {
    forest: Option<Forest>,
    boosted: Option<BoostedModel>,
}

impl Bases {
    fn fit(train: &Dataset, config: &StackConfig, fold: Option<usize>) -> Result<Self> {
        let forest = if config.use_forest {
            Some(fit_forest(train, &config.forest_for(fold))?)
        } else {
            None
        };
        let boosted = if config.use_boosted {
            Some(fit_boosted(train, &config.boosted_for(fold))?)
        } else {
            None
        };
        Ok(Bases { forest, boosted })
    }

    /// Model-major probability columns: forest classes, then boosted classes.
    fn meta_features(&self, rows: ArrayView2<'_, f64>, n_classes: usize) -> Result<Array2<f64>> {
        meta_columns(self.forest.as_ref(), self.boosted.as_ref(), rows, n_classes)
    }
}

fn meta_columns(
    forest: Option<&Forest>,
    boosted: Option<&BoostedModel>,
    rows: ArrayView2<'_, f64>,
    k: usize,
) -> Result<Array2<f64>> {
    let width = k * (usize::from(forest.is_some()) + usize::from(boosted.is_some()));
    let mut out = Array2::zeros((rows.nrows(), width));
    let mut col = 0;
    if let Some(f) = forest {
        let p = f.predict_proba(rows)?;
        out.slice_mut(ndarray::s![.., col..col + k]).assign(&p);
        col += k;
    }
    if let Some(b) = boosted {
        let p = b.predict_proba(rows)?;
        out.slice_mut(ndarray::s![.., col..col + k]).assign(&p);
    }
    Ok(out)
}

/// Out-of-fold meta-features with stratified folds drawn from the config seed.
pub fn oof_meta_features(train: &Dataset, config: &StackConfig) -> Result<Array2<f64>> {
    config.validate()?;
    let folds = stack_folds(train, config)?;
    oof_meta_features_with_folds(train, config, &folds)
}

/// Fold assignment used by [`oof_meta_features`].
pub fn stack_folds(train: &Dataset, config: &StackConfig) -> Result<Vec<usize>> {
    let counts = train.class_counts();
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 && n < config.cv_folds {
            return Err(Error::ClassTooSmall {
                class: train.class_names()[c].clone(),
                count: n,
                needed: config.cv_folds,
            });
        }
    }
    stratified_folds(
        train.labels(),
        train.n_classes(),
        config.cv_folds,
        seed::derive_named(config.seed, "stack-folds"),
    )
}

/// Row `i` of the result is predicted by base learners trained on every
/// fold except `folds[i]`.
pub fn oof_meta_features_with_folds(
    train: &Dataset,
    config: &StackConfig,
    folds: &[usize],
) -> Result<Array2<f64>> {
    config.validate()?;
    if folds.len() != train.n_rows() {
        return Err(Error::Dimension {
            expected: train.n_rows(),
            got: folds.len(),
        });
    }
    let k = train.n_classes();
    let n_folds = folds.iter().copied().max().map_or(0, |m| m + 1);
    let parts: Vec<(Vec<usize>, Array2<f64>)> = (0..n_folds)
        .into_par_iter()
        .map(|f| {
            let (held, fit): (Vec<usize>, Vec<usize>) = (0..folds.len()).partition(|&i| folds[i] == f);
            if held.is_empty() {
                return Ok((held, Array2::zeros((0, k * config.n_models()))));
            }
            let bases = Bases::fit(&train.select_rows(&fit), config, Some(f))?;
            let held_rows = train.select_rows(&held);
            let meta = bases.meta_features(held_rows.rows().view(), k)?;
            Ok((held, meta))
        })
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros((train.n_rows(), k * config.n_models()));
    for (held, meta) in parts {
        for (r, &i) in held.iter().enumerate() {
            out.row_mut(i).assign(&meta.row(r));
        }
    }
    Ok(out)
}

/// Fits the meta-learner on out-of-fold features, then refits both base
/// learners on the full training set. `train` must already be prepared.
pub fn fit_stack(train: &Dataset, config: &StackConfig) -> Result<StackEnsemble> {
    let oof = oof_meta_features(train, config)?;
    let meta = fit_logistic(oof.view(), train.labels(), train.n_classes(), &config.meta)?;
    let bases = Bases::fit(train, config, None)?;
    Ok(StackEnsemble {
        n_classes: train.n_classes(),
        forest: bases.forest,
        boosted: bases.boosted,
        meta,
    })
}

impl StackEnsemble {
    pub fn meta_features(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        meta_columns(self.forest.as_ref(), self.boosted.as_ref(), rows, self.n_classes)
    }

    pub fn predict_proba(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let meta = self.meta_features(rows)?;
        self.meta.predict_proba(meta.view())
    }
}

/// Preparation settings applied before the stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub clean_policy: CleanPolicy,
    pub k_best: usize,
    pub clip: bool,
    pub stack: StackConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            clean_policy: CleanPolicy::Median,
            k_best: 10,
            clip: true,
            stack: StackConfig::default(),
        }
    }
}

/// Cleaning, scaling and feature selection fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub input_schema: ColumnSchema,
    pub cleaner: Cleaner,
    pub scaler: MinMaxScaler,
    pub selector: Chi2Selector,
    pub encoder: LabelEncoder,
}

impl Preprocessor {
    /// Fits on raw training data and returns the prepared training set.
    pub fn fit(raw: &Dataset, config: &PipelineConfig) -> Result<(Self, Dataset)> {
        let cleaner = Cleaner::fit(raw, config.clean_policy)?;
        let cleaned = cleaner.apply(raw)?;
        if cleaned.is_empty() {
            return Err(Error::Empty("no rows left after cleaning".into()));
        }
        let scaler = MinMaxScaler::fit(&cleaned)?.with_clip(config.clip);
        let scaled = scaler.transform(&cleaned)?;
        let selector = select_k_best(&scaled, config.k_best)?;
        let prepared = selector.transform(&scaled)?;
        let encoder = LabelEncoder::fit(raw)?;
        Ok((
            Preprocessor {
                input_schema: raw.schema().clone(),
                cleaner,
                scaler,
                selector,
                encoder,
            },
            prepared,
        ))
    }

    /// Prepares raw feature rows; missing cells take the fitted fill values.
    pub fn transform_matrix(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.input_schema.n_features() {
            return Err(Error::Dimension {
                expected: self.input_schema.n_features(),
                got: rows.ncols(),
            });
        }
        let mut filled = rows.as_standard_layout().into_owned();
        for mut r in filled.outer_iter_mut() {
            self.cleaner.fill_row(r.as_slice_mut().expect("standard layout"));
        }
        let scaled = self.scaler.transform_matrix(filled.view())?;
        self.selector.transform_matrix(scaled.view())
    }

    /// Dataset form of [`Preprocessor::transform_matrix`], keeping labels.
    pub fn transform(&self, raw: &Dataset) -> Result<Dataset> {
        self.check_schema(raw)?;
        let rows = self.transform_matrix(raw.rows().view())?;
        raw.select_columns(&self.selector.selected).with_rows(rows)
    }

    fn check_schema(&self, d: &Dataset) -> Result<()> {
        if d.schema().feature_columns != self.input_schema.feature_columns {
            return Err(Error::SchemaMismatch(format!(
                "expected columns {:?}, got {:?}",
                self.input_schema.feature_columns,
                d.schema().feature_columns
            )));
        }
        if d.class_names() != self.encoder.classes() {
            return Err(Error::SchemaMismatch(format!(
                "expected classes {:?}, got {:?}",
                self.encoder.classes(),
                d.class_names()
            )));
        }
        Ok(())
    }

    pub fn selected_names(&self) -> Vec<String> {
        self.selector.selected_names()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    pub proba: Array2<f64>,
}

/// Complete fitted pipeline; serializes to one JSON bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackedModel {
    pub format_version: u32,
    pub config: PipelineConfig,
    pub class_names: Vec<String>,
    pub preprocessor: Preprocessor,
    pub ensemble: StackEnsemble,
}

/// Fits preprocessing on raw training data, then the stack.
pub fn fit_pipeline(raw: &Dataset, config: &PipelineConfig) -> Result<StackedModel> {
    config.stack.validate()?;
    let (preprocessor, prepared) = Preprocessor::fit(raw, config)?;
    let ensemble = fit_stack(&prepared, &config.stack)?;
    Ok(StackedModel {
        format_version: crate::FORMAT_VERSION,
        config: config.clone(),
        class_names: raw.class_names().to_vec(),
        preprocessor,
        ensemble,
    })
}

impl StackedModel {
    /// Predicts raw feature rows; ties go to the lower class index.
    pub fn predict(&self, raw_rows: ArrayView2<'_, f64>) -> Result<Prediction> {
        let prepared = self.preprocessor.transform_matrix(raw_rows)?;
        let proba = self.ensemble.predict_proba(prepared.view())?;
        let labels = proba
            .outer_iter()
            .map(|r| argmax(r.as_slice().expect("standard layout")))
            .collect();
        Ok(Prediction { labels, proba })
    }

    pub fn predict_dataset(&self, raw: &Dataset) -> Result<Prediction> {
        self.preprocessor.check_schema(raw)?;
        self.predict(raw.rows().view())
    }

    /// The prepared (cleaned, scaled, selected) form of `raw`.
    pub fn prepare(&self, raw: &Dataset) -> Result<Dataset> {
        self.preprocessor.transform(raw)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: StackedModel = serde_json::from_str(s)?;
        if m.format_version != crate::FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "model bundle version {} (expected {})",
                m.format_version,
                crate::FORMAT_VERSION
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::collections::BTreeMap;

    fn blobs(n_per: usize, k: usize, seed_: u64) -> Dataset {
        let mut rng = seed::rng(seed_);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..k {
            for _ in 0..n_per {
                rows.push(c as f64 * 2.0 + rng.random::<f64>());
                rows.push(rng.random::<f64>());
                rows.push(c as f64 + rng.random::<f64>() * 3.0);
                labels.push(c);
            }
        }
        let schema = ColumnSchema::new(
            vec!["a".into(), "b".into(), "c".into()],
            "y",
            BTreeMap::new(),
        )
        .unwrap();
        Dataset::new(
            Array2::from_shape_vec((n_per * k, 3), rows).unwrap(),
            labels,
            schema,
            (0..k).map(|c| format!("c{c}")).collect(),
        )
        .unwrap()
    }

    fn small_config() -> StackConfig {
        StackConfig {
            forest: ForestConfig {
                n_estimators: 5,
                ..ForestConfig::default()
            },
            boosted: BoostConfig {
                iterations: 10,
                depth: 3,
                ..BoostConfig::default()
            },
            ..StackConfig::default()
        }
    }

    #[test]
    fn meta_width_is_models_times_classes() {
        let d = blobs(12, 3, 1);
        let m = oof_meta_features(&d, &small_config()).unwrap();
        assert_eq!(m.dim(), (36, 6));
        let one = StackConfig {
            use_boosted: false,
            ..small_config()
        };
        assert_eq!(oof_meta_features(&d, &one).unwrap().ncols(), 3);
    }

    #[test]
    fn class_smaller_than_folds_is_rejected() {
        let d = blobs(2, 2, 1);
        assert!(matches!(
            oof_meta_features(&d, &small_config()),
            Err(Error::ClassTooSmall { .. })
        ));
    }

    #[test]
    fn probabilities_sum_to_one_and_batch_matches_rows() {
        let d = blobs(20, 2, 3);
        let model = fit_pipeline(
            &d,
            &PipelineConfig {
                stack: small_config(),
                ..PipelineConfig::default()
            },
        )
        .unwrap();
        let batch = model.predict(d.rows().view()).unwrap();
        for i in 0..d.n_rows() {
            let single = model.predict(d.rows().slice(ndarray::s![i..i + 1, ..])).unwrap();
            assert_eq!(single.labels[0], batch.labels[i]);
            assert_eq!(single.proba.row(0), batch.proba.row(i));
            assert!((batch.proba.row(i).sum() - 1.0).abs() < 1e-9);
        }
        let back = StackedModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn schema_mismatch_is_reported() {
        let d = blobs(10, 2, 3);
        let model = fit_pipeline(
            &d,
            &PipelineConfig {
                stack: small_config(),
                ..PipelineConfig::default()
            },
        )
        .unwrap();
        let other = d.select_columns(&[0, 1]);
        assert!(matches!(
            model.predict_dataset(&other),
            Err(Error::SchemaMismatch(_))
        ));
    }
}
