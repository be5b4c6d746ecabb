use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use misbehave::hpo::OptimizeConfig;
use misbehave::seed;
use misbehave::synth::SynthConfig;
use misbehave::{CleanPolicy, PipelineConfig, StackConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Binary,
    Multiclass,
    PerAttack,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HpoSettings {
    pub n_iter: usize,
    pub init_points: usize,
    pub cv_folds: usize,
}

impl Default for HpoSettings {
    fn default() -> Self {
        HpoSettings {
            n_iter: 32,
            init_points: 5,
            cv_folds: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainSettings {
    /// Test rows explained per model.
    pub rows: usize,
    /// Rows that also get interaction matrices.
    pub interaction_rows: usize,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        ExplainSettings {
            rows: 100,
            interaction_rows: 20,
        }
    }
}

/// Everything a run needs; loaded from `--config` and overridden by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub inputs: Vec<PathBuf>,
    pub seed: u64,
    pub ratio: f64,
    pub clean_policy: CleanPolicy,
    pub k_best: usize,
    pub clip: bool,
    pub stack: StackConfig,
    pub hpo: HpoSettings,
    pub explain: ExplainSettings,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Binary,
            inputs: Vec::new(),
            seed: 0,
            ratio: 0.8,
            clean_policy: CleanPolicy::Median,
            k_best: 10,
            clip: true,
            stack: StackConfig::default(),
            hpo: HpoSettings::default(),
            explain: ExplainSettings::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            bail!("ratio must lie in (0, 1), got {}", self.ratio);
        }
        if self.k_best == 0 {
            bail!("k_best must be >= 1");
        }
        if self.hpo.init_points == 0 || self.hpo.n_iter < self.hpo.init_points {
            bail!("hpo needs n_iter >= init_points >= 1");
        }
        if self.hpo.cv_folds < 2 {
            bail!("hpo.cv_folds must be >= 2");
        }
        self.stack.validate()?;
        self.synth.validate()?;
        Ok(())
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            root: self.seed,
            split: seed::derive_named(self.seed, "split"),
            stack: seed::derive_named(self.seed, "stack"),
            hpo: seed::derive_named(self.seed, "hpo"),
            explain: seed::derive_named(self.seed, "explain"),
            synth: seed::derive_named(self.seed, "synth"),
        }
    }

    pub fn pipeline(&self, stack: StackConfig) -> PipelineConfig {
        PipelineConfig {
            clean_policy: self.clean_policy,
            k_best: self.k_best,
            clip: self.clip,
            stack: StackConfig {
                seed: self.seeds().stack,
                ..stack
            },
        }
    }

    pub fn optimize_config(&self) -> OptimizeConfig {
        OptimizeConfig {
            n_iter: self.hpo.n_iter,
            init_points: self.hpo.init_points,
            seed: self.seeds().hpo,
            ..OptimizeConfig::default()
        }
    }
}

/// Per-module seeds fanned out from the root seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub root: u64,
    pub split: u64,
    pub stack: u64,
    pub hpo: u64,
    pub explain: u64,
    pub synth: u64,
}
