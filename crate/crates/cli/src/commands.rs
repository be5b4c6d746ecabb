use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use log::info;
use misbehave::dataio;
use misbehave::evalreport::{self, MetricsReport};
use misbehave::explain::{self, TreeEnsemble};
use misbehave::hpo::{self, TrialRecord};
use misbehave::stacking::fit_pipeline;
use misbehave::{synth, AttackCodeMap, ColumnSchema, Dataset, StackConfig, StackedModel};
use ndarray::Axis;
use rand::seq::index::sample;

use crate::config::{Mode, RunConfig};
use crate::runinfo::{write_run_json, write_timing};
use crate::Invalid;

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn stage(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn unit(&self, stage: &str, unit: &str) -> PathBuf {
        self.root.join(stage).join(unit)
    }

    /// Units prepared earlier, in name order.
    pub fn prepared_units(&self) -> anyhow::Result<Vec<String>> {
        let data = self.stage("data");
        if !data.is_dir() {
            return Err(Invalid(format!(
                "no prepared data under {}; run `prepare` first",
                data.display()
            ))
            .into());
        }
        let mut units: Vec<String> = std::fs::read_dir(&data)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("train.manifest.json").is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        units.sort();
        if units.is_empty() {
            return Err(Invalid(format!("{} holds no prepared units", data.display())).into());
        }
        Ok(units)
    }
}

fn require(path: &Path, hint: &str) -> anyhow::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Invalid(format!("missing {}; {hint}", path.display())).into())
    }
}

pub fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    s.trim_matches('_').to_string()
}

fn mode_label(mode: Mode, d: &Dataset) -> String {
    match mode {
        Mode::Binary => "binary".into(),
        Mode::Multiclass => "multiclass".into(),
        Mode::PerAttack => format!("per-attack:{}", d.class_names()[1]),
    }
}

pub fn synth_cmd(cfg: &RunConfig, layout: &Layout) -> anyhow::Result<()> {
    let dir = layout.stage("synth");
    let synth_cfg = synth::SynthConfig {
        seed: cfg.seeds().synth,
        ..cfg.synth.clone()
    };
    let (csv, _) = synth::write(&synth_cfg, &dir, "synth")?;
    info!("wrote {}", csv.display());
    write_run_json(&dir, "synth", cfg, &[])
}

pub fn prepare(cfg: &RunConfig, layout: &Layout) -> anyhow::Result<()> {
    if cfg.inputs.is_empty() {
        return Err(Invalid("no input CSV given (use --input or `inputs` in the config)".into()).into());
    }
    for p in &cfg.inputs {
        require(p, "check the input path")?;
    }
    let raw = dataio::load_csv(&cfg.inputs, &ColumnSchema::canonical(), &AttackCodeMap::veremi())?;
    info!("loaded {} rows from {} file(s)", raw.n_rows(), cfg.inputs.len());
    let cleaned = dataio::clean(&raw, cfg.clean_policy)?;
    let units: Vec<(String, Dataset)> = match cfg.mode {
        Mode::Binary => vec![("binary".into(), dataio::binarize(&cleaned)?)],
        Mode::Multiclass => vec![("multiclass".into(), cleaned)],
        Mode::PerAttack => {
            let counts = cleaned.class_counts();
            let mut out = Vec::new();
            for (c, name) in cleaned.class_names().iter().enumerate() {
                if name == dataio::BENIGN || counts[c] == 0 {
                    continue;
                }
                out.push((slug(name), dataio::isolate_attack(&cleaned, name)?));
            }
            out
        }
    };
    let stage = layout.stage("data");
    if stage.exists() {
        std::fs::remove_dir_all(&stage)?;
    }
    let seeds = cfg.seeds();
    for (unit, d) in &units {
        let split = dataio::stratified_split(d, cfg.ratio, seeds.split)?;
        let dir = layout.unit("data", unit);
        dataio::persist(&split.train, &dir, "train", Some(cfg.clean_policy), Some(seeds.split))?;
        dataio::persist(&split.test, &dir, "test", Some(cfg.clean_policy), Some(seeds.split))?;
        info!(
            "{unit}: {} train / {} test rows",
            split.train.n_rows(),
            split.test.n_rows()
        );
        let inputs: Vec<&Path> = cfg.inputs.iter().map(PathBuf::as_path).collect();
        write_run_json(&dir, "prepare", cfg, &inputs)?;
    }
    let inputs: Vec<&Path> = cfg.inputs.iter().map(PathBuf::as_path).collect();
    write_run_json(&stage, "prepare", cfg, &inputs)
}

fn load_split(layout: &Layout, unit: &str, split: &str) -> anyhow::Result<Dataset> {
    let dir = layout.unit("data", unit);
    require(&dir.join(format!("{split}.manifest.json")), "run `prepare` first")?;
    Ok(dataio::restore(&dir, split)?)
}

pub fn tune(cfg: &RunConfig, layout: &Layout, resume: bool) -> anyhow::Result<()> {
    let space = hpo::default_space();
    for unit in layout.prepared_units()? {
        let raw = load_split(layout, &unit, "train")?;
        let dir = layout.unit("tune", &unit);
        std::fs::create_dir_all(&dir)?;
        let trials = dir.join("trials.jsonl");
        let history: Vec<TrialRecord> = if resume && trials.exists() {
            hpo::read_trials(&trials)?
        } else {
            if trials.exists() {
                std::fs::remove_file(&trials)?;
            }
            Vec::new()
        };
        if !history.is_empty() {
            info!("{unit}: resuming after {} trials", history.len());
        }
        let pipeline = cfg.pipeline(cfg.stack.clone());
        let (_, prepared) = misbehave::stacking::Preprocessor::fit(&raw, &pipeline)?;
        let started = Instant::now();
        let result = hpo::tune_stack(
            &prepared,
            &space,
            &pipeline.stack,
            &cfg.optimize_config(),
            cfg.hpo.cv_folds,
            history,
            &mut |r| {
                info!("{unit}: trial {} score {:?}", r.trial, r.score);
                hpo::append_trial(&trials, r)
            },
        )?;
        let best = serde_json::json!({
            "params": result.best.params,
            "score": result.best.score,
            "trial": result.best.trial,
            "stack": result.config,
        });
        std::fs::write(dir.join("best_config.json"), serde_json::to_string_pretty(&best)?)?;
        let mut timing = BTreeMap::new();
        timing.insert("tune_seconds".to_string(), started.elapsed().as_secs_f64());
        write_timing(&dir, &timing)?;
        write_run_json(&dir, "tune", cfg, &[])?;
    }
    write_run_json(&layout.stage("tune"), "tune", cfg, &[])
}

fn tuned_stack(layout: &Layout, unit: &str) -> anyhow::Result<StackConfig> {
    let path = layout.unit("tune", unit).join("best_config.json");
    require(&path, "run `tune` first or drop --tuned")?;
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    serde_json::from_value(v["stack"].clone()).context("reading tuned stack config")
}

pub fn train(cfg: &RunConfig, layout: &Layout, tuned: bool) -> anyhow::Result<()> {
    for unit in layout.prepared_units()? {
        let stack = if tuned {
            tuned_stack(layout, &unit)?
        } else {
            cfg.stack.clone()
        };
        let mut timing = BTreeMap::new();
        let t = Instant::now();
        let raw = load_split(layout, &unit, "train")?;
        timing.insert("load_seconds".to_string(), t.elapsed().as_secs_f64());
        let t = Instant::now();
        let model = fit_pipeline(&raw, &cfg.pipeline(stack))?;
        timing.insert("fit_seconds".to_string(), t.elapsed().as_secs_f64());
        let dir = layout.unit("model", &unit);
        std::fs::create_dir_all(&dir)?;
        model.save(&dir.join("model.json"))?;
        write_timing(&dir, &timing)?;
        info!("{unit}: model trained in {:.2}s", timing["fit_seconds"]);
        write_run_json(&dir, "train", cfg, &[])?;
    }
    write_run_json(&layout.stage("model"), "train", cfg, &[])
}

fn load_model(layout: &Layout, unit: &str) -> anyhow::Result<StackedModel> {
    let path = layout.unit("model", unit).join("model.json");
    require(&path, "run `train` first")?;
    Ok(StackedModel::load(&path)?)
}

fn argmax_labels(p: &ndarray::Array2<f64>) -> Vec<usize> {
    p.outer_iter()
        .map(|r| {
            let mut best = 0;
            for (i, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn report(
    truth: &[usize],
    pred: &[usize],
    names: &[String],
    mode: &str,
    dir: &Path,
) -> anyhow::Result<MetricsReport> {
    let (cm, mut rep) = evalreport::evaluate_labels(truth, pred, names)?;
    rep.mode = mode.to_string();
    evalreport::emit_report(&rep, &cm, dir)?;
    Ok(rep)
}

pub fn evaluate(cfg: &RunConfig, layout: &Layout, split: &str) -> anyhow::Result<()> {
    for unit in layout.prepared_units()? {
        let model = load_model(layout, &unit)?;
        let data = load_split(layout, &unit, split)?;
        let dir = layout.unit("eval", &unit);
        let started = Instant::now();
        let pred = model.predict_dataset(&data)?;
        let mode = mode_label(cfg.mode, &data);
        let rep = report(data.labels(), &pred.labels, data.class_names(), &mode, &dir)?;
        info!("{unit}: stacked accuracy {:.4} on {split}", rep.accuracy);

        let prepared = model.prepare(&data)?;
        let rows = prepared.rows().view();
        if let Some(f) = &model.ensemble.forest {
            let p = argmax_labels(&f.predict_proba(rows)?);
            let r = report(data.labels(), &p, data.class_names(), &mode, &dir.join("forest"))?;
            info!("{unit}: forest accuracy {:.4}", r.accuracy);
        }
        if let Some(b) = &model.ensemble.boosted {
            let p = argmax_labels(&b.predict_proba(rows)?);
            let r = report(data.labels(), &p, data.class_names(), &mode, &dir.join("boosted"))?;
            info!("{unit}: boosted accuracy {:.4}", r.accuracy);
        }
        let mut timing = BTreeMap::new();
        timing.insert("evaluate_seconds".to_string(), started.elapsed().as_secs_f64());
        write_timing(&dir, &timing)?;
        write_run_json(&dir, "evaluate", cfg, &[])?;
    }
    write_run_json(&layout.stage("eval"), "evaluate", cfg, &[])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ExplainTarget {
    #[value(alias = "rf", alias = "randomforest")]
    Forest,
    #[value(alias = "catboost", alias = "cb")]
    Boosted,
    All,
}

pub fn explain(cfg: &RunConfig, layout: &Layout, target: ExplainTarget) -> anyhow::Result<()> {
    for unit in layout.prepared_units()? {
        let model = load_model(layout, &unit)?;
        let data = load_split(layout, &unit, "test")?;
        let prepared = model.prepare(&data)?;
        let n = prepared.n_rows();
        let take = cfg.explain.rows.min(n);
        let mut rng = misbehave::seed::rng(cfg.seeds().explain);
        let mut idx = sample(&mut rng, n, take).into_vec();
        idx.sort_unstable();
        let rows = prepared.rows().select(Axis(0), &idx);
        let names = model.preprocessor.selected_names();
        let mut ensembles: Vec<(&str, TreeEnsemble)> = Vec::new();
        if matches!(target, ExplainTarget::Forest | ExplainTarget::All) {
            let f = model
                .ensemble
                .forest
                .as_ref()
                .ok_or_else(|| Invalid("the model has no forest".into()))?;
            ensembles.push(("forest", TreeEnsemble::from_forest(f)?));
        }
        if matches!(target, ExplainTarget::Boosted | ExplainTarget::All) {
            let b = model
                .ensemble
                .boosted
                .as_ref()
                .ok_or_else(|| Invalid("the model has no boosted learner".into()))?;
            ensembles.push(("boosted", TreeEnsemble::from_boosted(b)?));
        }
        let dir = layout.unit("explain", &unit);
        for (name, ens) in &ensembles {
            let attr = explain::tree_shap_named(ens, rows.view(), names.clone())?;
            // binary problems: the attack output (forest column 1, the single
            // boosted margin); multiclass: every class
            let output = match (model.class_names.len(), attr.n_outputs()) {
                (2, 1) => Some(0),
                (2, _) => Some(1),
                _ => None,
            };
            // a single boosted margin is the log-odds of the second class
            let output_names = if attr.n_outputs() == 1 {
                vec![model.class_names[1].clone()]
            } else {
                model.class_names.clone()
            };
            let summary = explain::summary_stats(&attr, output)?;
            let out = dir.join(name);
            explain::export_summary(&summary, &names, &output_names, &out)?;
            let k = cfg.explain.interaction_rows.min(rows.nrows());
            let inter = explain::interaction_values(ens, rows.slice(ndarray::s![..k, ..]))?;
            let outputs: Vec<usize> = match output {
                Some(o) => vec![o],
                None => (0..attr.n_outputs()).collect(),
            };
            explain::export_interactions(&inter, &names, &outputs, &output_names, &out)?;
            let meta = serde_json::json!({
                "scale": attr.scale,
                "base_value": attr.base_value,
                "output": output,
                "rows": idx,
                "max_local_accuracy_error": attr.max_local_accuracy_error(),
            });
            std::fs::write(out.join("shap_meta.json"), serde_json::to_string_pretty(&meta)?)?;
            info!("{unit}/{name}: explained {} rows", rows.nrows());
        }
        write_run_json(&dir, "explain", cfg, &[])?;
    }
    write_run_json(&layout.stage("explain"), "explain", cfg, &[])
}

fn pct(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

pub fn report_cmd(cfg: &RunConfig, layout: &Layout) -> anyhow::Result<()> {
    let eval = layout.stage("eval");
    require(&eval, "run `evaluate` first")?;
    let mut s = String::from("# Run report\n\n");
    let mut rows = Vec::new();
    for unit in layout.prepared_units()? {
        let dir = layout.unit("eval", &unit);
        require(&dir.join("metrics.json"), "run `evaluate` first")?;
        let stacked = evalreport::read_report(&dir.join("metrics.json"))?;
        let base = |name: &str| -> anyhow::Result<Option<f64>> {
            let p = dir.join(name).join("metrics.json");
            Ok(if p.exists() {
                Some(evalreport::read_report(&p)?.accuracy)
            } else {
                None
            })
        };
        rows.push((unit.clone(), stacked, base("forest")?, base("boosted")?));
    }
    let _ = writeln!(
        s,
        "| Unit | Mode | Accuracy | Precision | Recall | F1 score | Forest acc. | Boosted acc. |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
    for (unit, r, f, b) in &rows {
        // binary units report the positive class, multiclass the weighted average
        let (p, rc, f1) = match &r.headline {
            Some(h) => (h.precision, h.recall, h.f1),
            None => (r.weighted_avg.precision, r.weighted_avg.recall, r.weighted_avg.f1),
        };
        let opt = |v: &Option<f64>| v.map_or("-".to_string(), pct);
        let _ = writeln!(
            s,
            "| {unit} | {} | {} | {} | {} | {} | {} | {} |",
            r.mode,
            pct(r.accuracy),
            pct(p),
            pct(rc),
            pct(f1),
            opt(f),
            opt(b)
        );
    }
    for (unit, r, _, _) in &rows {
        let _ = writeln!(s, "\n## {unit}\n");
        s.push_str(&evalreport::render_markdown(r));
    }
    let dir = layout.stage("report");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("report.md"), s)?;
    write_run_json(&dir, "report", cfg, &[])
}
