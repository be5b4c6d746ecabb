//! Ingestion of VeReMi-style message logs.
//!
//! Logs arrive as flattened CSV files, one message per row, with an integer
//! `attackerType` column. Loading maps those codes to class names, cleaning
//! removes NaN/±Inf cells, and the relabeling helpers build the binary
//! (BENIGN vs ATTACK) and per-attack datasets used for training.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const BENIGN: &str = "BENIGN";
pub const ATTACK: &str = "ATTACK";

/// Attacking-entry total quoted alongside the full corpus description; it
/// disagrees with the per-attack counts, so manifests flag it when the full
/// corpus is loaded.
const QUOTED_ATTACK_TOTAL: usize = 125_038;
const FULL_CORPUS_BENIGN: usize = 437_429;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub feature_columns: Vec<String>,
    pub label_column: String,
    /// Columns absent from this map are numeric.
    #[serde(default)]
    pub column_kinds: BTreeMap<String, ColumnKind>,
}

impl ColumnSchema {
    pub fn new(
        feature_columns: Vec<String>,
        label_column: impl Into<String>,
        column_kinds: BTreeMap<String, ColumnKind>,
    ) -> Result<Self> {
        let schema = ColumnSchema {
            feature_columns,
            label_column: label_column.into(),
            column_kinds,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// The flattened VeReMi layout: receive/send time, sender, message id,
    /// position and speed vectors, and the attacker type label.
    pub fn canonical() -> Self {
        let features = [
            "rcvTime", "sendTime", "sender", "messageID", "pos-x1", "pos-y1", "pos-z1", "spd-x1",
            "spd-y1", "spd-z1",
        ];
        let mut kinds = BTreeMap::new();
        kinds.insert("sender".to_string(), ColumnKind::Categorical);
        ColumnSchema {
            feature_columns: features.iter().map(|s| s.to_string()).collect(),
            label_column: "attackerType".to_string(),
            column_kinds: kinds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_columns.is_empty() {
            return Err(Error::Schema("no feature columns".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.feature_columns {
            if !seen.insert(c.as_str()) {
                return Err(Error::Schema(format!("duplicate feature column `{c}`")));
            }
        }
        if seen.contains(self.label_column.as_str()) {
            return Err(Error::Schema(format!(
                "label column `{}` is also a feature",
                self.label_column
            )));
        }
        for name in self.column_kinds.keys() {
            if !seen.contains(name.as_str()) && *name != self.label_column {
                return Err(Error::Schema(format!("kind given for unknown column `{name}`")));
            }
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.feature_columns.len()
    }

    pub fn kind(&self, column: &str) -> ColumnKind {
        self.column_kinds
            .get(column)
            .copied()
            .unwrap_or(ColumnKind::Numeric)
    }

    pub fn categorical_indices(&self) -> Vec<usize> {
        self.feature_columns
            .iter()
            .enumerate()
            .filter(|(_, c)| self.kind(c) == ColumnKind::Categorical)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn index_of(&self, column: &str) -> Option<usize> {
        self.feature_columns.iter().position(|c| c == column)
    }

    /// Schema restricted to the given feature indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let feature_columns: Vec<String> = indices
            .iter()
            .map(|&i| self.feature_columns[i].clone())
            .collect();
        let column_kinds = self
            .column_kinds
            .iter()
            .filter(|(k, _)| feature_columns.contains(k) || **k == self.label_column)
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        ColumnSchema {
            feature_columns,
            label_column: self.label_column.clone(),
            column_kinds,
        }
    }
}

/// Integer `attackerType` code to class name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackCodeMap {
    entries: Vec<(i64, String)>,
}

impl AttackCodeMap {
    pub fn new(entries: impl IntoIterator<Item = (i64, String)>) -> Result<Self> {
        let mut entries: Vec<(i64, String)> = entries.into_iter().collect();
        entries.sort_by_key(|(code, _)| *code);
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::Config(format!("duplicate attack code {}", pair[0].0)));
            }
        }
        let mut names: Vec<&str> = entries.iter().map(|(_, n)| n.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate attack class name".into()));
        }
        if !names.contains(&BENIGN) {
            return Err(Error::Config("code map has no BENIGN entry".into()));
        }
        Ok(AttackCodeMap { entries })
    }

    /// VeReMi position-falsification taxonomy.
    pub fn veremi() -> Self {
        AttackCodeMap::new([
            (0, BENIGN.to_string()),
            (1, "Constant Attack".to_string()),
            (2, "Constant Offset Attack".to_string()),
            (4, "Random Attack".to_string()),
            (8, "Random Offset Attack".to_string()),
            (16, "Eventual Stop Attack".to_string()),
        ])
        .expect("static code map is valid")
    }

    /// BENIGN first, then the remaining classes by ascending code.
    pub fn class_names(&self) -> Vec<String> {
        let mut out = vec![BENIGN.to_string()];
        out.extend(
            self.entries
                .iter()
                .filter(|(_, n)| n != BENIGN)
                .map(|(_, n)| n.clone()),
        );
        out
    }

    /// Label index (position in [`class_names`](Self::class_names)) for a code.
    pub fn label_of(&self, code: i64) -> Option<usize> {
        let name = &self.entries.iter().find(|(c, _)| *c == code)?.1;
        self.class_names().iter().position(|n| n == name)
    }

    pub fn code_of(&self, name: &str) -> Option<i64> {
        self.entries.iter().find(|(_, n)| n == name).map(|(c, _)| *c)
    }

    pub fn entries(&self) -> &[(i64, String)] {
        &self.entries
    }
}

impl Default for AttackCodeMap {
    fn default() -> Self {
        AttackCodeMap::veremi()
    }
}

/// Feature matrix, integer labels, schema and class-name table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    rows: Array2<f64>,
    labels: Vec<usize>,
    schema: ColumnSchema,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        rows: Array2<f64>,
        labels: Vec<usize>,
        schema: ColumnSchema,
        class_names: Vec<String>,
    ) -> Result<Self> {
        schema.validate()?;
        if rows.nrows() != labels.len() {
            return Err(Error::Dimension {
                expected: rows.nrows(),
                got: labels.len(),
            });
        }
        if rows.ncols() != schema.n_features() {
            return Err(Error::Dimension {
                expected: schema.n_features(),
                got: rows.ncols(),
            });
        }
        if class_names.is_empty() {
            return Err(Error::Schema("no class names".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Schema(format!(
                "label {bad} outside [0, {})",
                class_names.len()
            )));
        }
        Ok(Dataset {
            rows,
            labels,
            schema,
            class_names,
        })
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn schema(&self) -> &ColumnSchema {
        &self.schema
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.rows.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows() == 0
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Class name to row count, in class-name order.
    pub fn class_histogram(&self) -> Vec<(String, usize)> {
        self.class_names
            .iter()
            .cloned()
            .zip(self.class_counts())
            .collect()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    pub fn has_non_finite(&self) -> bool {
        self.rows.iter().any(|v| !v.is_finite())
    }

    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        Dataset {
            rows: self.rows.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            schema: self.schema.clone(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn select_columns(&self, indices: &[usize]) -> Dataset {
        Dataset {
            rows: self.rows.select(Axis(1), indices),
            labels: self.labels.clone(),
            schema: self.schema.subset(indices),
            class_names: self.class_names.clone(),
        }
    }

    /// Same labels, schema and classes with a replaced feature matrix.
    pub fn with_rows(&self, rows: Array2<f64>) -> Result<Dataset> {
        Dataset::new(
            rows,
            self.labels.clone(),
            self.schema.clone(),
            self.class_names.clone(),
        )
    }

    pub fn with_labels(&self, labels: Vec<usize>, class_names: Vec<String>) -> Result<Dataset> {
        Dataset::new(self.rows.clone(), labels, self.schema.clone(), class_names)
    }

    pub fn into_parts(self) -> (Array2<f64>, Vec<usize>, ColumnSchema, Vec<String>) {
        (self.rows, self.labels, self.schema, self.class_names)
    }
}

fn parse_cell(raw: &str) -> Option<f64> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") {
        return Some(f64::NAN);
    }
    if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("+inf") {
        return Some(f64::INFINITY);
    }
    if s.eq_ignore_ascii_case("-inf") {
        return Some(f64::NEG_INFINITY);
    }
    s.parse::<f64>().ok()
}

struct ParsedFile {
    values: Vec<f64>,
    labels: Vec<usize>,
}

fn parse_file(
    path: &Path,
    schema: &ColumnSchema,
    codes: &AttackCodeMap,
    renames: &BTreeMap<String, String>,
) -> Result<ParsedFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| {
            let h = h.trim();
            renames.get(h).cloned().unwrap_or_else(|| h.to_string())
        })
        .collect();
    let position = |column: &str| {
        header
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: column.to_string(),
            })
    };
    let feature_idx: Vec<usize> = schema
        .feature_columns
        .iter()
        .map(|c| position(c))
        .collect::<Result<_>>()?;
    let categorical: Vec<bool> = schema
        .feature_columns
        .iter()
        .map(|c| schema.kind(c) == ColumnKind::Categorical)
        .collect();
    let label_idx = position(&schema.label_column)?;

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(i + 2);
        let cell = |idx: usize| record.get(idx).unwrap_or("");
        for (j, &idx) in feature_idx.iter().enumerate() {
            let raw = cell(idx);
            let parse_err = || Error::Parse {
                path: path.to_path_buf(),
                row,
                column: schema.feature_columns[j].clone(),
                value: raw.to_string(),
            };
            let v = parse_cell(raw).ok_or_else(parse_err)?;
            if categorical[j] && v.is_finite() && (v < 0.0 || v.fract() != 0.0) {
                return Err(parse_err());
            }
            values.push(v);
        }
        let raw = cell(label_idx);
        let code = parse_cell(raw)
            .filter(|v| v.is_finite() && v.fract() == 0.0)
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                row,
                column: schema.label_column.clone(),
                value: raw.to_string(),
            })? as i64;
        let label = codes.label_of(code).ok_or(Error::UnknownAttackCode {
            path: path.to_path_buf(),
            row,
            code,
        })?;
        labels.push(label);
    }
    Ok(ParsedFile { values, labels })
}

/// Loads and concatenates CSV logs in path order.
pub fn load_csv<P: AsRef<Path> + Sync>(
    paths: &[P],
    schema: &ColumnSchema,
    codes: &AttackCodeMap,
) -> Result<Dataset> {
    load_csv_with(paths, schema, codes, &BTreeMap::new())
}

/// Like [`load_csv`], renaming header cells through `renames` (source name to
/// schema name) before matching them against the schema.
pub fn load_csv_with<P: AsRef<Path> + Sync>(
    paths: &[P],
    schema: &ColumnSchema,
    codes: &AttackCodeMap,
    renames: &BTreeMap<String, String>,
) -> Result<Dataset> {
    schema.validate()?;
    let parsed: Vec<ParsedFile> = paths
        .par_iter()
        .map(|p| parse_file(p.as_ref(), schema, codes, renames))
        .collect::<Result<_>>()?;
    let d = schema.n_features();
    let n: usize = parsed.iter().map(|p| p.labels.len()).sum();
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for p in parsed {
        values.extend(p.values);
        labels.extend(p.labels);
    }
    let rows = Array2::from_shape_vec((n, d), values).expect("row-major buffer of n*d values");
    Dataset::new(rows, labels, schema.clone(), codes.class_names())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanPolicy {
    #[default]
    Median,
    Zero,
    DropRow,
}

impl std::str::FromStr for CleanPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(CleanPolicy::Median),
            "zero" => Ok(CleanPolicy::Zero),
            "drop_row" | "drop-row" => Ok(CleanPolicy::DropRow),
            other => Err(Error::Config(format!("unknown cleaning policy `{other}`"))),
        }
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len().is_multiple_of(2) {
        0.5 * (values[mid - 1] + values[mid])
    } else {
        values[mid]
    })
}

/// Per-column substitutes for NaN/±Inf cells, fit on a training corpus.
///
/// Under `drop_row` the fitted fills are still the column medians so that
/// single rows can be repaired at inference time, where dropping is not an
/// option.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cleaner {
    pub policy: CleanPolicy,
    pub fill: Vec<f64>,
}

impl Cleaner {
    pub fn fit(d: &Dataset, policy: CleanPolicy) -> Result<Self> {
        let fill = match policy {
            CleanPolicy::Zero => vec![0.0; d.n_features()],
            CleanPolicy::Median | CleanPolicy::DropRow => {
                let mut fill = Vec::with_capacity(d.n_features());
                for (j, col) in d.rows.columns().into_iter().enumerate() {
                    let mut finite: Vec<f64> = col.iter().copied().filter(|v| v.is_finite()).collect();
                    match median(&mut finite) {
                        Some(m) => fill.push(m),
                        None if policy == CleanPolicy::DropRow || d.is_empty() => fill.push(0.0),
                        None => {
                            return Err(Error::AllMissing(d.schema.feature_columns[j].clone()))
                        }
                    }
                }
                fill
            }
        };
        Ok(Cleaner { policy, fill })
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        if self.fill.len() != d.n_features() {
            return Err(Error::Dimension {
                expected: self.fill.len(),
                got: d.n_features(),
            });
        }
        if !d.has_non_finite() {
            return Ok(d.clone());
        }
        match self.policy {
            CleanPolicy::DropRow => {
                let keep: Vec<usize> = d
                    .rows
                    .outer_iter()
                    .enumerate()
                    .filter(|(_, r)| r.iter().all(|v| v.is_finite()))
                    .map(|(i, _)| i)
                    .collect();
                Ok(d.select_rows(&keep))
            }
            CleanPolicy::Median | CleanPolicy::Zero => {
                let mut rows = d.rows.clone();
                for mut r in rows.outer_iter_mut() {
                    self.fill_row(r.as_slice_mut().expect("standard layout"));
                }
                d.with_rows(rows)
            }
        }
    }

    /// Replaces non-finite cells in place with the fitted fill values.
    pub fn fill_row(&self, row: &mut [f64]) {
        for (v, &f) in row.iter_mut().zip(&self.fill) {
            if !v.is_finite() {
                *v = f;
            }
        }
    }
}

/// Removes or substitutes NaN/±Inf cells; ±Inf is treated as missing.
pub fn clean(d: &Dataset, policy: CleanPolicy) -> Result<Dataset> {
    Cleaner::fit(d, policy)?.apply(d)
}

/// Relabels every non-BENIGN class as ATTACK.
pub fn binarize(d: &Dataset) -> Result<Dataset> {
    let benign = d.class_index(BENIGN).ok_or(Error::NoBenign)?;
    if d.class_names == [BENIGN, ATTACK] {
        return Ok(d.clone());
    }
    let labels = d
        .labels
        .iter()
        .map(|&l| usize::from(l != benign))
        .collect();
    d.with_labels(labels, vec![BENIGN.to_string(), ATTACK.to_string()])
}

/// Keeps the BENIGN rows and the rows of one attack class.
pub fn isolate_attack(d: &Dataset, attack: &str) -> Result<Dataset> {
    let benign = d.class_index(BENIGN).ok_or(Error::NoBenign)?;
    let target = d
        .class_index(attack)
        .filter(|&i| i != benign)
        .ok_or_else(|| Error::UnknownClass(attack.to_string()))?;
    let keep: Vec<usize> = (0..d.n_rows())
        .filter(|&i| d.labels[i] == benign || d.labels[i] == target)
        .collect();
    let subset = d.select_rows(&keep);
    let labels = subset
        .labels
        .iter()
        .map(|&l| usize::from(l == target))
        .collect();
    subset.with_labels(labels, vec![BENIGN.to_string(), attack.to_string()])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPair {
    pub train: Dataset,
    pub test: Dataset,
    pub seed: u64,
    pub ratio: f64,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Stratified train/test split; `ratio` is the training fraction.
///
/// Each class contributes `round(count * (1 - ratio))` rows to the test
/// side, clamped so both sides keep at least one row of every present class.
pub fn stratified_split(d: &Dataset, ratio: f64, seed: u64) -> Result<SplitPair> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} outside (0, 1)")));
    }
    let by_class = indices_by_class(&d.labels, d.n_classes());
    for (c, idx) in by_class.iter().enumerate() {
        if idx.len() == 1 {
            return Err(Error::ClassTooSmall {
                class: d.class_names[c].clone(),
                count: 1,
                needed: 2,
            });
        }
    }
    let mut rng = seed::rng(seed::derive_named(seed, "split"));
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for mut idx in by_class {
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let ideal = idx.len() as f64 * (1.0 - ratio);
        let n_test = (ideal.round() as usize).clamp(1, idx.len() - 1);
        test_idx.extend_from_slice(&idx[..n_test]);
        train_idx.extend_from_slice(&idx[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(SplitPair {
        train: d.select_rows(&train_idx),
        test: d.select_rows(&test_idx),
        seed,
        ratio,
        train_indices: train_idx,
        test_indices: test_idx,
    })
}

pub(crate) fn indices_by_class(labels: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    by_class
}

/// Stratified k-fold assignment: returns the fold id of every row.
///
/// Rows of each class are shuffled and dealt round-robin, continuing the
/// rotation across classes so fold sizes differ by at most one.
pub fn stratified_folds(
    labels: &[usize],
    n_classes: usize,
    folds: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    let mut rng = seed::rng(seed::derive_named(seed, "folds"));
    let mut assignment = vec![0; labels.len()];
    let mut offset = 0;
    for (c, mut idx) in indices_by_class(labels, n_classes).into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < folds {
            return Err(Error::ClassTooSmall {
                class: format!("#{c}"),
                count: idx.len(),
                needed: folds,
            });
        }
        idx.shuffle(&mut rng);
        for (pos, i) in idx.iter().enumerate() {
            assignment[*i] = (offset + pos) % folds;
        }
        offset += idx.len();
    }
    Ok(assignment)
}

/// Side-car description of a persisted dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub schema: ColumnSchema,
    pub class_names: Vec<String>,
    pub row_count: usize,
    pub class_counts: Vec<usize>,
    pub cleaning_policy: Option<CleanPolicy>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn describe(d: &Dataset, cleaning_policy: Option<CleanPolicy>, seed: Option<u64>) -> Self {
        let class_counts = d.class_counts();
        let mut notes = Vec::new();
        if let Some(b) = d.class_index(BENIGN) {
            let attack_rows = d.n_rows() - class_counts[b];
            if class_counts[b] == FULL_CORPUS_BENIGN && attack_rows != QUOTED_ATTACK_TOTAL {
                notes.push(format!(
                    "loaded {attack_rows} attack rows; the commonly quoted corpus total is {QUOTED_ATTACK_TOTAL}"
                ));
            }
        }
        Manifest {
            version: crate::FORMAT_VERSION,
            schema: d.schema.clone(),
            class_names: d.class_names.clone(),
            row_count: d.n_rows(),
            class_counts,
            cleaning_policy,
            seed,
            notes,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Writes a dataset as CSV: feature columns, then the label column holding
/// class names.
pub fn write_csv(d: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = d.schema.feature_columns.join(",");
    header.push(',');
    header.push_str(&d.schema.label_column);
    writeln!(w, "{header}").map_err(io)?;
    let mut line = String::new();
    for (row, &label) in d.rows.outer_iter().zip(&d.labels) {
        line.clear();
        for v in row {
            line.push_str(&format_value(*v));
            line.push(',');
        }
        line.push_str(&d.class_names[label]);
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes a dataset in the raw log layout that [`load_csv`] ingests: the
/// label column holds attack codes.
pub fn write_veremi_csv(d: &Dataset, codes: &AttackCodeMap, path: &Path) -> Result<()> {
    let label_codes: Vec<i64> = d
        .class_names
        .iter()
        .map(|n| codes.code_of(n).ok_or_else(|| Error::UnknownClass(n.clone())))
        .collect::<Result<_>>()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(
        w,
        "{},{}",
        d.schema.feature_columns.join(","),
        d.schema.label_column
    )
    .map_err(io)?;
    let mut line = String::new();
    for (row, &label) in d.rows.outer_iter().zip(&d.labels) {
        line.clear();
        for v in row {
            line.push_str(&format_value(*v));
            line.push(',');
        }
        line.push_str(&label_codes[label].to_string());
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

/// Reads a CSV written by [`write_csv`]; labels are class names resolved
/// through the manifest.
pub fn read_csv(path: &Path, manifest: &Manifest) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let schema = &manifest.schema;
    let mut expected = schema.feature_columns.clone();
    expected.push(schema.label_column.clone());
    if header != expected {
        return Err(Error::SchemaMismatch(format!(
            "{}: header {:?} does not match manifest",
            path.display(),
            header
        )));
    }
    let d = schema.n_features();
    let mut values = Vec::with_capacity(manifest.row_count * d);
    let mut labels = Vec::with_capacity(manifest.row_count);
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
        for j in 0..d {
            let raw = &record[j];
            values.push(parse_cell(raw).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                row,
                column: schema.feature_columns[j].clone(),
                value: raw.to_string(),
            })?);
        }
        let name = &record[d];
        let label = manifest
            .class_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))?;
        labels.push(label);
    }
    let n = labels.len();
    let rows = Array2::from_shape_vec((n, d), values).expect("row-major buffer of n*d values");
    Dataset::new(rows, labels, schema.clone(), manifest.class_names.clone())
}

/// Writes `<stem>.csv` and `<stem>.manifest.json` into `dir`.
pub fn persist(
    d: &Dataset,
    dir: &Path,
    stem: &str,
    cleaning_policy: Option<CleanPolicy>,
    seed: Option<u64>,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let manifest_path = dir.join(format!("{stem}.manifest.json"));
    write_csv(d, &csv_path)?;
    Manifest::describe(d, cleaning_policy, seed).write(&manifest_path)?;
    Ok((csv_path, manifest_path))
}

/// Reads the pair written by [`persist`].
pub fn restore(dir: &Path, stem: &str) -> Result<Dataset> {
    let manifest = Manifest::read(&dir.join(format!("{stem}.manifest.json")))?;
    read_csv(&dir.join(format!("{stem}.csv")), &manifest)
}
