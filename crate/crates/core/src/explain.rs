//! Shapley-value attributions for the tree models.
//!
//! Attributions use the path-dependent convention: a feature outside the
//! coalition is marginalized by following both children of its splits,
//! weighted by the share of training rows (the node covers) that went each
//! way. [`tree_shap`] computes these values in polynomial time;
//! [`exact_shap`] enumerates every coalition and serves as the reference.
//!
//! The forest is explained on the probability scale (its output is a mean
//! of leaf distributions, which is linear), the boosted model on the margin
//! scale where its stages add up exactly.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boosted::{BoostedModel, FeatureEncoder, ObliviousTree};
use crate::error::{Error, Result};
use crate::trees::{Forest, Node, Tree};

/// Largest feature count accepted by the exhaustive routines.
pub const MAX_EXACT_FEATURES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputScale {
    Probability,
    Margin,
}

#[derive(Clone, Debug, PartialEq)]
enum ShapNode {
    Split {
        player: usize,
        column: usize,
        threshold: f64,
        left: usize,
        right: usize,
        left_frac: f64,
        right_frac: f64,
    },
    Leaf {
        value: Vec<f64>,
    },
}

/// A tree in the form the attribution routines walk: splits test an
/// encoded column but are credited to a player (the original feature).
#[derive(Clone, Debug, PartialEq)]
pub struct ShapTree {
    nodes: Vec<ShapNode>,
    covers: Vec<f64>,
}

impl ShapTree {
    fn from_tree(tree: &Tree, scale: f64) -> Self {
        let nodes = tree
            .nodes
            .iter()
            .map(|n| match n {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => ShapNode::Split {
                    player: *feature,
                    column: *feature,
                    threshold: *threshold,
                    left: *left,
                    right: *right,
                    left_frac: 0.0,
                    right_frac: 0.0,
                },
                Node::Leaf { value, .. } => ShapNode::Leaf {
                    value: value.iter().map(|v| v * scale).collect(),
                },
            })
            .collect();
        let covers = tree.nodes.iter().map(Node::cover).collect();
        let mut t = ShapTree { nodes, covers };
        t.refresh_fractions();
        t
    }

    /// Expands an oblivious tree into an explicit binary tree, breadth-first.
    fn from_oblivious(stage: &ObliviousTree) -> Self {
        let depth = stage.levels.len();
        let mut nodes = Vec::new();
        let mut covers = Vec::new();
        for (level, lvl) in stage.levels.iter().enumerate() {
            let width = 1usize << level;
            let first_child = (1usize << (level + 1)) - 1;
            for p in 0..width {
                let left = first_child + 2 * p;
                nodes.push(ShapNode::Split {
                    player: lvl.feature,
                    column: lvl.column,
                    threshold: lvl.threshold,
                    left,
                    right: left + 1,
                    left_frac: 0.0,
                    right_frac: 0.0,
                });
                let span = 1usize << (depth - level);
                covers.push(stage.leaf_covers[p * span..(p + 1) * span].iter().sum());
            }
        }
        for (leaf, value) in stage.leaf_values.iter().enumerate() {
            nodes.push(ShapNode::Leaf {
                value: value.clone(),
            });
            covers.push(stage.leaf_covers[leaf]);
        }
        let mut t = ShapTree { nodes, covers };
        t.refresh_fractions();
        t
    }

    fn refresh_fractions(&mut self) {
        for id in 0..self.nodes.len() {
            let parent = self.covers[id];
            if let ShapNode::Split {
                left,
                right,
                left_frac,
                right_frac,
                ..
            } = &mut self.nodes[id]
            {
                if parent > 0.0 {
                    *left_frac = self.covers[*left] / parent;
                    *right_frac = self.covers[*right] / parent;
                } else {
                    // unreachable by training rows: split evenly
                    *left_frac = 0.5;
                    *right_frac = 0.5;
                }
            }
        }
    }

    fn leaf_of(&self, x: &[f64]) -> usize {
        let mut id = 0;
        while let ShapNode::Split {
            column,
            threshold,
            left,
            right,
            ..
        } = &self.nodes[id]
        {
            id = if x[*column] <= *threshold { *left } else { *right };
        }
        id
    }

    fn predict(&self, x: &[f64]) -> &[f64] {
        match &self.nodes[self.leaf_of(x)] {
            ShapNode::Leaf { value } => value,
            ShapNode::Split { .. } => unreachable!(),
        }
    }

    /// Expected output when only the players flagged in `known` follow `x`.
    fn conditional_expectation(&self, x: &[f64], known: &dyn Fn(usize) -> bool, out: &mut [f64]) {
        fn go(t: &ShapTree, id: usize, x: &[f64], known: &dyn Fn(usize) -> bool, w: f64, out: &mut [f64]) {
            if w == 0.0 {
                return;
            }
            match &t.nodes[id] {
                ShapNode::Leaf { value } => {
                    for (o, v) in out.iter_mut().zip(value) {
                        *o += w * v;
                    }
                }
                ShapNode::Split {
                    player,
                    column,
                    threshold,
                    left,
                    right,
                    left_frac,
                    right_frac,
                } => {
                    if known(*player) {
                        let next = if x[*column] <= *threshold { *left } else { *right };
                        go(t, next, x, known, w, out);
                    } else {
                        go(t, *left, x, known, w * left_frac, out);
                        go(t, *right, x, known, w * right_frac, out);
                    }
                }
            }
        }
        go(self, 0, x, known, 1.0, out);
    }

    fn players(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            ShapNode::Split { player, .. } => Some(*player),
            ShapNode::Leaf { .. } => None,
        })
    }
}

/// Either base learner, flattened for attribution.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeEnsemble {
    trees: Vec<ShapTree>,
    offset: Vec<f64>,
    n_features: usize,
    n_outputs: usize,
    scale: OutputScale,
    encoder: Option<FeatureEncoder>,
}

impl TreeEnsemble {
    pub fn from_forest(forest: &Forest) -> Result<Self> {
        if forest.trees.is_empty() {
            return Err(Error::Unfitted("forest has no trees".into()));
        }
        let scale = 1.0 / forest.trees.len() as f64;
        Ok(TreeEnsemble {
            trees: forest
                .trees
                .iter()
                .map(|t| ShapTree::from_tree(t, scale))
                .collect(),
            offset: vec![0.0; forest.n_classes],
            n_features: forest.feature_count,
            n_outputs: forest.n_classes,
            scale: OutputScale::Probability,
            encoder: None,
        })
    }

    pub fn from_boosted(model: &BoostedModel) -> Result<Self> {
        if model.base_score.is_empty() {
            return Err(Error::Unfitted("boosted model has no base score".into()));
        }
        Ok(TreeEnsemble {
            trees: model.stages.iter().map(ShapTree::from_oblivious).collect(),
            offset: model.base_score.clone(),
            n_features: model.encoder.n_features,
            n_outputs: model.n_outputs,
            scale: OutputScale::Margin,
            encoder: Some(model.encoder.clone()),
        })
    }

    /// A bare tree explained on its own leaf values.
    pub fn from_tree(tree: &Tree, n_features: usize) -> Self {
        TreeEnsemble {
            trees: vec![ShapTree::from_tree(tree, 1.0)],
            offset: vec![0.0; tree.output_len()],
            n_features,
            n_outputs: tree.output_len(),
            scale: OutputScale::Probability,
            encoder: None,
        }
    }

    /// Replaces node covers with traversal counts of `background` rows.
    pub fn with_background(mut self, background: ArrayView2<'_, f64>) -> Result<Self> {
        let encoded = self.encode(background)?;
        for tree in &mut self.trees {
            let mut covers = vec![0.0; tree.nodes.len()];
            for row in encoded.outer_iter() {
                let x = row.as_slice().expect("standard layout");
                let mut id = 0;
                loop {
                    covers[id] += 1.0;
                    match &tree.nodes[id] {
                        ShapNode::Leaf { .. } => break,
                        ShapNode::Split {
                            column,
                            threshold,
                            left,
                            right,
                            ..
                        } => id = if x[*column] <= *threshold { *left } else { *right },
                    }
                }
            }
            tree.covers = covers;
            tree.refresh_fractions();
        }
        Ok(self)
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn scale(&self) -> OutputScale {
        self.scale
    }

    fn encode(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                got: rows.ncols(),
            });
        }
        match &self.encoder {
            Some(e) => e.encode(rows),
            None => Ok(rows.as_standard_layout().into_owned()),
        }
    }

    /// Model output on the attribution scale.
    pub fn output(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let encoded = self.encode(rows)?;
        let mut out = Array2::zeros((rows.nrows(), self.n_outputs));
        for (i, row) in encoded.outer_iter().enumerate() {
            let x = row.as_slice().expect("standard layout");
            let mut acc = self.offset.clone();
            for t in &self.trees {
                for (a, v) in acc.iter_mut().zip(t.predict(x)) {
                    *a += v;
                }
            }
            out.row_mut(i).assign(&ArrayView1::from(&acc));
        }
        Ok(out)
    }

    /// Cover-weighted expected output (the attribution base value).
    pub fn expected_value(&self) -> Vec<f64> {
        let mut acc = self.offset.clone();
        let nothing = |_: usize| false;
        for t in &self.trees {
            t.conditional_expectation(&[], &nothing, &mut acc);
        }
        acc
    }

    fn value_of_coalition(&self, x: &[f64], mask: u64) -> Vec<f64> {
        let mut acc = self.offset.clone();
        let known = |p: usize| mask & (1u64 << p) != 0;
        for t in &self.trees {
            t.conditional_expectation(x, &known, &mut acc);
        }
        acc
    }
}

impl TryFrom<&Forest> for TreeEnsemble {
    type Error = Error;

    fn try_from(f: &Forest) -> Result<Self> {
        TreeEnsemble::from_forest(f)
    }
}

impl TryFrom<&BoostedModel> for TreeEnsemble {
    type Error = Error;

    fn try_from(m: &BoostedModel) -> Result<Self> {
        TreeEnsemble::from_boosted(m)
    }
}

/// Per-row, per-output, per-feature Shapley values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    /// `n x outputs x m`
    pub phi: Array3<f64>,
    pub base_value: Vec<f64>,
    /// `n x outputs`, on the attribution scale.
    pub model_output: Array2<f64>,
    /// The explained rows, `n x m`.
    pub feature_values: Array2<f64>,
    pub feature_names: Vec<String>,
    pub scale: OutputScale,
}

impl Attribution {
    pub fn n_rows(&self) -> usize {
        self.phi.len_of(Axis(0))
    }

    pub fn n_outputs(&self) -> usize {
        self.phi.len_of(Axis(1))
    }

    pub fn n_features(&self) -> usize {
        self.phi.len_of(Axis(2))
    }

    /// Largest `|base + sum(phi) - output|` over rows and outputs.
    pub fn max_local_accuracy_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n_rows() {
            for o in 0..self.n_outputs() {
                let total = self.base_value[o] + self.phi.slice(ndarray::s![i, o, ..]).sum();
                worst = worst.max((total - self.model_output[[i, o]]).abs());
            }
        }
        worst
    }
}

#[derive(Clone, Copy, Debug)]
struct PathElem {
    player: Option<usize>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend_path(path: &mut Vec<PathElem>, zero: f64, one: f64, player: Option<usize>) {
    let depth = path.len();
    path.push(PathElem {
        player,
        zero,
        one,
        weight: if depth == 0 { 1.0 } else { 0.0 },
    });
    for i in (0..depth).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / (depth + 1) as f64;
        path[i].weight = zero * path[i].weight * (depth - i) as f64 / (depth + 1) as f64;
    }
}

fn unwind_path(path: &mut Vec<PathElem>, index: usize) {
    let depth = path.len() - 1;
    let one = path[index].one;
    let zero = path[index].zero;
    let mut next = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * (depth + 1) as f64 / ((i + 1) as f64 * one);
            next = tmp - path[i].weight * zero * (depth - i) as f64 / (depth + 1) as f64;
        } else {
            path[i].weight = path[i].weight * (depth + 1) as f64 / (zero * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].player = path[i + 1].player;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
    path.pop();
}

/// Total weight of the path with element `index` removed.
fn unwound_sum(path: &[PathElem], index: usize) -> f64 {
    let depth = path.len() - 1;
    let one = path[index].one;
    let zero = path[index].zero;
    let mut next = path[depth].weight;
    let mut total = 0.0;
    if one != 0.0 {
        for i in (0..depth).rev() {
            let tmp = next / ((i + 1) as f64 * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (depth - i) as f64;
        }
    } else {
        for i in (0..depth).rev() {
            total += path[i].weight / (zero * (depth - i) as f64);
        }
    }
    total * (depth + 1) as f64
}

/// Fixes one player present (`on`) or absent (`off`) for interaction values.
#[derive(Clone, Copy)]
struct Condition {
    player: usize,
    on: bool,
}

struct Walker<'a> {
    tree: &'a ShapTree,
    x: &'a [f64],
    n_outputs: usize,
    condition: Option<Condition>,
    /// `m x outputs`, row-major
    phi: &'a mut [f64],
}

impl Walker<'_> {
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        &mut self,
        node: usize,
        parent: &[PathElem],
        zero: f64,
        one: f64,
        player: Option<usize>,
        extend: bool,
        cond_frac: f64,
    ) {
        if cond_frac == 0.0 {
            return;
        }
        let mut path = parent.to_vec();
        if extend {
            extend_path(&mut path, zero, one, player);
        }
        match &self.tree.nodes[node] {
            ShapNode::Leaf { value } => {
                for i in 1..path.len() {
                    let w = unwound_sum(&path, i);
                    let el = path[i];
                    let p = el.player.expect("only the root element lacks a player");
                    let scale = w * (el.one - el.zero) * cond_frac;
                    for (o, v) in value.iter().enumerate() {
                        self.phi[p * self.n_outputs + o] += scale * v;
                    }
                }
            }
            ShapNode::Split {
                player: split_player,
                column,
                threshold,
                left,
                right,
                left_frac,
                right_frac,
            } => {
                let goes_left = self.x[*column] <= *threshold;
                let (hot, cold, hot_frac, cold_frac) = if goes_left {
                    (*left, *right, *left_frac, *right_frac)
                } else {
                    (*right, *left, *right_frac, *left_frac)
                };
                if let Some(c) = self.condition.filter(|c| c.player == *split_player) {
                    if c.on {
                        self.recurse(hot, &path, 0.0, 0.0, None, false, cond_frac);
                    } else {
                        self.recurse(hot, &path, 0.0, 0.0, None, false, cond_frac * hot_frac);
                        self.recurse(cold, &path, 0.0, 0.0, None, false, cond_frac * cold_frac);
                    }
                    return;
                }
                let mut incoming_zero = 1.0;
                let mut incoming_one = 1.0;
                if let Some(idx) = path.iter().position(|e| e.player == Some(*split_player)) {
                    incoming_zero = path[idx].zero;
                    incoming_one = path[idx].one;
                    unwind_path(&mut path, idx);
                }
                let hz = hot_frac * incoming_zero;
                if hz != 0.0 || incoming_one != 0.0 {
                    self.recurse(hot, &path, hz, incoming_one, Some(*split_player), true, cond_frac);
                }
                let cz = cold_frac * incoming_zero;
                if cz != 0.0 {
                    self.recurse(cold, &path, cz, 0.0, Some(*split_player), true, cond_frac);
                }
            }
        }
    }
}

fn shap_row(model: &TreeEnsemble, x: &[f64], condition: Option<Condition>) -> Vec<f64> {
    let mut phi = vec![0.0; model.n_features * model.n_outputs];
    for tree in &model.trees {
        let mut walker = Walker {
            tree,
            x,
            n_outputs: model.n_outputs,
            condition,
            phi: &mut phi,
        };
        walker.recurse(0, &[], 1.0, 1.0, None, true, 1.0);
    }
    phi
}

fn default_names(m: usize) -> Vec<String> {
    (0..m).map(|j| format!("f{j}")).collect()
}

/// Path-dependent TreeSHAP for every row; parallel over rows.
pub fn tree_shap(model: &TreeEnsemble, rows: ArrayView2<'_, f64>) -> Result<Attribution> {
    tree_shap_named(model, rows, default_names(model.n_features))
}

pub fn tree_shap_named(
    model: &TreeEnsemble,
    rows: ArrayView2<'_, f64>,
    feature_names: Vec<String>,
) -> Result<Attribution> {
    if model.trees.is_empty() && model.scale == OutputScale::Probability {
        return Err(Error::Unfitted("no trees to explain".into()));
    }
    if feature_names.len() != model.n_features {
        return Err(Error::Dimension {
            expected: model.n_features,
            got: feature_names.len(),
        });
    }
    let encoded = model.encode(rows)?;
    let (m, k) = (model.n_features, model.n_outputs);
    let per_row: Vec<Vec<f64>> = (0..encoded.nrows())
        .into_par_iter()
        .map(|i| {
            let row = encoded.row(i);
            shap_row(model, row.as_slice().expect("standard layout"), None)
        })
        .collect();
    let mut phi = Array3::zeros((rows.nrows(), k, m));
    for (i, p) in per_row.iter().enumerate() {
        for j in 0..m {
            for o in 0..k {
                phi[[i, o, j]] = p[j * k + o];
            }
        }
    }
    Ok(Attribution {
        phi,
        base_value: model.expected_value(),
        model_output: model.output(rows)?,
        feature_values: rows.as_standard_layout().into_owned(),
        feature_names,
        scale: model.scale,
    })
}

fn shapley_weights(m: usize) -> Vec<f64> {
    // weight(s) = s! (m - s - 1)! / m!
    let mut w = Vec::with_capacity(m);
    for s in 0..m {
        let mut v = 1.0 / m as f64;
        // 1 / (m * C(m-1, s))
        let mut c = 1.0;
        for t in 0..s {
            c *= (m - 1 - t) as f64 / (t + 1) as f64;
        }
        v /= c;
        w.push(v);
    }
    w
}

/// Shapley values of one row by enumerating all `2^m` coalitions of the
/// same path-dependent value function; returns `outputs x m`.
pub fn exact_shap(model: &TreeEnsemble, row: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
    let m = model.n_features;
    if m > MAX_EXACT_FEATURES {
        return Err(Error::TooManyFeatures {
            got: m,
            max: MAX_EXACT_FEATURES,
        });
    }
    let encoded = model.encode(row.insert_axis(Axis(0)))?;
    let x = encoded.row(0);
    let x = x.as_slice().expect("standard layout");
    let k = model.n_outputs;
    let values: Vec<Vec<f64>> = (0..1u64 << m)
        .map(|mask| model.value_of_coalition(x, mask))
        .collect();
    let weights = shapley_weights(m);
    let mut phi = Array2::zeros((k, m));
    for j in 0..m {
        let bit = 1u64 << j;
        for mask in 0..1u64 << m {
            if mask & bit != 0 {
                continue;
            }
            let w = weights[mask.count_ones() as usize];
            for o in 0..k {
                phi[[o, j]] += w * (values[(mask | bit) as usize][o] - values[mask as usize][o]);
            }
        }
    }
    Ok(phi)
}

/// Per-row symmetric Shapley interaction matrices, `n x outputs x m x m`,
/// with main effects on the diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionMatrix {
    pub values: ndarray::Array4<f64>,
    pub feature_names: Vec<String>,
}

impl InteractionMatrix {
    /// Row sums of the matrix of `row` for `output`; equals that row's phi.
    pub fn row_sums(&self, row: usize, output: usize) -> Vec<f64> {
        self.values
            .slice(ndarray::s![row, output, .., ..])
            .sum_axis(Axis(1))
            .to_vec()
    }
}

/// Shapley interaction values computed by conditioning each feature on and
/// off inside the tree walk.
pub fn interaction_values(model: &TreeEnsemble, rows: ArrayView2<'_, f64>) -> Result<InteractionMatrix> {
    let m = model.n_features;
    if m > MAX_EXACT_FEATURES {
        return Err(Error::TooManyFeatures {
            got: m,
            max: MAX_EXACT_FEATURES,
        });
    }
    let k = model.n_outputs;
    let encoded = model.encode(rows)?;
    let mut used = vec![false; m];
    for t in &model.trees {
        for p in t.players() {
            used[p] = true;
        }
    }
    let per_row: Vec<Vec<f64>> = (0..encoded.nrows())
        .into_par_iter()
        .map(|i| {
            let row = encoded.row(i);
            let x = row.as_slice().expect("standard layout");
            let phi = shap_row(model, x, None);
            // raw[(j * m + i) * k + o]: effect of i when j is toggled
            let mut raw = vec![0.0; m * m * k];
            for j in (0..m).filter(|&j| used[j]) {
                let on = shap_row(model, x, Some(Condition { player: j, on: true }));
                let off = shap_row(model, x, Some(Condition { player: j, on: false }));
                for i2 in 0..m {
                    if i2 == j {
                        continue;
                    }
                    for o in 0..k {
                        raw[(j * m + i2) * k + o] = 0.5 * (on[i2 * k + o] - off[i2 * k + o]);
                    }
                }
            }
            let mut out = vec![0.0; k * m * m];
            for o in 0..k {
                for a in 0..m {
                    let mut off_diag = 0.0;
                    for b in 0..m {
                        if a == b {
                            continue;
                        }
                        let v = 0.5 * (raw[(b * m + a) * k + o] + raw[(a * m + b) * k + o]);
                        out[(o * m + a) * m + b] = v;
                        off_diag += v;
                    }
                    out[(o * m + a) * m + a] = phi[a * k + o] - off_diag;
                }
            }
            out
        })
        .collect();
    let mut values = ndarray::Array4::zeros((rows.nrows(), k, m, m));
    for (i, v) in per_row.into_iter().enumerate() {
        let block = ndarray::Array3::from_shape_vec((k, m, m), v).expect("k*m*m");
        values.index_axis_mut(Axis(0), i).assign(&block);
    }
    Ok(InteractionMatrix {
        values,
        feature_names: default_names(m),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: usize,
    pub name: String,
    pub rank: usize,
    pub mean_abs_phi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub row: usize,
    pub output: usize,
    pub feature: usize,
    pub feature_value: f64,
    pub phi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub ranking: Vec<RankedFeature>,
    pub scatter: Vec<ScatterPoint>,
}

/// Mean |phi| ranking and beeswarm points.
///
/// With `output = None` the mean |phi| is summed over outputs and the
/// scatter holds one point per row, output and feature.
pub fn summary_stats(attr: &Attribution, output: Option<usize>) -> Result<Summary> {
    if attr.n_rows() == 0 {
        return Err(Error::Empty("no attribution rows".into()));
    }
    let outputs: Vec<usize> = match output {
        Some(o) if o < attr.n_outputs() => vec![o],
        Some(o) => {
            return Err(Error::Dimension {
                expected: attr.n_outputs(),
                got: o,
            })
        }
        None => (0..attr.n_outputs()).collect(),
    };
    let n = attr.n_rows() as f64;
    let m = attr.n_features();
    let means: Vec<f64> = (0..m)
        .map(|j| {
            outputs
                .iter()
                .map(|&o| attr.phi.slice(ndarray::s![.., o, j]).iter().map(|v| v.abs()).sum::<f64>() / n)
                .sum()
        })
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]));
    let ranking = order
        .iter()
        .enumerate()
        .map(|(rank, &j)| RankedFeature {
            feature: j,
            name: attr.feature_names[j].clone(),
            rank: rank + 1,
            mean_abs_phi: means[j],
        })
        .collect();
    let mut scatter = Vec::with_capacity(attr.n_rows() * m);
    for &o in &outputs {
        for i in 0..attr.n_rows() {
            for j in 0..m {
                scatter.push(ScatterPoint {
                    row: i,
                    output: o,
                    feature: j,
                    feature_value: attr.feature_values[[i, j]],
                    phi: attr.phi[[i, o, j]],
                });
            }
        }
    }
    Ok(Summary { ranking, scatter })
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes `shap_summary.csv` and `shap_scatter.csv`; `output_names` labels
/// the scatter points by output index.
pub fn export_summary(
    summary: &Summary,
    feature_names: &[String],
    output_names: &[String],
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut s = String::from("feature,rank,mean_abs_phi\n");
    for r in &summary.ranking {
        s.push_str(&format!("{},{},{}\n", r.name, r.rank, r.mean_abs_phi));
    }
    write_file(&dir.join("shap_summary.csv"), &s)?;
    let mut s = String::from("row,output,feature,feature_value,phi\n");
    for p in &summary.scatter {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            p.row, output_names[p.output], feature_names[p.feature], p.feature_value, p.phi
        ));
    }
    write_file(&dir.join("shap_scatter.csv"), &s)
}

/// Writes `shap_interactions.csv`: for each listed output, the per-pair
/// mean |interaction| over rows, then the per-row values.
pub fn export_interactions(
    inter: &InteractionMatrix,
    feature_names: &[String],
    outputs: &[usize],
    output_names: &[String],
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = inter.values.len_of(Axis(0));
    let m = inter.values.len_of(Axis(2));
    let mut s = String::from("row,output,feature_a,feature_b,interaction\n");
    for &o in outputs {
        let name = &output_names[o];
        for a in 0..m {
            for b in 0..m {
                let mean = (0..n).map(|i| inter.values[[i, o, a, b]].abs()).sum::<f64>() / n.max(1) as f64;
                s.push_str(&format!("mean_abs,{name},{},{},{mean}\n", feature_names[a], feature_names[b]));
            }
        }
        for i in 0..n {
            for a in 0..m {
                for b in 0..m {
                    s.push_str(&format!(
                        "{i},{name},{},{},{}\n",
                        feature_names[a], feature_names[b], inter.values[[i, o, a, b]]
                    ));
                }
            }
        }
    }
    write_file(&dir.join("shap_interactions.csv"), &s)
}
