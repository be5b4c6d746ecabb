//! Multinomial logistic regression fit by limited-memory BFGS.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::boosted::softmax_in_place;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub max_iter: usize,
    /// Stop once the gradient max-norm falls below this.
    pub tolerance: f64,
    /// Strength of the L2 penalty on weights (the bias is not penalized).
    pub l2_penalty: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            max_iter: 1000,
            tolerance: 1e-6,
            l2_penalty: 1.0,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::Config("max_iter must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be > 0".into()));
        }
        if !(self.l2_penalty >= 0.0) {
            return Err(Error::Config("l2_penalty must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_max_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step, starting with the initial point.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Unconstrained L-BFGS with backtracking Armijo line search.
///
/// `f` returns the objective and its gradient. `memory` curvature pairs are
/// kept; a failed line search drops the memory and retries along the
/// steepest-descent direction before giving up.
pub fn lbfgs<F>(mut f: F, x0: Vec<f64>, max_iter: usize, tolerance: f64, memory: usize) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    const C1: f64 = 1e-4;
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut trace = vec![fx];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    let mut iterations = 0;
    while iterations < max_iter && max_norm(&g) >= tolerance {
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = match pairs.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / max_norm(&g).max(1.0),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            pairs.clear();
            dir = g.iter().map(|v| -v / max_norm(&g).max(1.0)).collect();
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (ft, gt) = f(&trial);
            if ft.is_finite() && ft <= fx + C1 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            if pairs.is_empty() {
                break;
            }
            pairs.clear();
            continue;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if pairs.len() == memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        trace.push(fx);
        iterations += 1;
    }
    let grad_max_norm = max_norm(&g);
    Minimum {
        x,
        value: fx,
        grad_max_norm,
        iterations,
        converged: grad_max_norm < tolerance,
        trace,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// `n_classes x d`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub n_iter_used: usize,
    pub converged: bool,
}

/// Mean cross-entropy plus `l2 / (2n) * ||W||^2`, and its gradient, for the
/// flat parameter vector `[W (row-major, k x d), b (k)]`.
pub fn objective(
    params: &[f64],
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    l2: f64,
) -> (f64, Vec<f64>) {
    let (n, d) = x.dim();
    let k = n_classes;
    let w = &params[..k * d];
    let b = &params[k * d..];
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let mut z = vec![0.0; k];
    for (i, row) in x.outer_iter().enumerate() {
        for c in 0..k {
            z[c] = b[c]
                + w[c * d..(c + 1) * d]
                    .iter()
                    .zip(row.iter())
                    .map(|(a, v)| a * v)
                    .sum::<f64>();
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - z[y[i]];
        for c in 0..k {
            let p = (z[c] - lse).exp();
            let r = p - f64::from(u8::from(c == y[i]));
            for (j, xv) in row.iter().enumerate() {
                grad[c * d + j] += r * xv;
            }
            grad[k * d + c] += r;
        }
    }
    let inv_n = 1.0 / n as f64;
    let penalty: f64 = w.iter().map(|v| v * v).sum::<f64>();
    loss = loss * inv_n + 0.5 * l2 * inv_n * penalty;
    for (idx, gv) in grad.iter_mut().enumerate() {
        *gv *= inv_n;
        if idx < k * d {
            *gv += l2 * inv_n * w[idx];
        }
    }
    (loss, grad)
}

/// Fits the softmax model (binary problems use two rows as well).
pub fn fit_logistic(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    config: &SolveConfig,
) -> Result<LogisticModel> {
    config.validate()?;
    let (n, d) = x.dim();
    if y.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: y.len(),
        });
    }
    if n < 2 {
        return Err(Error::Empty("logistic regression needs at least 2 rows".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logistic regression input".into()));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Config(format!("label {bad} >= n_classes {n_classes}")));
    }
    let mut present = vec![false; n_classes];
    y.iter().for_each(|&l| present[l] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::SingleClass);
    }
    let x = x.as_standard_layout();
    let x = x.view();
    let k = n_classes;
    let result = lbfgs(
        |p| objective(p, x, y, k, config.l2_penalty),
        vec![0.0; k * d + k],
        config.max_iter,
        config.tolerance,
        10,
    );
    let weights = Array2::from_shape_vec((k, d), result.x[..k * d].to_vec()).expect("k*d");
    let bias = Array1::from(result.x[k * d..].to_vec());
    Ok(LogisticModel {
        weights,
        bias,
        n_iter_used: result.iterations,
        converged: result.converged,
    })
}

impl LogisticModel {
    pub fn zeros(n_classes: usize, d: usize) -> Self {
        LogisticModel {
            weights: Array2::zeros((n_classes, d)),
            bias: Array1::zeros(n_classes),
            n_iter_used: 0,
            converged: false,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn n_features(&self) -> usize {
        self.weights.ncols()
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                got: x.ncols(),
            });
        }
        // explicit loops keep each row's result independent of batch size
        let k = self.n_classes();
        let mut out = Array2::zeros((x.nrows(), k));
        for (i, row) in x.outer_iter().enumerate() {
            let mut z: Vec<f64> = (0..k)
                .map(|c| {
                    let mut acc = self.bias[c];
                    for (w, v) in self.weights.row(c).iter().zip(row.iter()) {
                        acc += w * v;
                    }
                    acc
                })
                .collect();
            softmax_in_place(&mut z);
            for (c, v) in z.into_iter().enumerate() {
                out[[i, c]] = v;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn separable_points() {
        let x = array![[-1.0], [1.0]];
        let cfg = SolveConfig {
            l2_penalty: 1e-3,
            ..SolveConfig::default()
        };
        let m = fit_logistic(x.view(), &[0, 1], 2, &cfg).unwrap();
        let p = m.predict_proba(x.view()).unwrap();
        assert!(p[[0, 0]] > 0.5 && p[[1, 1]] > 0.5);
        // class-1 weight exceeds class-0 weight
        assert!(m.weights[[1, 0]] - m.weights[[0, 0]] > 0.0);
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = LogisticModel::zeros(3, 2);
        let p = m.predict_proba(array![[1.0, -4.0], [0.3, 2.0]].view()).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn hand_set_three_class_softmax() {
        let m = LogisticModel {
            weights: array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]],
            bias: array![0.0, 0.0, 0.5],
            n_iter_used: 0,
            converged: true,
        };
        let p = m.predict_proba(array![[1.0, 2.0]].view()).unwrap();
        // margins (1, 2, 0.5)
        let e: Vec<f64> = [1.0f64, 2.0, 0.5].iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        for c in 0..3 {
            assert!((p[[0, c]] - e[c] / s).abs() < 1e-15);
        }
    }

    #[test]
    fn large_margin_saturates_monotonically() {
        let mut last = 0.0;
        for w in [1.0, 5.0, 20.0, 80.0] {
            let m = LogisticModel {
                weights: array![[0.0], [w]],
                bias: array![0.0, 0.0],
                n_iter_used: 0,
                converged: true,
            };
            let p = m.predict_proba(array![[1.0]].view()).unwrap()[[0, 1]];
            assert!(p > last);
            last = p;
        }
        assert!(last > 1.0 - 1e-12);
    }

    #[test]
    fn errors() {
        let x = array![[0.0], [1.0]];
        assert!(matches!(
            fit_logistic(x.view(), &[1, 1], 2, &SolveConfig::default()),
            Err(Error::SingleClass)
        ));
        let bad = array![[f64::NAN], [1.0]];
        assert!(fit_logistic(bad.view(), &[0, 1], 2, &SolveConfig::default()).is_err());
        let m = LogisticModel::zeros(2, 3);
        assert!(m.predict_proba(x.view()).is_err());
    }

    #[test]
    fn converges_and_trace_non_increasing() {
        let mut rng = crate::seed::rng(3);
        let x = Array2::from_shape_fn((80, 3), |_| rng.random_range(-2.0..2.0));
        let y: Vec<usize> = x
            .outer_iter()
            .map(|r| if r[0] + 0.5 * r[1] > 0.3 { 2 } else if r[2] > 0.0 { 1 } else { 0 })
            .collect();
        let res = lbfgs(
            |p| objective(p, x.view(), &y, 3, 1.0),
            vec![0.0; 12],
            1000,
            1e-6,
            10,
        );
        assert!(res.converged);
        assert!(res.grad_max_norm < 1e-6);
        for w in res.trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
        let p_sum: f64 = fit_logistic(x.view(), &y, 3, &SolveConfig::default())
            .unwrap()
            .predict_proba(x.view())
            .unwrap()
            .row(0)
            .sum();
        assert!((p_sum - 1.0).abs() < 1e-12);
    }
}
