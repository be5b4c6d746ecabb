//! Bayesian hyperparameter search: Gaussian-process surrogate with a
//! squared-exponential ARD kernel and expected-improvement acquisition.
//!
//! Points live in a unit cube. Continuous and integer parameters take one
//! coordinate each (integers are rounded when decoded); a categorical
//! parameter takes one search coordinate but is one-hot encoded in kernel
//! space.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{stratified_folds, Dataset};
use crate::error::{Error, Result};
use crate::seed;
use crate::stacking::{fit_stack, StackConfig};
use crate::trees::argmax;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ParamSpec {
    Continuous {
        lo: f64,
        hi: f64,
        #[serde(default)]
        log: bool,
        #[serde(default)]
        default: Option<f64>,
    },
    Integer {
        lo: i64,
        hi: i64,
        #[serde(default)]
        default: Option<i64>,
    },
    Categorical {
        choices: Vec<String>,
        #[serde(default)]
        default: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Cat(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Float(v) => Some(*v),
            ParamValue::Cat(_) => None,
        }
    }
}

pub type Params = BTreeMap<String, ParamValue>;

impl ParamSpec {
    fn validate(&self, name: &str) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("parameter `{name}`: {msg}")));
        match self {
            ParamSpec::Continuous { lo, hi, log, default } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return bad("need finite lo < hi");
                }
                if *log && *lo <= 0.0 {
                    return bad("log scale needs lo > 0");
                }
                if default.is_some_and(|d| d < *lo || d > *hi) {
                    return bad("default outside range");
                }
            }
            ParamSpec::Integer { lo, hi, default } => {
                if lo > hi {
                    return bad("need lo <= hi");
                }
                if default.is_some_and(|d| d < *lo || d > *hi) {
                    return bad("default outside range");
                }
            }
            ParamSpec::Categorical { choices, default } => {
                if choices.is_empty() {
                    return bad("no choices");
                }
                if default.as_ref().is_some_and(|d| !choices.contains(d)) {
                    return bad("default is not a choice");
                }
            }
        }
        Ok(())
    }

    fn decode(&self, u: f64) -> ParamValue {
        let u = u.clamp(0.0, 1.0);
        match self {
            ParamSpec::Continuous { lo, hi, log, .. } => ParamValue::Float(if *log {
                (lo.ln() + u * (hi.ln() - lo.ln())).exp().clamp(*lo, *hi)
            } else {
                lo + u * (hi - lo)
            }),
            ParamSpec::Integer { lo, hi, .. } => {
                let v = *lo as f64 + u * (hi - lo) as f64;
                ParamValue::Int((v.round() as i64).clamp(*lo, *hi))
            }
            ParamSpec::Categorical { choices, .. } => {
                let i = ((u * choices.len() as f64) as usize).min(choices.len() - 1);
                ParamValue::Cat(choices[i].clone())
            }
        }
    }

    /// Kernel-space coordinates of a value.
    fn features(&self, v: &ParamValue, out: &mut Vec<f64>) -> Result<()> {
        let unit = |x: f64, lo: f64, hi: f64| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 };
        match (self, v) {
            (ParamSpec::Continuous { lo, hi, log, .. }, _) => {
                let x = v
                    .as_f64()
                    .ok_or_else(|| Error::Config("expected a number".into()))?;
                out.push(if *log {
                    unit(x.ln(), lo.ln(), hi.ln())
                } else {
                    unit(x, *lo, *hi)
                });
            }
            (ParamSpec::Integer { lo, hi, .. }, _) => {
                let x = v
                    .as_f64()
                    .ok_or_else(|| Error::Config("expected an integer".into()))?;
                out.push(unit(x, *lo as f64, *hi as f64));
            }
            (ParamSpec::Categorical { choices, .. }, ParamValue::Cat(c)) => {
                let i = choices
                    .iter()
                    .position(|x| x == c)
                    .ok_or_else(|| Error::Config(format!("`{c}` is not a choice")))?;
                out.extend((0..choices.len()).map(|j| if j == i { 1.0 } else { 0.0 }));
            }
            (ParamSpec::Categorical { .. }, _) => {
                return Err(Error::Config("expected a category".into()))
            }
        }
        Ok(())
    }

    fn default_value(&self) -> Option<ParamValue> {
        match self {
            ParamSpec::Continuous { default, .. } => default.map(ParamValue::Float),
            ParamSpec::Integer { default, .. } => default.map(ParamValue::Int),
            ParamSpec::Categorical { default, .. } => default.clone().map(ParamValue::Cat),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub params: BTreeMap<String, ParamSpec>,
}

impl ParamSpace {
    pub fn new(params: impl IntoIterator<Item = (String, ParamSpec)>) -> Result<Self> {
        let s = ParamSpace {
            params: params.into_iter().collect(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(Error::Config("search space has no parameters".into()));
        }
        for (k, p) in &self.params {
            p.validate(k)?;
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.params.len()
    }

    pub fn decode(&self, coords: &[f64]) -> Params {
        self.params
            .iter()
            .zip(coords)
            .map(|((k, p), &u)| (k.clone(), p.decode(u)))
            .collect()
    }

    pub fn features(&self, params: &Params) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for (k, spec) in &self.params {
            let v = params
                .get(k)
                .ok_or_else(|| Error::Config(format!("missing parameter `{k}`")))?;
            spec.features(v, &mut out)?;
        }
        Ok(out)
    }

    /// The assignment made of every parameter's default, if all have one.
    pub fn defaults(&self) -> Option<Params> {
        self.params
            .iter()
            .map(|(k, p)| p.default_value().map(|v| (k.clone(), v)))
            .collect()
    }
}

/// Search space around the stack's default configuration; the first trial
/// evaluates the defaults themselves.
pub fn default_space() -> ParamSpace {
    let int = |lo, hi, d| ParamSpec::Integer {
        lo,
        hi,
        default: Some(d),
    };
    ParamSpace::new([
        ("rf.n_estimators".to_string(), int(20, 200, 50)),
        ("rf.max_depth".to_string(), int(5, 30, 20)),
        ("rf.min_samples_split".to_string(), int(2, 20, 10)),
        ("rf.min_samples_leaf".to_string(), int(1, 8, 2)),
        ("cb.iterations".to_string(), int(50, 300, 100)),
        (
            "cb.learning_rate".to_string(),
            ParamSpec::Continuous {
                lo: 0.01,
                hi: 0.3,
                log: true,
                default: Some(0.1),
            },
        ),
        ("cb.depth".to_string(), int(4, 10, 6)),
    ])
    .expect("static space is valid")
}

/// Radical-inverse sequence in prime bases with one random digit
/// permutation per dimension.
pub struct ScrambledHalton {
    perms: Vec<Vec<usize>>,
    bases: Vec<usize>,
}

const PRIMES: [usize; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

impl ScrambledHalton {
    pub fn new(dims: usize, rng: &mut ChaCha8Rng) -> Self {
        let bases: Vec<usize> = (0..dims)
            .map(|d| {
                if d < PRIMES.len() {
                    PRIMES[d]
                } else {
                    nth_prime(d)
                }
            })
            .collect();
        let perms = bases
            .iter()
            .map(|&b| {
                // keep 0 -> 0 so the digit expansion stays finite
                let mut rest: Vec<usize> = (1..b).collect();
                rest.shuffle(rng);
                std::iter::once(0).chain(rest).collect()
            })
            .collect();
        ScrambledHalton { perms, bases }
    }

    /// Point `index` (0-based) of the sequence.
    pub fn point(&self, index: usize) -> Vec<f64> {
        self.bases
            .iter()
            .zip(&self.perms)
            .map(|(&b, perm)| {
                let mut i = index + 1;
                let mut f = 1.0;
                let mut x = 0.0;
                while i > 0 {
                    f /= b as f64;
                    x += f * perm[i % b] as f64;
                    i /= b;
                }
                x
            })
            .collect()
    }
}

fn nth_prime(n: usize) -> usize {
    let mut count = 0;
    let mut c = 1;
    while count <= n {
        c += 1;
        if (2..c).take_while(|d| d * d <= c).all(|d| c % d != 0) {
            count += 1;
        }
    }
    c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub length_scales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
    /// Constant prior mean.
    pub mean: f64,
}

impl GpHyper {
    pub fn isotropic(dims: usize, length_scale: f64, signal_var: f64, noise_var: f64) -> Self {
        GpHyper {
            length_scales: vec![length_scale; dims],
            signal_var,
            noise_var,
            mean: 0.0,
        }
    }

    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.length_scales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        self.signal_var * (-0.5 * d2).exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GPSurrogate {
    pub hyper: GpHyper,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    /// Lower Cholesky factor, row-major `n x n`.
    chol: Vec<f64>,
    alpha: Vec<f64>,
    /// Diagonal jitter that factorization needed on top of the noise.
    pub jitter: f64,
}

/// Smallest accepted pivot, relative to the diagonal entry it came from.
/// Below this the factor loses every significant digit of the solve.
const MIN_PIVOT: f64 = 1e-8;

/// Lower Cholesky factor of a row-major SPD matrix, or `None` when a pivot
/// is non-positive or numerically indistinguishable from zero.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > MIN_PIVOT * a[i * n + i]) || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn forward(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

fn backward(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

impl GPSurrogate {
    /// Factorizes `K + noise I`, adding jitter from 1e-8 up to 1e-2 if needed.
    pub fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, hyper: GpHyper) -> Result<Self> {
        let n = x.len();
        if n == 0 || y.len() != n {
            return Err(Error::Empty("the surrogate needs at least one observation".into()));
        }
        if x.iter().any(|r| r.len() != hyper.length_scales.len()) {
            return Err(Error::Dimension {
                expected: hyper.length_scales.len(),
                got: x[0].len(),
            });
        }
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = hyper.kernel(&x[i], &x[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        let mut jitter = 0.0;
        let chol = loop {
            let mut a = k.clone();
            for i in 0..n {
                a[i * n + i] += hyper.noise_var + jitter;
            }
            if let Some(l) = cholesky(&a, n) {
                break l;
            }
            jitter = if jitter == 0.0 { 1e-8 } else { jitter * 10.0 };
            if jitter > 1e-2 * (1.0 + 1e-9) {
                return Err(Error::Singular(jitter / 10.0));
            }
        };
        let centered: Vec<f64> = y.iter().map(|v| v - hyper.mean).collect();
        let alpha = backward(&chol, n, &forward(&chol, n, &centered));
        Ok(GPSurrogate {
            hyper,
            x,
            y,
            chol,
            alpha,
            jitter,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.x.len()
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.n_obs();
        let fit: f64 = self
            .y
            .iter()
            .zip(&self.alpha)
            .map(|(y, a)| (y - self.hyper.mean) * a)
            .sum();
        let logdet: f64 = (0..n).map(|i| self.chol[i * n + i].ln()).sum();
        -0.5 * fit - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Posterior mean and standard deviation of the latent function at `x`.
pub fn gp_posterior(s: &GPSurrogate, x: &[f64]) -> (f64, f64) {
    let n = s.n_obs();
    let kstar: Vec<f64> = s.x.iter().map(|xi| s.hyper.kernel(xi, x)).collect();
    let mean = s.hyper.mean + kstar.iter().zip(&s.alpha).map(|(a, b)| a * b).sum::<f64>();
    let v = forward(&s.chol, n, &kstar);
    let var = s.hyper.signal_var - v.iter().map(|t| t * t).sum::<f64>();
    (mean, var.clamp(0.0, s.hyper.signal_var).sqrt())
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected improvement over `best` for maximization.
pub fn expected_improvement(mean: f64, std: f64, best: f64) -> f64 {
    let gain = mean - best;
    if std <= 0.0 {
        return gain.max(0.0);
    }
    let z = gain / std;
    (gain * normal_cdf(z) + std * normal_pdf(z)).max(0.0)
}

/// Maximizes the log marginal likelihood over log length scales, signal
/// and noise variance. Returns `start` unless a strictly better setting is
/// found.
pub fn fit_hyperparameters(
    x: &[Vec<f64>],
    y: &[f64],
    start: &GpHyper,
    rng: &mut ChaCha8Rng,
) -> Result<GpHyper> {
    let d = start.length_scales.len();
    let to_theta = |h: &GpHyper| -> Vec<f64> {
        let mut t: Vec<f64> = h.length_scales.iter().map(|l| l.ln()).collect();
        t.push(h.signal_var.ln());
        t.push(h.noise_var.ln());
        t
    };
    let bounds: Vec<(f64, f64)> = std::iter::repeat_n((0.01f64.ln(), 10f64.ln()), d)
        .chain([(1e-3f64.ln(), 1e3f64.ln()), (1e-8f64.ln(), 0.0)])
        .collect();
    let from_theta = |t: &[f64]| GpHyper {
        length_scales: t[..d].iter().map(|v| v.exp()).collect(),
        signal_var: t[d].exp(),
        noise_var: t[d + 1].exp(),
        mean: start.mean,
    };
    let score = |t: &[f64]| -> f64 {
        GPSurrogate::fit(x.to_vec(), y.to_vec(), from_theta(t))
            .map(|g| g.log_marginal_likelihood())
            .unwrap_or(f64::NEG_INFINITY)
    };
    let clamp = |t: &mut [f64]| {
        for (v, (lo, hi)) in t.iter_mut().zip(&bounds) {
            *v = v.clamp(*lo, *hi);
        }
    };
    let mut best_t = to_theta(start);
    let start_score = score(&best_t);
    let mut best = start_score;
    let step = Normal::new(0.0, 0.7).expect("positive sd");
    for _ in 0..30 {
        let mut t: Vec<f64> = best_t.iter().map(|v| v + step.sample(rng)).collect();
        clamp(&mut t);
        let s = score(&t);
        if s > best {
            best = s;
            best_t = t;
        }
    }
    let mut h = 0.5;
    while h > 0.02 {
        let mut moved = false;
        for i in 0..best_t.len() {
            for dir in [1.0, -1.0] {
                let mut t = best_t.clone();
                t[i] += dir * h;
                clamp(&mut t);
                let s = score(&t);
                if s > best {
                    best = s;
                    best_t = t;
                    moved = true;
                }
            }
        }
        if !moved {
            h *= 0.5;
        }
    }
    if best > start_score {
        Ok(from_theta(&best_t))
    } else {
        Ok(start.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub score: f64,
    pub fold_scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub params: Params,
    /// `None` marks a failed evaluation; it is never fed to the surrogate.
    pub score: Option<f64>,
    pub fold_scores: Vec<f64>,
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeConfig {
    pub n_iter: usize,
    pub init_points: usize,
    pub seed: u64,
    pub candidates: usize,
    pub refine_from: usize,
    pub refit_every: usize,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            n_iter: 32,
            init_points: 5,
            seed: 0,
            candidates: 1024,
            refine_from: 8,
            refit_every: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    pub best: TrialRecord,
    pub history: Vec<TrialRecord>,
}

/// Highest score, earliest trial on ties.
pub fn best_trial(history: &[TrialRecord]) -> Option<&TrialRecord> {
    let mut best: Option<&TrialRecord> = None;
    for t in history {
        if let Some(s) = t.score.filter(|s| s.is_finite()) {
            if best.is_none_or(|b| s > b.score.expect("scored")) {
                best = Some(t);
            }
        }
    }
    best
}

/// Successful trials in kernel space with standardized scores.
struct Observations {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
}

fn observations(space: &ParamSpace, history: &[TrialRecord]) -> Result<Observations> {
    let mut x = Vec::new();
    let mut raw = Vec::new();
    for t in history {
        if let Some(s) = t.score.filter(|s| s.is_finite()) {
            x.push(space.features(&t.params)?);
            raw.push(s);
        }
    }
    let n = raw.len().max(1) as f64;
    let shift = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|v| (v - shift).powi(2)).sum::<f64>() / n;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    let y = raw.iter().map(|v| (v - shift) / scale).collect();
    Ok(Observations { x, y })
}

fn perturb(coords: &[f64], space: &ParamSpace, rng: &mut ChaCha8Rng, sd: f64) -> Vec<f64> {
    let noise = Normal::new(0.0, sd).expect("positive sd");
    space
        .params
        .values()
        .zip(coords)
        .map(|(spec, &u)| match spec {
            ParamSpec::Categorical { .. } => {
                if rng.random::<f64>() < 0.2 {
                    rng.random::<f64>()
                } else {
                    u
                }
            }
            _ => (u + noise.sample(rng)).clamp(0.0, 1.0),
        })
        .collect()
}

/// Evaluates `objective` until the history holds `n_iter` trials. A
/// non-empty `history` resumes an earlier run; `on_trial` sees every new
/// record as soon as it exists.
pub fn optimize<F>(
    space: &ParamSpace,
    mut objective: F,
    config: &OptimizeConfig,
    mut history: Vec<TrialRecord>,
    on_trial: &mut dyn FnMut(&TrialRecord) -> Result<()>,
) -> Result<OptimizeResult>
where
    F: FnMut(&Params) -> std::result::Result<TrialScore, String>,
{
    space.validate()?;
    if config.init_points < 1 || config.n_iter < config.init_points {
        return Err(Error::Config("need n_iter >= init_points >= 1".into()));
    }
    let mut halton_rng = seed::rng(seed::derive_named(config.seed, "halton"));
    let halton = ScrambledHalton::new(space.dims(), &mut halton_rng);
    let defaults = space.defaults();
    let kernel_dims = space.features(&space.decode(&vec![0.0; space.dims()]))?.len();
    let mut hyper_cache: Option<(usize, GpHyper)> = None;

    while history.len() < config.n_iter {
        let t = history.len();
        let mut rng = seed::rng(seed::derive(config.seed, t as u64));
        let observed = observations(space, &history)?;
        let params = if t < config.init_points || observed.y.is_empty() {
            match (&defaults, t) {
                (Some(d), 0) => d.clone(),
                _ => space.decode(&halton.point(t)),
            }
        } else {
            // hyperparameters are refit on a fixed schedule from a fixed
            // start, so a resumed run makes the same choices
            let refit_at = config.init_points
                + (t - config.init_points) / config.refit_every.max(1) * config.refit_every.max(1);
            let hyper = match &hyper_cache {
                Some((at, h)) if *at == refit_at => h.clone(),
                _ => {
                    let upto = observations(space, &history[..refit_at.min(t)])?;
                    let start = GpHyper::isotropic(kernel_dims, 0.3, 1.0, 1e-4);
                    let mut hrng = seed::rng(seed::derive_named(config.seed ^ refit_at as u64, "refit"));
                    let h = if upto.y.len() >= 2 {
                        fit_hyperparameters(&upto.x, &upto.y, &start, &mut hrng)?
                    } else {
                        start
                    };
                    hyper_cache = Some((refit_at, h.clone()));
                    h
                }
            };
            let gp = GPSurrogate::fit(observed.x.clone(), observed.y.clone(), hyper)?;
            let incumbent = observed.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ei_of = |coords: &[f64]| -> Result<f64> {
                let f = space.features(&space.decode(coords))?;
                let (m, s) = gp_posterior(&gp, &f);
                Ok(expected_improvement(m, s, incumbent))
            };
            let mut pool: Vec<(Vec<f64>, f64)> = Vec::with_capacity(config.candidates);
            for _ in 0..config.candidates.max(1) {
                let c: Vec<f64> = (0..space.dims()).map(|_| rng.random::<f64>()).collect();
                let e = ei_of(&c)?;
                pool.push((c, e));
            }
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.sort_by(|&a, &b| pool[b].1.total_cmp(&pool[a].1));
            for &start in order.iter().take(config.refine_from) {
                let (mut best_c, mut best_e) = pool[start].clone();
                for step in 0..20 {
                    let sd = 0.1 / (1 + step / 5) as f64;
                    let c = perturb(&best_c, space, &mut rng, sd);
                    let e = ei_of(&c)?;
                    if e > best_e {
                        best_c = c;
                        best_e = e;
                    }
                }
                pool.push((best_c, best_e));
            }
            let scores: Vec<f64> = pool.iter().map(|p| p.1).collect();
            space.decode(&pool[argmax(&scores)].0)
        };
        let started = Instant::now();
        let outcome = objective(&params);
        let duration = started.elapsed().as_secs_f64();
        let record = match outcome {
            Ok(s) if s.score.is_finite() => TrialRecord {
                trial: t,
                params,
                score: Some(s.score),
                fold_scores: s.fold_scores,
                duration,
                error: None,
            },
            Ok(_) => TrialRecord {
                trial: t,
                params,
                score: None,
                fold_scores: Vec::new(),
                duration,
                error: Some("non-finite score".into()),
            },
            Err(e) => TrialRecord {
                trial: t,
                params,
                score: None,
                fold_scores: Vec::new(),
                duration,
                error: Some(e),
            },
        };
        on_trial(&record)?;
        history.push(record);
    }
    let best = best_trial(&history)
        .cloned()
        .ok_or_else(|| Error::Config("every trial failed".into()))?;
    Ok(OptimizeResult { best, history })
}

pub fn append_trial(path: &Path, record: &TrialRecord) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(record)?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

pub fn read_trials(path: &Path) -> Result<Vec<TrialRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

const KNOWN_KEYS: [&str; 8] = [
    "rf.n_estimators",
    "rf.max_depth",
    "rf.min_samples_split",
    "rf.min_samples_leaf",
    "cb.iterations",
    "cb.learning_rate",
    "cb.depth",
    "cb.l2_leaf_reg",
];

/// Merges tuned values into `base`.
pub fn apply_params(base: &StackConfig, params: &Params) -> Result<StackConfig> {
    let mut c = base.clone();
    for (k, v) in params {
        let num = v
            .as_f64()
            .ok_or_else(|| Error::Config(format!("`{k}` needs a numeric value")))?;
        let count = || -> Result<usize> {
            if num < 0.0 || num.fract() != 0.0 {
                return Err(Error::Config(format!("`{k}` needs a non-negative integer")));
            }
            Ok(num as usize)
        };
        match k.as_str() {
            "rf.n_estimators" => c.forest.n_estimators = count()?,
            "rf.max_depth" => c.forest.max_depth = count()?,
            "rf.min_samples_split" => c.forest.min_samples_split = count()?,
            "rf.min_samples_leaf" => c.forest.min_samples_leaf = count()?,
            "cb.iterations" => c.boosted.iterations = count()?,
            "cb.learning_rate" => c.boosted.learning_rate = num,
            "cb.depth" => c.boosted.depth = count()?,
            "cb.l2_leaf_reg" => c.boosted.l2_leaf_reg = num,
            _ => return Err(Error::Config(format!("unknown parameter `{k}`"))),
        }
    }
    c.validate()?;
    Ok(c)
}

/// Mean held-out accuracy of the stack over stratified folds.
pub fn cv_accuracy(train: &Dataset, config: &StackConfig, folds: usize, seed_: u64) -> Result<TrialScore> {
    let assignment = stratified_folds(train.labels(), train.n_classes(), folds, seed_)?;
    let mut fold_scores = Vec::with_capacity(folds);
    for f in 0..folds {
        let (held, fit): (Vec<usize>, Vec<usize>) =
            (0..train.n_rows()).partition(|&i| assignment[i] == f);
        let model = fit_stack(&train.select_rows(&fit), config)?;
        let test = train.select_rows(&held);
        let proba = model.predict_proba(test.rows().view())?;
        let correct = proba
            .outer_iter()
            .zip(test.labels())
            .filter(|(p, &l)| argmax(p.as_slice().expect("standard layout")) == l)
            .count();
        fold_scores.push(correct as f64 / held.len().max(1) as f64);
    }
    Ok(TrialScore {
        score: fold_scores.iter().sum::<f64>() / folds as f64,
        fold_scores,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneResult {
    pub config: StackConfig,
    pub best: TrialRecord,
    pub history: Vec<TrialRecord>,
}

/// Tunes the base learners on prepared training data by cross-validated
/// accuracy of the whole stack.
pub fn tune_stack(
    train: &Dataset,
    space: &ParamSpace,
    base: &StackConfig,
    optimize_config: &OptimizeConfig,
    cv_folds: usize,
    history: Vec<TrialRecord>,
    on_trial: &mut dyn FnMut(&TrialRecord) -> Result<()>,
) -> Result<TuneResult> {
    space.validate()?;
    if let Some(k) = space.params.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        return Err(Error::Config(format!("unknown parameter `{k}`")));
    }
    let cv_seed = seed::derive_named(optimize_config.seed, "tune-folds");
    let result = optimize(
        space,
        |p| {
            let cfg = apply_params(base, p).map_err(|e| e.to_string())?;
            cv_accuracy(train, &cfg, cv_folds, cv_seed).map_err(|e| e.to_string())
        },
        optimize_config,
        history,
        on_trial,
    )?;
    Ok(TuneResult {
        config: apply_params(base, &result.best.params)?,
        best: result.best,
        history: result.history,
    })
}
