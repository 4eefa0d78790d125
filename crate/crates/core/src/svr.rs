//! ε-insensitive support vector regression with an RBF kernel.
//!
//! The dual is solved SMO-style in the 2N-variable form
//!
//! ```text
//! min_a  ½ aᵀ Q a + pᵀ a   s.t.  yᵀ a = 0,  0 ≤ a_t ≤ C
//! ```
//!
//! with `a = (α, α*)`, `y = (+1…, −1…)`, `p = (ε − z, ε + z)` and
//! `Q_ts = y_t y_s k(x_t, x_s)`. Each iteration picks the maximally violating
//! index `i` and pairs it with the `j` giving the largest second-order
//! decrease, then solves the two-variable subproblem analytically.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circular;
use crate::error::{Error, Result};
use crate::metrics::{self, PairedSeries};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrConfig {
    pub c: f64,
    pub epsilon: f64,
    pub gamma: f64,
    /// Stop when the maximal KKT violation drops below this.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Iteration cap in sweeps of 2N pair updates; `None` means 10·N sweeps.
    #[serde(default)]
    pub max_passes: Option<usize>,
}

fn default_tolerance() -> f64 {
    1e-3
}

impl SvrConfig {
    pub fn new(c: f64, epsilon: f64, gamma: f64) -> Result<Self> {
        let cfg = SvrConfig {
            c,
            epsilon,
            gamma,
            tolerance: default_tolerance(),
            max_passes: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::validation(format!("C must be positive, got {}", self.c)));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::validation(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::validation(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::validation("tolerance must be positive"));
        }
        Ok(())
    }
}

/// `exp(-γ ‖x − z‖²)`
pub fn rbf(gamma: f64, x: ArrayView1<'_, f64>, z: ArrayView1<'_, f64>) -> f64 {
    let d2: f64 = x.iter().zip(z.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    /// Row-major, one row per support vector.
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i − α_i*` for each support vector.
    pub dual_coefficients: Vec<f64>,
    pub bias: f64,
    pub config: SvrConfig,
    pub converged: bool,
    pub iterations: usize,
    /// Value of the minimized dual objective at the returned solution.
    pub dual_objective: f64,
}

impl SvrModel {
    pub fn dimension(&self) -> Option<usize> {
        self.support_vectors.first().map(Vec::len)
    }

    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        predict_svr(self, x)
    }

    pub fn predict_batch(&self, xs: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        xs.rows().into_iter().map(|r| predict_svr(self, r)).collect()
    }
}

fn check_finite(features: ArrayView2<'_, f64>, targets: &[f64]) -> Result<()> {
    if features.nrows() != targets.len() {
        return Err(Error::validation(format!(
            "{} feature rows vs {} targets",
            features.nrows(),
            targets.len()
        )));
    }
    if let Some((i, _)) = features
        .rows()
        .into_iter()
        .enumerate()
        .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::validation(format!("non-finite feature in row {i}")));
    }
    if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
        return Err(Error::validation(format!("non-finite target in row {i}")));
    }
    Ok(())
}

/// Full RBF Gram matrix.
fn gram(features: ArrayView2<'_, f64>, gamma: f64) -> Array2<f64> {
    let n = features.nrows();
    let mut k = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        k[[i, i]] = 1.0;
        for j in 0..i {
            let v = rbf(gamma, features.row(i), features.row(j));
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

struct Smo<'a> {
    kernel: &'a Array2<f64>,
    n: usize,
    c: f64,
    alpha: Vec<f64>,
    grad: Vec<f64>,
    p: Vec<f64>,
}

impl Smo<'_> {
    #[inline]
    fn sign(&self, t: usize) -> f64 {
        if t < self.n {
            1.0
        } else {
            -1.0
        }
    }

    #[inline]
    fn k(&self, s: usize, t: usize) -> f64 {
        self.kernel[[s % self.n, t % self.n]]
    }

    #[inline]
    fn q(&self, s: usize, t: usize) -> f64 {
        self.sign(s) * self.sign(t) * self.k(s, t)
    }

    fn in_up(&self, t: usize) -> bool {
        if self.sign(t) > 0.0 {
            self.alpha[t] < self.c
        } else {
            self.alpha[t] > 0.0
        }
    }

    fn in_low(&self, t: usize) -> bool {
        if self.sign(t) > 0.0 {
            self.alpha[t] > 0.0
        } else {
            self.alpha[t] < self.c
        }
    }

    /// Returns the working pair, or `None` when the KKT gap is below `tol`.
    fn select(&self, tol: f64) -> Option<(usize, usize)> {
        let l = 2 * self.n;
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..l {
            if self.in_up(t) {
                let v = -self.sign(t) * self.grad[t];
                if v > gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        if i == usize::MAX {
            return None;
        }
        let mut gmin = f64::INFINITY;
        let mut best = f64::INFINITY;
        let mut j = usize::MAX;
        for t in 0..l {
            if !self.in_low(t) {
                continue;
            }
            let v = -self.sign(t) * self.grad[t];
            gmin = gmin.min(v);
            let b = gmax - v;
            if b > 0.0 {
                let mut a = self.k(i, i) + self.k(t, t) - 2.0 * self.k(i, t);
                if a <= 0.0 {
                    a = TAU;
                }
                let obj = -(b * b) / a;
                if obj < best {
                    best = obj;
                    j = t;
                }
            }
        }
        if gmax - gmin < tol || j == usize::MAX {
            None
        } else {
            Some((i, j))
        }
    }

    fn update(&mut self, i: usize, j: usize) {
        let c = self.c;
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        let qij = self.q(i, j);
        let (qii, qjj) = (self.k(i, i), self.k(j, j));
        if self.sign(i) != self.sign(j) {
            let mut quad = qii + qjj + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let mut quad = qii + qjj - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        if di == 0.0 && dj == 0.0 {
            return;
        }
        for t in 0..2 * self.n {
            self.grad[t] += self.q(i, t) * di + self.q(j, t) * dj;
        }
    }

    /// Offset ρ with `f(x) = Σ β k − ρ`.
    fn rho(&self) -> f64 {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut sum_free, mut n_free) = (0.0, 0usize);
        for t in 0..2 * self.n {
            let y = self.sign(t);
            let yg = y * self.grad[t];
            if self.alpha[t] >= self.c {
                if y < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if self.alpha[t] <= 0.0 {
                if y > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        if n_free > 0 {
            sum_free / n_free as f64
        } else {
            (ub + lb) / 2.0
        }
    }

    fn objective(&self) -> f64 {
        0.5 * self
            .alpha
            .iter()
            .zip(self.grad.iter().zip(&self.p))
            .map(|(a, (g, p))| a * (g + p))
            .sum::<f64>()
    }
}

/// Trains an ε-SVR. Non-convergence is not an error: the model comes back
/// with `converged == false`.
pub fn train_svr(features: ArrayView2<'_, f64>, targets: &[f64], config: &SvrConfig) -> Result<SvrModel> {
    config.validate()?;
    check_finite(features, targets)?;
    let n = features.nrows();
    if n < 2 {
        return Err(Error::validation("SVR needs at least two training rows"));
    }
    let kernel = gram(features, config.gamma);
    let mut p = Vec::with_capacity(2 * n);
    p.extend(targets.iter().map(|z| config.epsilon - z));
    p.extend(targets.iter().map(|z| config.epsilon + z));
    let mut smo = Smo {
        kernel: &kernel,
        n,
        c: config.c,
        alpha: vec![0.0; 2 * n],
        grad: p.clone(),
        p,
    };

    let max_iter = config.max_passes.unwrap_or(10 * n).saturating_mul(2 * n).max(1);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        match smo.select(config.tolerance) {
            None => {
                converged = true;
                break;
            }
            Some((i, j)) => smo.update(i, j),
        }
        iterations += 1;
    }
    if !converged {
        converged = smo.select(config.tolerance).is_none();
    }

    let rho = smo.rho();
    let mut support_vectors = Vec::new();
    let mut dual_coefficients = Vec::new();
    for i in 0..n {
        let beta = smo.alpha[i] - smo.alpha[i + n];
        if beta != 0.0 {
            support_vectors.push(features.row(i).to_vec());
            dual_coefficients.push(beta);
        }
    }
    Ok(SvrModel {
        support_vectors,
        dual_coefficients,
        bias: -rho,
        config: *config,
        converged,
        iterations,
        dual_objective: smo.objective(),
    })
}

/// `Σ β_i k(sv_i, x) + b`.
pub fn predict_svr(model: &SvrModel, x: ArrayView1<'_, f64>) -> Result<f64> {
    if let Some(d) = model.dimension() {
        if d != x.len() {
            return Err(Error::validation(format!(
                "query has dimension {}, model expects {d}",
                x.len()
            )));
        }
    }
    let gamma = model.config.gamma;
    let s: f64 = model
        .support_vectors
        .iter()
        .zip(&model.dual_coefficients)
        .map(|(sv, b)| b * rbf(gamma, ArrayView1::from(sv.as_slice()), x))
        .sum();
    Ok(s + model.bias)
}

/// Per-dimension mean over frames.
pub fn temporal_average_pooling(frames: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if frames.nrows() == 0 {
        return Err(Error::domain("cannot pool an empty frame sequence"));
    }
    Ok(frames.mean_axis(Axis(0)).expect("non-empty"))
}

/// Per-dimension standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Population statistics; constant columns get scale 1.
    pub fn fit(features: ArrayView2<'_, f64>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::validation("cannot fit a standardizer on zero rows"));
        }
        let mean = features.mean_axis(Axis(0)).expect("non-empty");
        let scale = features
            .var_axis(Axis(0), 0.0)
            .mapv(|v| if v > 1e-24 { v.sqrt() } else { 1.0 });
        Ok(Standardizer {
            mean: mean.to_vec(),
            scale: scale.to_vec(),
        })
    }

    pub fn transform(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.mean.len() {
            return Err(Error::validation(format!(
                "standardizer fitted on {} columns, got {}",
                self.mean.len(),
                features.ncols()
            )));
        }
        let mean = ArrayView1::from(self.mean.as_slice());
        let scale = ArrayView1::from(self.scale.as_slice());
        Ok((&features - &mean) / scale)
    }
}

/// Independent sine and cosine regressors; hue comes back through `atan2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HueSvrPair {
    pub sin_model: SvrModel,
    pub cos_model: SvrModel,
}

impl HueSvrPair {
    pub fn train(features: ArrayView2<'_, f64>, hues_deg: &[f64], config: &SvrConfig) -> Result<Self> {
        let (sins, coss) = hue_components(hues_deg)?;
        Ok(HueSvrPair {
            sin_model: train_svr(features, &sins, config)?,
            cos_model: train_svr(features, &coss, config)?,
        })
    }

    pub fn converged(&self) -> bool {
        self.sin_model.converged && self.cos_model.converged
    }
}

pub(crate) fn hue_components(hues_deg: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut sins = Vec::with_capacity(hues_deg.len());
    let mut coss = Vec::with_capacity(hues_deg.len());
    for h in hues_deg {
        let (s, c) = circular::hue_to_components(*h)?;
        sins.push(s);
        coss.push(c);
    }
    Ok((sins, coss))
}

pub fn predict_hue(pair: &HueSvrPair, x: ArrayView1<'_, f64>) -> Result<f64> {
    if pair.sin_model.dimension().is_some()
        && pair.cos_model.dimension().is_some()
        && pair.sin_model.dimension() != pair.cos_model.dimension()
    {
        return Err(Error::validation("sin and cos models disagree on feature dimension"));
    }
    let s = predict_svr(&pair.sin_model, x)?;
    let c = predict_svr(&pair.cos_model, x)?;
    circular::components_to_hue(s, c)
}

/// Hyperparameter grid. `gamma_scale` entries are divided by the feature
/// dimension to obtain γ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrGrid {
    pub c: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub gamma_scale: Vec<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl Default for SvrGrid {
    fn default() -> Self {
        SvrGrid {
            c: vec![0.1, 1.0, 10.0, 100.0],
            epsilon: vec![0.01, 0.1],
            gamma_scale: vec![1.0, 10.0, 0.1],
            tolerance: default_tolerance(),
        }
    }
}

impl SvrGrid {
    /// Grid points in order: C outermost, then ε, then γ.
    pub fn points(&self, dimension: usize) -> Result<Vec<SvrConfig>> {
        let d = dimension.max(1) as f64;
        let mut out = Vec::new();
        for &c in &self.c {
            for &eps in &self.epsilon {
                for &g in &self.gamma_scale {
                    out.push(SvrConfig::new(c, eps, g / d)?.with_tolerance(self.tolerance));
                }
            }
        }
        if out.is_empty() {
            return Err(Error::validation("empty SVR grid"));
        }
        Ok(out)
    }
}

/// What a grid search fits and how it scores.
#[derive(Debug, Clone, Copy)]
pub enum GridTarget<'a> {
    /// Scalar attribute scored by validation CCC (higher is better).
    Scalar { train: &'a [f64], val: &'a [f64] },
    /// Hue in degrees, fitted as a sin/cos pair, scored by validation AE (lower is better).
    Hue { train: &'a [f64], val: &'a [f64] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedSvr {
    Scalar(SvrModel),
    Hue(HueSvrPair),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub config: SvrConfig,
    /// `None` when the model failed to converge.
    pub score: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub best_config: SvrConfig,
    pub best_score: f64,
    pub model: FittedSvr,
    pub evaluated: Vec<GridPoint>,
}

fn fit_and_score(
    train_x: ArrayView2<'_, f64>,
    val_x: ArrayView2<'_, f64>,
    target: GridTarget<'_>,
    config: &SvrConfig,
) -> Result<(FittedSvr, Option<f64>)> {
    match target {
        GridTarget::Scalar { train, val } => {
            let m = train_svr(train_x, train, config)?;
            if !m.converged {
                return Ok((FittedSvr::Scalar(m), None));
            }
            let pred = m.predict_batch(val_x)?;
            let score = metrics::ccc(PairedSeries::new(val, &pred)?);
            Ok((FittedSvr::Scalar(m), Some(score)))
        }
        GridTarget::Hue { train, val } => {
            let pair = HueSvrPair::train(train_x, train, config)?;
            if !pair.converged() {
                return Ok((FittedSvr::Hue(pair), None));
            }
            let mut total = 0.0;
            for (row, truth) in val_x.rows().into_iter().zip(val) {
                // an undefined predicted angle scores as the worst possible error
                let err = match predict_hue(&pair, row) {
                    Ok(h) => circular::angular_error(*truth, h)?,
                    Err(Error::UndefinedAngle { .. }) => 180.0,
                    Err(e) => return Err(e),
                };
                total += err;
            }
            Ok((FittedSvr::Hue(pair), Some(total / val.len().max(1) as f64)))
        }
    }
}

/// Exhaustive search over `grid`, one model per point, evaluated on the
/// validation rows. Ties keep the earliest point in grid order.
pub fn grid_search(
    train_x: ArrayView2<'_, f64>,
    val_x: ArrayView2<'_, f64>,
    target: GridTarget<'_>,
    grid: &[SvrConfig],
) -> Result<GridOutcome> {
    if grid.is_empty() {
        return Err(Error::validation("empty SVR grid"));
    }
    let (n_train, n_val) = match target {
        GridTarget::Scalar { train, val } | GridTarget::Hue { train, val } => (train.len(), val.len()),
    };
    if train_x.nrows() != n_train || val_x.nrows() != n_val {
        return Err(Error::validation("feature rows and targets differ in length"));
    }
    if n_val == 0 {
        return Err(Error::validation("empty validation set"));
    }
    let results: Vec<Result<(FittedSvr, Option<f64>)>> = grid
        .par_iter()
        .map(|cfg| fit_and_score(train_x, val_x, target, cfg))
        .collect();

    let higher_is_better = matches!(target, GridTarget::Scalar { .. });
    let mut evaluated = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64)> = None;
    let mut models = Vec::with_capacity(grid.len());
    for (k, (cfg, res)) in grid.iter().zip(results).enumerate() {
        let (model, score) = res?;
        evaluated.push(GridPoint { config: *cfg, score });
        models.push(model);
        if let Some(s) = score {
            let better = match best {
                None => true,
                Some((_, b)) => {
                    if higher_is_better {
                        s > b
                    } else {
                        s < b
                    }
                }
            };
            if better {
                best = Some((k, s));
            }
        }
    }
    let (k, score) = best.ok_or_else(|| {
        let list: Vec<String> = grid
            .iter()
            .map(|c| format!("(C={}, eps={}, gamma={})", c.c, c.epsilon, c.gamma))
            .collect();
        Error::NonConvergence(format!("no grid point converged: {}", list.join(", ")))
    })?;
    Ok(GridOutcome {
        best_config: grid[k],
        best_score: score,
        model: models.swap_remove(k),
        evaluated,
    })
}

// ---------------------------------------------------------------------------
// persistence

pub const MODEL_FORMAT: &str = "emocolor.svr";
pub const MODEL_VERSION: u32 = 1;

/// Everything `train-svr` produces: the fitted standardizer plus one model per
/// color attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrBundle {
    pub format: String,
    pub version: u32,
    pub standardizer: Standardizer,
    pub hue: HueSvrPair,
    pub saturation: SvrModel,
    pub value: SvrModel,
}

impl SvrBundle {
    pub fn new(standardizer: Standardizer, hue: HueSvrPair, saturation: SvrModel, value: SvrModel) -> Self {
        SvrBundle {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            standardizer,
            hue,
            saturation,
            value,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: SvrBundle = serde_json::from_str(text)?;
        if b.format != MODEL_FORMAT || b.version != MODEL_VERSION {
            return Err(Error::validation(format!(
                "unsupported model format {} v{}",
                b.format, b.version
            )));
        }
        Ok(b)
    }
}
