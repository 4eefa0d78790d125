//! Feed-forward network with a regression head `(sin H, cos H, S, V)` and a
//! six-way emotion head over a shared trunk, trained by hand-written
//! backpropagation.
//!
//! The regression loss is the batch CCC loss averaged over the selected target
//! dimensions; the classification loss is softmax cross-entropy; the two are
//! mixed as `(1 − α)·CCC + α·CE`. At the endpoints the unused term is never
//! evaluated, so α = 1 produces exactly zero regression-head gradients and
//! α = 0 exactly zero classification-head gradients.
//!
//! Optimization is AdamW (decoupled weight decay) with a learning rate that
//! decays linearly to zero over all training steps.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circular;
use crate::error::{Error, Result};
use crate::labels::{ColorLabel, Emotion};
use crate::metrics::{self, concordance_from, Moments, PairedSeries};
use crate::svr::Standardizer;

/// Regression outputs: sin H, cos H, saturation, value.
pub const REGRESSION_OUTPUTS: usize = 4;
pub const CLASSES: usize = Emotion::COUNT;

// ---------------------------------------------------------------------------
// parameters

/// Dense layer `y = x Wᵀ + b`, weight stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(input: usize, output: usize) -> Dense {
        Dense {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    fn glorot(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Dense {
        let limit = (6.0 / (input + output) as f64).sqrt();
        Dense {
            weight: Array2::from_shape_simple_fn((output, input), || rng.random_range(-limit..limit)),
            bias: Array1::zeros(output),
        }
    }

    fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&self, input: ArrayView2<'_, f64>, grad_out: &Array2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.weight += &grad_out.t().dot(&input);
        grad.bias += &grad_out.sum_axis(Axis(0));
        grad_out.dot(&self.weight)
    }
}

/// Layer widths. The regression head is `last trunk → regression_hidden → 4`,
/// the classification head `last trunk → 6`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub trunk: Vec<usize>,
    pub regression_hidden: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            trunk: vec![256, 128],
            regression_hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub shared_trunk: Vec<Dense>,
    pub regression_head: Vec<Dense>,
    pub classification_head: Vec<Dense>,
    pub seed: u64,
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.shared_trunk[0].input_dim()
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.shared_trunk
            .iter()
            .chain(&self.regression_head)
            .chain(&self.classification_head)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.shared_trunk
            .iter_mut()
            .chain(&mut self.regression_head)
            .chain(&mut self.classification_head)
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> MlpParams {
        let z = |ls: &[Dense]| ls.iter().map(|l| Dense::zeros(l.input_dim(), l.output_dim())).collect();
        MlpParams {
            shared_trunk: z(&self.shared_trunk),
            regression_head: z(&self.regression_head),
            classification_head: z(&self.classification_head),
            seed: self.seed,
        }
    }

    /// Flat views of every parameter tensor, in a fixed order.
    pub fn buffers(&self) -> Vec<&[f64]> {
        self.layers()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.buffers().iter().map(|b| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.buffers().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn check_shapes(&self) -> Result<()> {
        let chain = |ls: &[Dense], from: usize, what: &str| -> Result<usize> {
            let mut d = from;
            for l in ls {
                if l.input_dim() != d || l.bias.len() != l.output_dim() {
                    return Err(Error::validation(format!("{what}: layer dimensions do not compose")));
                }
                d = l.output_dim();
            }
            Ok(d)
        };
        let trunk_out = chain(&self.shared_trunk, self.input_dim(), "trunk")?;
        if chain(&self.regression_head, trunk_out, "regression head")? != REGRESSION_OUTPUTS
            || chain(&self.classification_head, trunk_out, "classification head")? != CLASSES
        {
            return Err(Error::validation("head output sizes must be 4 and 6"));
        }
        Ok(())
    }
}

/// Deterministic Glorot-uniform initialization with zero biases.
///
/// Layers are drawn in the order trunk, classification head, regression head.
pub fn init_params(input_dim: usize, arch: &Architecture, seed: u64) -> Result<MlpParams> {
    if input_dim == 0 || arch.trunk.is_empty() || arch.trunk.contains(&0) || arch.regression_hidden == 0 {
        return Err(Error::validation(format!(
            "invalid layer sizes: input {input_dim}, trunk {:?}, regression hidden {}",
            arch.trunk, arch.regression_hidden
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trunk = Vec::new();
    let mut d = input_dim;
    for &w in &arch.trunk {
        trunk.push(Dense::glorot(d, w, &mut rng));
        d = w;
    }
    let classification_head = vec![Dense::glorot(d, CLASSES, &mut rng)];
    let regression_head = vec![
        Dense::glorot(d, arch.regression_hidden, &mut rng),
        Dense::glorot(arch.regression_hidden, REGRESSION_OUTPUTS, &mut rng),
    ];
    Ok(MlpParams {
        shared_trunk: trunk,
        regression_head,
        classification_head,
        seed,
    })
}

// ---------------------------------------------------------------------------
// forward

struct TrunkCache {
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    activations: Vec<Array2<f64>>,
}

impl TrunkCache {
    fn output(&self) -> ArrayView2<'_, f64> {
        self.activations.last().expect("input is always cached").view()
    }
}

fn trunk_forward(trunk: &[Dense], batch: ArrayView2<'_, f64>) -> TrunkCache {
    let mut activations = vec![batch.to_owned()];
    for layer in trunk {
        let h = layer.apply(activations.last().unwrap().view()).mapv(f64::tanh);
        activations.push(h);
    }
    TrunkCache { activations }
}

fn trunk_backward(trunk: &[Dense], cache: &TrunkCache, mut grad_h: Array2<f64>, grads: &mut [Dense]) {
    for (l, layer) in trunk.iter().enumerate().rev() {
        let h = &cache.activations[l + 1];
        let grad_z = grad_h * &h.mapv(|v| 1.0 - v * v);
        grad_h = layer.backward(cache.activations[l].view(), &grad_z, &mut grads[l]);
    }
}

fn check_input(params: &MlpParams, batch: ArrayView2<'_, f64>) -> Result<()> {
    if batch.ncols() != params.input_dim() {
        return Err(Error::validation(format!(
            "batch has {} features, network expects {}",
            batch.ncols(),
            params.input_dim()
        )));
    }
    Ok(())
}

/// Regression output (`B × 4`) and logits (`B × 6`).
pub fn forward(params: &MlpParams, batch: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    check_input(params, batch)?;
    let trunk = trunk_forward(&params.shared_trunk, batch);
    let hidden = params.regression_head[0].apply(trunk.output()).mapv(f64::tanh);
    let regression = params.regression_head[1].apply(hidden.view());
    let logits = params.classification_head[0].apply(trunk.output());
    Ok((regression, logits))
}

// ---------------------------------------------------------------------------
// losses

/// Which color attributes the regression loss covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSet {
    pub hue: bool,
    pub saturation: bool,
    pub value: bool,
}

impl TargetSet {
    pub const ALL: TargetSet = TargetSet { hue: true, saturation: true, value: true };
    pub const HUE: TargetSet = TargetSet { hue: true, saturation: false, value: false };
    pub const SATURATION: TargetSet = TargetSet { hue: false, saturation: true, value: false };
    pub const VALUE: TargetSet = TargetSet { hue: false, saturation: false, value: true };

    /// Regression output columns covered, in order.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = Vec::new();
        if self.hue {
            d.extend([0, 1]);
        }
        if self.saturation {
            d.push(2);
        }
        if self.value {
            d.push(3);
        }
        d
    }

    pub fn is_empty(&self) -> bool {
        !(self.hue || self.saturation || self.value)
    }
}

impl Default for TargetSet {
    fn default() -> Self {
        TargetSet::ALL
    }
}

fn check_pair(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<()> {
    if pred.dim() != target.dim() {
        return Err(Error::validation(format!(
            "prediction shape {:?} vs target shape {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.nrows() < 2 {
        return Err(Error::domain("CCC loss needs a batch of at least two rows"));
    }
    Ok(())
}

/// Mean over the listed columns of `1 − CCC`, statistics taken down the batch.
fn masked_ccc_loss(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>, dims: &[usize]) -> f64 {
    let total: f64 = dims
        .iter()
        .map(|&k| {
            let p = pred.column(k).to_vec();
            let t = target.column(k).to_vec();
            1.0 - concordance_from(Moments::of(&t, &p)).value
        })
        .sum();
    total / dims.len() as f64
}

/// Batch CCC loss averaged over every column.
pub fn batch_ccc_loss(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<f64> {
    check_pair(pred, target)?;
    let dims: Vec<usize> = (0..pred.ncols()).collect();
    if dims.is_empty() {
        return Err(Error::validation("no target columns"));
    }
    Ok(masked_ccc_loss(pred, target, &dims))
}

/// Gradient of [`masked_ccc_loss`] with respect to `pred`.
fn masked_ccc_grad(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>, dims: &[usize]) -> Array2<f64> {
    let b = pred.nrows() as f64;
    let mut grad = Array2::zeros(pred.raw_dim());
    for &k in dims {
        let p = pred.column(k);
        let t = target.column(k);
        let m = Moments::of(&t.to_vec(), &p.to_vec());
        if m.var_t == 0.0 && m.var_p == 0.0 {
            continue;
        }
        let denom = m.var_t + m.var_p + (m.mean_t - m.mean_p).powi(2);
        let gap = m.mean_p - m.mean_t;
        for i in 0..p.len() {
            let dccc = (2.0 / b) * ((t[i] - m.mean_t) * denom - 2.0 * m.cov * ((p[i] - m.mean_p) + gap)) / (denom * denom);
            grad[[i, k]] = -dccc / dims.len() as f64;
        }
    }
    grad
}

fn check_labels(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<()> {
    if logits.ncols() != CLASSES {
        return Err(Error::validation(format!("expected {CLASSES} logits, got {}", logits.ncols())));
    }
    if logits.nrows() != labels.len() {
        return Err(Error::validation(format!("{} logit rows vs {} labels", logits.nrows(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= CLASSES) {
        return Err(Error::validation(format!("label index {bad} out of range")));
    }
    Ok(())
}

fn log_softmax_row(row: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = row.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    row.mapv(|z| z - lse)
}

/// Mean negative log-likelihood of the true class under a softmax.
pub fn cross_entropy(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    Ok(ce_value(logits, labels))
}

fn ce_value(logits: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| -log_softmax_row(row)[y])
        .sum();
    total / labels.len() as f64
}

fn ce_grad(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Array2<f64> {
    let b = labels.len() as f64;
    let mut g = Array2::zeros(logits.raw_dim());
    for (i, (row, &y)) in logits.rows().into_iter().zip(labels).enumerate() {
        let p = log_softmax_row(row).mapv(f64::exp);
        for k in 0..CLASSES {
            g[[i, k]] = (p[k] - if k == y { 1.0 } else { 0.0 }) / b;
        }
    }
    g
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::validation(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// `(1 − α)·L_CCC + α·L_CE`, with the CCC term averaged over `targets`.
/// The term with zero weight is not evaluated.
pub fn multitask_loss(
    reg_pred: ArrayView2<'_, f64>,
    reg_target: ArrayView2<'_, f64>,
    logits: ArrayView2<'_, f64>,
    labels: &[usize],
    alpha: f64,
    targets: TargetSet,
) -> Result<f64> {
    check_alpha(alpha)?;
    let mut loss = 0.0;
    if alpha < 1.0 {
        check_pair(reg_pred, reg_target)?;
        if targets.is_empty() {
            return Err(Error::validation("regression term needs at least one target"));
        }
        loss += (1.0 - alpha) * masked_ccc_loss(reg_pred, reg_target, &targets.dims());
    }
    if alpha > 0.0 {
        check_labels(logits, labels)?;
        loss += alpha * ce_value(logits, labels);
    }
    Ok(loss)
}

/// Loss configuration for one backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub alpha: f64,
    pub targets: TargetSet,
}

/// Loss value and exact gradients of [`multitask_loss`] for one batch.
pub fn backward(
    params: &MlpParams,
    batch: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    labels: &[usize],
    spec: LossSpec,
) -> Result<(f64, MlpParams)> {
    check_input(params, batch)?;
    check_alpha(spec.alpha)?;
    let alpha = spec.alpha;
    let mut grads = params.zeros_like();
    let trunk = trunk_forward(&params.shared_trunk, batch);
    let t_out = trunk.output();
    let mut loss = 0.0;
    let mut grad_trunk: Option<Array2<f64>> = None;

    if alpha < 1.0 {
        if targets.dim() != (batch.nrows(), REGRESSION_OUTPUTS) {
            return Err(Error::validation("regression targets must be B × 4"));
        }
        if spec.targets.is_empty() {
            return Err(Error::validation("regression term needs at least one target"));
        }
        if batch.nrows() < 2 {
            return Err(Error::domain("CCC loss needs a batch of at least two rows"));
        }
        let dims = spec.targets.dims();
        let head = &params.regression_head;
        let hidden = head[0].apply(t_out).mapv(f64::tanh);
        let out = head[1].apply(hidden.view());
        loss += (1.0 - alpha) * masked_ccc_loss(out.view(), targets, &dims);

        let grad_out = masked_ccc_grad(out.view(), targets, &dims) * (1.0 - alpha);
        let grad_hidden = head[1].backward(hidden.view(), &grad_out, &mut grads.regression_head[1]);
        let grad_z = grad_hidden * &hidden.mapv(|v| 1.0 - v * v);
        grad_trunk = Some(head[0].backward(t_out, &grad_z, &mut grads.regression_head[0]));
    }
    if alpha > 0.0 {
        let logits = params.classification_head[0].apply(t_out);
        check_labels(logits.view(), labels)?;
        loss += alpha * ce_value(logits.view(), labels);
        let grad_logits = ce_grad(logits.view(), labels) * alpha;
        let g = params.classification_head[0].backward(t_out, &grad_logits, &mut grads.classification_head[0]);
        grad_trunk = Some(match grad_trunk {
            Some(r) => r + g,
            None => g,
        });
    }
    if let Some(g) = grad_trunk {
        trunk_backward(&params.shared_trunk, &trunk, g, &mut grads.shared_trunk);
    }
    Ok((loss, grads))
}

// ---------------------------------------------------------------------------
// optimizer

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Steps over which the learning rate decays linearly to zero.
    pub total_steps: usize,
}

impl AdamWConfig {
    /// Learning rate applied at 0-based `step`: `lr · (T − step) / T`,
    /// reaching exactly zero at `step = T`.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let total = self.total_steps.max(1);
        let remaining = total.saturating_sub(step) as f64;
        self.learning_rate * remaining / total as f64
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamWState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn for_buffers(buffers: &[&[f64]]) -> Self {
        AdamWState {
            m: buffers.iter().map(|b| vec![0.0; b.len()]).collect(),
            v: buffers.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// One AdamW update on flat buffers.
pub fn adamw_update(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamWState,
    step: usize,
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::validation("optimizer buffers do not align"));
    }
    let lr = cfg.learning_rate_at(step);
    let t = (step + 1) as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - lr * cfg.weight_decay;
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::validation(format!("optimizer buffer {k} has mismatched length")));
        }
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// [`adamw_update`] over a whole network.
pub fn adamw_step(
    params: &mut MlpParams,
    grads: &MlpParams,
    state: &mut AdamWState,
    step: usize,
    cfg: &AdamWConfig,
) -> Result<()> {
    let g = grads.buffers();
    let mut p = params.buffers_mut();
    adamw_update(&mut p, &g, state, step, cfg)
}

// ---------------------------------------------------------------------------
// training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub weight_decay: f64,
    pub target_set: TargetSet,
    pub seed: u64,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-5,
            alpha: 0.0,
            weight_decay: 0.01,
            target_set: TargetSet::ALL,
            seed: 0,
            architecture: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation("epochs must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::validation("batch_size must be >= 2"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::validation("weight_decay must be >= 0"));
        }
        check_alpha(self.alpha)?;
        if self.alpha < 1.0 && self.target_set.is_empty() {
            return Err(Error::validation("target_set is empty but alpha < 1"));
        }
        Ok(())
    }

    fn loss_spec(&self) -> LossSpec {
        LossSpec {
            alpha: self.alpha,
            targets: self.target_set,
        }
    }

    fn optimizer(&self, total_steps: usize) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: self.weight_decay,
            total_steps,
        }
    }
}

/// Regression target derived from a color label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionTarget {
    pub sin_h: f64,
    pub cos_h: f64,
    pub saturation: f64,
    pub value: f64,
}

impl RegressionTarget {
    pub fn from_color(c: &ColorLabel) -> Result<Self> {
        let (sin_h, cos_h) = circular::hue_to_components(c.hue_deg)?;
        Ok(RegressionTarget {
            sin_h,
            cos_h,
            saturation: c.saturation,
            value: c.value,
        })
    }
}

/// Features, regression targets (`N × 4`) and emotion labels, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
    pub labels: Vec<Emotion>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, targets: &[RegressionTarget], labels: Vec<Emotion>) -> Result<Self> {
        let n = features.nrows();
        if targets.len() != n || labels.len() != n {
            return Err(Error::validation(format!(
                "dataset sizes disagree: {n} feature rows, {} targets, {} labels",
                targets.len(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite feature"));
        }
        let mut t = Array2::zeros((n, REGRESSION_OUTPUTS));
        for (i, r) in targets.iter().enumerate() {
            t.row_mut(i).assign(&ndarray::arr1(&[r.sin_h, r.cos_h, r.saturation, r.value]));
        }
        Ok(Dataset { features, targets: t, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn rows(&self, idx: &[usize]) -> (Array2<f64>, Array2<f64>, Vec<usize>) {
        (
            self.features.select(Axis(0), idx),
            self.targets.select(Axis(0), idx),
            idx.iter().map(|&i| self.labels[i].index()).collect(),
        )
    }
}

/// Validation metrics after one epoch. Regression entries are `None` when
/// the attribute is not trained (or α = 1); accuracy is `None` when α = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_regression_loss: Option<f64>,
    pub hue_ae: Option<f64>,
    pub sat_pcc: Option<f64>,
    pub sat_ccc: Option<f64>,
    pub val_pcc: Option<f64>,
    pub val_ccc: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

fn batches(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    (0..n)
        .step_by(batch_size)
        .map(|s| s..(s + batch_size).min(n))
        .filter(|r| r.len() >= 2)
        .collect()
}

fn check_train_inputs(train: &Dataset, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::validation("empty training set"));
    }
    if config.batch_size > train.len() {
        return Err(Error::validation(format!(
            "batch_size {} exceeds training set size {}",
            config.batch_size,
            train.len()
        )));
    }
    Ok(())
}

/// Metrics of `params` on `data` under the training objective.
pub fn evaluate(params: &MlpParams, data: &Dataset, config: &TrainConfig) -> Result<EpochRecord> {
    let (reg, logits) = forward(params, data.features.view())?;
    let mut rec = EpochRecord {
        epoch: 0,
        train_loss: f64::NAN,
        val_regression_loss: None,
        hue_ae: None,
        sat_pcc: None,
        sat_ccc: None,
        val_pcc: None,
        val_ccc: None,
        accuracy: None,
    };
    let ts = config.target_set;
    if config.alpha < 1.0 && data.len() >= 2 {
        rec.val_regression_loss = Some(masked_ccc_loss(reg.view(), data.targets.view(), &ts.dims()));
        let col = |m: &Array2<f64>, k: usize| m.column(k).to_vec();
        if ts.hue {
            let truth: Vec<f64> = data
                .targets
                .rows()
                .into_iter()
                .map(|r| circular::components_to_hue(r[0], r[1]))
                .collect::<Result<_>>()?;
            let mut total = 0.0;
            for (t, r) in truth.iter().zip(reg.rows()) {
                total += match circular::components_to_hue(r[0], r[1]) {
                    Ok(h) => circular::angular_error(*t, h)?,
                    Err(Error::UndefinedAngle { .. }) => 180.0,
                    Err(e) => return Err(e),
                };
            }
            rec.hue_ae = Some(total / truth.len() as f64);
        }
        let pair = |k: usize| -> Result<(Option<f64>, Option<f64>)> {
            let (t, p) = (col(&data.targets, k), col(&reg, k));
            let series = PairedSeries::new(&t, &p)?;
            Ok((metrics::pcc(series).ok(), Some(metrics::ccc(series))))
        };
        if ts.saturation {
            (rec.sat_pcc, rec.sat_ccc) = pair(2)?;
        }
        if ts.value {
            (rec.val_pcc, rec.val_ccc) = pair(3)?;
        }
    }
    if config.alpha > 0.0 && !data.is_empty() {
        let pred: Vec<Emotion> = logits.rows().into_iter().map(argmax_emotion).collect();
        rec.accuracy = Some(metrics::accuracy(&data.labels, &pred)?);
    }
    Ok(rec)
}

/// True when `candidate` should replace `best` under the selection rule:
/// regression-only runs minimize validation CCC loss; runs with a
/// classification term maximize accuracy, ties going to the lower
/// regression loss (and then to the earlier epoch).
fn improves(candidate: &EpochRecord, best: &EpochRecord, alpha: f64) -> bool {
    let loss = |r: &EpochRecord| r.val_regression_loss.unwrap_or(f64::INFINITY);
    if alpha == 0.0 {
        return loss(candidate) < loss(best);
    }
    let acc = |r: &EpochRecord| r.accuracy.unwrap_or(f64::NEG_INFINITY);
    if acc(candidate) != acc(best) {
        return acc(candidate) > acc(best);
    }
    alpha < 1.0 && loss(candidate) < loss(best)
}

/// Trains a network with the multitask objective. With a validation set the
/// returned parameters come from the best validation epoch; without one,
/// from the last epoch. Fully determined by `(config, train, val)`.
pub fn train(train: &Dataset, val: Option<&Dataset>, config: &TrainConfig) -> Result<TrainOutcome> {
    check_train_inputs(train, config)?;
    let mut params = init_params(train.features.ncols(), &config.architecture, config.seed)?;
    let mut state = AdamWState::for_buffers(&params.buffers());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let n = train.len();
    let per_epoch = batches(n, config.batch_size);
    let opt = config.optimizer(per_epoch.len() * config.epochs);
    let spec = config.loss_spec();

    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(EpochRecord, MlpParams)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for range in &per_epoch {
            let (x, y, l) = train.rows(&order[range.clone()]);
            let (loss, grads) = backward(&params, x.view(), y.view(), &l, spec)?;
            adamw_step(&mut params, &grads, &mut state, step, &opt)?;
            step += 1;
            loss_sum += loss;
        }
        if !params.is_finite() {
            return Err(Error::NonConvergence(format!("parameters diverged in epoch {epoch}")));
        }
        let mut rec = match val {
            Some(v) => evaluate(&params, v, config)?,
            None => evaluate(&params, train, config)?,
        };
        rec.epoch = epoch;
        rec.train_loss = loss_sum / per_epoch.len() as f64;
        let replace = match (&best, val) {
            (None, _) => true,
            (Some(_), None) => true,
            (Some((b, _)), Some(_)) => improves(&rec, b, config.alpha),
        };
        if replace {
            best = Some((rec.clone(), params.clone()));
        }
        history.push(rec);
    }
    let (best_rec, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params: best_params,
        history,
        best_epoch: best_rec.epoch,
    })
}

/// Trunk and classification head only, no regression path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub shared_trunk: Vec<Dense>,
    pub classification_head: Vec<Dense>,
}

impl ClassifierParams {
    fn buffers(&self) -> Vec<&[f64]> {
        self.shared_trunk
            .iter()
            .chain(&self.classification_head)
            .flat_map(|l| [l.weight.as_slice().unwrap(), l.bias.as_slice().unwrap()])
            .collect()
    }

    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        self.shared_trunk
            .iter_mut()
            .chain(&mut self.classification_head)
            .flat_map(|l| [l.weight.as_slice_mut().unwrap(), l.bias.as_slice_mut().unwrap()])
            .collect()
    }

    pub fn logits(&self, batch: ArrayView2<'_, f64>) -> Array2<f64> {
        let trunk = trunk_forward(&self.shared_trunk, batch);
        self.classification_head[0].apply(trunk.output())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHistory {
    pub epoch: usize,
    pub train_loss: f64,
    pub accuracy: Option<f64>,
}

/// Plain cross-entropy classifier on the same trunk, initialization,
/// shuffling and schedule as [`train`]. `config.alpha` and
/// `config.target_set` are ignored.
pub fn train_classifier(
    train: &Dataset,
    val: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<(ClassifierParams, Vec<ClassifierHistory>)> {
    let cfg = TrainConfig { alpha: 1.0, ..config.clone() };
    check_train_inputs(train, &cfg)?;
    let full = init_params(train.features.ncols(), &cfg.architecture, cfg.seed)?;
    let mut params = ClassifierParams {
        shared_trunk: full.shared_trunk,
        classification_head: full.classification_head,
    };
    let mut state = AdamWState::for_buffers(&params.buffers());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let n = train.len();
    let per_epoch = batches(n, cfg.batch_size);
    let opt = cfg.optimizer(per_epoch.len() * cfg.epochs);

    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    let mut history = Vec::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for range in &per_epoch {
            let idx = &order[range.clone()];
            let x = train.features.select(Axis(0), idx);
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i].index()).collect();
            let trunk = trunk_forward(&params.shared_trunk, x.view());
            let head = &params.classification_head[0];
            let logits = head.apply(trunk.output());
            loss_sum += ce_value(logits.view(), &labels);
            let mut grads = ClassifierParams {
                shared_trunk: params
                    .shared_trunk
                    .iter()
                    .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                    .collect(),
                classification_head: vec![Dense::zeros(head.input_dim(), head.output_dim())],
            };
            let g = head.backward(trunk.output(), &ce_grad(logits.view(), &labels), &mut grads.classification_head[0]);
            trunk_backward(&params.shared_trunk, &trunk, g, &mut grads.shared_trunk);
            let gb = grads.buffers();
            let mut pb = params.buffers_mut();
            adamw_update(&mut pb, &gb, &mut state, step, &opt)?;
            step += 1;
        }
        let accuracy = match val {
            Some(v) => {
                let pred: Vec<Emotion> = params.logits(v.features.view()).rows().into_iter().map(argmax_emotion).collect();
                Some(metrics::accuracy(&v.labels, &pred)?)
            }
            None => None,
        };
        history.push(ClassifierHistory {
            epoch,
            train_loss: loss_sum / per_epoch.len() as f64,
            accuracy,
        });
    }
    Ok((params, history))
}

// ---------------------------------------------------------------------------
// inference

fn argmax_emotion(row: ArrayView1<'_, f64>) -> Emotion {
    let mut best = 0;
    for k in 1..row.len() {
        if row[k] > row[best] {
            best = k;
        }
    }
    Emotion::from_index(best).expect("six logits")
}

/// One utterance's decoded prediction. `hue_deg` is `None` when the
/// predicted (sin, cos) vector is too close to zero to define an angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorPrediction {
    pub hue_deg: Option<f64>,
    pub saturation: f64,
    pub value: f64,
    pub emotion: Emotion,
}

impl ColorPrediction {
    pub fn color(&self) -> Option<ColorLabel> {
        self.hue_deg.map(|h| ColorLabel {
            hue_deg: h,
            saturation: self.saturation,
            value: self.value,
        })
    }
}

/// Decodes raw head outputs: hue via `atan2`, saturation/value clamped to
/// `[0, 1]`, emotion by argmax.
pub fn decode(regression: ArrayView2<'_, f64>, logits: ArrayView2<'_, f64>) -> Result<Vec<ColorPrediction>> {
    regression
        .rows()
        .into_iter()
        .zip(logits.rows())
        .map(|(r, l)| {
            let hue_deg = match circular::components_to_hue(r[0], r[1]) {
                Ok(h) => Some(h),
                Err(Error::UndefinedAngle { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(ColorPrediction {
                hue_deg,
                saturation: r[2].clamp(0.0, 1.0),
                value: r[3].clamp(0.0, 1.0),
                emotion: argmax_emotion(l),
            })
        })
        .collect()
}

pub fn predict_colors(params: &MlpParams, features: ArrayView2<'_, f64>) -> Result<Vec<ColorPrediction>> {
    let (reg, logits) = forward(params, features)?;
    decode(reg.view(), logits.view())
}

// ---------------------------------------------------------------------------
// checkpoints

pub const CHECKPOINT_FORMAT: &str = "emocolor.mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// `(out, in)` per layer, trunk then regression head then classification head.
    pub layer_shapes: Vec<(usize, usize)>,
    pub config: TrainConfig,
    pub seed: u64,
    pub standardizer: Option<Standardizer>,
    pub params: MlpParams,
}

impl Checkpoint {
    pub fn new(params: MlpParams, config: TrainConfig, standardizer: Option<Standardizer>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            layer_shapes: params.layers().map(|l| l.weight.dim()).collect(),
            seed: params.seed,
            config,
            standardizer,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::validation(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        c.params.check_shapes()?;
        let shapes: Vec<(usize, usize)> = c.params.layers().map(|l| l.weight.dim()).collect();
        if shapes != c.layer_shapes {
            return Err(Error::validation("checkpoint layer shapes do not match parameters"));
        }
        Ok(c)
    }

    /// Standardizes (when a standardizer was saved) and predicts.
    pub fn predict(&self, features: ArrayView2<'_, f64>) -> Result<Vec<ColorPrediction>> {
        match &self.standardizer {
            Some(s) => predict_colors(&self.params, s.transform(features)?.view()),
            None => predict_colors(&self.params, features),
        }
    }
}
