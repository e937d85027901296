//! Normalized L1 loss, batch gradients, Adam, the training loop and a
//! finite-difference gradient check.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{backward_item, forward_item, ArchConfig, ModelParams};
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::mask::{apply_mask, Mask};
use crate::stft::{Spectrogram, Stft};

pub const DEFAULT_EPSILON: f64 = 1e-7;

/// `sum_b |z_b - zhat_b|_1 / (sum_b |z_b|_1 + eps)`.
pub fn loss_l1(targets: &[Vec<f64>], estimates: &[Vec<f64>], epsilon: f64) -> Result<f64> {
    let (num, den) = l1_terms(targets, estimates)?;
    Ok(num / (den + epsilon))
}

fn l1_terms(targets: &[Vec<f64>], estimates: &[Vec<f64>]) -> Result<(f64, f64)> {
    if targets.len() != estimates.len() {
        return Err(invalid(format!(
            "{} targets but {} estimates",
            targets.len(),
            estimates.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (b, (z, zh)) in targets.iter().zip(estimates).enumerate() {
        if z.len() != zh.len() {
            return Err(invalid(format!(
                "item {b}: target has {} samples, estimate {}",
                z.len(),
                zh.len()
            )));
        }
        num += z.iter().zip(zh).map(|(a, b)| (a - b).abs()).sum::<f64>();
        den += z.iter().map(|a| a.abs()).sum::<f64>();
    }
    Ok((num, den))
}

/// One supervised item: network input, reference spectrum, conditioning
/// pattern (`[1, L]` static or `[T, L]` per frame) and time-domain target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Array3<f64>,
    pub reference: Spectrogram,
    pub pattern: Array2<f64>,
    pub target: Vec<f64>,
}

/// Mask, filtered spectrum and time-domain estimate for one example.
pub fn estimate(params: &ModelParams, cfg: &ArchConfig, stft: &Stft, ex: &Example) -> Result<(Mask, Vec<f64>)> {
    let (mask, _) = forward_item(params, cfg, &ex.features.view(), Some(&ex.pattern))?;
    let zhat = stft.istft(&apply_mask(&mask, &ex.reference)?)?;
    Ok((mask, zhat))
}

/// Loss over `batch` without gradients.
pub fn batch_loss(
    params: &ModelParams,
    cfg: &ArchConfig,
    stft: &Stft,
    batch: &[&Example],
    epsilon: f64,
    exec: Execution,
) -> Result<f64> {
    let estimates = exec.try_map(batch, |ex| estimate(params, cfg, stft, ex).map(|(_, z)| z))?;
    let targets: Vec<Vec<f64>> = batch.iter().map(|ex| ex.target.clone()).collect();
    loss_l1(&targets, &estimates, epsilon)
}

/// Loss and parameter gradient over `batch`. Items are processed
/// independently (in parallel when `exec` allows) and gradients are summed
/// in item order, so results do not depend on the execution mode.
pub fn batch_loss_and_grad(
    params: &ModelParams,
    cfg: &ArchConfig,
    stft: &Stft,
    batch: &[&Example],
    epsilon: f64,
    exec: Execution,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let den: f64 = batch
        .iter()
        .map(|ex| ex.target.iter().map(|v| v.abs()).sum::<f64>())
        .sum::<f64>()
        + epsilon;
    let per_item = exec.try_map(batch, |ex| -> Result<(f64, ModelParams)> {
        let (mask, cache) = forward_item(params, cfg, &ex.features.view(), Some(&ex.pattern))?;
        let zhat = stft.istft(&apply_mask(&mask, &ex.reference)?)?;
        if zhat.len() != ex.target.len() {
            return Err(invalid("estimate and target lengths differ"));
        }
        let mut num = 0.0;
        let gz: Vec<f64> = zhat
            .iter()
            .zip(&ex.target)
            .map(|(e, t)| {
                num += (e - t).abs();
                // sign(0) = 0 picks the zero subgradient at kinks
                let d = e - t;
                if d > 0.0 {
                    1.0 / den
                } else if d < 0.0 {
                    -1.0 / den
                } else {
                    0.0
                }
            })
            .collect();
        let g_spec = stft.istft_adjoint(&gz);
        let g_mask: Array2<Complex64> = ndarray::Zip::from(&g_spec)
            .and(&ex.reference.data)
            .map_collect(|g, y| g * y.conj());
        let mut grad = params.zeros_like();
        backward_item(params, cfg, &cache, &g_mask, &mut grad);
        Ok((num, grad))
    })?;
    let mut iter = per_item.into_iter();
    let (mut num, mut grad) = iter.next().expect("non-empty batch");
    for (n, g) in iter {
        num += n;
        grad.add_assign(&g);
    }
    Ok((num / den, grad))
}

/// Adam with the usual defaults.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: ModelParams,
    v: ModelParams,
}

impl Adam {
    pub fn new(params: &ModelParams, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &ModelParams) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let lr = self.learning_rate;
        let eps = self.eps;
        let grads = grad.tensors();
        for ((((_, p), (_, m)), (_, v)), (_, _, g)) in params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default)]
    pub rng_seed: u64,
    /// Stops after this many optimizer steps when set.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub execution: Execution,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    10
}
fn default_epochs() -> usize {
    100
}
fn default_eps() -> f64 {
    DEFAULT_EPSILON
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            epsilon: default_eps(),
            rng_seed: 0,
            max_steps: None,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(invalid("batch_size and epochs must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub per_step: Vec<f64>,
    /// Mean step loss of each completed epoch.
    pub per_epoch: Vec<f64>,
}

impl LossHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss\n");
        for (e, l) in self.per_epoch.iter().enumerate() {
            out.push_str(&format!("{},{l}\n", e + 1));
        }
        out
    }

    pub fn steps_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (s, l) in self.per_step.iter().enumerate() {
            out.push_str(&format!("{},{l}\n", s + 1));
        }
        out
    }

    pub fn last(&self) -> Option<f64> {
        self.per_step.last().copied()
    }
}

/// Trains `params` in place on `examples` with Adam.
///
/// Each epoch visits the examples in an order drawn from a generator
/// seeded by `(rng_seed, epoch)`, so two runs with equal seeds produce
/// identical histories.
pub fn train(
    params: &mut ModelParams,
    cfg: &ArchConfig,
    train_cfg: &TrainConfig,
    stft: &Stft,
    examples: &[Example],
) -> Result<LossHistory> {
    train_cfg.validate()?;
    cfg.validate()?;
    if examples.is_empty() {
        return Err(invalid("no training examples"));
    }
    let mut opt = Adam::new(params, train_cfg.learning_rate);
    let mut history = LossHistory::default();
    let mut step = 0usize;
    'epochs: for epoch in 0..train_cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.rng_seed ^ (epoch as u64).wrapping_mul(0xA24B_AED4_963E_E407));
        order.shuffle(&mut rng);
        let mut epoch_losses = Vec::new();
        for chunk in order.chunks(train_cfg.batch_size) {
            if train_cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, grad) = match batch_loss_and_grad(params, cfg, stft, &batch, train_cfg.epsilon, train_cfg.execution) {
                Ok(v) => v,
                Err(Error::Numerical { .. }) => {
                    return Err(Error::Divergence { epoch, step, loss: f64::NAN })
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Divergence { epoch, step, loss });
            }
            opt.step(params, &grad);
            step += 1;
            history.per_step.push(loss);
            epoch_losses.push(loss);
        }
        if !epoch_losses.is_empty() {
            history
                .per_epoch
                .push(epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64);
        }
    }
    Ok(history)
}

/// Gradient-check outcome for one named tensor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Analytic and numeric values at the worst entry.
    pub worst: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    /// Largest error among tensors whose name starts with `prefix`.
    pub fn max_rel_error_for(&self, prefix: &str) -> f64 {
        self.tensors
            .iter()
            .filter(|t| t.name.starts_with(prefix))
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// Relative error with an absolute floor for near-zero gradients.
fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-10 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares analytic gradients of the full loss against central
/// differences with step `h`. At most `per_tensor` entries of each tensor
/// are probed (chosen at random from `seed`); `None` probes all.
pub fn grad_check(
    params: &ModelParams,
    cfg: &ArchConfig,
    stft: &Stft,
    examples: &[Example],
    h: f64,
    per_tensor: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport> {
    let batch: Vec<&Example> = examples.iter().collect();
    let eps = DEFAULT_EPSILON;
    let exec = Execution::Sequential;
    let (_, grad) = batch_loss_and_grad(params, cfg, stft, &batch, eps, exec)?;
    let den: f64 = batch
        .iter()
        .map(|ex| ex.target.iter().map(|v| v.abs()).sum::<f64>())
        .sum::<f64>()
        + eps;
    if !grad.is_finite() {
        return Err(Error::Numerical { layer: "gradient" });
    }
    let analytic: Vec<(String, Vec<f64>)> = grad
        .tensors()
        .into_iter()
        .map(|(n, _, v)| (n, v.to_vec()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut tensors = Vec::new();
    for (ti, (name, g)) in analytic.iter().enumerate() {
        let mut idx: Vec<usize> = (0..g.len()).collect();
        if let Some(k) = per_tensor {
            idx.shuffle(&mut rng);
            idx.truncate(k);
        }
        let mut worst = 0.0f64;
        let mut worst_pair = (0.0, 0.0);
        for &i in &idx {
            let orig = probe.tensors()[ti].2[i];
            let mut eval = |x: f64| -> Result<Vec<Vec<f64>>> {
                probe.tensors_mut()[ti].1[i] = x;
                batch
                    .iter()
                    .map(|ex| estimate(&probe, cfg, stft, ex).map(|(_, z)| z))
                    .collect()
            };
            let plus = eval(orig + h)?;
            let minus = eval(orig - h)?;
            probe.tensors_mut()[ti].1[i] = orig;
            // L(+h) - L(-h) summed per sample, which avoids cancelling two
            // nearly equal totals
            let mut diff = 0.0;
            for ((ex, zp), zm) in batch.iter().zip(&plus).zip(&minus) {
                for ((t, a), b) in ex.target.iter().zip(zp).zip(zm) {
                    diff += (a - t).abs() - (b - t).abs();
                }
            }
            let numeric = diff / den / (2.0 * h);
            let err = rel_error(g[i], numeric);
            if err >= worst {
                worst = err;
                worst_pair = (g[i], numeric);
            }
        }
        tensors.push(TensorCheck {
            name: name.clone(),
            checked: idx.len(),
            max_rel_error: worst,
            worst: worst_pair,
        });
    }
    Ok(GradCheckReport { tensors })
}
