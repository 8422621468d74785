//! Gradient training of the free parametrization.
//!
//! The whole point of the free parametrization is that it needs no
//! projection step: every parameter vector realizes a certified model, so
//! plain first-order updates (SGD or Adam) preserve the gain bound by
//! construction. This module provides windowed reverse-mode gradients
//! through the entire pipeline (structured realization, simulation,
//! normalized nonlinearity, budget rescaling), full-sequence metrics, a
//! per-epoch certificate audit, and a finite-difference audit of the
//! gradients themselves.
//!
//! Conventions:
//! - Signals are scaled per channel by the root-mean-square of the
//!   training split (no mean subtraction, so zero input still maps to
//!   zero output and the gain bound stays meaningful). The scales are
//!   recomputed from the dataset on every run and never stored in model
//!   files; reports carry them for reference.
//! - Training windows start from zero layer states, which is exact for
//!   the first window of a sequence and a deliberate truncation bias for
//!   later ones. Metrics always come from full-sequence simulation.
//! - Windows are visited in a fixed (sequence, offset) order and batch
//!   gradients reduce in that order, so runs are bitwise reproducible
//!   even when window gradients are computed concurrently.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lti::{bounded_real_check_strict, Trajectory};
use crate::model::{
    build, certified_gain, flatten, forward, forward_free, unflatten_like, Engine, L2ruFreeParams,
    L2ruModel, ModelError,
};
use crate::tank::Dataset;
use crate::tape::{Tape, Var};

/// Slack for the per-epoch certificate audit. The structured construction
/// leaves a strictly positive margin, but for very long memory ranges the
/// margin sits below what a finite-precision eigenvalue solve resolves, so
/// the audit tolerates this much numerical noise instead of demanding a
/// sign it cannot measure.
pub const AUDIT_TOL: f64 = 1e-9;
/// Relative step for central finite differences: `1e-5 * (1 + |p|)`.
pub const FD_STEP_SCALE: f64 = 1e-5;
/// Largest relative deviation tolerated between tape and FD gradients.
pub const FD_REL_TOL: f64 = 1e-4;
/// Floor for the denominator of relative FD deviations; below this both
/// routes are dominated by cancellation noise and the comparison is void.
pub const FD_DENOM_FLOOR: f64 = 1e-6;
/// One-shot relative jitter used to escape degenerate parameter draws.
pub const DEGENERACY_JITTER: f64 = 1e-12;
/// Adam denominator offset.
pub const ADAM_EPS: f64 = 1e-8;
/// Coordinates audited per scheduled in-training gradient check.
pub const AUDIT_COORDS_PER_CHECK: usize = 8;

/// Training failures.
#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training setup: {0}")]
    Invalid(String),
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NanAbort { epoch: usize, detail: String },
    #[error(
        "gradient audit failed at epoch {epoch}: coordinate {coord} deviates by {relative:.3e} \
         (tape {tape:.6e}, finite difference {fd:.6e})"
    )]
    GradientAudit {
        epoch: usize,
        coord: usize,
        relative: f64,
        tape: f64,
        fd: f64,
    },
}

/// First-order update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

/// Hyperparameters of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub adam_betas: (f64, f64),
    /// Windows per optimizer step.
    pub batch_size: usize,
    /// Window length for truncated-sequence gradients.
    pub truncation_length: usize,
    /// Drives only the gradient-audit coordinate draw; the data order is
    /// fixed.
    pub seed: u64,
    /// Audit gradients every this many epochs; 0 disables the audit.
    pub grad_check_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            adam_betas: (0.9, 0.999),
            batch_size: 8,
            truncation_length: 200,
            seed: 0,
            grad_check_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validated(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(TrainError::Invalid(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.truncation_length < 2 {
            return Err(TrainError::Invalid(format!(
                "truncation length must be at least 2, got {}",
                self.truncation_length
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Invalid("batch size must be positive".into()));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(TrainError::Invalid(format!(
                "adam betas must lie in [0, 1), got ({b1}, {b2})"
            )));
        }
        Ok(())
    }
}

/// Metrics logged once per epoch. Record 0 is the untrained baseline;
/// record `k` describes the model after the `k`-th epoch of updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean squared error over the training rows (scaled space,
    /// full-sequence simulation).
    pub train_loss: f64,
    /// Mean squared error over the validation rows (scaled space).
    pub val_loss: f64,
    /// Per-output-channel normalized RMS error on the validation rows.
    pub nrmse: Vec<f64>,
    /// Whether every layer certificate and the gain budget verified.
    pub cert_ok: bool,
    /// Worst relative tape-vs-FD deviation, when this epoch was audited.
    pub grad_check: Option<f64>,
    pub wall_time_s: f64,
}

/// Full training log plus the normalization actually used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub input_scales: Vec<f64>,
    pub output_scales: Vec<f64>,
}

impl TrainReport {
    /// CSV table: `epoch,train_loss,val_loss,nrmse_1..,cert_ok`.
    pub fn to_csv(&self) -> String {
        let channels = self.epochs.first().map_or(0, |r| r.nrmse.len());
        let mut out = String::from("epoch,train_loss,val_loss");
        for c in 1..=channels {
            out.push_str(&format!(",nrmse_{c}"));
        }
        out.push_str(",cert_ok\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{}", r.epoch, r.train_loss, r.val_loss));
            for v in &r.nrmse {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{}\n", r.cert_ok));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// One finite-difference probe of a single gradient coordinate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FdProbe {
    pub coord: usize,
    pub tape: f64,
    pub fd: f64,
    pub relative: f64,
}

/// One contiguous training segment, already scaled, sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

/// Mean over time and channels of the squared error between two equally
/// shaped trajectories.
pub fn loss_mse(pred: &Trajectory, target: &Trajectory) -> Result<f64, TrainError> {
    if pred.dim() != target.dim() || pred.len() != target.len() {
        return Err(TrainError::Metric(format!(
            "mean squared error needs equal shapes, got {}x{} vs {}x{}",
            pred.len(),
            pred.dim(),
            target.len(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(TrainError::Metric(
            "mean squared error of empty trajectories".into(),
        ));
    }
    let sum: f64 = pred
        .as_flat()
        .iter()
        .zip(target.as_flat())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / pred.as_flat().len() as f64)
}

/// Per-channel RMS error divided by the target's per-channel standard
/// deviation. Errors on constant target channels, where the ratio is
/// undefined.
pub fn nrmse(pred: &Trajectory, target: &Trajectory) -> Result<Vec<f64>, TrainError> {
    if pred.dim() != target.dim() || pred.len() != target.len() {
        return Err(TrainError::Metric(format!(
            "normalized RMS error needs equal shapes, got {}x{} vs {}x{}",
            pred.len(),
            pred.dim(),
            target.len(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(TrainError::Metric(
            "normalized RMS error of empty trajectories".into(),
        ));
    }
    let (t, d) = (target.len(), target.dim());
    let mut out = Vec::with_capacity(d);
    for c in 0..d {
        let mean: f64 = (0..t).map(|k| target.sample(k)[c]).sum::<f64>() / t as f64;
        let var: f64 = (0..t)
            .map(|k| {
                let e = target.sample(k)[c] - mean;
                e * e
            })
            .sum::<f64>()
            / t as f64;
        if var <= 0.0 {
            return Err(TrainError::Metric(format!(
                "target channel {c} is constant; its normalized RMS error is undefined"
            )));
        }
        let mse: f64 = (0..t)
            .map(|k| {
                let e = pred.sample(k)[c] - target.sample(k)[c];
                e * e
            })
            .sum::<f64>()
            / t as f64;
        out.push((mse / var).sqrt());
    }
    Ok(out)
}

/// Per-channel root-mean-square of the training rows of every sequence,
/// for inputs and outputs separately. Channels that are identically zero
/// on the training split get scale 1 so division is always defined. No
/// mean is subtracted: centering would break the zero-input/zero-output
/// correspondence that the gain bound speaks about.
pub fn rms_scales(dataset: &Dataset) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let ds = dataset
        .clone()
        .validated()
        .map_err(|e| TrainError::Invalid(e.to_string()))?;
    let channel_rms = |seqs: &[Trajectory]| -> Vec<f64> {
        let d = seqs[0].dim();
        let mut sq = vec![0.0; d];
        let mut count = 0usize;
        for (i, s) in seqs.iter().enumerate() {
            let t_end = ds.train_len(i);
            for k in 0..t_end {
                for (acc, v) in sq.iter_mut().zip(s.sample(k)) {
                    *acc += v * v;
                }
            }
            count += t_end;
        }
        sq.iter()
            .map(|&v| {
                let rms = (v / count as f64).sqrt();
                if rms > 0.0 {
                    rms
                } else {
                    1.0
                }
            })
            .collect()
    };
    Ok((channel_rms(&ds.inputs), channel_rms(&ds.outputs)))
}

fn scaled_rows(t: &Trajectory, scales: &[f64], lo: usize, hi: usize) -> Vec<Vec<f64>> {
    (lo..hi)
        .map(|k| {
            t.sample(k)
                .iter()
                .zip(scales)
                .map(|(v, s)| v / s)
                .collect()
        })
        .collect()
}

/// Cuts the training rows of every sequence into consecutive windows of
/// at most `truncation_length` samples, scaled per channel. A trailing
/// fragment shorter than two samples is dropped: one sample carries no
/// dynamics to fit.
pub fn make_windows(
    dataset: &Dataset,
    input_scales: &[f64],
    output_scales: &[f64],
    truncation_length: usize,
) -> Result<Vec<Window>, TrainError> {
    if truncation_length < 2 {
        return Err(TrainError::Invalid(format!(
            "truncation length must be at least 2, got {truncation_length}"
        )));
    }
    let ds = dataset
        .clone()
        .validated()
        .map_err(|e| TrainError::Invalid(e.to_string()))?;
    if input_scales.len() != ds.inputs[0].dim() || output_scales.len() != ds.outputs[0].dim() {
        return Err(TrainError::Invalid(format!(
            "scale vectors ({}, {}) do not match the data channels ({}, {})",
            input_scales.len(),
            output_scales.len(),
            ds.inputs[0].dim(),
            ds.outputs[0].dim()
        )));
    }
    let mut windows = Vec::new();
    for (i, (u, y)) in ds.inputs.iter().zip(&ds.outputs).enumerate() {
        let t_end = ds.train_len(i);
        let mut start = 0;
        while start + 2 <= t_end {
            let end = (start + truncation_length).min(t_end);
            if end - start < 2 {
                break;
            }
            windows.push(Window {
                inputs: scaled_rows(u, input_scales, start, end),
                targets: scaled_rows(y, output_scales, start, end),
            });
            start = end;
        }
    }
    Ok(windows)
}

fn window_mse_f64(params: &L2ruFreeParams<f64>, w: &Window) -> Result<f64, TrainError> {
    let pred = forward_free(params, &w.inputs)?;
    if pred[0].len() != w.targets[0].len() {
        return Err(TrainError::Metric(format!(
            "window targets have {} channels, model emits {}",
            w.targets[0].len(),
            pred[0].len()
        )));
    }
    let count = (pred.len() * pred[0].len()) as f64;
    let mut sum = 0.0;
    for (pk, tk) in pred.iter().zip(&w.targets) {
        for (p, t) in pk.iter().zip(tk) {
            sum += (p - t) * (p - t);
        }
    }
    Ok(sum / count)
}

fn check_batch(batch: &[Window]) -> Result<(), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Invalid("empty gradient batch".into()));
    }
    for w in batch {
        if w.inputs.len() < 2 || w.inputs.len() != w.targets.len() {
            return Err(TrainError::Invalid(format!(
                "window needs at least 2 samples and matching lengths, got {} inputs, {} targets",
                w.inputs.len(),
                w.targets.len()
            )));
        }
    }
    Ok(())
}

/// Average of the per-window mean squared errors, plain values. This is
/// the same quantity [`gradient`] differentiates; finite-difference
/// audits probe it directly.
pub fn batch_loss(params: &L2ruFreeParams<f64>, batch: &[Window]) -> Result<f64, TrainError> {
    check_batch(batch)?;
    let mut total = 0.0;
    for w in batch {
        total += window_mse_f64(params, w)?;
    }
    Ok(total / batch.len() as f64)
}

fn window_gradient(
    template: &L2ruFreeParams<f64>,
    flat: &[f64],
    w: &Window,
) -> Result<(f64, Vec<f64>), TrainError> {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = flat.iter().map(|&v| tape.input(v)).collect();
    let mut stream = vars.iter().copied();
    let params = unflatten_like(template, &mut stream)?;
    let inputs: Vec<Vec<Var<'_>>> = w
        .inputs
        .iter()
        .map(|row| row.iter().map(|&v| tape.constant(v)).collect())
        .collect();
    let pred = forward_free(&params, &inputs)?;
    if pred[0].len() != w.targets[0].len() {
        return Err(TrainError::Metric(format!(
            "window targets have {} channels, model emits {}",
            w.targets[0].len(),
            pred[0].len()
        )));
    }
    let count = (pred.len() * pred[0].len()) as f64;
    let mut sum = tape.constant(0.0);
    for (pk, tk) in pred.iter().zip(&w.targets) {
        for (p, &t) in pk.iter().zip(tk) {
            let e = *p - tape.constant(t);
            sum = sum + e * e;
        }
    }
    let loss = sum * tape.constant(1.0 / count);
    let adjoints = tape.gradient(loss);
    let grad = vars.iter().map(|v| adjoints[v.id() as usize]).collect();
    Ok((crate::numerics::Scalar::val(loss), grad))
}

fn gradient_attempt(
    params: &L2ruFreeParams<f64>,
    batch: &[Window],
) -> Result<(f64, Vec<f64>), TrainError> {
    let mut flat = Vec::new();
    flatten(params, &mut flat);
    let per_window: Vec<Result<(f64, Vec<f64>), TrainError>> = batch
        .par_iter()
        .map(|w| window_gradient(params, &flat, w))
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; flat.len()];
    for result in per_window {
        let (l, g) = result?;
        loss += l;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    let b = batch.len() as f64;
    loss /= b;
    for g in &mut grad {
        *g /= b;
    }
    Ok((loss, grad))
}

fn jittered(params: &L2ruFreeParams<f64>) -> Result<L2ruFreeParams<f64>, TrainError> {
    let mut flat = Vec::new();
    flatten(params, &mut flat);
    for p in &mut flat {
        *p += DEGENERACY_JITTER * (1.0 + p.abs());
    }
    Ok(unflatten_like(params, &mut flat.into_iter())?)
}

/// Loss and exact gradient of [`batch_loss`] with respect to every free
/// scalar, by reverse-mode differentiation through realization,
/// simulation, the normalized nonlinearity, and the budget rescaling.
/// Window gradients may be computed concurrently but always reduce in
/// window order, so the result is bitwise reproducible. A degenerate
/// construction is retried once from parameters jittered by `1e-12`
/// relative; a second failure is surfaced.
pub fn gradient(
    params: &L2ruFreeParams<f64>,
    batch: &[Window],
) -> Result<(f64, Vec<f64>), TrainError> {
    check_batch(batch)?;
    match gradient_attempt(params, batch) {
        Err(TrainError::Model(e)) if e.is_degenerate() => {
            gradient_attempt(&jittered(params)?, batch)
        }
        other => other,
    }
}

/// Central finite-difference audit of [`gradient`] on the given
/// coordinates; returns the worst probe. Step `1e-5 * (1 + |p|)` per
/// coordinate, relative deviation floored at [`FD_DENOM_FLOOR`].
pub fn fd_audit(
    params: &L2ruFreeParams<f64>,
    batch: &[Window],
    coords: &[usize],
) -> Result<FdProbe, TrainError> {
    if coords.is_empty() {
        return Err(TrainError::Invalid("no coordinates to audit".into()));
    }
    let (_, grad) = gradient(params, batch)?;
    let mut flat = Vec::new();
    flatten(params, &mut flat);
    let mut worst = FdProbe {
        coord: coords[0],
        tape: 0.0,
        fd: 0.0,
        relative: -1.0,
    };
    for &i in coords {
        if i >= flat.len() {
            return Err(TrainError::Invalid(format!(
                "audit coordinate {i} out of range for {} parameters",
                flat.len()
            )));
        }
        let step = FD_STEP_SCALE * (1.0 + flat[i].abs());
        let mut probe = flat.clone();
        probe[i] = flat[i] + step;
        let plus = batch_loss(&unflatten_like(params, &mut probe.iter().copied())?, batch)?;
        probe[i] = flat[i] - step;
        let minus = batch_loss(&unflatten_like(params, &mut probe.iter().copied())?, batch)?;
        let fd = (plus - minus) / (2.0 * step);
        let denom = grad[i].abs().max(fd.abs()).max(FD_DENOM_FLOOR);
        let relative = (grad[i] - fd).abs() / denom;
        if relative > worst.relative {
            worst = FdProbe {
                coord: i,
                tape: grad[i],
                fd,
                relative,
            };
        }
    }
    Ok(worst)
}

/// Verifies every layer certificate (strict four-block check with
/// [`AUDIT_TOL`] slack) and that the recomputed gain budget still equals
/// the prescribed bound.
pub fn certificate_audit(model: &L2ruModel) -> Result<bool, TrainError> {
    for layer in &model.layers {
        let ok = bounded_real_check_strict(
            &layer.sys,
            &layer.cert.four_block_storage(),
            layer.cert.gamma,
            -AUDIT_TOL,
        )
        .map_err(|e| TrainError::Model(e.into()))?;
        if !ok {
            return Ok(false);
        }
    }
    let gain = certified_gain(model)?;
    Ok((gain - model.gamma_hat).abs() <= AUDIT_TOL * model.gamma_hat.max(1.0))
}

struct Metrics {
    train_loss: f64,
    val_loss: f64,
    nrmse: Vec<f64>,
    cert_ok: bool,
}

fn evaluate(
    params: &L2ruFreeParams<f64>,
    ds: &Dataset,
    input_scales: &[f64],
    output_scales: &[f64],
) -> Result<Metrics, TrainError> {
    let model = build(params)?;
    let cert_ok = certificate_audit(&model)?;
    let mut train_pred = Vec::new();
    let mut train_tgt = Vec::new();
    let mut val_pred = Vec::new();
    let mut val_tgt = Vec::new();
    for (i, (u, y)) in ds.inputs.iter().zip(&ds.outputs).enumerate() {
        let u_scaled =
            Trajectory::from_rows(&scaled_rows(u, input_scales, 0, u.len())).map_err(|e| {
                TrainError::Invalid(format!("input sequence does not form a trajectory: {e}"))
            })?;
        let pred = forward(&model, &u_scaled, Engine::Recursive)?;
        let y_scaled = scaled_rows(y, output_scales, 0, y.len());
        let t_end = ds.train_len(i);
        for k in 0..u.len() {
            let (pred_rows, tgt_rows) = if k < t_end {
                (&mut train_pred, &mut train_tgt)
            } else {
                (&mut val_pred, &mut val_tgt)
            };
            pred_rows.push(pred.sample(k).to_vec());
            tgt_rows.push(y_scaled[k].clone());
        }
    }
    let as_traj = |rows: &[Vec<f64>]| {
        Trajectory::from_rows(rows)
            .map_err(|e| TrainError::Invalid(format!("metric rows do not align: {e}")))
    };
    let train_pred = as_traj(&train_pred)?;
    let train_tgt = as_traj(&train_tgt)?;
    let val_pred = as_traj(&val_pred)?;
    let val_tgt = as_traj(&val_tgt)?;
    Ok(Metrics {
        train_loss: loss_mse(&train_pred, &train_tgt)?,
        val_loss: loss_mse(&val_pred, &val_tgt)?,
        // Per-channel scaling cancels in the ratio, so this equals the
        // normalized RMS error in original units.
        nrmse: nrmse(&val_pred, &val_tgt)?,
        cert_ok,
    })
}

struct OptState {
    kind: Optimizer,
    betas: (f64, f64),
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl OptState {
    fn new(config: &TrainConfig, n: usize) -> Self {
        Self {
            kind: config.optimizer,
            betas: config.adam_betas,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam => {
                self.t += 1;
                let (b1, b2) = self.betas;
                let c1 = 1.0 - b1.powi(self.t as i32);
                let c2 = 1.0 - b2.powi(self.t as i32);
                for i in 0..params.len() {
                    self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
                    self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

fn finite_or_abort(value: f64, epoch: usize, what: &str) -> Result<f64, TrainError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(TrainError::NanAbort {
            epoch,
            detail: format!("{what} is {value}"),
        })
    }
}

/// Runs the optimizer and returns the trained parameters with the full
/// epoch log. Record 0 of the report is the untrained baseline, so a run
/// with 0 epochs returns the parameters unchanged together with their
/// metrics. Identical inputs produce bitwise-identical logs.
pub fn train(
    params: &L2ruFreeParams<f64>,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(L2ruFreeParams<f64>, TrainReport), TrainError> {
    config.validated()?;
    let mut current = params.clone().validated()?;
    let ds = dataset
        .clone()
        .validated()
        .map_err(|e| TrainError::Invalid(e.to_string()))?;
    if ds.inputs[0].dim() != current.input_dim() || ds.outputs[0].dim() != current.output_dim() {
        return Err(TrainError::Invalid(format!(
            "dataset channels ({} in, {} out) do not match the model ({} in, {} out)",
            ds.inputs[0].dim(),
            ds.outputs[0].dim(),
            current.input_dim(),
            current.output_dim()
        )));
    }
    let (input_scales, output_scales) = rms_scales(&ds)?;
    let windows = make_windows(&ds, &input_scales, &output_scales, config.truncation_length)?;
    if windows.is_empty() {
        return Err(TrainError::Invalid(
            "the training split yields no usable windows".into(),
        ));
    }
    let mut flat = Vec::new();
    flatten(&current, &mut flat);
    let mut opt = OptState::new(config, flat.len());
    let mut audit_rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut report = TrainReport {
        epochs: Vec::with_capacity(config.epochs + 1),
        input_scales: input_scales.clone(),
        output_scales: output_scales.clone(),
    };

    let baseline = evaluate(&current, &ds, &input_scales, &output_scales)?;
    finite_or_abort(baseline.train_loss, 0, "baseline training loss")?;
    finite_or_abort(baseline.val_loss, 0, "baseline validation loss")?;
    report.epochs.push(EpochRecord {
        epoch: 0,
        train_loss: baseline.train_loss,
        val_loss: baseline.val_loss,
        nrmse: baseline.nrmse,
        cert_ok: baseline.cert_ok,
        grad_check: None,
        wall_time_s: 0.0,
    });

    for epoch in 1..=config.epochs {
        let t0 = Instant::now();
        for (batch_index, batch) in windows.chunks(config.batch_size).enumerate() {
            let (loss, grad) = gradient(&current, batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NanAbort {
                    epoch,
                    detail: format!("batch {batch_index} loss {loss} or its gradient"),
                });
            }
            opt.step(&mut flat, &grad, config.learning_rate);
            current = unflatten_like(&current, &mut flat.iter().copied())?;
        }
        let grad_check = if config.grad_check_interval > 0 && epoch % config.grad_check_interval == 0
        {
            let coords: Vec<usize> = (0..AUDIT_COORDS_PER_CHECK.min(flat.len()))
                .map(|_| audit_rng.gen_range(0..flat.len()))
                .collect();
            let probe = fd_audit(&current, &windows[..1.min(windows.len())], &coords)?;
            if probe.relative > FD_REL_TOL {
                return Err(TrainError::GradientAudit {
                    epoch,
                    coord: probe.coord,
                    relative: probe.relative,
                    tape: probe.tape,
                    fd: probe.fd,
                });
            }
            Some(probe.relative)
        } else {
            None
        };
        let metrics = evaluate(&current, &ds, &input_scales, &output_scales)?;
        finite_or_abort(metrics.train_loss, epoch, "training loss")?;
        finite_or_abort(metrics.val_loss, epoch, "validation loss")?;
        report.epochs.push(EpochRecord {
            epoch,
            train_loss: metrics.train_loss,
            val_loss: metrics.val_loss,
            nrmse: metrics.nrmse,
            cert_ok: metrics.cert_ok,
            grad_check,
            wall_time_s: t0.elapsed().as_secs_f64(),
        });
    }
    Ok((current, report))
}
