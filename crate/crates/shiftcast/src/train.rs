//! Mini-batch training with Adam, L1L2 regularization, and early stopping.
//!
//! One epoch shuffles the training instances with a seeded generator and
//! walks them in batches. Each batch gradient is the mean of per-instance
//! gradients (computed independently, so they may fan out across threads)
//! plus the analytic regularization gradient on weights. Validation loss is
//! measured after every epoch on a chronological tail split; the parameters
//! from the best epoch are restored when training stops, either at
//! `max_epochs` or after `patience` epochs without improvement.
//!
//! Per-instance work is combined by a sequential fold in instance order, so
//! training is bitwise reproducible for a given seed — including between
//! parallel and sequential execution modes.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Instance, WindowConfig};
use crate::error::{Error, Result};
use crate::exec::{ordered_try_map, Parallelism};
use crate::model::{check_params, forward_pass, ModelConfig, ParamStore};
use crate::tensor::Tensor;

/// Optimization hyperparameters.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// L1 penalty factor on weights (biases are never penalized).
    pub l1: f64,
    /// L2 penalty factor on weights.
    pub l2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Fraction of training instances held out chronologically from the tail
    /// for early stopping. When it rounds down to zero instances, training
    /// loss is monitored instead.
    pub val_fraction: f64,
    /// Drives batch shuffling; initialization uses its own seed.
    pub seed: u64,
    /// Global-norm gradient clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Execution mode for per-instance gradient work. Not read from config
    /// files — the run-level deterministic flag decides it.
    #[serde(skip)]
    pub parallelism: Parallelism,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            l1: 1e-5,
            l2: 1e-5,
            batch_size: 32,
            max_epochs: 500,
            patience: 10,
            val_fraction: 0.1,
            seed: 0,
            clip_norm: Some(5.0),
            parallelism: Parallelism::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [("l1", self.l1), ("l2", self.l2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be positive".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction <= 0.5) {
            return Err(Error::Config(format!(
                "val_fraction must lie in (0, 0.5], got {}",
                self.val_fraction
            )));
        }
        if let Some(clip) = self.clip_norm {
            if !(clip > 0.0 && clip.is_finite()) {
                return Err(Error::Config(format!(
                    "clip_norm must be positive when set, got {clip}"
                )));
            }
        }
        Ok(())
    }
}

/// What happened during one training run. The report file written by
/// [`write_report`] contains only the per-epoch losses and is therefore
/// bitwise reproducible; wall time lives here for log output only.
#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Mean data loss (mse, no penalty) per epoch over the training split.
    pub train_losses: Vec<f64>,
    /// Monitored loss per epoch: validation mse, or training mse when the
    /// validation split is empty.
    pub val_losses: Vec<f64>,
    /// 1-indexed epoch whose parameters were kept.
    pub best_epoch: usize,
    /// 1-indexed last epoch executed.
    pub stopped_epoch: usize,
    pub wall: std::time::Duration,
}

/// Adam with bias-corrected moment estimates
/// (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, param_sizes: &[usize]) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Apply one update. `grads` must align with `params` in order and shape.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (tensor, grad)) in params.values_mut().zip(grads).enumerate() {
            for (j, (theta, &g)) in tensor
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .enumerate()
            {
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Whether a parameter is a bias vector (excluded from regularization).
fn is_bias(name: &str) -> bool {
    name.ends_with(".bias")
}

/// `l1·Σ|θ| + l2·Σθ²` over weight matrices and kernels; biases excluded.
pub fn regularization_penalty(params: &ParamStore, l1: f64, l2: f64) -> f64 {
    let mut penalty = 0.0;
    for (name, tensor) in params {
        if is_bias(name) {
            continue;
        }
        for &theta in tensor.data() {
            penalty += l1 * theta.abs() + l2 * theta * theta;
        }
    }
    penalty
}

/// Add the analytic regularization gradient `l1·sign(θ) + 2·l2·θ` onto the
/// data gradients, weights only. `sign(0)` is taken as 0 (the subgradient
/// choice that leaves exact zeros untouched).
fn add_regularization_gradient(
    params: &ParamStore,
    grads: &mut [Tensor],
    l1: f64,
    l2: f64,
) {
    if l1 == 0.0 && l2 == 0.0 {
        return;
    }
    for ((name, tensor), grad) in params.iter().zip(grads.iter_mut()) {
        if is_bias(name) {
            continue;
        }
        for (g, &theta) in grad.data_mut().iter_mut().zip(tensor.data()) {
            *g += l1 * theta.signum() * f64::from(theta != 0.0) + 2.0 * l2 * theta;
        }
    }
}

/// Mean per-instance mse and mean per-parameter gradients over a batch.
/// Instances are processed independently (possibly in parallel) and reduced
/// by a sequential fold in batch order, so the result is scheduling-independent.
pub fn batch_gradients(
    params: &ParamStore,
    cfg: &ModelConfig,
    window: &WindowConfig,
    batch: &[&Instance],
    mode: Parallelism,
) -> Result<(f64, Vec<Tensor>)> {
    if batch.is_empty() {
        return Err(Error::Contract("gradient of an empty batch".into()));
    }
    let per_instance = ordered_try_map(mode, batch, |instance| {
        let mut pass = forward_pass(params, cfg, window, &instance.fused)?;
        let truth = pass.graph.leaf(instance.target.clone());
        let loss = pass.graph.mse(pass.output, truth)?;
        pass.graph.backward(loss)?;
        let grads: Vec<Tensor> = pass
            .param_nodes
            .values()
            .map(|&id| pass.graph.grad(id).expect("backward fills every gradient"))
            .collect();
        Ok((pass.graph.value(loss).data()[0], grads))
    })?;

    let scale = 1.0 / batch.len() as f64;
    let mut loss_sum = 0.0;
    let mut acc: Vec<Tensor> = params
        .values()
        .map(|t| Tensor::zeros(t.shape().to_vec()))
        .collect();
    for (loss, grads) in &per_instance {
        loss_sum += loss;
        for (a, g) in acc.iter_mut().zip(grads) {
            for (av, gv) in a.data_mut().iter_mut().zip(g.data()) {
                *av += gv;
            }
        }
    }
    for a in &mut acc {
        for av in a.data_mut() {
            *av *= scale;
        }
    }
    Ok((loss_sum * scale, acc))
}

/// Mean per-instance mse of the current parameters over a set.
pub fn mean_loss(
    params: &ParamStore,
    cfg: &ModelConfig,
    window: &WindowConfig,
    instances: &[Instance],
    mode: Parallelism,
) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Contract("mean loss of an empty set".into()));
    }
    let losses = ordered_try_map(mode, instances, |instance| {
        let mut pass = forward_pass(params, cfg, window, &instance.fused)?;
        let truth = pass.graph.leaf(instance.target.clone());
        let loss = pass.graph.mse(pass.output, truth)?;
        Ok(pass.graph.value(loss).data()[0])
    })?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn scale_to_clip(grads: &mut [Tensor], clip: f64) {
    let norm_sq: f64 = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&v| v * v)
        .sum();
    let norm = norm_sq.sqrt();
    if norm > clip {
        let factor = clip / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
}

/// Train in place, leaving `params` at the best-validation epoch.
///
/// The last `floor(val_fraction·n)` instances form the validation split (the
/// chronological tail, so validation always post-dates training data). Loss
/// values in the report are the data term only; the L1L2 penalty shapes
/// gradients but is not folded into reported numbers.
pub fn train(
    params: &mut ParamStore,
    cfg: &ModelConfig,
    window: &WindowConfig,
    instances: &[Instance],
    tcfg: &TrainConfig,
) -> Result<TrainReport> {
    let started = std::time::Instant::now();
    tcfg.validate()?;
    cfg.validate()?;
    window.validate()?;
    if instances.is_empty() {
        return Err(Error::Train("cannot train on an empty instance set".into()));
    }
    check_params(
        params,
        cfg,
        window,
        instances[0].fused_width(),
        instances[0].n_targets(),
    )?;
    let val_count = (tcfg.val_fraction * instances.len() as f64).floor() as usize;
    let (train_set, val_set) = instances.split_at(instances.len() - val_count);

    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut adam = Adam::new(
        tcfg.learning_rate,
        &params.values().map(Tensor::len).collect::<Vec<_>>(),
    );
    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();
    let mut best_params = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut epochs_since_best = 0usize;
    let mut stopped_epoch = 0usize;

    for epoch in 1..=tcfg.max_epochs {
        stopped_epoch = epoch;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(tcfg.batch_size).enumerate() {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grads) =
                batch_gradients(params, cfg, window, &batch, tcfg.parallelism)?;
            if !loss.is_finite() {
                return Err(Error::Train(format!(
                    "non-finite loss at epoch {epoch}, batch {}",
                    batch_idx + 1
                )));
            }
            add_regularization_gradient(params, &mut grads, tcfg.l1, tcfg.l2);
            for (name, grad) in params.keys().zip(&grads) {
                if !grad.is_finite() {
                    return Err(Error::Train(format!(
                        "non-finite gradient in parameter '{name}' at epoch {epoch}, \
                         batch {}",
                        batch_idx + 1
                    )));
                }
            }
            if let Some(clip) = tcfg.clip_norm {
                scale_to_clip(&mut grads, clip);
            }
            adam.step(params, &grads)?;
            epoch_loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = epoch_loss_sum / train_set.len() as f64;
        let monitored = if val_set.is_empty() {
            train_loss
        } else {
            mean_loss(params, cfg, window, val_set, tcfg.parallelism)?
        };
        train_losses.push(train_loss);
        val_losses.push(monitored);

        if monitored < best_loss {
            best_loss = monitored;
            best_params = params.clone();
            best_epoch = epoch;
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= tcfg.patience {
                break;
            }
        }
    }
    *params = best_params;
    Ok(TrainReport {
        train_losses,
        val_losses,
        best_epoch,
        stopped_epoch,
        wall: started.elapsed(),
    })
}

/// Write the per-epoch loss table: a header line, then
/// `epoch,train_loss,val_loss` rows. Contains nothing time- or
/// machine-dependent, so identical runs produce identical files.
pub fn write_report(report: &TrainReport, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,train_loss,val_loss")?;
    for (i, (t, v)) in report
        .train_losses
        .iter()
        .zip(&report.val_losses)
        .enumerate()
    {
        writeln!(out, "{},{},{}", i + 1, t, v)?;
    }
    writeln!(out, "# best_epoch={} stopped_epoch={}", report.best_epoch, report.stopped_epoch)?;
    out.flush()?;
    Ok(())
}
