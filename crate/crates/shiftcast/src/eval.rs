//! Forecast accuracy: mean absolute error and root-mean-square error.
//!
//! Both metrics aggregate as a flat mean over every
//! (instance × horizon step × target) prediction. A per-horizon-step MAE
//! breakdown exposes how error grows with lead time. Predictions and truths
//! are denormalized first when statistics are supplied, so reported numbers
//! are in the original measurement units.

use crate::data::{Instance, NormStats, WindowConfig};
use crate::error::{Error, Result};
use crate::exec::{ordered_try_map, Parallelism};
use crate::model::{forward, ModelConfig, ParamStore};
use crate::tensor::Tensor;

/// Accuracy summary over a test set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub mae: f64,
    pub rmse: f64,
    /// MAE restricted to each forecast step, index 0 = one step ahead.
    pub per_horizon_mae: Vec<f64>,
    pub n_instances: usize,
}

fn check_pairs(preds: &[Tensor], truths: &[Tensor]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Data("no predictions to score".into()));
    }
    if preds.len() != truths.len() {
        return Err(Error::Data(format!(
            "{} predictions vs {} truths",
            preds.len(),
            truths.len()
        )));
    }
    for (p, t) in preds.iter().zip(truths) {
        if p.shape() != t.shape() {
            return Err(Error::shape("metric operands", p.shape(), t.shape()));
        }
    }
    Ok(())
}

/// Mean absolute error over all elements of all pairs.
pub fn mae(preds: &[Tensor], truths: &[Tensor]) -> Result<f64> {
    check_pairs(preds, truths)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in preds.iter().zip(truths) {
        for (a, b) in p.data().iter().zip(t.data()) {
            sum += (a - b).abs();
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Root of the mean squared error over all elements of all pairs.
pub fn rmse(preds: &[Tensor], truths: &[Tensor]) -> Result<f64> {
    check_pairs(preds, truths)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in preds.iter().zip(truths) {
        for (a, b) in p.data().iter().zip(t.data()) {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    Ok((sum / count as f64).sqrt())
}

/// Forecast every instance and score against its target block. With `stats`,
/// predictions and truths are denormalized first (original units); without,
/// scores stay in normalized units.
pub fn evaluate_with(
    params: &ParamStore,
    cfg: &ModelConfig,
    window: &WindowConfig,
    instances: &[Instance],
    stats: Option<&NormStats>,
    mode: Parallelism,
) -> Result<EvalResult> {
    if instances.is_empty() {
        return Err(Error::Data("cannot evaluate an empty test set".into()));
    }
    let pairs = ordered_try_map(mode, instances, |instance| {
        let pred = forward(params, cfg, window, &instance.fused)?;
        match stats {
            Some(s) => Ok((
                s.denormalize_targets(&pred)?,
                s.denormalize_targets(&instance.target)?,
            )),
            None => Ok((pred, instance.target.clone())),
        }
    })?;

    let horizon = window.horizon;
    let mut abs_by_horizon = vec![0.0f64; horizon];
    let mut sq_sum = 0.0f64;
    let mut per_horizon_count = 0usize;
    for (pred, truth) in &pairs {
        for (h, abs_sum) in abs_by_horizon.iter_mut().enumerate() {
            for c in 0..pred.cols() {
                let d = pred.at2(h, c) - truth.at2(h, c);
                *abs_sum += d.abs();
                sq_sum += d * d;
            }
        }
        per_horizon_count += pairs[0].0.cols();
    }
    let total_count = per_horizon_count * horizon;
    // Overall MAE from the same per-horizon sums, so the breakdown averages
    // back to the total exactly.
    let abs_total: f64 = abs_by_horizon.iter().sum();
    Ok(EvalResult {
        mae: abs_total / total_count as f64,
        rmse: (sq_sum / total_count as f64).sqrt(),
        per_horizon_mae: abs_by_horizon
            .iter()
            .map(|s| s / per_horizon_count as f64)
            .collect(),
        n_instances: instances.len(),
    })
}

/// [`evaluate_with`] in normalized units, parallel mode.
pub fn evaluate(
    params: &ParamStore,
    cfg: &ModelConfig,
    window: &WindowConfig,
    instances: &[Instance],
) -> Result<EvalResult> {
    evaluate_with(params, cfg, window, instances, None, Parallelism::Parallel)
}

/// Write `metric,value` lines: overall metrics, then the per-step breakdown.
pub fn write_metrics(result: &EvalResult, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "mae,{}", result.mae)?;
    writeln!(out, "rmse,{}", result.rmse)?;
    writeln!(out, "n_instances,{}", result.n_instances)?;
    for (i, v) in result.per_horizon_mae.iter().enumerate() {
        writeln!(out, "mae_step_{},{}", i + 1, v)?;
    }
    out.flush()?;
    Ok(())
}
