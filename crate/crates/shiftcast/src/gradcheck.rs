//! Finite-difference verification of reverse-mode gradients.
//!
//! A computation is described as a builder closure that, given a fresh graph
//! and leaf nodes for the checked parameters, constructs a scalar loss. The
//! harness evaluates the analytic gradient once via [`CompGraph::backward`]
//! and a central-difference estimate per coordinate, then reports the largest
//! relative disagreement. Used in tests throughout the crate and exposed
//! publicly so downstream experiments can validate custom heads the same way.

use crate::error::Result;
use crate::graph::{CompGraph, NodeId};
use crate::tensor::Tensor;

/// Builder signature: construct the loss from pre-inserted parameter leaves.
pub type LossBuilder<'a> = dyn Fn(&mut CompGraph, &[NodeId]) -> Result<NodeId> + 'a;

/// Outcome of a gradient check over one parameter set.
#[derive(Debug, Clone)]
pub struct CheckReport {
    /// Analytic gradient per parameter, from the reverse sweep.
    pub analytic: Vec<Tensor>,
    /// Central-difference gradient per parameter.
    pub numeric: Vec<Tensor>,
    /// max over coordinates of |analytic - numeric| / max(1, |numeric|).
    pub max_relative_error: f64,
}

fn eval_loss(build: &LossBuilder, params: &[Tensor]) -> Result<f64> {
    let mut g = CompGraph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let loss = build(&mut g, &ids)?;
    Ok(g.value(loss).data()[0])
}

/// Central-difference gradient of the built loss for every parameter entry.
pub fn numeric_gradients(
    build: &LossBuilder,
    params: &[Tensor],
    step: f64,
) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut grad = vec![0.0; params[pi].len()];
        for (idx, slot) in grad.iter_mut().enumerate() {
            let mut bumped: Vec<Tensor> = params.to_vec();
            bumped[pi].data_mut()[idx] += step;
            let plus = eval_loss(build, &bumped)?;
            bumped[pi].data_mut()[idx] -= 2.0 * step;
            let minus = eval_loss(build, &bumped)?;
            *slot = (plus - minus) / (2.0 * step);
        }
        out.push(Tensor::new(params[pi].shape().to_vec(), grad)?);
    }
    Ok(out)
}

/// Run the analytic backward pass and the finite-difference estimate, and
/// summarise their agreement. `step` is the half-width of the central
/// difference; `1e-5` balances truncation and rounding error for f64.
pub fn check(build: &LossBuilder, params: &[Tensor], step: f64) -> Result<CheckReport> {
    let mut g = CompGraph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let loss = build(&mut g, &ids)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .map(|&id| g.grad(id).expect("backward populates every gradient"))
        .collect();

    let numeric = numeric_gradients(build, params, step)?;

    let mut max_relative_error = 0.0f64;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            let rel = (av - nv).abs() / nv.abs().max(1.0);
            max_relative_error = max_relative_error.max(rel);
        }
    }
    Ok(CheckReport {
        analytic,
        numeric,
        max_relative_error,
    })
}
