//! Hyperparameter studies over the shift length, the layer count, and the
//! skip-connection strategy. Each swept value is trained and scored once per
//! seed; results are kept as raw `(value, seed)` rows plus a per-value
//! median/min/max summary, so the summary can always be audited against the
//! rows.

use crate::data::{SeriesFrame, WindowConfig};
use crate::error::{Error, Result};
use crate::exec::{ordered_try_map, Parallelism};
use crate::model::{ModelConfig, SkipStrategy};
use crate::pipeline::{fit_and_score, prepare};
use crate::train::TrainConfig;

/// Everything a sweep holds fixed: the data, the windowing, the model
/// template, and the training recipe. Individual sweeps override one knob at
/// a time.
#[derive(Clone, Debug)]
pub struct SweepBase {
    pub frame: SeriesFrame,
    pub window: WindowConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Chronological share of instances used for training (rest is test).
    pub train_fraction: f64,
    /// First-layer convolution filter count for the layer sweep's halving
    /// rule. Defaults to an eighth of the full-scale 256 so sweeps finish in
    /// minutes.
    pub filter_start: usize,
    /// First-layer recurrent unit count for the halving rule (full scale 128).
    pub unit_start: usize,
    /// Whether independent (value, seed) cells run on parallel workers.
    pub parallelism: Parallelism,
}

impl SweepBase {
    pub fn new(frame: SeriesFrame, window: WindowConfig) -> Self {
        SweepBase {
            frame,
            window,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            train_fraction: 0.8,
            filter_start: 256 / 8,
            unit_start: 128 / 8,
            parallelism: Parallelism::default(),
        }
    }
}

/// One trained-and-scored cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub param_value: String,
    pub seed: u64,
    pub mae: f64,
    pub rmse: f64,
}

/// Per-value digest of the rows: median MAE plus the min–max spread over
/// seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub param_value: String,
    pub median_mae: f64,
    pub min_mae: f64,
    pub max_mae: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    /// Name of the swept parameter: `shift`, `layers`, or `skip`.
    pub parameter: String,
    /// One row per (value, seed), value-major in the requested order.
    pub rows: Vec<SweepRow>,
    pub summaries: Vec<SweepSummary>,
}

impl SweepResult {
    /// Median MAE for one swept value, as recorded in the summary.
    pub fn median_mae(&self, param_value: &str) -> Option<f64> {
        self.summaries
            .iter()
            .find(|s| s.param_value == param_value)
            .map(|s| s.median_mae)
    }
}

/// Convolution filter and recurrent unit counts for `layers` layers, halving
/// from the given first-layer width: `start / 2^i` for layer `i`.
pub fn halved_widths(start: usize, layers: usize) -> Result<Vec<usize>> {
    if layers == 0 {
        return Err(Error::Config("layer count must be at least 1".into()));
    }
    (0..layers)
        .map(|i| {
            let width = start >> i;
            if width == 0 {
                Err(Error::Config(format!(
                    "{layers} layers underflow the width halving rule: \
                     layer {i} of start width {start} would have no channels"
                )))
            } else {
                Ok(width)
            }
        })
        .collect()
}

/// A fully specified training cell: the overridden configs plus the seed.
struct Cell {
    param_value: String,
    window: WindowConfig,
    model: ModelConfig,
    seed: u64,
}

/// Train and score every cell, then summarize. Rows come back value-major,
/// seed-minor regardless of execution order.
fn run_cells(base: &SweepBase, parameter: &str, cells: Vec<Cell>) -> Result<SweepResult> {
    if cells.is_empty() {
        return Err(Error::Config(format!(
            "{parameter} sweep needs at least one value and one seed"
        )));
    }
    let rows = ordered_try_map(base.parallelism, &cells, |cell| {
        let prepared = prepare(&base.frame, &cell.window, base.train_fraction)?;
        let tcfg = TrainConfig {
            seed: cell.seed,
            parallelism: base.parallelism,
            ..base.train.clone()
        };
        let outcome = fit_and_score(&prepared, &cell.model, &cell.window, &tcfg, cell.seed)?;
        Ok(SweepRow {
            param_value: cell.param_value.clone(),
            seed: cell.seed,
            mae: outcome.eval.mae,
            rmse: outcome.eval.rmse,
        })
    })?;
    let summaries = summarize(&rows);
    Ok(SweepResult {
        parameter: parameter.to_string(),
        rows,
        summaries,
    })
}

/// Group rows by value (preserving first-appearance order) and digest each
/// group's MAE column.
fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut order: Vec<&str> = Vec::new();
    for row in rows {
        if !order.contains(&row.param_value.as_str()) {
            order.push(&row.param_value);
        }
    }
    order
        .into_iter()
        .map(|value| {
            let maes: Vec<f64> = rows
                .iter()
                .filter(|r| r.param_value == value)
                .map(|r| r.mae)
                .collect();
            SweepSummary {
                param_value: value.to_string(),
                median_mae: median(&maes),
                min_mae: maes.iter().cloned().fold(f64::INFINITY, f64::min),
                max_mae: maes.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

/// Median of a non-empty slice; the mean of the middle pair when even.
fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}

/// Sweep the covariate shift length. Every value must satisfy the window
/// bound `1 ≤ s ≤ w + k`.
pub fn sweep_shift(base: &SweepBase, shifts: &[usize], seeds: &[u64]) -> Result<SweepResult> {
    let mut cells = Vec::with_capacity(shifts.len() * seeds.len());
    for &shift in shifts {
        let window = WindowConfig {
            shift,
            ..base.window
        };
        window.validate()?;
        for &seed in seeds {
            cells.push(Cell {
                param_value: shift.to_string(),
                window,
                model: base.model.clone(),
                seed,
            });
        }
    }
    run_cells(base, "shift", cells)
}

/// Sweep the layer count with widths from the halving rule, both branches
/// deepened together.
pub fn sweep_layers(base: &SweepBase, layer_counts: &[usize], seeds: &[u64]) -> Result<SweepResult> {
    let mut cells = Vec::with_capacity(layer_counts.len() * seeds.len());
    for &layers in layer_counts {
        let model = ModelConfig {
            cnn_filters: halved_widths(base.filter_start, layers)?,
            rnn_units: halved_widths(base.unit_start, layers)?,
            ..base.model.clone()
        };
        model.validate()?;
        for &seed in seeds {
            cells.push(Cell {
                param_value: layers.to_string(),
                window: base.window,
                model: model.clone(),
                seed,
            });
        }
    }
    run_cells(base, "layers", cells)
}

/// Sweep the skip-connection strategy with everything else fixed.
pub fn sweep_skip(
    base: &SweepBase,
    strategies: &[SkipStrategy],
    seeds: &[u64],
) -> Result<SweepResult> {
    let mut cells = Vec::with_capacity(strategies.len() * seeds.len());
    for &skip in strategies {
        let model = ModelConfig {
            skip,
            ..base.model.clone()
        };
        for &seed in seeds {
            cells.push(Cell {
                param_value: skip.to_string(),
                window: base.window,
                model: model.clone(),
                seed,
            });
        }
    }
    run_cells(base, "skip", cells)
}

/// Write the raw rows: `param_value,seed,mae,rmse`.
pub fn write_sweep_rows(result: &SweepResult, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "param_value,seed,mae,rmse")?;
    for row in &result.rows {
        writeln!(out, "{},{},{},{}", row.param_value, row.seed, row.mae, row.rmse)?;
    }
    out.flush()?;
    Ok(())
}

/// Write the per-value digest: `param_value,median_mae,min,max`.
pub fn write_sweep_summary(result: &SweepResult, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "param_value,median_mae,min,max")?;
    for s in &result.summaries {
        writeln!(
            out,
            "{},{},{},{}",
            s.param_value, s.median_mae, s.min_mae, s.max_mae
        )?;
    }
    out.flush()?;
    Ok(())
}
