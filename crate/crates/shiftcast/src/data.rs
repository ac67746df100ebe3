//! Ingestion, normalization, and supervised-instance construction.
//!
//! A [`SeriesFrame`] holds a multivariate series column-by-column, with each
//! column tagged by a [`ColumnRole`]: a forecast target, an observed
//! covariate (known only up to the present), or a future covariate whose
//! values are available ahead of time (weather forecasts, release schedules,
//! control plans). [`build_instances`] slides a window over the frame and
//! fuses, for every in-window time step, the targets, the observed
//! covariates, the future covariates at that step, and the future covariates
//! shifted `shift` steps ahead — so the model sees the part of the future
//! that is already knowable next to the past it must extrapolate.
//!
//! All math runs on min–max normalized values; [`NormStats`] is fitted on a
//! leading fraction of rows only, so test rows never influence the scaling.

use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How a column participates in forecasting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    /// A series the model must forecast.
    Target,
    /// A driver known only up to the present.
    #[serde(alias = "observed")]
    ObservedCovariate,
    /// A driver whose future values are known in advance.
    #[serde(alias = "future")]
    FutureCovariate,
}

/// A fixed-length multivariate series with one role per column.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesFrame {
    names: Vec<String>,
    roles: Vec<ColumnRole>,
    columns: Vec<Vec<f64>>,
    /// Raw timestamp strings from ingestion, if the file had a leading
    /// timestamp column. Never used in any computation.
    timestamps: Option<Vec<String>>,
}

impl SeriesFrame {
    /// Build a frame, enforcing the schema invariants: equal column lengths,
    /// at least one row, finite values, at least one target, and at least one
    /// future covariate (the shifting strategy has nothing to shift without
    /// one).
    pub fn new(
        names: Vec<String>,
        roles: Vec<ColumnRole>,
        columns: Vec<Vec<f64>>,
        timestamps: Option<Vec<String>>,
    ) -> Result<Self> {
        if names.len() != roles.len() || names.len() != columns.len() {
            return Err(Error::Schema(format!(
                "mismatched schema: {} names, {} roles, {} columns",
                names.len(),
                roles.len(),
                columns.len()
            )));
        }
        if columns.is_empty() {
            return Err(Error::Schema("a frame needs at least one column".into()));
        }
        let t_len = columns[0].len();
        if t_len == 0 {
            return Err(Error::Data("a frame needs at least one row".into()));
        }
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != t_len {
                return Err(Error::Data(format!(
                    "column '{name}' has {} rows, expected {t_len}",
                    col.len()
                )));
            }
            if let Some(pos) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "column '{name}' has a non-finite value at row {}",
                    pos + 1
                )));
            }
        }
        if !roles.contains(&ColumnRole::Target) {
            return Err(Error::Schema(
                "schema needs at least one target column".into(),
            ));
        }
        if !roles.contains(&ColumnRole::FutureCovariate) {
            return Err(Error::Schema(
                "schema needs at least one future-covariate column to shift".into(),
            ));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != t_len {
                return Err(Error::Data(format!(
                    "{} timestamps for {t_len} rows",
                    ts.len()
                )));
            }
            validate_increasing(ts)?;
        }
        Ok(SeriesFrame {
            names,
            roles,
            columns,
            timestamps,
        })
    }

    /// Number of time steps.
    pub fn length(&self) -> usize {
        self.columns[0].len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn roles(&self) -> &[ColumnRole] {
        &self.roles
    }

    pub fn column(&self, index: usize) -> &[f64] {
        &self.columns[index]
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }

    /// Column indices with the given role, in frame order. Fused instances
    /// group columns by role using exactly this ordering.
    pub fn role_indices(&self, role: ColumnRole) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn n_targets(&self) -> usize {
        self.role_indices(ColumnRole::Target).len()
    }

    pub fn n_observed(&self) -> usize {
        self.role_indices(ColumnRole::ObservedCovariate).len()
    }

    pub fn n_future(&self) -> usize {
        self.role_indices(ColumnRole::FutureCovariate).len()
    }

    /// Width of a fused input row: targets + observed + future twice
    /// (once in place, once shifted).
    pub fn fused_width(&self) -> usize {
        self.n_targets() + self.n_observed() + 2 * self.n_future()
    }

    /// First `rows` time steps as a new frame (used for chronological splits).
    pub fn head(&self, rows: usize) -> Result<SeriesFrame> {
        if rows == 0 || rows > self.length() {
            return Err(Error::Data(format!(
                "cannot take {rows} leading rows of a {}-row frame",
                self.length()
            )));
        }
        SeriesFrame::new(
            self.names.clone(),
            self.roles.clone(),
            self.columns.iter().map(|c| c[..rows].to_vec()).collect(),
            self.timestamps.as_ref().map(|t| t[..rows].to_vec()),
        )
    }
}

fn validate_increasing(ts: &[String]) -> Result<()> {
    let numeric: Option<Vec<f64>> = ts.iter().map(|s| s.trim().parse().ok()).collect();
    let ordered = match &numeric {
        Some(vals) => vals.windows(2).all(|p| p[0] < p[1]),
        None => ts.windows(2).all(|p| p[0] < p[1]),
    };
    if ordered {
        Ok(())
    } else {
        Err(Error::Data(
            "timestamp column is not strictly increasing".into(),
        ))
    }
}

/// Window geometry for instance construction.
///
/// `window` is the number of past steps fed to the model, `horizon` the
/// number of future steps predicted, and `shift` how far ahead the future
/// covariates are pulled into each fused row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub window: usize,
    pub horizon: usize,
    pub shift: usize,
}

impl WindowConfig {
    /// Enforce `window ≥ 1`, `horizon ≥ 1`, and `1 ≤ shift ≤ window + horizon`.
    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::Window("window length must be at least 1".into()));
        }
        if self.horizon < 1 {
            return Err(Error::Window("forecast horizon must be at least 1".into()));
        }
        if self.shift < 1 || self.shift > self.window + self.horizon {
            return Err(Error::Window(format!(
                "shift {} outside the valid range [1, {}] (window {} + horizon {})",
                self.shift,
                self.window + self.horizon,
                self.window,
                self.horizon
            )));
        }
        Ok(())
    }

    /// Rows a frame must have before any instance exists:
    /// `window + max(shift, horizon)`.
    pub fn min_length(&self) -> usize {
        self.window + self.shift.max(self.horizon)
    }
}

/// One supervised example: a fused input window and its forecast block.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    /// `[window, n_targets + n_observed + 2·n_future]`, rows in time order.
    pub fused: Tensor,
    /// `[horizon, n_targets]`, the target values for the steps after `anchor`.
    pub target: Tensor,
    /// 1-indexed frame row of the last input step.
    pub anchor: usize,
}

impl Instance {
    pub fn fused_width(&self) -> usize {
        self.fused.shape()[1]
    }

    pub fn horizon(&self) -> usize {
        self.target.shape()[0]
    }

    pub fn n_targets(&self) -> usize {
        self.target.shape()[1]
    }
}

/// Slide a window over the frame and emit one [`Instance`] per anchor.
///
/// Anchors are 1-indexed rows `t ∈ [window, T − max(shift, horizon)]`,
/// ascending. Fused row `j ∈ [0, window)` covers frame row `t − window + 1 + j`
/// and lays out `[targets, observed, future, future shifted ahead by shift]`;
/// the target block covers rows `t+1 ..= t+horizon`. The upper anchor bound
/// keeps both the shifted covariates and the forecast targets inside the
/// frame, so no instance ever reads past the end.
pub fn build_instances(frame: &SeriesFrame, cfg: &WindowConfig) -> Result<Vec<Instance>> {
    cfg.validate()?;
    let t_len = frame.length();
    if t_len < cfg.min_length() {
        return Err(Error::Window(format!(
            "frame has {t_len} rows but windowing needs at least {} \
             (window {} + max(shift {}, horizon {}))",
            cfg.min_length(),
            cfg.window,
            cfg.shift,
            cfg.horizon
        )));
    }
    let targets = frame.role_indices(ColumnRole::Target);
    let observed = frame.role_indices(ColumnRole::ObservedCovariate);
    let future = frame.role_indices(ColumnRole::FutureCovariate);
    let width = frame.fused_width();

    let mut instances = Vec::with_capacity(t_len - cfg.min_length() + 1);
    for anchor in cfg.window..=t_len - cfg.shift.max(cfg.horizon) {
        let mut fused = Vec::with_capacity(cfg.window * width);
        for j in 0..cfg.window {
            let row = anchor - cfg.window + j; // 0-indexed frame row t-w+1+j
            for &c in &targets {
                fused.push(frame.column(c)[row]);
            }
            for &c in &observed {
                fused.push(frame.column(c)[row]);
            }
            for &c in &future {
                fused.push(frame.column(c)[row]);
            }
            for &c in &future {
                fused.push(frame.column(c)[row + cfg.shift]);
            }
        }
        let mut target = Vec::with_capacity(cfg.horizon * targets.len());
        for i in 0..cfg.horizon {
            for &c in &targets {
                target.push(frame.column(c)[anchor + i]); // 0-indexed row t+1+i
            }
        }
        instances.push(Instance {
            fused: Tensor::new(vec![cfg.window, width], fused)?,
            target: Tensor::new(vec![cfg.horizon, targets.len()], target)?,
            anchor,
        });
    }
    Ok(instances)
}

/// Chronological split of instances: the first `floor(fraction·n)` go to
/// train, the rest to test, with no shuffling across the boundary.
pub fn split_train_test(
    instances: &[Instance],
    fraction: f64,
) -> Result<(Vec<Instance>, Vec<Instance>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if instances.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 instances to split, got {}",
            instances.len()
        )));
    }
    let train_count = (fraction * instances.len() as f64).floor() as usize;
    if train_count == 0 || train_count == instances.len() {
        return Err(Error::Data(format!(
            "split fraction {fraction} leaves an empty side for {} instances",
            instances.len()
        )));
    }
    Ok((
        instances[..train_count].to_vec(),
        instances[train_count..].to_vec(),
    ))
}

/// Per-column min–max statistics, fitted on a leading fraction of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    names: Vec<String>,
    roles: Vec<ColumnRole>,
    mins: Vec<f64>,
    maxs: Vec<f64>,
}

/// Fit per-column minima and maxima over the first `floor(train_fraction·T)`
/// rows. Later rows never influence the statistics, so scaling carries no
/// information leak from the evaluation period. Constant columns are legal;
/// [`NormStats::normalize`] maps them to 0.
pub fn fit_normalizer(frame: &SeriesFrame, train_fraction: f64) -> Result<NormStats> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "normalizer fraction must lie in (0, 1], got {train_fraction}"
        )));
    }
    let rows = (train_fraction * frame.length() as f64).floor() as usize;
    if rows == 0 {
        return Err(Error::Config(format!(
            "normalizer fraction {train_fraction} covers no rows of a {}-row frame",
            frame.length()
        )));
    }
    let mut mins = Vec::with_capacity(frame.names().len());
    let mut maxs = Vec::with_capacity(frame.names().len());
    for col in &frame.columns {
        let head = &col[..rows];
        mins.push(head.iter().cloned().fold(f64::INFINITY, f64::min));
        maxs.push(head.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(NormStats {
        names: frame.names.clone(),
        roles: frame.roles.clone(),
        mins,
        maxs,
    })
}

impl NormStats {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn mins(&self) -> &[f64] {
        &self.mins
    }

    pub fn maxs(&self) -> &[f64] {
        &self.maxs
    }

    fn check_frame(&self, frame: &SeriesFrame) -> Result<()> {
        if frame.names() != self.names.as_slice() {
            return Err(Error::Schema(format!(
                "normalizer columns {:?} do not match frame columns {:?}",
                self.names,
                frame.names()
            )));
        }
        Ok(())
    }

    /// Map every value to `(x − min) / (max − min)`; constant columns map to
    /// 0. Values outside the fitted range map outside `[0, 1]` — no clamping,
    /// so the transform stays affine and invertible.
    pub fn normalize(&self, frame: &SeriesFrame) -> Result<SeriesFrame> {
        self.check_frame(frame)?;
        let columns = frame
            .columns
            .iter()
            .enumerate()
            .map(|(i, col)| {
                let (min, max) = (self.mins[i], self.maxs[i]);
                let range = max - min;
                col.iter()
                    .map(|&v| if range == 0.0 { 0.0 } else { (v - min) / range })
                    .collect()
            })
            .collect();
        SeriesFrame::new(
            frame.names.clone(),
            frame.roles.clone(),
            columns,
            frame.timestamps.clone(),
        )
    }

    /// Invert [`NormStats::normalize`] on a `[horizon, n_targets]` block,
    /// returning original-unit values. Column order matches the target
    /// columns' frame order. Constant target columns invert to the constant.
    pub fn denormalize_targets(&self, block: &Tensor) -> Result<Tensor> {
        let target_cols: Vec<usize> = self
            .roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == ColumnRole::Target)
            .map(|(i, _)| i)
            .collect();
        if block.rank() != 2 || block.shape()[1] != target_cols.len() {
            return Err(Error::shape(
                "denormalize_targets block",
                block.shape(),
                &[block.rows(), target_cols.len()],
            ));
        }
        let mut out = block.clone();
        for r in 0..block.shape()[0] {
            for (c, &col) in target_cols.iter().enumerate() {
                let (min, max) = (self.mins[col], self.maxs[col]);
                let v = block.at2(r, c);
                out.set2(r, c, if max == min { min } else { v * (max - min) + min });
            }
        }
        Ok(out)
    }
}

/// Human-readable name per fused input column, in fused layout order. Shifted
/// future-covariate columns carry a `(+shift)` suffix, e.g. `rain(+6)`.
pub fn fused_feature_labels(frame: &SeriesFrame, shift: usize) -> Vec<String> {
    let mut labels = Vec::with_capacity(frame.fused_width());
    for role in [
        ColumnRole::Target,
        ColumnRole::ObservedCovariate,
        ColumnRole::FutureCovariate,
    ] {
        for i in frame.role_indices(role) {
            labels.push(frame.names[i].clone());
        }
    }
    for i in frame.role_indices(ColumnRole::FutureCovariate) {
        labels.push(format!("{}(+{shift})", frame.names[i]));
    }
    labels
}

/// Parameters of the synthetic dataset generator.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    /// Number of rows; at least 200 so a chronological split stays meaningful.
    pub length: usize,
    pub seed: u64,
    /// Standard deviation of the target's innovation noise.
    pub noise_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            length: 500,
            seed: 0,
            noise_scale: 0.1,
        }
    }
}

/// Number of leading samples discarded so the processes forget their zero
/// initial state.
const SYNTH_BURN_IN: usize = 100;
/// AR(1) smoothing coefficient shared by the covariate processes.
const SYNTH_AR: f64 = 0.9;
/// Innovation standard deviation of the covariate processes.
const SYNTH_INNOVATION: f64 = 0.3;
/// Weight of the contemporaneous future covariate in the target recursion.
const SYNTH_COUPLING: f64 = 0.6;
/// Autoregressive weight of the target on its own past.
const SYNTH_TARGET_AR: f64 = 0.3;

/// Generate a three-column frame with a planted future-covariate dependency:
///
/// * `y` (future covariate): smooth AR(1), `y_t = 0.9·y_{t−1} + 0.3·η_t`
/// * `x` (observed covariate): an independent AR(1) of the same form
/// * `z` (target): `z_t = 0.6·y_t + 0.3·z_{t−1} + noise_scale·ε_t`
///
/// with η, ε standard normal. Because `z` depends on the *contemporaneous*
/// `y`, knowing future `y` genuinely helps forecast future `z` — which is the
/// situation the shifting strategy exists for. Deterministic per seed.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SeriesFrame> {
    if cfg.length < 200 {
        return Err(Error::Config(format!(
            "synthetic series length must be at least 200, got {}",
            cfg.length
        )));
    }
    if !(cfg.noise_scale.is_finite() && cfg.noise_scale >= 0.0) {
        return Err(Error::Config(format!(
            "noise_scale must be finite and non-negative, got {}",
            cfg.noise_scale
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = StandardNormal;
    let total = SYNTH_BURN_IN + cfg.length;
    let (mut y, mut x, mut z) = (0.0f64, 0.0f64, 0.0f64);
    let mut cols = [
        Vec::with_capacity(cfg.length),
        Vec::with_capacity(cfg.length),
        Vec::with_capacity(cfg.length),
    ];
    for t in 0..total {
        let eta_y: f64 = normal.sample(&mut rng);
        let eta_x: f64 = normal.sample(&mut rng);
        let eps: f64 = normal.sample(&mut rng);
        y = SYNTH_AR * y + SYNTH_INNOVATION * eta_y;
        x = SYNTH_AR * x + SYNTH_INNOVATION * eta_x;
        z = SYNTH_COUPLING * y + SYNTH_TARGET_AR * z + cfg.noise_scale * eps;
        if t >= SYNTH_BURN_IN {
            cols[0].push(y);
            cols[1].push(x);
            cols[2].push(z);
        }
    }
    let [y_col, x_col, z_col] = cols;
    SeriesFrame::new(
        vec!["y".into(), "x".into(), "z".into()],
        vec![
            ColumnRole::FutureCovariate,
            ColumnRole::ObservedCovariate,
            ColumnRole::Target,
        ],
        vec![y_col, x_col, z_col],
        None,
    )
}

/// Read a delimited file (comma or tab, sniffed from the header line) into a
/// frame. `schema` maps column names to roles; header columns absent from the
/// schema are ignored, except that a leading unmapped column is kept as the
/// timestamp column. Empty cells are forward-filled, then back-filled for
/// leading gaps.
pub fn load_frame(path: &Path, schema: &IndexMap<String, ColumnRole>) -> Result<SeriesFrame> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    if raw.trim().is_empty() {
        return Err(Error::Data(format!("{} is empty", path.display())));
    }
    let delimiter = match raw.lines().next() {
        Some(line) if line.contains('\t') => b'\t',
        _ => b',',
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(raw.as_bytes());

    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let position: HashMap<&str, usize> = header
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    for name in schema.keys() {
        if !position.contains_key(name.as_str()) {
            return Err(Error::Schema(format!(
                "schema column '{name}' not found in header {header:?}"
            )));
        }
    }
    // Frame columns follow file order, restricted to schema columns.
    let selected: Vec<(usize, String, ColumnRole)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, name)| schema.get(name).map(|role| (i, name.clone(), *role)))
        .collect();
    let timestamp_col = if schema.contains_key(header[0].as_str()) {
        None
    } else {
        Some(0usize)
    };

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); selected.len()];
    let mut timestamps: Vec<String> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        for (slot, (file_col, name, _)) in selected.iter().enumerate() {
            let cell = record.get(*file_col).unwrap_or("");
            let value = if cell.is_empty() {
                f64::NAN // placeholder resolved by the fill pass below
            } else {
                cell.parse::<f64>().map_err(|_| {
                    Error::Data(format!(
                        "column '{name}' row {}: cannot parse '{cell}' as a number",
                        row_idx + 1
                    ))
                })?
            };
            columns[slot].push(value);
        }
        if let Some(tc) = timestamp_col {
            timestamps.push(record.get(tc).unwrap_or("").to_string());
        }
    }
    for ((_, name, _), col) in selected.iter().zip(&mut columns) {
        fill_gaps(name, col)?;
    }
    SeriesFrame::new(
        selected.iter().map(|(_, n, _)| n.clone()).collect(),
        selected.iter().map(|(_, _, r)| *r).collect(),
        columns,
        timestamp_col.map(|_| timestamps),
    )
}

/// Forward-fill NaN placeholders from the previous value, then back-fill any
/// leading run from the first real value.
fn fill_gaps(name: &str, col: &mut [f64]) -> Result<()> {
    let mut last: Option<f64> = None;
    for v in col.iter_mut() {
        if v.is_nan() {
            if let Some(prev) = last {
                *v = prev;
            }
        } else {
            last = Some(*v);
        }
    }
    let first = col
        .iter()
        .find(|v| !v.is_nan())
        .copied()
        .ok_or_else(|| Error::Data(format!("column '{name}' has no values at all")))?;
    for v in col.iter_mut() {
        if v.is_nan() {
            *v = first;
        }
    }
    Ok(())
}

/// Write a frame as comma-separated text with a header row, timestamps first
/// when present. Values print in shortest round-trip form.
pub fn write_frame_csv(frame: &SeriesFrame, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    let mut header: Vec<&str> = Vec::new();
    if frame.timestamps().is_some() {
        header.push("timestamp");
    }
    header.extend(frame.names().iter().map(String::as_str));
    writeln!(out, "{}", header.join(","))?;
    for row in 0..frame.length() {
        let mut cells: Vec<String> = Vec::with_capacity(header.len());
        if let Some(ts) = frame.timestamps() {
            cells.push(ts[row].clone());
        }
        for col in 0..frame.names().len() {
            cells.push(format!("{}", frame.column(col)[row]));
        }
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}
