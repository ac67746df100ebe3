//! The run configuration: one TOML file describing the data source, the
//! windowing, the model, the training recipe, and output plumbing. Command
//! line flags override individual values; the fully-resolved result is
//! written back into the output directory as `config.resolved`, which is
//! itself a valid config file, so any run can be replayed from its own
//! output.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use shiftcast::data::{load_frame, synth_generate, ColumnRole, SeriesFrame, SynthConfig, WindowConfig};
use shiftcast::model::{ModelConfig, SkipStrategy};
use shiftcast::train::TrainConfig;
use shiftcast::{Error, Parallelism, Result};

/// Raised only when the config file itself cannot be read or parsed; the
/// caller turns it into exit code 2. Everything downstream is an ordinary
/// run error (exit code 1).
#[derive(Debug)]
pub struct ParseFailure(pub String);

impl std::fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// Read a delimited file at `data.path` using `data.schema`.
    File,
    /// Generate the synthetic coupled-series dataset.
    Synth,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: SourceKind,
    /// Delimited data file (file source only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Column name → role for the file source. Unmapped leading column is
    /// treated as a timestamp; other unmapped columns are ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<IndexMap<String, ColumnRole>>,
    /// Synthetic series length (synth source only).
    #[serde(default = "default_length")]
    pub length: usize,
    /// Generator seed (synth source only).
    #[serde(default)]
    pub seed: u64,
    /// Target innovation noise level (synth source only).
    #[serde(default = "default_noise")]
    pub noise_scale: f64,
    /// Chronological share of instances (and of rows, for normalization
    /// statistics) that belongs to training.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_length() -> usize {
    3000
}

fn default_noise() -> f64 {
    0.1
}

fn default_train_fraction() -> f64 {
    0.8
}

/// Seeding and output plumbing shared by every command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Model-initialization seed.
    pub seed: u64,
    /// Force single-threaded execution. Results are bitwise identical
    /// either way; this pins the schedule too.
    pub deterministic: bool,
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            deterministic: false,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Shift,
    Layers,
    Skip,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Shift => "shift",
            SweepKind::Layers => "layers",
            SweepKind::Skip => "skip",
        }
    }
}

/// Swept values: integers for shift/layers, strategy names for skip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValues {
    Numbers(Vec<usize>),
    Strategies(Vec<SkipStrategy>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub kind: SweepKind,
    pub values: SweepValues,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// First-layer filter count for the layer sweep's halving rule.
    #[serde(default = "default_filter_start")]
    pub filter_start: usize,
    /// First-layer unit count for the halving rule.
    #[serde(default = "default_unit_start")]
    pub unit_start: usize,
    /// Run the full-scale widths (256/128 starts, 4-layer model) instead of
    /// the eighth-scale defaults. Expect much longer runtimes.
    #[serde(default)]
    pub full_scale: bool,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_filter_start() -> usize {
    256 / 8
}

fn default_unit_start() -> usize {
    128 / 8
}

/// The whole config file. Sections `model`, `train`, `run`, and `sweep` are
/// optional; `data` and `window` are required.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub window: WindowConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub out: Option<PathBuf>,
    pub shift: Option<usize>,
    pub layers: Option<usize>,
    pub skip: Option<SkipStrategy>,
}

impl RunConfig {
    pub fn load(path: &Path) -> std::result::Result<Self, ParseFailure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ParseFailure(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| ParseFailure(format!("invalid config {}: {e}", path.display())))
    }

    /// Fold the flag overrides in. `--layers` rebuilds both width lists by
    /// halving from the current first-layer widths.
    pub fn apply(&mut self, ov: &Overrides) -> Result<()> {
        if let Some(seed) = ov.seed {
            self.run.seed = seed;
        }
        if ov.deterministic {
            self.run.deterministic = true;
        }
        if let Some(out) = &ov.out {
            self.run.out_dir = out.clone();
        }
        if let Some(shift) = ov.shift {
            self.window.shift = shift;
        }
        if let Some(layers) = ov.layers {
            self.model.cnn_filters =
                shiftcast::sweep::halved_widths(self.model.cnn_filters[0], layers)?;
            self.model.rnn_units =
                shiftcast::sweep::halved_widths(self.model.rnn_units[0], layers)?;
        }
        if let Some(skip) = ov.skip {
            self.model.skip = skip;
        }
        Ok(())
    }

    pub fn parallelism(&self) -> Parallelism {
        if self.run.deterministic {
            Parallelism::Sequential
        } else {
            Parallelism::Parallel
        }
    }

    /// The training config with execution mode resolved from the run section.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            parallelism: self.parallelism(),
            ..self.train.clone()
        }
    }

    /// Load or generate the frame described by `[data]`.
    pub fn frame(&self) -> Result<SeriesFrame> {
        match self.data.source {
            SourceKind::Synth => synth_generate(&SynthConfig {
                length: self.data.length,
                seed: self.data.seed,
                noise_scale: self.data.noise_scale,
            }),
            SourceKind::File => {
                let path = self.data.path.as_ref().ok_or_else(|| {
                    Error::Config("data.source = \"file\" requires data.path".into())
                })?;
                let schema = self.data.schema.as_ref().ok_or_else(|| {
                    Error::Config("data.source = \"file\" requires data.schema".into())
                })?;
                load_frame(path, schema)
            }
        }
    }

    /// Write the resolved config as `config.resolved` in the output
    /// directory, creating the directory first.
    pub fn write_resolved(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.run.out_dir)?;
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("cannot serialize config: {e}")))?;
        let path = self.run.out_dir.join("config.resolved");
        std::fs::write(&path, text)?;
        Ok(path)
    }

    pub fn out_path(&self, file: &str) -> PathBuf {
        self.run.out_dir.join(file)
    }
}

/// Strategy names as used in config files, for `--skip`.
pub fn parse_skip(name: &str) -> std::result::Result<SkipStrategy, String> {
    match name {
        "once" => Ok(SkipStrategy::Once),
        "dense" => Ok(SkipStrategy::Dense),
        "chain" => Ok(SkipStrategy::Chain),
        "input_to_all" => Ok(SkipStrategy::InputToAll),
        "none" => Ok(SkipStrategy::None),
        other => Err(format!(
            "unknown skip strategy `{other}` (expected once, dense, chain, input_to_all, or none)"
        )),
    }
}

/// A parsed `--targets`/`--horizons` value: `None` means `all`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexSelection(pub Option<Vec<usize>>);

/// Comma-separated index list, or `all` meaning no restriction.
pub fn parse_index_list(text: &str) -> std::result::Result<IndexSelection, String> {
    if text == "all" {
        return Ok(IndexSelection(None));
    }
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| format!("invalid index `{part}` (expected integers or `all`)"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(|list| IndexSelection(Some(list)))
}
