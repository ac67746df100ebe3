//! The parallel RNN/CNN forecasting network.
//!
//! The fused input window `[w, D]` flows through two branches at once: a
//! stack of same-padded 1-D convolution layers and a stack of tanh recurrent
//! layers, both preserving the time length `w`. A configurable
//! [`SkipStrategy`] concatenates earlier tensors onto later layer inputs
//! along the feature axis so gradients reach shallow layers directly.
//! The head concatenates `[fused, cnn_out, rnn_out]`, flattens time-major,
//! and applies one dense layer producing the whole `[horizon, n_targets]`
//! forecast in one shot — no output is ever fed back as an input.
//!
//! Parameters live in a [`ParamStore`] keyed by stable names
//! (`cnn.0.kernel`, `rnn.2.recurrent`, `head.weight`, …) and serialize to a
//! small binary checkpoint format with bit-exact round trips.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::WindowConfig;
use crate::error::{Error, Result};
use crate::graph::{Activation, CompGraph, NodeId, Padding};
use crate::tensor::Tensor;

/// Where skip connections route earlier tensors, on both branches alike.
///
/// All strategies concatenate along the feature axis (layer widths shrink up
/// the stack, so element-wise addition would not type-check).
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipStrategy {
    /// One connection: the original input joins the input of the last layer.
    /// With a single layer this is the ordinary wire, so nothing is added.
    Once,
    /// Every layer sees the outputs of all earlier layers plus the original
    /// input (`L(L+1)/2` connections for `L` layers).
    Dense,
    /// Each connection hops one layer: layer `i` sees layer `i-1`'s output
    /// together with layer `i-2`'s output (the original input for `i = 1`).
    Chain,
    /// The original input joins the input of every layer after the first.
    InputToAll,
    /// No skip connections.
    None,
}

impl std::fmt::Display for SkipStrategy {
    /// Same snake_case names the config files use.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SkipStrategy::Once => "once",
            SkipStrategy::Dense => "dense",
            SkipStrategy::Chain => "chain",
            SkipStrategy::InputToAll => "input_to_all",
            SkipStrategy::None => "none",
        })
    }
}

/// Architecture hyperparameters. Widths are per-layer and positionally
/// paired: layer `i` has `cnn_filters[i]` channels and `rnn_units[i]` hidden
/// units. Both lists must have the same length.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub cnn_filters: Vec<usize>,
    pub rnn_units: Vec<usize>,
    /// Convolution kernel length; odd, so same padding is symmetric.
    pub kernel_size: usize,
    pub skip: SkipStrategy,
    pub conv_activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            cnn_filters: vec![256, 128, 64, 32],
            rnn_units: vec![128, 64, 32, 16],
            kernel_size: 3,
            skip: SkipStrategy::InputToAll,
            conv_activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub fn n_layers(&self) -> usize {
        self.cnn_filters.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cnn_filters.is_empty() {
            return Err(Error::Config("at least one layer is required".into()));
        }
        if self.cnn_filters.len() != self.rnn_units.len() {
            return Err(Error::Config(format!(
                "cnn_filters has {} entries but rnn_units has {}; the branches \
                 must be equally deep",
                self.cnn_filters.len(),
                self.rnn_units.len()
            )));
        }
        for (name, widths) in [("cnn_filters", &self.cnn_filters), ("rnn_units", &self.rnn_units)]
        {
            if let Some(pos) = widths.iter().position(|&w| w == 0) {
                return Err(Error::Config(format!(
                    "{name}[{pos}] must be positive"
                )));
            }
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }
}

/// Named parameter tensors, iterated in insertion order everywhere (init,
/// gradient updates, checkpoints), which keeps every seeded run reproducible.
pub type ParamStore = IndexMap<String, Tensor>;

/// Input feature width of each layer under `strategy`, given the per-layer
/// output widths of one branch and the fused input width `d`. The same
/// arithmetic drives parameter shapes and the runtime concatenations, so the
/// two can never drift apart.
pub fn layer_input_widths(strategy: SkipStrategy, widths: &[usize], d: usize) -> Vec<usize> {
    let n = widths.len();
    (0..n)
        .map(|i| {
            if i == 0 {
                return d;
            }
            let prev = widths[i - 1];
            match strategy {
                SkipStrategy::None => prev,
                SkipStrategy::InputToAll => prev + d,
                SkipStrategy::Once => {
                    if i == n - 1 {
                        prev + d
                    } else {
                        prev
                    }
                }
                SkipStrategy::Chain => {
                    if i == 1 {
                        prev + d
                    } else {
                        prev + widths[i - 2]
                    }
                }
                SkipStrategy::Dense => widths[..i].iter().sum::<usize>() + d,
            }
        })
        .collect()
}

/// Build the graph input for layer `i` by concatenating per the strategy.
/// `prev` holds the plain (pre-skip) outputs of layers `0..i`; `original` is
/// the fused input node.
fn skip_input(
    g: &mut CompGraph,
    strategy: SkipStrategy,
    i: usize,
    n_layers: usize,
    prev: &[NodeId],
    original: NodeId,
) -> Result<NodeId> {
    if i == 0 {
        return Ok(original);
    }
    let base = prev[i - 1];
    match strategy {
        SkipStrategy::None => Ok(base),
        SkipStrategy::InputToAll => g.concat(&[base, original], 1),
        SkipStrategy::Once => {
            if i == n_layers - 1 {
                g.concat(&[base, original], 1)
            } else {
                Ok(base)
            }
        }
        SkipStrategy::Chain => {
            let hop = if i == 1 { original } else { prev[i - 2] };
            g.concat(&[base, hop], 1)
        }
        SkipStrategy::Dense => {
            // Newest first, original last: [out_{i-1}, …, out_0, input].
            let mut parts: Vec<NodeId> = prev[..i].to_vec();
            parts.reverse();
            parts.push(original);
            g.concat(&parts, 1)
        }
    }
}

/// Expected name and shape of every parameter, in canonical order.
pub fn parameter_shapes(
    cfg: &ModelConfig,
    window: &WindowConfig,
    fused_width: usize,
    n_targets: usize,
) -> Result<IndexMap<String, Vec<usize>>> {
    cfg.validate()?;
    window.validate()?;
    if fused_width == 0 || n_targets == 0 {
        return Err(Error::Config(
            "fused width and target count must be positive".into(),
        ));
    }
    let mut shapes = IndexMap::new();
    let cnn_in = layer_input_widths(cfg.skip, &cfg.cnn_filters, fused_width);
    for (i, (&c_out, &c_in)) in cfg.cnn_filters.iter().zip(&cnn_in).enumerate() {
        shapes.insert(
            format!("cnn.{i}.kernel"),
            vec![cfg.kernel_size, c_in, c_out],
        );
        shapes.insert(format!("cnn.{i}.bias"), vec![c_out]);
    }
    let rnn_in = layer_input_widths(cfg.skip, &cfg.rnn_units, fused_width);
    for (i, (&units, &d_in)) in cfg.rnn_units.iter().zip(&rnn_in).enumerate() {
        shapes.insert(format!("rnn.{i}.recurrent"), vec![units, units]);
        shapes.insert(format!("rnn.{i}.input"), vec![d_in, units]);
        shapes.insert(format!("rnn.{i}.bias"), vec![units]);
    }
    let head_in = window.window
        * (fused_width + cfg.cnn_filters[cfg.n_layers() - 1] + cfg.rnn_units[cfg.n_layers() - 1]);
    let head_out = window.horizon * n_targets;
    shapes.insert("head.weight".to_string(), vec![head_in, head_out]);
    shapes.insert("head.bias".to_string(), vec![head_out]);
    Ok(shapes)
}

/// Initialize all parameters: weights Glorot-uniform with limit
/// `sqrt(6 / (fan_in + fan_out))`, biases zero. Deterministic per seed
/// because parameters are drawn in canonical order from one seeded stream.
pub fn build_model(
    cfg: &ModelConfig,
    window: &WindowConfig,
    fused_width: usize,
    n_targets: usize,
    seed: u64,
) -> Result<ParamStore> {
    let shapes = parameter_shapes(cfg, window, fused_width, n_targets)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    for (name, shape) in shapes {
        let tensor = if name.ends_with(".bias") || name == "head.bias" {
            Tensor::zeros(shape)
        } else {
            let (fan_in, fan_out) = match shape.len() {
                // Kernel [k, c_in, c_out]: each output sees k·c_in inputs.
                3 => (shape[0] * shape[1], shape[0] * shape[2]),
                _ => (shape[0], shape[1]),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
            Tensor::new(shape, data)?
        };
        params.insert(name, tensor);
    }
    Ok(params)
}

/// A recorded forward computation, kept open so callers can attach a loss
/// (training) or pull input gradients (attribution).
pub struct ForwardPass {
    pub graph: CompGraph,
    /// Leaf holding the fused input window.
    pub input: NodeId,
    /// The `[horizon, n_targets]` forecast node.
    pub output: NodeId,
    /// Leaf per parameter, in [`ParamStore`] order.
    pub param_nodes: IndexMap<String, NodeId>,
}

/// Wire the network into an existing graph, from an input node and parameter
/// leaves. This single construction path serves [`forward_pass`] and the
/// finite-difference tests alike, so what is checked is what runs.
fn build_forward(
    g: &mut CompGraph,
    input: NodeId,
    nodes: &IndexMap<String, NodeId>,
    cfg: &ModelConfig,
    window: &WindowConfig,
) -> Result<NodeId> {
    let get = |name: &str| -> Result<NodeId> {
        nodes
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter '{name}' missing from store")))
    };
    let n_layers = cfg.n_layers();

    // CNN branch: same-padded convolutions keep time length w at every layer.
    let mut cnn_outputs: Vec<NodeId> = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let x = skip_input(g, cfg.skip, i, n_layers, &cnn_outputs, input)?;
        let kernel = get(&format!("cnn.{i}.kernel"))?;
        let bias = get(&format!("cnn.{i}.bias"))?;
        let conv = g.conv1d(x, kernel, bias, Padding::Same)?;
        cnn_outputs.push(g.activation(conv, cfg.conv_activation));
    }

    // RNN branch: each layer unrolls w steps from a zero state and emits its
    // full hidden sequence, so the head concatenation stays time-aligned.
    let mut rnn_outputs: Vec<NodeId> = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let seq = skip_input(g, cfg.skip, i, n_layers, &rnn_outputs, input)?;
        let recurrent = get(&format!("rnn.{i}.recurrent"))?;
        let weight = get(&format!("rnn.{i}.input"))?;
        let bias = get(&format!("rnn.{i}.bias"))?;
        let units = g.value(bias).len();
        let mut h = g.leaf(Tensor::zeros(vec![units]));
        let mut states = Vec::with_capacity(window.window);
        for j in 0..window.window {
            let v = g.row(seq, j)?;
            h = g.rnn_step(h, v, recurrent, weight, bias)?;
            states.push(h);
        }
        rnn_outputs.push(g.stack_rows(&states)?);
    }

    // Head: concat [fused, cnn, rnn] on the feature axis, flatten time-major,
    // and map to the whole forecast block with a single dense layer.
    let merged = g.concat(&[input, cnn_outputs[n_layers - 1], rnn_outputs[n_layers - 1]], 1)?;
    let flat_len = g.value(merged).len();
    let flat = g.reshape(merged, vec![flat_len])?;
    let head = g.dense(flat, get("head.weight")?, get("head.bias")?)?;
    let n_targets = g.value(head).len() / window.horizon;
    g.reshape(head, vec![window.horizon, n_targets])
}

/// Run the network over one fused window, returning the open graph.
pub fn forward_pass(
    params: &ParamStore,
    cfg: &ModelConfig,
    window: &WindowConfig,
    fused: &Tensor,
) -> Result<ForwardPass> {
    cfg.validate()?;
    window.validate()?;
    if fused.rank() != 2 || fused.shape()[0] != window.window {
        return Err(Error::shape(
            "fused input window",
            fused.shape(),
            &[window.window, fused.cols()],
        ));
    }
    let mut g = CompGraph::new();
    let input = g.leaf(fused.clone());
    let mut nodes = IndexMap::new();
    for (name, tensor) in params {
        nodes.insert(name.clone(), g.leaf(tensor.clone()));
    }
    let output = build_forward(&mut g, input, &nodes, cfg, window)?;
    Ok(ForwardPass {
        graph: g,
        input,
        output,
        param_nodes: nodes,
    })
}

/// Forecast for one fused window: `[horizon, n_targets]`.
pub fn forward(
    params: &ParamStore,
    cfg: &ModelConfig,
    window: &WindowConfig,
    fused: &Tensor,
) -> Result<Tensor> {
    let pass = forward_pass(params, cfg, window, fused)?;
    Ok(pass.graph.value(pass.output).clone())
}

/// Verify a parameter store against the shapes the configuration demands:
/// no missing names, no unknown names, no shape drift.
pub fn check_params(
    params: &ParamStore,
    cfg: &ModelConfig,
    window: &WindowConfig,
    fused_width: usize,
    n_targets: usize,
) -> Result<()> {
    let expected = parameter_shapes(cfg, window, fused_width, n_targets)?;
    for (name, shape) in &expected {
        match params.get(name) {
            None => {
                return Err(Error::Contract(format!(
                    "parameter '{name}' missing from checkpoint"
                )))
            }
            Some(t) if t.shape() != shape.as_slice() => {
                return Err(Error::shape(
                    format!("parameter '{name}'"),
                    t.shape(),
                    shape,
                ));
            }
            Some(_) => {}
        }
    }
    for name in params.keys() {
        if !expected.contains_key(name) {
            return Err(Error::Contract(format!(
                "checkpoint parameter '{name}' is not part of this architecture"
            )));
        }
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"PRCN";
const CHECKPOINT_VERSION: u32 = 1;
/// Upper bounds that make corrupt headers fail fast instead of allocating.
const MAX_NAME_LEN: u32 = 4096;
const MAX_RANK: u32 = 8;

/// Write all parameters to a binary checkpoint. Layout: magic `PRCN`,
/// format version (u32 LE), then per parameter: name length (u32 LE), name
/// bytes, rank (u32 LE), dimensions (u64 LE each), values (f64 LE each).
/// Round trips are bit-exact.
pub fn save_params(params: &ParamStore, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for (name, tensor) in params {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(tensor.rank() as u32).to_le_bytes())?;
        for &dim in tensor.shape() {
            out.write_all(&(dim as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_exact(reader: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    reader.read_exact(buf).map_err(|_| {
        Error::Format(format!("checkpoint truncated while reading {what}"))
    })
}

/// Read a checkpoint written by [`save_params`]. The caller should follow up
/// with [`check_params`] to confirm the file matches the architecture.
pub fn load_params(path: &Path) -> Result<ParamStore> {
    let file = std::fs::File::open(path)?;
    let mut reader = std::io::BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact(&mut reader, &mut magic, "magic bytes")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "not a checkpoint file: bad magic bytes {magic:?}"
        )));
    }
    let mut word = [0u8; 4];
    read_exact(&mut reader, &mut word, "format version")?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint format version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let mut params = ParamStore::new();
    loop {
        let mut len_buf = [0u8; 4];
        match reader.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u32::from_le_bytes(len_buf);
        if name_len == 0 || name_len > MAX_NAME_LEN {
            return Err(Error::Format(format!(
                "implausible parameter name length {name_len}"
            )));
        }
        let mut name_buf = vec![0u8; name_len as usize];
        read_exact(&mut reader, &mut name_buf, "parameter name")?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        read_exact(&mut reader, &mut word, "tensor rank")?;
        let rank = u32::from_le_bytes(word);
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format(format!(
                "implausible rank {rank} for parameter '{name}'"
            )));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut dim_buf = [0u8; 8];
        for _ in 0..rank {
            read_exact(&mut reader, &mut dim_buf, "tensor dimension")?;
            shape.push(u64::from_le_bytes(dim_buf) as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| {
                Error::Format(format!("dimension overflow for parameter '{name}'"))
            })?;
        let mut data = Vec::with_capacity(count);
        let mut val_buf = [0u8; 8];
        for _ in 0..count {
            read_exact(&mut reader, &mut val_buf, "tensor values")?;
            data.push(f64::from_le_bytes(val_buf));
        }
        if params.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::Format(format!(
                "duplicate parameter '{name}' in checkpoint"
            )));
        }
    }
    if params.is_empty() {
        return Err(Error::Format("checkpoint contains no parameters".into()));
    }
    Ok(params)
}
