//! Gradient-based attribution over the fused input window.
//!
//! For a chosen subset of forecast entries, the scalar score (their sum) is
//! backpropagated to the fused input, giving one gradient per
//! (time step × feature) cell. Importance is `relu(gradient ⊙ input)` — the
//! input-layer form of class-activation mapping, where the input has no
//! channel pooling to weight over — max-normalized to `[0, 1]` for display.
//! The raw gradient map is preserved alongside, so downstream analysis is
//! never limited by the display transform.

use crate::data::{Instance, WindowConfig};
use crate::error::{Error, Result};
use crate::model::{forward_pass, ModelConfig, ParamStore};
use crate::tensor::Tensor;

/// Which forecast entries contribute to the attributed score: the Cartesian
/// product of the chosen horizon steps and target columns (0-based).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetSelector {
    pub horizons: Vec<usize>,
    pub targets: Vec<usize>,
}

impl TargetSelector {
    /// Every forecast entry.
    pub fn all(window: &WindowConfig, n_targets: usize) -> Self {
        TargetSelector {
            horizons: (0..window.horizon).collect(),
            targets: (0..n_targets).collect(),
        }
    }

    /// Sorted, deduplicated, bounds-checked index sets.
    fn resolved(&self, horizon: usize, n_targets: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if self.horizons.is_empty() || self.targets.is_empty() {
            return Err(Error::Config(
                "attribution selector must name at least one horizon step and one target"
                    .into(),
            ));
        }
        if let Some(&h) = self.horizons.iter().find(|&&h| h >= horizon) {
            return Err(Error::Config(format!(
                "selector horizon step {h} out of range for forecast length {horizon}"
            )));
        }
        if let Some(&t) = self.targets.iter().find(|&&t| t >= n_targets) {
            return Err(Error::Config(format!(
                "selector target {t} out of range for {n_targets} target columns"
            )));
        }
        let mut hs = self.horizons.clone();
        hs.sort_unstable();
        hs.dedup();
        let mut ts = self.targets.clone();
        ts.sort_unstable();
        ts.dedup();
        Ok((hs, ts))
    }
}

/// Attribution over one fused window.
#[derive(Clone, Debug)]
pub struct SaliencyMap {
    /// `relu(gradient ⊙ input)`, divided by its maximum when positive.
    /// Shape `[window, fused_width]`, all entries in `[0, 1]`.
    pub importance: Tensor,
    /// Unmodified score gradient w.r.t. each input entry, same shape.
    pub raw_gradient: Tensor,
    /// One label per fused column, shifted covariates suffixed `(+shift)`.
    pub feature_labels: Vec<String>,
    /// Per row: offset of the covered frame row from the anchor,
    /// `-window+1 ..= 0`. Shifted columns describe rows `offset + shift`.
    pub time_offsets: Vec<i64>,
    pub shift: usize,
}

impl SaliencyMap {
    /// True when no input cell received positive importance (e.g. a dead
    /// model). Reported so callers can flag it; it is not an error.
    pub fn is_all_zero(&self) -> bool {
        self.importance.data().iter().all(|&v| v == 0.0)
    }

    /// Sum of importance per fused column, for ranking features.
    pub fn column_importance(&self) -> Vec<f64> {
        let (rows, cols) = (self.importance.shape()[0], self.importance.shape()[1]);
        (0..cols)
            .map(|c| (0..rows).map(|r| self.importance.at2(r, c)).sum())
            .collect()
    }
}

/// Attribute the selected forecast entries back onto the fused input.
///
/// `feature_labels` must come from the frame the instance was built on (see
/// `data::fused_feature_labels`), one per fused column.
pub fn grad_cam(
    params: &ParamStore,
    cfg: &ModelConfig,
    window: &WindowConfig,
    instance: &Instance,
    selector: &TargetSelector,
    feature_labels: &[String],
) -> Result<SaliencyMap> {
    let n_targets = instance.n_targets();
    let (horizons, targets) = selector.resolved(window.horizon, n_targets)?;
    if feature_labels.len() != instance.fused_width() {
        return Err(Error::Contract(format!(
            "{} feature labels for {} fused columns",
            feature_labels.len(),
            instance.fused_width()
        )));
    }

    let mut pass = forward_pass(params, cfg, window, &instance.fused)?;
    let mut mask = Tensor::zeros(vec![window.horizon, n_targets]);
    for &h in &horizons {
        for &t in &targets {
            mask.set2(h, t, 1.0);
        }
    }
    let score = pass.graph.weighted_sum(pass.output, mask)?;
    pass.graph.backward(score)?;
    let raw_gradient = pass
        .graph
        .grad(pass.input)
        .expect("backward fills the input gradient");

    let mut importance = Tensor::zeros(raw_gradient.shape().to_vec());
    for (out, (&g, &x)) in importance
        .data_mut()
        .iter_mut()
        .zip(raw_gradient.data().iter().zip(instance.fused.data()))
    {
        *out = (g * x).max(0.0);
    }
    let max = importance
        .data()
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    if max > 0.0 {
        for v in importance.data_mut() {
            *v /= max;
        }
    }

    Ok(SaliencyMap {
        importance,
        raw_gradient,
        feature_labels: feature_labels.to_vec(),
        time_offsets: (1 - window.window as i64..=0).collect(),
        shift: window.shift,
    })
}

fn write_matrix(
    map: &SaliencyMap,
    values: &Tensor,
    path: &std::path::Path,
) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "offset,{}", map.feature_labels.join(","))?;
    for (r, offset) in map.time_offsets.iter().enumerate() {
        let cells: Vec<String> = (0..values.cols())
            .map(|c| format!("{}", values.at2(r, c)))
            .collect();
        writeln!(out, "{offset},{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Write the normalized importance matrix: header of feature labels, first
/// column of time offsets — ready for heatmap plotting.
pub fn write_saliency(map: &SaliencyMap, path: &std::path::Path) -> Result<()> {
    write_matrix(map, &map.importance, path)
}

/// Write the raw gradient matrix in the same layout.
pub fn write_saliency_raw(map: &SaliencyMap, path: &std::path::Path) -> Result<()> {
    write_matrix(map, &map.raw_gradient, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, forward, parameter_shapes};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_window() -> WindowConfig {
        WindowConfig {
            window: 3,
            horizon: 2,
            shift: 1,
        }
    }

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            cnn_filters: vec![2],
            rnn_units: vec![2],
            ..ModelConfig::default()
        }
    }

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    fn instance_with(fused: Tensor, horizon: usize, n_targets: usize) -> Instance {
        Instance {
            target: Tensor::zeros(vec![horizon, n_targets]),
            anchor: fused.shape()[0],
            fused,
        }
    }

    /// All-zero parameters except a head weight wiring output[0,0] to one
    /// input cell with the given coefficient.
    fn identity_wired_params(
        cfg: &ModelConfig,
        window: &WindowConfig,
        fused_width: usize,
        cell: (usize, usize),
        coefficient: f64,
    ) -> ParamStore {
        let shapes = parameter_shapes(cfg, window, fused_width, 1).unwrap();
        let mut params = ParamStore::new();
        for (name, shape) in shapes {
            params.insert(name, Tensor::zeros(shape));
        }
        // Head input layout: time-major rows of [fused | cnn | rnn].
        let row_width = fused_width + cfg.cnn_filters[0] + cfg.rnn_units[0];
        let flat_pos = cell.0 * row_width + cell.1;
        let mut w = params["head.weight"].clone();
        let out_cols = window.horizon; // n_targets = 1
        w.data_mut()[flat_pos * out_cols] = coefficient;
        params.insert("head.weight".to_string(), w);
        params
    }

    #[test]
    fn identity_wiring_lights_up_exactly_one_cell() {
        let window = tiny_window();
        let cfg = tiny_cfg();
        let fused = Tensor::new(
            vec![3, 4],
            vec![
                0.5, 1.0, 1.5, 2.0, //
                2.5, 3.0, 3.5, 4.0, //
                4.5, 5.0, 5.5, 6.0,
            ],
        )
        .unwrap();
        let params = identity_wired_params(&cfg, &window, 4, (1, 2), 1.0);
        let inst = instance_with(fused.clone(), 2, 1);
        let map = grad_cam(
            &params,
            &cfg,
            &window,
            &inst,
            &TargetSelector {
                horizons: vec![0],
                targets: vec![0],
            },
            &labels(4),
        )
        .unwrap();
        // Output[0,0] = input[1,2] = 3.5, so the forecast confirms the wiring.
        let out = forward(&params, &cfg, &window, &fused).unwrap();
        assert_eq!(out.at2(0, 0), 3.5);
        for r in 0..3 {
            for c in 0..4 {
                let expected = if (r, c) == (1, 2) { 1.0 } else { 0.0 };
                assert_eq!(map.importance.at2(r, c), expected, "cell ({r},{c})");
                assert_eq!(map.raw_gradient.at2(r, c), expected);
            }
        }
        assert!(!map.is_all_zero());
    }

    #[test]
    fn linear_coefficient_scales_the_raw_gradient() {
        // y = 3·input[0,1] with input value 2.0 there: raw gradient 3,
        // pre-normalization importance relu(3·2) = 6, normalized 1.0.
        let window = tiny_window();
        let cfg = tiny_cfg();
        let mut fused = Tensor::zeros(vec![3, 4]);
        fused.set2(0, 1, 2.0);
        let params = identity_wired_params(&cfg, &window, 4, (0, 1), 3.0);
        let inst = instance_with(fused.clone(), 2, 1);
        let map = grad_cam(
            &params,
            &cfg,
            &window,
            &inst,
            &TargetSelector {
                horizons: vec![0],
                targets: vec![0],
            },
            &labels(4),
        )
        .unwrap();
        assert_eq!(map.raw_gradient.at2(0, 1), 3.0);
        let pre_norm = (map.raw_gradient.at2(0, 1) * fused.at2(0, 1)).max(0.0);
        assert_eq!(pre_norm, 6.0);
        assert_eq!(map.importance.at2(0, 1), 1.0);
    }

    #[test]
    fn negative_contributions_clip_to_zero_importance() {
        let window = tiny_window();
        let cfg = tiny_cfg();
        let mut fused = Tensor::zeros(vec![3, 4]);
        fused.set2(0, 1, 2.0);
        // Negative coefficient: gradient −3 times positive input → relu clips.
        let params = identity_wired_params(&cfg, &window, 4, (0, 1), -3.0);
        let inst = instance_with(fused, 2, 1);
        let map = grad_cam(
            &params,
            &cfg,
            &window,
            &inst,
            &TargetSelector {
                horizons: vec![0],
                targets: vec![0],
            },
            &labels(4),
        )
        .unwrap();
        assert_eq!(map.raw_gradient.at2(0, 1), -3.0);
        assert!(map.is_all_zero());
        assert!(map.importance.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn raw_gradients_match_finite_differences() {
        let window = tiny_window();
        let cfg = tiny_cfg();
        let fused_width = 4;
        let params = build_model(&cfg, &window, fused_width, 1, 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fused = Tensor::new(
            vec![window.window, fused_width],
            (0..window.window * fused_width)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
        let selector = TargetSelector {
            horizons: vec![0, 1],
            targets: vec![0],
        };
        let inst = instance_with(fused.clone(), 2, 1);
        let map = grad_cam(
            &params,
            &cfg,
            &window,
            &inst,
            &selector,
            &labels(fused_width),
        )
        .unwrap();

        let score = |input: &Tensor| -> f64 {
            let out = forward(&params, &cfg, &window, input).unwrap();
            let mut total = 0.0;
            for &h in &selector.horizons {
                for &t in &selector.targets {
                    total += out.at2(h, t);
                }
            }
            total
        };
        let h = 1e-5;
        for idx in 0..fused.len() {
            let mut plus = fused.clone();
            plus.data_mut()[idx] += h;
            let mut minus = fused.clone();
            minus.data_mut()[idx] -= h;
            let fd = (score(&plus) - score(&minus)) / (2.0 * h);
            let analytic = map.raw_gradient.data()[idx];
            let rel = (analytic - fd).abs() / fd.abs().max(1.0);
            assert!(rel < 1e-4, "entry {idx}: analytic {analytic}, fd {fd}");
        }
    }

    #[test]
    fn raw_gradients_add_over_disjoint_selectors() {
        let window = tiny_window();
        let cfg = tiny_cfg();
        let params = build_model(&cfg, &window, 4, 1, 23).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let fused = Tensor::new(
            vec![3, 4],
            (0..12).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let inst = instance_with(fused, 2, 1);
        let run = |horizons: Vec<usize>| {
            grad_cam(
                &params,
                &cfg,
                &window,
                &inst,
                &TargetSelector {
                    horizons,
                    targets: vec![0],
                },
                &labels(4),
            )
            .unwrap()
        };
        let a = run(vec![0]);
        let b = run(vec![1]);
        let both = run(vec![0, 1]);
        for i in 0..both.raw_gradient.len() {
            let sum = a.raw_gradient.data()[i] + b.raw_gradient.data()[i];
            assert!(
                (both.raw_gradient.data()[i] - sum).abs() < 1e-12,
                "entry {i}"
            );
        }
    }

    #[test]
    fn selector_validation() {
        let window = tiny_window();
        let cfg = tiny_cfg();
        let params = build_model(&cfg, &window, 4, 1, 2).unwrap();
        let inst = instance_with(Tensor::zeros(vec![3, 4]), 2, 1);
        let bad_empty = TargetSelector {
            horizons: vec![],
            targets: vec![0],
        };
        assert!(grad_cam(&params, &cfg, &window, &inst, &bad_empty, &labels(4)).is_err());
        let bad_range = TargetSelector {
            horizons: vec![2],
            targets: vec![0],
        };
        let err = grad_cam(&params, &cfg, &window, &inst, &bad_range, &labels(4))
            .unwrap_err()
            .to_string();
        assert!(err.contains("horizon step 2"), "{err}");
        let bad_labels = TargetSelector::all(&window, 1);
        assert!(grad_cam(&params, &cfg, &window, &inst, &bad_labels, &labels(3)).is_err());
    }

    #[test]
    fn saliency_files_have_labeled_axes() {
        let window = tiny_window();
        let cfg = tiny_cfg();
        let fused = Tensor::filled(vec![3, 4], 0.5);
        let params = identity_wired_params(&cfg, &window, 4, (2, 0), 1.0);
        let inst = instance_with(fused, 2, 1);
        let names: Vec<String> = ["z", "x", "y", "y(+1)"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let map = grad_cam(
            &params,
            &cfg,
            &window,
            &inst,
            &TargetSelector::all(&window, 1),
            &names,
        )
        .unwrap();
        assert_eq!(map.time_offsets, vec![-2, -1, 0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("saliency.txt");
        write_saliency(&map, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "offset,z,x,y,y(+1)");
        assert!(lines[1].starts_with("-2,"));
        assert!(lines[3].starts_with("0,"));
        assert_eq!(lines.len(), 4);

        let raw_path = dir.path().join("saliency_raw.txt");
        write_saliency_raw(&map, &raw_path).unwrap();
        assert!(std::fs::read_to_string(&raw_path)
            .unwrap()
            .starts_with("offset,z,x,y,y(+1)"));
    }

    #[test]
    fn importance_stays_in_unit_range_for_random_models() {
        let window = tiny_window();
        let cfg = tiny_cfg();
        for seed in 0..5 {
            let params = build_model(&cfg, &window, 4, 1, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let fused = Tensor::new(
                vec![3, 4],
                (0..12).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let inst = instance_with(fused, 2, 1);
            let map = grad_cam(
                &params,
                &cfg,
                &window,
                &inst,
                &TargetSelector::all(&window, 1),
                &labels(4),
            )
            .unwrap();
            assert!(map
                .importance
                .data()
                .iter()
                .all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(map.importance.shape(), inst.fused.shape());
        }
    }
}
