//! End-to-end orchestration: frame → normalized instances → trained model →
//! scores. Glue shared by the command-line tool and the hyperparameter
//! sweeps, so both agree on every preprocessing decision.

use crate::data::{
    build_instances, fit_normalizer, fused_feature_labels, split_train_test, Instance,
    NormStats, SeriesFrame, WindowConfig,
};
use crate::error::Result;
use crate::eval::{evaluate_with, EvalResult};
use crate::model::{build_model, ModelConfig, ParamStore};
use crate::train::{train, TrainConfig, TrainReport};

/// A frame turned into normalized train/test instances, plus everything
/// needed to interpret the model's inputs and outputs afterwards.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub stats: NormStats,
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
    /// One label per fused-input column, in fusion order.
    pub feature_labels: Vec<String>,
    pub fused_width: usize,
    pub n_targets: usize,
}

/// Normalize the frame (statistics from its leading `train_fraction` rows),
/// window it into instances, and split those chronologically.
pub fn prepare(
    frame: &SeriesFrame,
    window: &WindowConfig,
    train_fraction: f64,
) -> Result<PreparedData> {
    let stats = fit_normalizer(frame, train_fraction)?;
    let normalized = stats.normalize(frame)?;
    let instances = build_instances(&normalized, window)?;
    let (train, test) = split_train_test(&instances, train_fraction)?;
    Ok(PreparedData {
        stats,
        train,
        test,
        feature_labels: fused_feature_labels(frame, window.shift),
        fused_width: frame.fused_width(),
        n_targets: frame.n_targets(),
    })
}

/// Outcome of one full fit: the trained parameters, the training trace, and
/// test-set errors in the original data units.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub params: ParamStore,
    pub report: TrainReport,
    pub eval: EvalResult,
}

/// Build a fresh model from `init_seed`, train it on the prepared split, and
/// score it on the held-out instances after undoing normalization.
pub fn fit_and_score(
    prepared: &PreparedData,
    cfg: &ModelConfig,
    window: &WindowConfig,
    tcfg: &TrainConfig,
    init_seed: u64,
) -> Result<FitOutcome> {
    let mut params = build_model(cfg, window, prepared.fused_width, prepared.n_targets, init_seed)?;
    let report = train(&mut params, cfg, window, &prepared.train, tcfg)?;
    let eval = evaluate_with(
        &params,
        cfg,
        window,
        &prepared.test,
        Some(&prepared.stats),
        tcfg.parallelism,
    )?;
    Ok(FitOutcome {
        params,
        report,
        eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};

    fn small_synth() -> SeriesFrame {
        synth_generate(&SynthConfig {
            length: 240,
            seed: 11,
            noise_scale: 0.1,
        })
        .unwrap()
    }

    fn small_window() -> WindowConfig {
        WindowConfig {
            window: 6,
            horizon: 2,
            shift: 2,
        }
    }

    #[test]
    fn prepare_splits_and_labels_are_consistent() {
        let frame = small_synth();
        let window = small_window();
        let prepared = prepare(&frame, &window, 0.8).unwrap();
        let total = prepared.train.len() + prepared.test.len();
        // Anchors t = window ..= length − max(shift, horizon), inclusive.
        assert_eq!(total, 240 - 6 - 2 + 1);
        assert_eq!(prepared.train.len(), (total as f64 * 0.8).floor() as usize);
        assert_eq!(prepared.feature_labels.len(), prepared.fused_width);
        assert_eq!(prepared.fused_width, 1 + 1 + 2); // y + x + z twice
        assert_eq!(prepared.n_targets, 1);
        // Normalized inputs live in the fitted range, so roughly [0, 1]
        // on the train side.
        for inst in &prepared.train {
            for &v in inst.fused.data() {
                assert!((-0.5..=1.5).contains(&v), "normalized value {v}");
            }
        }
    }

    #[test]
    fn fit_and_score_produces_finite_errors_in_data_units() {
        let frame = small_synth();
        let window = small_window();
        let prepared = prepare(&frame, &window, 0.8).unwrap();
        let cfg = ModelConfig {
            cnn_filters: vec![3],
            rnn_units: vec![3],
            ..ModelConfig::default()
        };
        let tcfg = TrainConfig {
            max_epochs: 3,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let outcome = fit_and_score(&prepared, &cfg, &window, &tcfg, 5).unwrap();
        assert!(outcome.eval.mae.is_finite() && outcome.eval.mae > 0.0);
        assert!(outcome.eval.rmse >= outcome.eval.mae);
        assert_eq!(outcome.report.train_losses.len(), 3);
        // Scores are denormalized: the raw series has spread well past the
        // [0, 1] normalized band, so errors need not be tiny.
        assert_eq!(outcome.eval.n_instances, prepared.test.len());
    }

    #[test]
    fn identical_seeds_reproduce_identical_outcomes() {
        let frame = small_synth();
        let window = small_window();
        let prepared = prepare(&frame, &window, 0.8).unwrap();
        let cfg = ModelConfig {
            cnn_filters: vec![2],
            rnn_units: vec![2],
            ..ModelConfig::default()
        };
        let tcfg = TrainConfig {
            max_epochs: 2,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let a = fit_and_score(&prepared, &cfg, &window, &tcfg, 9).unwrap();
        let b = fit_and_score(&prepared, &cfg, &window, &tcfg, 9).unwrap();
        assert_eq!(a.eval.mae.to_bits(), b.eval.mae.to_bits());
        assert_eq!(a.eval.rmse.to_bits(), b.eval.rmse.to_bits());
        for (ta, tb) in a.params.values().zip(b.params.values()) {
            assert_eq!(ta.data(), tb.data());
        }
    }
}
