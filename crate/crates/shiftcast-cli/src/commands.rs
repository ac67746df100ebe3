//! One function per subcommand. Every command writes `config.resolved`
//! into the output directory first, so the run can be replayed from its own
//! artifacts even if it fails midway.

use std::path::PathBuf;

use shiftcast::data::write_frame_csv;
use shiftcast::error::{Error, Result};
use shiftcast::eval::{evaluate_with, write_metrics};
use shiftcast::explain::{grad_cam, write_saliency, write_saliency_raw, TargetSelector};
use shiftcast::model::{build_model, check_params, load_params, save_params, ModelConfig};
use shiftcast::pipeline::prepare;
use shiftcast::sweep::{
    sweep_layers, sweep_shift, sweep_skip, write_sweep_rows, write_sweep_summary, SweepBase,
};
use shiftcast::train::{train, write_report};

use crate::config::{RunConfig, SweepKind, SweepValues};

/// Train a model and leave behind `checkpoint.prcn` and `train_report.txt`.
pub fn cmd_train(config: &RunConfig) -> Result<()> {
    config.write_resolved()?;
    let frame = config.frame()?;
    let prepared = prepare(&frame, &config.window, config.data.train_fraction)?;
    let mut params = build_model(
        &config.model,
        &config.window,
        prepared.fused_width,
        prepared.n_targets,
        config.run.seed,
    )?;
    let report = train(
        &mut params,
        &config.model,
        &config.window,
        &prepared.train,
        &config.train_config(),
    )?;
    save_params(&params, &config.out_path("checkpoint.prcn"))?;
    write_report(&report, &config.out_path("train_report.txt"))?;
    println!(
        "trained {} epochs (best {}), final train loss {:.6}",
        report.stopped_epoch,
        report.best_epoch,
        report.train_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Where to find the checkpoint: an explicit flag, or the output directory
/// of a previous `train` run.
fn checkpoint_path(config: &RunConfig, flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .unwrap_or_else(|| config.out_path("checkpoint.prcn"))
}

/// Score a checkpoint on the held-out instances; metrics are in original
/// data units.
pub fn cmd_eval(config: &RunConfig, checkpoint: &Option<PathBuf>) -> Result<()> {
    config.write_resolved()?;
    let frame = config.frame()?;
    let prepared = prepare(&frame, &config.window, config.data.train_fraction)?;
    let params = load_params(&checkpoint_path(config, checkpoint))?;
    check_params(
        &params,
        &config.model,
        &config.window,
        prepared.fused_width,
        prepared.n_targets,
    )?;
    let result = evaluate_with(
        &params,
        &config.model,
        &config.window,
        &prepared.test,
        Some(&prepared.stats),
        config.parallelism(),
    )?;
    write_metrics(&result, &config.out_path("metrics.txt"))?;
    println!(
        "mae {:.6} rmse {:.6} over {} test instances",
        result.mae, result.rmse, result.n_instances
    );
    Ok(())
}

/// Attribute one test instance's forecast back onto its input window.
pub fn cmd_explain(
    config: &RunConfig,
    checkpoint: &Option<PathBuf>,
    instance: usize,
    targets: Option<Vec<usize>>,
    horizons: Option<Vec<usize>>,
) -> Result<()> {
    config.write_resolved()?;
    let frame = config.frame()?;
    let prepared = prepare(&frame, &config.window, config.data.train_fraction)?;
    let params = load_params(&checkpoint_path(config, checkpoint))?;
    check_params(
        &params,
        &config.model,
        &config.window,
        prepared.fused_width,
        prepared.n_targets,
    )?;
    let inst = prepared.test.get(instance).ok_or_else(|| {
        Error::Config(format!(
            "instance index {instance} out of range for {} test instances",
            prepared.test.len()
        ))
    })?;
    let all = TargetSelector::all(&config.window, prepared.n_targets);
    let selector = TargetSelector {
        horizons: horizons.unwrap_or(all.horizons),
        targets: targets.unwrap_or(all.targets),
    };
    let map = grad_cam(
        &params,
        &config.model,
        &config.window,
        inst,
        &selector,
        &prepared.feature_labels,
    )?;
    write_saliency(&map, &config.out_path("saliency.txt"))?;
    write_saliency_raw(&map, &config.out_path("saliency_raw.txt"))?;
    if map.is_all_zero() {
        println!("saliency written (all zero: no positive contributions)");
    } else {
        let sums = map.column_importance();
        let top = sums
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| map.feature_labels[i].as_str())
            .unwrap_or("?");
        println!("saliency written; most influential feature: {top}");
    }
    Ok(())
}

/// Run the sweep described by `[sweep]` and write its row and summary files.
pub fn cmd_sweep(config: &RunConfig) -> Result<()> {
    config.write_resolved()?;
    let section = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("the sweep command needs a [sweep] section".into()))?;
    let frame = config.frame()?;

    let mut base = SweepBase::new(frame, config.window);
    base.model = config.model.clone();
    base.train = config.train_config();
    base.train_fraction = config.data.train_fraction;
    base.parallelism = config.parallelism();
    if section.full_scale {
        base.filter_start = 256;
        base.unit_start = 128;
    } else {
        base.filter_start = section.filter_start;
        base.unit_start = section.unit_start;
        // An untouched [model] section means the full-scale default widths;
        // shrink them eightfold so a default sweep finishes in minutes.
        if base.model == ModelConfig::default() {
            base.model.cnn_filters = base.model.cnn_filters.iter().map(|w| w / 8).collect();
            base.model.rnn_units = base.model.rnn_units.iter().map(|w| w / 8).collect();
        }
    }

    let result = match (section.kind, &section.values) {
        (SweepKind::Shift, SweepValues::Numbers(values)) => {
            sweep_shift(&base, values, &section.seeds)?
        }
        (SweepKind::Layers, SweepValues::Numbers(values)) => {
            sweep_layers(&base, values, &section.seeds)?
        }
        (SweepKind::Skip, SweepValues::Strategies(values)) => {
            sweep_skip(&base, values, &section.seeds)?
        }
        (kind, _) => {
            return Err(Error::Config(format!(
                "sweep kind `{}` does not match the type of `values` \
                 (shift/layers take integers, skip takes strategy names)",
                kind.name()
            )))
        }
    };
    let rows_path = config.out_path(&format!("sweep_{}.txt", section.kind.name()));
    let summary_path = config.out_path(&format!("sweep_{}_summary.txt", section.kind.name()));
    write_sweep_rows(&result, &rows_path)?;
    write_sweep_summary(&result, &summary_path)?;
    for s in &result.summaries {
        println!(
            "{} = {}: median mae {:.6} (min {:.6}, max {:.6})",
            result.parameter, s.param_value, s.median_mae, s.min_mae, s.max_mae
        );
    }
    Ok(())
}

/// Generate the synthetic dataset and write it as `synth.csv`.
pub fn cmd_synth(config: &RunConfig) -> Result<()> {
    config.write_resolved()?;
    let frame = shiftcast::data::synth_generate(&shiftcast::data::SynthConfig {
        length: config.data.length,
        seed: config.data.seed,
        noise_scale: config.data.noise_scale,
    })?;
    let path = config.out_path("synth.csv");
    write_frame_csv(&frame, &path)?;
    println!(
        "wrote {} rows x {} columns to {}",
        frame.length(),
        frame.names().len(),
        path.display()
    );
    Ok(())
}
