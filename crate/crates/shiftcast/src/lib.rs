//! Multivariate time-series forecasting with future-covariate shifting.
//!
//! Some covariates are *known in advance* — release schedules, weather
//! forecasts, planned maintenance. This crate fuses each input window with a
//! copy of those covariates shifted `s` steps forward, so the model sees
//! both their past and their already-published future while predicting the
//! next `k` target values. The model runs a convolutional branch and a
//! recurrent branch in parallel over the fused window, with configurable
//! skip connections, and concatenates both with the raw input before a
//! linear forecast head.
//!
//! Everything is built on a small reverse-mode autodiff tape ([`graph`]),
//! trained with Adam and early stopping ([`train`]), scored with MAE/RMSE in
//! original data units ([`eval`]), swept over hyperparameters ([`sweep`]),
//! and attributed back onto the input window with gradient-based saliency
//! ([`explain`]). Data-parallel execution uses per-item work with ordered,
//! sequential reduction, so results are bitwise identical to the
//! single-threaded fallback (see [`exec`]).
//!
//! # Quick start
//!
//! ```
//! use shiftcast::data::{build_instances, fit_normalizer, split_train_test,
//!     synth_generate, SynthConfig, WindowConfig};
//! use shiftcast::eval::evaluate_with;
//! use shiftcast::model::{build_model, ModelConfig};
//! use shiftcast::train::{train, TrainConfig};
//! use shiftcast::Parallelism;
//!
//! // A synthetic series with a future-known covariate that leads the target.
//! let frame = synth_generate(&SynthConfig { length: 240, seed: 7, noise_scale: 0.1 })?;
//! let window = WindowConfig { window: 6, horizon: 2, shift: 2 };
//!
//! // Normalize from the training prefix, window into instances, split.
//! let stats = fit_normalizer(&frame, 0.8)?;
//! let normalized = stats.normalize(&frame)?;
//! let instances = build_instances(&normalized, &window)?;
//! let (train_set, test_set) = split_train_test(&instances, 0.8)?;
//!
//! // A deliberately tiny model so this example runs in a blink.
//! let cfg = ModelConfig {
//!     cnn_filters: vec![4],
//!     rnn_units: vec![4],
//!     ..ModelConfig::default()
//! };
//! let mut params = build_model(&cfg, &window, frame.fused_width(), frame.n_targets(), 1)?;
//! let tcfg = TrainConfig { max_epochs: 2, ..TrainConfig::default() };
//! let report = train(&mut params, &cfg, &window, &train_set, &tcfg)?;
//! assert_eq!(report.train_losses.len(), 2);
//!
//! // Errors in the original units of the target column.
//! let result = evaluate_with(&params, &cfg, &window, &test_set,
//!     Some(&stats), Parallelism::default())?;
//! assert!(result.mae.is_finite() && result.rmse >= result.mae);
//! # Ok::<(), shiftcast::Error>(())
//! ```
//!
//! The `shiftcast-cli` crate wraps this pipeline (plus sweeps and saliency
//! export) behind a `shiftcast` binary driven by TOML config files.

pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod explain;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod pipeline;
pub mod sweep;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use exec::Parallelism;
pub use tensor::Tensor;
