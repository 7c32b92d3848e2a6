//! Drowsiness assessment from photoplethysmographic (PPG) signals.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! - [`signal_gen`]: labeled synthetic PPG waveforms and sensor noise,
//! - [`filterbank`]: 1–10 Hz band-pass design, multi-layer hyper-filtering
//!   into sub-bands, and per-sample pattern-signal extraction,
//! - [`band_search`]: tabular Q-learning over layer band edges, with an
//!   exhaustive-search oracle,
//! - [`tdcnn`]: a 12-block dilated causal residual CNN trained from scratch,
//!   plus an MLP baseline,
//! - [`vision`]: recurrent criss-cross attention, the salient-pedestrian box
//!   rule and the mIoU metric,
//! - [`pipeline`], [`io`], [`plot`]: orchestration, persistence and SVG output
//!   used by the `hyperppg` binary.

pub mod band_search;
pub mod error;
pub mod filterbank;
pub mod io;
pub mod pipeline;
pub mod plot;
pub mod signal_gen;
pub mod tdcnn;
pub mod vision;

mod class;

pub use class::Class;
pub use error::{Error, Result};
