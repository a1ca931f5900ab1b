//! Core algorithms for predicting ad attention from mouse-cursor movements.
//!
//! Everything here is pure computation over in-memory data and builds with
//! `alloc` only. File formats, PNG encoding, parallel execution and the
//! command-line front end live in the `cursor-attn` crate.
//!
//! Pipeline overview:
//!
//! - [`session`]: session records, label binarization, cleaning and stratified splits.
//! - [`timeseries`]: fixed-length 50x2 coordinate sequences.
//! - [`raster`]: heatmap and trajectory renderings on a 1280x900 canvas.
//! - [`nn`]: recurrent and convolutional binary classifiers with analytic gradients.
//! - [`train`]: early-stopped training, random search, learning-rate range test.
//! - [`stats`]: weighted P/R/F1, ROC AUC, Wilcoxon, Friedman, Holm.
//! - [`synth`]: a labeled synthetic session generator for sanity training.

#![no_std]

extern crate alloc;

pub mod error;
pub mod nn;
pub mod raster;
pub mod rng;
pub mod session;
pub mod stats;
pub mod synth;
pub mod timeseries;
pub mod train;

pub use error::{Error, Result};
