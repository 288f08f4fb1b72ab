//! Audit toolkit for z-phase and interval/diameter (d/D) dependence of AI
//! lung-nodule detection sensitivity.
//!
//! The pipeline reads reader annotations, per-series reconstruction geometry
//! and per-condition detection tables, forms multi-reader consensus nodules,
//! scores them against detections and reports sensitivity by z-phase bin and
//! by d/D stratum with bootstrap intervals. A partial-volume simulator
//! explores the same surfaces synthetically.

pub mod consensus;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod ingest;
pub mod matching;
pub mod report;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};
