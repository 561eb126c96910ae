//! Core library for digital-twin driven mmWave beam selection.
//!
//! The crate models the full decision loop of a twin-assisted link:
//!
//! - [`world`] describes desk-scale scenes (buildings, road, obstacles,
//!   transmitter) and receiver trajectories.
//! - [`antenna`] loads measured beam patterns into integer-step grids and
//!   scores pattern discrepancies.
//! - [`raytracer`] enumerates specular/diffracted paths with the image
//!   method and aggregates them into received power and SNR.
//! - [`twin`] turns a scene + codebook into per-twin beam-SNR lookup
//!   tables with an analytic computation-cost model and a compact binary
//!   container.
//! - [`selector`] fits inclusion-probability models and solves the joint
//!   twin / top-K choice under communication and computation budgets.
//! - [`pipeline`] routes each sensor sample to a local predictor or to the
//!   twin collection, with OOD detection and label fine-tuning.
//! - [`metrics`] evaluates top-K accuracy within an SNR margin, sweep
//!   latency, and inclusion-probability heatmaps.

pub mod antenna;
pub mod geom;
pub mod metrics;
pub mod pipeline;
pub mod raytracer;
pub mod selector;
pub mod twin;
pub mod world;
