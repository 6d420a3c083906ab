//! Stochastic direct and indirect effects of a time-to-event mediator on a
//! terminal time-to-event outcome under semi-competing risks, estimated with
//! a three-state illness-death proportional-intensity model.
//!
//! The pipeline is
//! [`dataset`] (records → long-format transition rows) →
//! [`cox`] (one Cox fit per transition with Breslow baselines) →
//! [`effects`] (state-occupation probabilities and the TE/SDE/SIE contrasts).
//! [`simgen`] generates synthetic illness-death data with known truth and
//! [`study`] runs the Monte Carlo comparison against two naive analyses.

pub mod cox;
pub mod dataset;
pub mod effects;
pub mod quadrature;
pub mod rng;
pub mod simgen;
pub mod study;
