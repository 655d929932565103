//! Aluminum electrolysis cell simulation with hybrid physics/ML
//! derivative models.
//!
//! The crate simulates an eight-state aluminum electrolysis cell,
//! deliberately ablates one piece of its physics (the composition-
//! dependent liquidus temperature is frozen to a constant), and compares
//! three ways of forecasting the cell's evolution:
//!
//! - the ablated physics alone (`pbm`),
//! - a neural network trained end-to-end on state derivatives (`ddm`),
//! - the ablated physics plus a network-learned corrective source term
//!   (`costa`).
//!
//! Modules follow the pipeline: [`plant`] defines the dynamics,
//! [`integrate`] the fixed-step solvers, [`datagen`] the excitation
//! signals and regression datasets, [`nn`] the from-scratch network,
//! [`predictor`] the uniform estimator interface, [`eval`] the rolling
//! forecasts and error statistics, and [`experiment`] the reproducible
//! end-to-end orchestration behind the CLI.
//!
//! See the `examples/` directory for one runnable example per
//! capability, and the `alcell` binary for the composable subcommands
//! (`gen-data`, `train`, `eval`, `report`).

pub mod datagen;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod integrate;
pub mod nn;
pub mod plant;
pub mod predictor;
pub mod rng;

pub use error::{Error, Result};
pub use plant::{CellState, ControlInput, PlantConstants, PlantMode, StateDerivative};
