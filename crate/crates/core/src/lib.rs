//! Desk-scale adversarial robustness lab.
//!
//! The crate trains small dense classifiers under l1/l2/linf perturbations
//! (PGD and MSD adversaries), connects robust models with trainable
//! quadratic Bezier paths in parameter space, sweeps those paths for points
//! that stay robust under every considered norm, and orchestrates the staged
//! optimization that grows a small population of such models. Everything is
//! seeded and deterministic: a run is a pure function of its inputs.

pub mod attack;
pub mod ckpt;
pub mod cli;
pub mod curve;
pub mod data;
pub mod error;
pub mod evalkit;
pub mod model;
pub mod numcore;
pub mod pipeline;
pub mod train;

pub use error::{Error, Result};
