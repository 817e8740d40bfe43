#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Curriculum planning for rationale distillation: learned token
//! significance weights, step difficulty, and a stage-by-stage schedule that
//! releases rationale steps from easy to hard under a difficulty budget.

pub mod config;
pub mod corpus;
pub mod difficulty;
pub mod error;
pub mod io;
pub mod loss_shaping;
pub mod numeric;
pub mod pipeline;
pub mod schedule;
pub mod selection;
pub mod synthetic;
pub mod weighting;

pub use error::{Error, Result};
