//! Storage dispatch for radial distribution networks: a soft actor-critic
//! policy whose commands are screened by a learned voltage surrogate and
//! replaced by a conic single-period dispatch when flagged unsafe.
//!
//! The power-flow and neural-network layers are generic over [`Scalar`]
//! (`f32`/`f64`); the aliases below fix them to `f64`, which the rest of
//! the crate uses.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assets;
pub mod dispatch;
pub mod env;
pub mod error;
pub mod grid;
pub mod guard;
pub mod harness;
pub mod nn;
pub mod sac;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Network = grid::NetworkModel<f64>;
pub type Solver = grid::AcpfSolver<f64>;
pub type Injections = grid::InjectionVector<f64>;
pub type Voltages = grid::VoltageSolution<f64>;
pub type Limits = grid::VoltageLimits<f64>;
pub type Mlp = nn::MlpParams<f64>;
pub type Adam = nn::AdamState<f64>;
