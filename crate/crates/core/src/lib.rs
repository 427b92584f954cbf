//! Neural-network-guided particle swarm optimization (NNGPSO) for tracking a
//! moving global optimum in a drifting landscape of 2-D Gaussian peaks.
//!
//! The crate is organised bottom-up:
//!
//! - [`env`]: the dynamic Gaussian-peak landscape and its evolution.
//! - [`pso`]: canonical PSO, used as a baseline tracker and as the
//!   static-landscape oracle that locates the true optimum.
//! - [`mlp`]: a small fully connected network trained with AdaGrad.
//! - [`swarm`]: the NNGPSO particle model and the centralized (CNNPSO) and
//!   distributed (DNNPSO) swarm updates.
//! - [`pretrain`]: offline pre-training against oracle labels.
//! - [`metrics`]: tracking error and its aggregation.
//! - [`bench`]: experiment plans, persistence, and reporting.

pub mod bench;
pub mod env;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod mlp;
pub mod pretrain;
pub mod pso;
pub mod seed;
pub mod swarm;

pub use error::{Error, Result};
pub use geometry::Vec2;
