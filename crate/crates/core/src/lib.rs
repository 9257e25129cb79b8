//! Semi-decentralized federated learning at desk scale.
//!
//! Devices are split into disjoint connected components. Every round each
//! device takes one stochastic-gradient step and gossips with its neighbours
//! through a doubly stochastic mixing matrix; every `H` rounds a server samples
//! `K` devices, averages their models and sends the aggregate back either to
//! the sampled devices only (S2S) or to every device (S2A).
//!
//! The crate is organised as:
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`topology`] | multi-component graphs, Metropolis–Hastings mixing, projectors, mixing parameter |
//! | [`operators`] | device sampling, S2S/S2A server operators, bias/disagreement errors |
//! | [`objectives`] | quadratic and logistic device objectives with tunable heterogeneity |
//! | [`engine`] | the round loop with trace capture and message accounting |
//! | [`bounds`] | disagreement recursion, per-round bounds, iteration and communication complexity |

pub mod bounds;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod objectives;
pub mod operators;
pub mod params;
pub mod rng;
pub mod topology;

pub use error::{Error, Result};
pub use operators::Primitive;
pub use params::ParamMatrix;
