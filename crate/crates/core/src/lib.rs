//! RNN-ODE classifiers whose softmax readout evolves as a replicator system.
//!
//! A one-to-many recurrent network `a⁰ = φⁱⁿ(x)`, `aᵗ⁺¹ = ξ(aᵗ)`,
//! `yᵗ = softmax(W_y aᵗ + b_y)` is read as the Euler discretization of
//! `ȧ = (ξ(a) − a) / τ`. Along that flow the readout `y(t)` satisfies the
//! replicator equation with payoff `W_y ȧ`. This crate builds, trains and
//! integrates such networks and checks that correspondence numerically.

pub mod cli;
pub mod config;
pub mod datasets;
pub mod error;
pub mod linalg;
pub mod network;
pub mod odeflow;
pub mod plot;
pub mod replicator;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
