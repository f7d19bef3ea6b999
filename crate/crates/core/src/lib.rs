//! Two-stage identification of latent port-Hamiltonian dynamics from
//! partial observations: a contrastive Neural-ODE teacher identifies a
//! latent flow, and a port-Hamiltonian student is fitted to it through a
//! learned affine chart.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod config;
pub mod dynamics;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod odeint;
pub mod par;
pub mod pipeline;
pub mod student;
pub mod teacher;

pub use error::{Error, Result};
