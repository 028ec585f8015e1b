//! Simultaneous process design and control with an explicit neural feedback
//! policy.
//!
//! A Gaussian policy network is pre-trained on PD-controller demonstrations,
//! refined with Reinforce across a family of plant designs, and then embedded
//! as a fixed control law inside the outer design optimization. Two case
//! studies are provided: a buffer tank with a sinusoidal inflow and a jacketed
//! CSTR with an optional settling tank.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod design;
pub mod env;
pub mod error;
pub mod optim;
pub mod pipeline;
pub mod policy_net;
pub mod report;
pub mod rollout;
pub mod training;

pub use error::{Error, Result};
