//! Adaptive reduced-order transient-stability simulation.
//!
//! The external area of a multi-machine power system is replaced by a
//! third-order Taylor expansion whose higher-order coefficient tensors are
//! compressed with CP decomposition; a switching policy moves between the
//! full, hybrid and reduced models during a contingency.

pub mod cli;
pub mod cp;
pub mod dynamics;
pub mod error;
pub mod power;
pub mod sim;
pub mod study;
pub mod taylor;
pub mod tensor;

pub use error::{Error, Result};
