//! Multi-machine power system: data, network and dynamic model.

pub mod data;
pub mod network;
pub mod synthetic;
pub mod system;

pub use data::{load_system, wscc9, SystemData};
pub use synthetic::ring_system;
pub use network::{solve_power_flow, PowerFlowSolution};
pub use system::{NetCondition, ReducedNetwork, SystemModel};
