//! Third-order Taylor expansion of the dynamics with CP-compressed
//! coefficient tensors.

pub mod derivatives;
pub mod hybrid;
pub mod model;

pub use derivatives::{jacobian, taylor_tensor, RAW_TENSOR_LIMIT};
pub use hybrid::{build_model, build_model_set, select_boundary_generators, HybridModel};
pub use model::{compress, reduced_rhs, ModelSet, Ranks, TaylorModel, TaylorRows};
