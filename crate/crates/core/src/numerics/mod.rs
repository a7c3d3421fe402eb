//! Dense f64 tensors, reverse-mode differentiation, layers and optimizer.

pub mod adamw;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use adamw::{adamw_step, AdamWConfig};
pub use gradcheck::{grad_check, primitive_suite, relative_error, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use layers::{attention_fwd, linear_fwd, softmax_fwd, Attention, Linear, Mlp};
pub use params::{seeded_init, Init, ParamSpec, ParamStore};
pub use tensor::{sigmoid, Tensor};
