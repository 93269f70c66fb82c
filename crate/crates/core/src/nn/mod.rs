//! Minimal deterministic layer engine: tensors, layers with analytic
//! backward passes, parameter storage, optimizers and gradient checking.

pub mod gradcheck;
pub mod layer;
pub mod ops;
pub mod optim;
pub mod params;
pub mod sequential;
pub mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use layer::{Cache, ConvSpec, Layer, LayerSpec};
pub use optim::{Algorithm, Optimizer};
pub use params::{EntryKind, Gradients, Mode, ParamId, ParamStore};
pub use sequential::{Sequential, Tape};
pub use tensor::Tensor;
