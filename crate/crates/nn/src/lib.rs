//! Small dense-tensor neural network engine with exact reverse-mode
//! gradients, RMSProp, soft target updates and binary checkpoints.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod network;
pub mod optim;
pub mod spec;
pub mod tensor;

pub use error::{NnError, Result};
pub use network::{instrumentation, soft_update, ForwardCache, Network};
pub use optim::RmsProp;
pub use spec::{Activation, LayerSpec, NetworkSpec};
pub use tensor::Tensor;
