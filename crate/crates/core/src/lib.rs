//! URoadNet: a U-Net whose skip connections pass through a dual sparse
//! attention embedding, one pathway following road connectivity along
//! learned deformable chains and one modelling road integrality across scales
//! by channel-axis attention.
//!
//! Everything numeric is generic over [`Scalar`]; the aliases below fix the
//! two precisions in use. Training and inference run in `f32`, gradient
//! verification in `f64`.

pub mod autograd;
pub mod backbone;
pub mod checkpoint;
pub mod connectivity;
pub mod data;
pub mod dual_sa;
pub mod error;
pub mod geom;
pub mod integrality;
pub mod maps;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use model::{ModelConfig, UroadNet};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ParamStore32 = nn::ParamStore<f32>;
pub type ParamStore64 = nn::ParamStore<f64>;
pub type TrainState32 = train::TrainState<f32>;
