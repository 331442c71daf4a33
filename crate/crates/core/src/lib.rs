//! Anchor-free cross-view object geo-localization: tensor engine, model,
//! synthetic data, training, and verification oracles.

pub mod boxes;
pub mod cvoam;
pub mod data;
pub mod error;
pub mod gpe;
pub mod head;
pub mod loss;
pub mod model;
pub mod param;
pub mod pixmap;
pub mod tensor;
pub mod train;
pub mod verify;

pub use boxes::{DecodedBox, GtBox};
pub use error::{Error, Result, TensorError};
pub use gpe::ClickPoint;
pub use head::HeadConfig;
pub use model::{Model, ModelConfig};
pub use param::ParamSet;
pub use tensor::{logistic, softplus, Scalar, Tensor};
