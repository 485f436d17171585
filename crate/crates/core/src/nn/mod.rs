//! Minimal tensor library, hand-backpropagated layers, the ResNet-style
//! pulse classifier, and its training loop.

pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use model::{decode_model, encode_model, load_model, save_model, Model, ModelConfig, Variant};
pub use tensor::Tensor;
pub use train::{class_weights, predict_proba, softmax_cross_entropy, train, TrainConfig};
