//! A small dense ReLU network with hand-written backpropagation, trained by
//! minibatch SGD with optional per-layer spectral or stable rank
//! normalization, plus the synthetic data it is exercised on.

mod data;
mod model;
mod train;

pub use data::{load_csv, make_blobs, parse_csv, Dataset};
pub use model::{
    argmax, cross_entropy, softmax, Activation, ForwardCache, Gradients, Layer, MarginGradients,
    MlpModel,
};
pub use train::{train, EpochRecord, LayerStats, NormMode, TrainConfig, TrainTrace};
