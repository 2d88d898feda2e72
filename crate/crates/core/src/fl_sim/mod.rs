//! Federated-learning simulation: data, model, local training and the round loop.

mod data;
mod mlp;
mod partition;
mod sim;
mod training;

pub use data::{
    load_idx_pair, load_mnist, parse_idx_images, parse_idx_labels, Dataset, MNIST_TEST_IMAGES, MNIST_TEST_LABELS,
    MNIST_TRAIN_IMAGES, MNIST_TRAIN_LABELS,
};
pub use mlp::Mlp;
pub use partition::{partition_dataset, DevicePartition};
pub use sim::{
    BlockLayout, CapacitySpec, CompressionMode, ProjectionMode, QuantizerMode, RatioPolicy, RoundDiagnostics,
    RoundMetrics, RoundOutput, SelectionRecord, SimConfig, Simulation, Workload,
};
pub use training::{global_update, local_update, GlobalOptimizer, OptimizerState};
