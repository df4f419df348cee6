//! Tagging topologies, training and trained-model artifacts.
//!
//! Every topology shares the same pieces: a token embedding, a stack of
//! BiLSTM layers and one CRF head per task. They differ in which layer each
//! head reads, whether decoded lower-task tags are fed back into higher
//! layers (cascade), whether layer inputs are added to layer outputs
//! (residual), and which loss each training step optimizes.

mod config;
mod network;
mod train;
mod trained;

pub use config::{CascadeTopology, ModelConfig, Topology};
pub use network::{BatchLabels, CascadeLink, Forward, Mode, TaggingModel};
pub use train::{steps_per_epoch, train, TaskSampler, TraceRecord, TrainObserver, TrainSummary};
pub use trained::{Prediction, Predictor, TrainedModel};
