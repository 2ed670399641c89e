//! Small conditional velocity network, its optimizer and the flow-matching
//! objective.

pub mod checkpoint;
pub mod flow_matching;
pub mod mlp;
pub mod nets;
pub mod optim;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use flow_matching::{
    continue_flow_matching, flow_matching_loss, sample_fm_batch, train_flow_matching, FmBatch, PretrainConfig,
    TrainOutput,
};
pub use mlp::{Activation, Batch, MlpShape};
pub use nets::{DiscParams, Grads, NetParams, Parameterized};
pub use optim::{optimizer_step, AdamConfig, OptimizerState};
