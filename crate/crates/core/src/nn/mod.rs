//! Siamese pair classifier: pooled token encoder, matching feature, two-layer
//! MLP head and a 3-way softmax, with hand-written reverse-mode gradients and
//! the step-decay SGD trainer.

mod model;
mod params;
mod train;

pub use model::{encode, forward, Workspace};
pub use params::{
    Activation, EncoderParams, Gradients, HeadParams, Linear, Model, ModelArch, Pooling,
};
pub use train::{
    clip_gradients, evaluate_accuracy, train, EpochRecord, LrSchedule, RunStatus, TrainConfig,
    TrainRecord,
};
