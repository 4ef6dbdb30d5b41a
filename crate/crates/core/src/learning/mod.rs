//! Trainable fully convolutional extractor and the DSR verification signal.

mod checkpoint;
mod fcn;
mod loss;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use fcn::{
    fcn_backward, fcn_forward, fcn_forward_traced, ConvParams, Fcn, FcnConfig, FcnParams,
    ForwardTrace, LayerSpec, KERNEL,
};
pub use loss::{
    loss_gradients, reconstruction_residual, residual_energy, verification_loss, PairLabel,
};
pub use train::{
    alternating_train_batch, alternating_train_step, fine_tune, pretrain_identification,
    FineTuneOptions, LabeledImage, PretrainOptions, PretrainReport, StepReport, TrainState,
    VerificationPair,
};
