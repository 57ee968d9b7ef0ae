//! Dual-head attention scorer over candidate `(variable, value)` pairs.

mod checkpoint;
mod loss;
mod network;
mod tensor;
mod train;

pub use checkpoint::{
    checkpoint_from_str, checkpoint_to_string, load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
};
pub use loss::{
    loss_opt, loss_opt_grad_logits, loss_rank, loss_rank_grad, masked_softmax, PROB_CLAMP,
};
pub use network::{
    backward, build_tokens, forward, forward_with_cache, AttentionLayer, Cache, EncoderBlock, Head,
    Hyper, Linear, Output, ScorerNetwork, Tokens, STATUS_OBSERVED, STATUS_UNOBSERVED,
};
pub use tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};
pub use train::{
    grad_check, grad_check_tensors, instances, loss_and_grad, loss_total, mean_loss, opt_accuracy,
    train, train_step, Adam, EpochStats, Instance, TrainConfig, TrainReport,
};
