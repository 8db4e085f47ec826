//! Recurrent state-space world model: encoder, GRU dynamics with a Gaussian
//! prior, decoder; trained by backpropagation through time.

mod model;
mod net;
mod params;
mod train;

pub use model::{
    decode, decode_rollout, downsample, encode_init, encode_step, imagine, LatentRollout,
    LatentState, Sampling, DOWNSAMPLE_STRIDE,
};
pub use params::{
    Layout, LossWeights, Normalizer, Tensor, TrainMeta, WorldModelDims, WorldModelParams,
    LOGSTD_MAX, LOGSTD_MIN, STD_FLOOR,
};
pub use train::{
    dataset_hash, fit_normalizer, holdout_reconstruction, loss_and_grad, loss_terms,
    make_sequence, one_step_mse, open_loop_mse, prior_posterior_gap, surrogate_loss, train_world_model,
    EvalPoint, LossTerms, LrSchedule, MomentumSgd, Sequence, TrainConfig, TrainOutcome,
};
