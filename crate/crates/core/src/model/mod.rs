//! The surface-reconstruction network: local/global point-set encoders, a
//! rotation subnetwork, a shared decoder, the two losses, and the training
//! loop.

mod checkpoint;
mod config;
mod net;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use config::{EncoderMode, ModelConfig, PatchMode, SubsampleMode};
pub use net::{
    apply_stat_updates, build_pair, forward_batch, init_params, loss_distance, loss_sign,
    predict_pairs, predict_sdf, Bindings, ForwardOut, Prediction, StatUpdate, BN_MOMENTUM,
};
pub use train::{latest_checkpoint, train, EpochStats, TrainConfig, TrainShape};
