//! Training loops: AugMix with JSD consistency, TV regularization,
//! frequency-biased fine-tuning and BN-statistics adaptation.

mod adapt;
mod config;
mod jsd;
mod sgd;
mod trainer;

pub use adapt::adapt_bn;
pub use config::{ops_from_text, ops_to_text, TrainConfig};
pub use jsd::{jsd_consistency, PROB_FLOOR};
pub use sgd::{sgd_step, Velocity};
pub use trainer::{
    base_tv, finetune, resolve_tap, train, train_model, Bias, EpochLog, FinetuneSpec, TrainLog, TrainOutcome,
};
