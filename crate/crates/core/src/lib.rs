//! Contrastive image-report representation learning with a relaxed
//! positive-pair similarity and random sentence sampling, at desk scale.

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod metrics;
pub mod optim;
pub mod relaxed_loss;
pub mod trainer;
pub mod zero_shot;
