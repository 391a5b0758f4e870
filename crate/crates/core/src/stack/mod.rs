//! Multi-level architecture: per level an encoder, decoder, label classifier
//! and adversary; levels are chained so each encoder reads the previous code.

mod level;
mod spec;
mod trained;

pub use level::{
    adversary_rows, build, level_loss, record_adversary_loss, record_level, AdversaryOptions, BceForm, Level,
    LevelBatch, LevelGraph, LevelLoss, Trainable,
};
pub use spec::{Criterion, LevelSpec, LossWeights, ReconstructionLoss, StackSpec, HEAD_HIDDEN};
pub use trained::{encode, Provenance, TrainedStack, FORMAT_VERSION, MAGIC};
