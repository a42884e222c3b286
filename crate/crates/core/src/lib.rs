//! Seizure prediction from multichannel EEG with spatio-temporal attention
//! and an adversarially trained discriminator.

pub mod adversary;
pub mod cli;
pub mod eval;
pub mod ingest;
pub mod numerics;
pub mod stan;
pub mod synth;
