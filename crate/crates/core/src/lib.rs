//! Shuffle-aware token discrimination (SHAD) and reasoning-highlighted
//! fine-tuning (RFT) on a miniature causal language model.
//!
//! The pipeline: [`corpus`] generates agent trajectories with role labels,
//! [`lm`] trains a small transformer, [`shad`] tunes a copy on output-shuffled
//! data and labels tokens by loss difference, [`rft`] re-weights the training
//! objective by token group, and [`report`] scores the results.

pub mod corpus;
pub mod fmt;
pub mod lm;
pub mod report;
pub mod rft;
pub mod rng;
pub mod shad;
