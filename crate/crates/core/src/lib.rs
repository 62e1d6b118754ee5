//! Sentence-directed video object codetection.

pub mod model;
pub mod predicates;
pub mod semparse;
pub mod proposals;
pub mod rng;
pub mod similarity;
pub mod inference;
pub mod metrics;
pub mod pipeline;
pub mod synth;
