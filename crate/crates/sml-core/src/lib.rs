//! Social machine learning over a network of independently trained
//! classifiers.
//!
//! Each agent trains a private feedforward classifier, then the network
//! fuses the agents' debiased logit statistics over space (a left-stochastic
//! combination matrix) and time (an adaptive diffusion recursion) to decide
//! between two states of nature from unlabeled streaming observations.
//! The crate also evaluates the associated consistency condition, the
//! feedforward Rademacher complexity bound, and the probability bound for
//! consistent learning, and ships an experiment runner that reproduces the
//! networked-MNIST scenario end to end.

pub mod bounds;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod net;
pub mod seed;

pub use error::{Result, SmlError};
