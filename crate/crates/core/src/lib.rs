//! Counterfactual persuasion laboratory.
//!
//! The crate covers the whole offline pipeline: a dialogue corpus model,
//! per-role strategy classification, personality (OCEAN) regression,
//! permutation-based causal discovery over strategies, retrieval of
//! counterfactual persuader utterances, two counterfactual next-state engines
//! (residual abduction and kernel quantile matching), a donation reward model,
//! and offline dueling double Q-learning over counterfactual databases. A
//! synthetic world with exact oracles backs the test suites.

pub mod error;
pub mod rng;

pub mod numcore;

pub mod cfengine;
pub mod corpus;
pub mod grasp;
pub mod personality;
pub mod pipeline;
pub mod policy;
pub mod retrieval;
pub mod reward;
pub mod strategy;
pub mod synthworld;

pub use corpus::{Corpus, Dialogue, OceanVector, Role, Transition, Turn, TurnSource};
pub use error::{Error, ErrorKind, Result};
pub use strategy::{StrategyClassifier, StrategyVocab};
