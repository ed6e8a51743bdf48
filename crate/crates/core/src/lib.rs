//! Graph continual-learning engine.
//!
//! Builds class-incremental session plans over text-attributed graphs,
//! trains GCN/MLP baselines (plain fine-tuning, EWC, LwF) with a
//! from-scratch numerical core, runs the prototype-classifier family and
//! task-prototype routing, emits ego-graph instruction data for external
//! tuning, and scores everything with local and global testing.

pub mod config;
pub mod embed;
pub mod error;
pub mod eval;
pub mod exec;
pub mod graph;
pub mod numerics;
pub mod prompt;
pub mod proto;
pub mod rng;
pub mod runner;
pub mod session;
pub mod testkit;
pub mod trainers;

pub use error::{Error, Result};
pub use exec::Exec;
