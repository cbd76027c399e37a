//! Compiler pass-ordering as a Markov decision process over a miniature
//! tensor-graph IR, with deep RL agents and a benchmark harness.

pub mod agents;
pub mod bench;
pub mod config;
pub mod env;
pub mod graph;
pub mod nn;
pub mod passes;
