//! Deterministic constraint kernel for multi-agent pipelines.

pub mod agents;
pub mod assets;
pub mod converge;
pub mod expr;
pub mod facts;
pub mod harness;
pub mod lab;
pub mod paradox;
pub mod rad;
pub mod uai;

pub use facts::{FactMap, Value};
