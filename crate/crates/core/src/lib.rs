//! Multi-agent clinical consultation engine and benchmark harness.

pub mod agents;
pub mod backend;
pub mod case;
pub mod fsm;
pub mod prompt;
pub mod taxonomy;
pub mod eval;
pub mod harness;
