//! Deterministic in-process network of badge ledger replicas.
//!
//! Nodes exchange events, blocks and chains over FIFO links, resolve forks
//! by accumulated work, and can be partitioned, crashed or turned byzantine.
//! All randomness comes from the seed, so a script always ends in the same
//! state.

pub mod network;
pub mod script;

use medalchain_core::ledger::{ChainError, MineError};

pub use network::{fork_choice, Byzantine, NetMessage, NetStats, Network, NodeReport, SimNode, BATCH_SIZE};
pub use script::{random_scenario, run_script, Instruction, ScenarioShape, Script};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("node {0:?} already exists")]
    DuplicateNode(String),
    #[error("node id {0:?} must be non-empty ASCII letters, digits, '-' or '_'")]
    BadNodeId(String),
    #[error("node {0:?} is offline")]
    NodeOffline(String),
    #[error("bad partition: {0}")]
    BadPartition(String),
    #[error("no candidate chain is valid")]
    NoValidCandidate,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("network did not settle after {0} deliveries")]
    Unsettled(usize),
    #[error(transparent)]
    Mine(#[from] MineError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}
