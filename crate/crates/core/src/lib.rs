//! Core of the badge ledger node.

pub mod canonical;
pub mod certification;
pub mod contracts;
pub mod hash;
pub mod identity;
pub mod ledger;
pub mod merkle;
pub mod node;
pub mod registry;
pub mod rsa_blind;
pub mod vote;

pub use hash::Hash32;
