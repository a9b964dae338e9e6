//! Support code for the `aloha-gossip` binary.

pub mod output;
pub mod settings;
