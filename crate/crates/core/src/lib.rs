//! Broadcast gossip consensus over slotted-Aloha wireless swarms.
//!
//! Nodes are scattered as a Poisson (or binomial) field, talk to neighbors
//! within range `R`, access the medium with probability `p` and average their
//! states pairwise whenever a Rayleigh-faded link clears the SIR threshold.
//! The crate provides the closed-form reliability and access-tuning rules
//! alongside slot-level simulators that check them.

pub mod analysis;
pub mod channel;
pub mod error;
pub mod geometry;
pub mod gossip;
pub mod harness;
pub mod mac;
pub mod rng;

pub use analysis::{ConsensusTimeBounds, ContractionEstimate, ProxyCoefficients};
pub use channel::{ChannelParams, FadingDraw, FarField, SuccessEstimate};
pub use error::{Error, Result};
pub use geometry::{BoundaryMode, Deployment, GeometryStats, Point, Window};
pub use gossip::{GossipState, InitialState, Trajectory};
pub use harness::{SweepConfig, SweepRecord, SweepResult};
pub use mac::{ChannelMode, DecodeOrder, Pair, SlotOutcome};
pub use rng::SimRng;
