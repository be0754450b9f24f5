//! Seamless-redundancy simulator for high-reliability Wi-Fi.
//!
//! Frames from a multi-link station are replicated over its affiliated
//! links, relayed between access points in a Y-TAG, and eliminated at the
//! primary AP before reaching the wired network. The reverse path
//! replicates downlink frames the same way.

pub mod channel;
pub mod cli;
pub mod dedup;
pub mod engine;
pub mod frames;
pub mod hr_ap;
pub mod hr_sta;
pub mod metrics;
pub mod sim;
pub mod topology;
pub mod trace;
