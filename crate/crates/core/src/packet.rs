//! Application units shared by the sender, the Internet segment and the
//! base-station buffers.

use serde::{Deserialize, Serialize};

/// Identifies a video flow (or a cross-traffic generator) end to end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowId(pub u32);

/// One packet of a video frame (or of cross traffic, where `frame_id` is 0).
///
/// Timestamps are subframe indices. `delivered_at` is the end of the
/// subframe in which the last byte left the base station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub flow_id: FlowId,
    pub frame_id: u64,
    pub seq: u64,
    pub size: u32,
    pub sent_at: u64,
    pub arrived_bs_at: u64,
    pub delivered_at: Option<u64>,
}

impl Packet {
    pub fn new(flow_id: FlowId, frame_id: u64, seq: u64, size: u32, sent_at: u64) -> Self {
        Self {
            flow_id,
            frame_id,
            seq,
            size,
            sent_at,
            arrived_bs_at: sent_at,
            delivered_at: None,
        }
    }

    /// One-way network latency in milliseconds, once delivered.
    pub fn latency_ms(&self) -> Option<u64> {
        self.delivered_at.map(|d| d - self.sent_at)
    }
}
