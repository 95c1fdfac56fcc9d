use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::wire::{WireMessage, HEADER_BYTES};

use super::config::ChannelModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    ReferencePoints,
    Queries,
}

/// Ledger entry for one transmitted payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransmissionRecord {
    pub frame_index: u64,
    pub agent_id: u32,
    pub kind: PayloadKind,
    pub count: usize,
    pub flags: u8,
    pub embed_dim: u16,
    pub header_bytes: u64,
    pub body_bytes: u64,
    /// `None` when the channel dropped the payload.
    pub delivered_at: Option<u64>,
}

impl TransmissionRecord {
    pub fn total_bytes(&self) -> u64 {
        self.header_bytes + self.body_bytes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InFlight {
    pub agent_id: u32,
    pub send_frame: u64,
    pub deliver_frame: u64,
    pub kind: PayloadKind,
    pub bytes: Vec<u8>,
}

/// Bernoulli drops and a fixed delay. Dropped payloads still count as sent.
#[derive(Debug, Clone)]
pub struct Channel {
    pub model: ChannelModel,
    queue: Vec<InFlight>,
    ledger: Vec<TransmissionRecord>,
}

impl Channel {
    pub fn new(model: ChannelModel) -> Self {
        Self {
            model,
            queue: Vec::new(),
            ledger: Vec::new(),
        }
    }

    /// Sends `bytes`, the encoding of `msg`. Returns whether it will arrive.
    pub fn send<R: Rng>(
        &mut self,
        frame_index: u64,
        kind: PayloadKind,
        msg: &WireMessage,
        bytes: Vec<u8>,
        rng: &mut R,
    ) -> bool {
        let u: f64 = rng.random();
        let delivered = u >= self.model.drop_probability;
        let deliver_frame = frame_index + u64::from(self.model.latency_frames);
        self.ledger.push(TransmissionRecord {
            frame_index,
            agent_id: msg.header.agent_id,
            kind,
            count: msg.records.len(),
            flags: msg.header.flags.into(),
            embed_dim: msg.header.embed_dim,
            header_bytes: HEADER_BYTES as u64,
            body_bytes: (bytes.len() - HEADER_BYTES) as u64,
            delivered_at: delivered.then_some(deliver_frame),
        });
        if delivered {
            self.queue.push(InFlight {
                agent_id: msg.header.agent_id,
                send_frame: frame_index,
                deliver_frame,
                kind,
                bytes,
            });
        }
        delivered
    }

    /// Removes and returns everything due by `frame_index`, ordered by sender,
    /// send frame and kind.
    pub fn deliver(&mut self, frame_index: u64) -> Vec<InFlight> {
        let (mut due, rest): (Vec<_>, Vec<_>) = self.queue.drain(..).partition(|m| m.deliver_frame <= frame_index);
        self.queue = rest;
        due.sort_by_key(|m| (m.agent_id, m.send_frame, m.kind));
        due
    }

    pub fn ledger(&self) -> &[TransmissionRecord] {
        &self.ledger
    }

    pub fn into_ledger(self) -> Vec<TransmissionRecord> {
        self.ledger
    }
}
