//! Binary payload for reference-point and query exchange, plus the payload
//! and bandwidth arithmetic built on it.
//!
//! Layout (all integers and reals little-endian, reals are IEEE-754 `f32`):
//!
//! ```text
//! offset size field
//!      0    4 magic "RPF1"
//!      4    1 version (1)
//!      5    1 flags: bit0 velocity, bit1 size, bit2 confidence, bit3 semantics,
//!               bits 4..7 reserved (zero)
//!      6    4 agent_id
//!     10    8 frame_index
//!     18    8 timestamp (microseconds)
//!     26    2 record count
//!     28    2 embed_dim (zero unless semantics)
//!     30    2 reserved (zero)
//!     32      records
//! ```
//!
//! Each record is `position[3]`, then `velocity[2]`, `size[3]`, `confidence`
//! and `semantics[embed_dim]` when the matching flag is set, for a width of
//! `12 + 8·v + 12·s + 4·c + 4·d·sem` bytes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, Size3, Velocity2};
use crate::query::Query;
use crate::refpts::{AgentFrame, CoordinateFrame, ReferencePoint};

pub const MAGIC: [u8; 4] = *b"RPF1";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 32;
pub const MAX_RECORDS: usize = u16::MAX as usize;
/// Bytes per KB in every reported figure.
pub const BYTES_PER_KB: f64 = 1024.0;

const F32: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated message: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("reserved flag bits set: {0:#010b}")]
    ReservedBits(u8),
    #[error("reserved header bytes are non-zero")]
    ReservedHeaderBytes,
    #[error("{0} trailing bytes after last record")]
    TrailingBytes(usize),
    #[error("embed_dim {0} given without the semantics flag")]
    EmbedDimWithoutSemantics(u16),
    #[error("semantics flag set with embed_dim 0")]
    ZeroEmbedDim,
    #[error("record {record}: {field} presence disagrees with the flags")]
    InconsistentAttributes { record: usize, field: &'static str },
    #[error("record {record}: semantic vector has {found} values, header says {expected}")]
    SemanticsDimension { record: usize, expected: usize, found: usize },
    #[error("{0} records exceed the 16-bit count field")]
    CountOverflow(usize),
    #[error("embedding dimension {0} exceeds the 16-bit field")]
    EmbedDimOverflow(usize),
    #[error("record {0}: size is not strictly positive")]
    InvalidSize(usize),
    #[error("frame payloads cannot carry semantics; use the query payload")]
    SemanticsOnFrame,
    #[error("message carries no semantics; it is not a query payload")]
    NotAQueryPayload,
}

/// Attribute-presence bits of a payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PayloadFlags(u8);

impl PayloadFlags {
    pub const VELOCITY: u8 = 1 << 0;
    pub const SIZE: u8 = 1 << 1;
    pub const CONFIDENCE: u8 = 1 << 2;
    pub const SEMANTICS: u8 = 1 << 3;
    pub const RESERVED_MASK: u8 = 0xF0;

    pub const POSITION_ONLY: PayloadFlags = PayloadFlags(0);

    pub const fn new(velocity: bool, size: bool, confidence: bool, semantics: bool) -> Self {
        PayloadFlags(
            ((velocity as u8) * Self::VELOCITY)
                | ((size as u8) * Self::SIZE)
                | ((confidence as u8) * Self::CONFIDENCE)
                | ((semantics as u8) * Self::SEMANTICS),
        )
    }

    pub fn from_bits(bits: u8) -> Result<Self, WireError> {
        if bits & Self::RESERVED_MASK != 0 {
            return Err(WireError::ReservedBits(bits));
        }
        Ok(PayloadFlags(bits))
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub const fn has_velocity(self) -> bool {
        self.0 & Self::VELOCITY != 0
    }

    pub const fn has_size(self) -> bool {
        self.0 & Self::SIZE != 0
    }

    pub const fn has_confidence(self) -> bool {
        self.0 & Self::CONFIDENCE != 0
    }

    pub const fn has_semantics(self) -> bool {
        self.0 & Self::SEMANTICS != 0
    }

    pub const fn with_confidence(self, on: bool) -> Self {
        if on {
            PayloadFlags(self.0 | Self::CONFIDENCE)
        } else {
            PayloadFlags(self.0 & !Self::CONFIDENCE)
        }
    }

    /// All sixteen valid flag values.
    pub fn all() -> impl Iterator<Item = PayloadFlags> {
        (0u8..16).map(PayloadFlags)
    }
}

impl TryFrom<u8> for PayloadFlags {
    type Error = WireError;

    fn try_from(bits: u8) -> Result<Self, Self::Error> {
        PayloadFlags::from_bits(bits)
    }
}

impl From<PayloadFlags> for u8 {
    fn from(f: PayloadFlags) -> u8 {
        f.0
    }
}

/// Geometric attribute sets a sender may transmit: position, plus velocity
/// and/or size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attrs {
    #[default]
    P,
    Pv,
    Ps,
    Pvs,
}

impl Attrs {
    pub const ALL: [Attrs; 4] = [Attrs::P, Attrs::Pv, Attrs::Ps, Attrs::Pvs];

    pub fn flags(self) -> PayloadFlags {
        match self {
            Attrs::P => PayloadFlags::new(false, false, false, false),
            Attrs::Pv => PayloadFlags::new(true, false, false, false),
            Attrs::Ps => PayloadFlags::new(false, true, false, false),
            Attrs::Pvs => PayloadFlags::new(true, true, false, false),
        }
    }

    pub fn has_velocity(self) -> bool {
        self.flags().has_velocity()
    }

    pub fn has_size(self) -> bool {
        self.flags().has_size()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Attrs::P => "p",
            Attrs::Pv => "pv",
            Attrs::Ps => "ps",
            Attrs::Pvs => "pvs",
        }
    }
}

impl std::str::FromStr for Attrs {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "p" => Ok(Attrs::P),
            "pv" => Ok(Attrs::Pv),
            "ps" => Ok(Attrs::Ps),
            "pvs" => Ok(Attrs::Pvs),
            other => Err(format!("unknown attribute set {other:?}, expected p, pv, ps or pvs")),
        }
    }
}

impl std::fmt::Display for Attrs {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireHeader {
    pub version: u8,
    pub flags: PayloadFlags,
    pub agent_id: u32,
    pub frame_index: u64,
    pub timestamp_us: u64,
    pub embed_dim: u16,
}

impl WireHeader {
    pub fn new(flags: PayloadFlags, agent_id: u32, frame_index: u64, timestamp_us: u64) -> Self {
        Self {
            version: VERSION,
            flags,
            agent_id,
            frame_index,
            timestamp_us,
            embed_dim: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WireRecord {
    pub position: [f32; 3],
    pub velocity: Option<[f32; 2]>,
    pub size: Option<[f32; 3]>,
    pub confidence: Option<f32>,
    pub semantics: Option<Vec<f32>>,
}

impl WireRecord {
    fn bits(&self) -> Vec<u32> {
        let mut out: Vec<u32> = self.position.iter().map(|v| v.to_bits()).collect();
        out.extend(self.velocity.iter().flatten().map(|v| v.to_bits()));
        out.extend(self.size.iter().flatten().map(|v| v.to_bits()));
        out.extend(self.confidence.iter().map(|v| v.to_bits()));
        out.extend(self.semantics.iter().flatten().map(|v| v.to_bits()));
        out
    }
}

/// A decoded or to-be-encoded payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub header: WireHeader,
    pub records: Vec<WireRecord>,
}

impl WireMessage {
    /// Equality on the exact bit patterns of every real.
    pub fn bit_eq(&self, other: &WireMessage) -> bool {
        self.header == other.header
            && self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.bits() == b.bits()
                    && a.velocity.is_some() == b.velocity.is_some()
                    && a.size.is_some() == b.size.is_some()
                    && a.confidence.is_some() == b.confidence.is_some()
                    && a.semantics.as_ref().map(Vec::len) == b.semantics.as_ref().map(Vec::len)
            })
    }

    /// Packs a reference-point frame. Attributes not selected by `flags` are
    /// dropped; a selected attribute missing on any point is an error.
    /// Instance ids and class labels are not transmitted.
    pub fn from_frame(frame: &AgentFrame, flags: PayloadFlags) -> Result<Self, WireError> {
        if flags.has_semantics() {
            return Err(WireError::SemanticsOnFrame);
        }
        if frame.points.len() > MAX_RECORDS {
            return Err(WireError::CountOverflow(frame.points.len()));
        }
        let records = frame
            .points
            .iter()
            .enumerate()
            .map(|(record, p)| {
                let velocity = if flags.has_velocity() {
                    let v = p.velocity.ok_or(WireError::InconsistentAttributes {
                        record,
                        field: "velocity",
                    })?;
                    Some([v.vx as f32, v.vy as f32])
                } else {
                    None
                };
                let size = if flags.has_size() {
                    let s = p.size.ok_or(WireError::InconsistentAttributes { record, field: "size" })?;
                    Some([s.length() as f32, s.width() as f32, s.height() as f32])
                } else {
                    None
                };
                Ok(WireRecord {
                    position: [p.position.x as f32, p.position.y as f32, p.position.z as f32],
                    velocity,
                    size,
                    confidence: flags.has_confidence().then_some(p.confidence as f32),
                    semantics: None,
                })
            })
            .collect::<Result<Vec<_>, WireError>>()?;
        Ok(WireMessage {
            header: WireHeader::new(flags, frame.agent_id, frame.frame_index, seconds_to_us(frame.timestamp)),
            records,
        })
    }

    /// Unpacks into a frame in the sender's local coordinates. Instance ids
    /// are record indices; points without a transmitted confidence get 1.0.
    pub fn to_frame(&self) -> Result<AgentFrame, WireError> {
        let points = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let size = match r.size {
                    Some([l, w, h]) => {
                        Some(Size3::new(l as f64, w as f64, h as f64).map_err(|_| WireError::InvalidSize(i))?)
                    }
                    None => None,
                };
                Ok(ReferencePoint {
                    position: Point3::new(r.position[0] as f64, r.position[1] as f64, r.position[2] as f64),
                    velocity: r.velocity.map(|[vx, vy]| Velocity2::new(vx as f64, vy as f64)),
                    size,
                    confidence: r.confidence.map_or(1.0, |c| c as f64),
                    class_label: 0,
                    instance_id: i as u64,
                    origin: Default::default(),
                })
            })
            .collect::<Result<Vec<_>, WireError>>()?;
        Ok(AgentFrame {
            agent_id: self.header.agent_id,
            frame_index: self.header.frame_index,
            timestamp: self.header.timestamp_us as f64 * 1e-6,
            points,
            to_ego: None,
            coordinates: CoordinateFrame::AgentLocal,
        })
    }

    /// Packs selected queries: reference point, optional confidence and the
    /// semantic embedding. Positional embeddings stay on the sender.
    pub fn from_queries(
        agent_id: u32,
        frame_index: u64,
        timestamp: f64,
        queries: &[Query],
        with_confidence: bool,
    ) -> Result<Self, WireError> {
        if queries.len() > MAX_RECORDS {
            return Err(WireError::CountOverflow(queries.len()));
        }
        let dim = queries.first().map_or(0, Query::dim);
        let embed_dim = u16::try_from(dim).map_err(|_| WireError::EmbedDimOverflow(dim))?;
        let flags = PayloadFlags::new(false, false, with_confidence, true);
        let records = queries
            .iter()
            .enumerate()
            .map(|(record, q)| {
                if q.dim() != dim || dim == 0 {
                    return Err(WireError::SemanticsDimension {
                        record,
                        expected: dim,
                        found: q.dim(),
                    });
                }
                let p = q.reference_point;
                Ok(WireRecord {
                    position: [p.x as f32, p.y as f32, p.z as f32],
                    velocity: None,
                    size: None,
                    confidence: with_confidence.then_some(q.confidence as f32),
                    semantics: Some(q.sem_embed.clone()),
                })
            })
            .collect::<Result<Vec<_>, WireError>>()?;
        let mut header = WireHeader::new(flags, agent_id, frame_index, seconds_to_us(timestamp));
        header.embed_dim = embed_dim;
        Ok(WireMessage { header, records })
    }

    /// Unpacks a query payload. Positional embeddings are not transmitted and
    /// come back as zeros of the semantic dimension.
    pub fn to_queries(&self) -> Result<Vec<Query>, WireError> {
        if !self.header.flags.has_semantics() {
            return Err(WireError::NotAQueryPayload);
        }
        Ok(self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let sem = r.semantics.clone().unwrap_or_default();
                Query {
                    pos_embed: vec![0.0; sem.len()],
                    sem_embed: sem,
                    confidence: r.confidence.map_or(1.0, |c| c as f64),
                    reference_point: Point3::new(r.position[0] as f64, r.position[1] as f64, r.position[2] as f64),
                    instance_id: i as u64,
                }
            })
            .collect())
    }
}

fn seconds_to_us(t: f64) -> u64 {
    if t.is_finite() && t > 0.0 {
        (t * 1e6).round() as u64
    } else {
        0
    }
}

/// Bytes per record for a flag set.
pub fn record_width(flags: PayloadFlags, embed_dim: usize) -> usize {
    3 * F32
        + if flags.has_velocity() { 2 * F32 } else { 0 }
        + if flags.has_size() { 3 * F32 } else { 0 }
        + if flags.has_confidence() { F32 } else { 0 }
        + if flags.has_semantics() { embed_dim * F32 } else { 0 }
}

/// Size of an encoded message, split into the fixed header and the record
/// body. Reported per-frame payload figures use the body alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadBytes {
    pub header: u64,
    pub body: u64,
}

impl PayloadBytes {
    pub fn total(&self) -> u64 {
        self.header + self.body
    }
}

pub fn payload_bytes(count: usize, flags: PayloadFlags, embed_dim: usize) -> PayloadBytes {
    PayloadBytes {
        header: HEADER_BYTES as u64,
        body: (count * record_width(flags, embed_dim)) as u64,
    }
}

/// Bytes per second at a given frame rate.
pub fn bandwidth_at_fps(bytes_per_frame: u64, fps: f64) -> f64 {
    bytes_per_frame as f64 * fps
}

pub fn to_kb(bytes: f64) -> f64 {
    bytes / BYTES_PER_KB
}

/// Dense BEV feature map shared by feature-level fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BevFeatureBaseline {
    pub grid_width: u64,
    pub grid_height: u64,
    pub channels: u64,
    pub bytes_per_value: u64,
}

impl BevFeatureBaseline {
    pub fn bytes_per_frame(&self) -> u64 {
        self.grid_width * self.grid_height * self.channels * self.bytes_per_value
    }
}

/// Per-frame payloads of the two non-reference-point baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselinePayloads {
    pub bev_feature: BevFeatureBaseline,
    /// Full query-set exchange; an aggregate figure with no modeled layout.
    pub query_fusion_bytes: u64,
}

pub const QUERY_FUSION_BASELINE_BYTES: u64 = 961_126;

pub fn baseline_payloads() -> BaselinePayloads {
    BaselinePayloads {
        bev_feature: BevFeatureBaseline {
            grid_width: 200,
            grid_height: 200,
            channels: 256,
            bytes_per_value: 4,
        },
        query_fusion_bytes: QUERY_FUSION_BASELINE_BYTES,
    }
}

pub fn encode(msg: &WireMessage) -> Result<Vec<u8>, WireError> {
    let flags = msg.header.flags;
    PayloadFlags::from_bits(flags.bits())?;
    let count = msg.records.len();
    let count16 = u16::try_from(count).map_err(|_| WireError::CountOverflow(count))?;
    let dim = msg.header.embed_dim as usize;
    if flags.has_semantics() {
        if dim == 0 {
            return Err(WireError::ZeroEmbedDim);
        }
    } else if dim != 0 {
        return Err(WireError::EmbedDimWithoutSemantics(msg.header.embed_dim));
    }

    let width = record_width(flags, dim);
    let mut out = Vec::with_capacity(HEADER_BYTES + count * width);
    out.extend_from_slice(&MAGIC);
    out.push(msg.header.version);
    out.push(flags.bits());
    out.extend_from_slice(&msg.header.agent_id.to_le_bytes());
    out.extend_from_slice(&msg.header.frame_index.to_le_bytes());
    out.extend_from_slice(&msg.header.timestamp_us.to_le_bytes());
    out.extend_from_slice(&count16.to_le_bytes());
    out.extend_from_slice(&msg.header.embed_dim.to_le_bytes());
    out.extend_from_slice(&[0, 0]);
    debug_assert_eq!(out.len(), HEADER_BYTES);

    let push = |out: &mut Vec<u8>, vals: &[f32]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (record, r) in msg.records.iter().enumerate() {
        let check = |present: bool, wanted: bool, field| {
            if present == wanted {
                Ok(())
            } else {
                Err(WireError::InconsistentAttributes { record, field })
            }
        };
        check(r.velocity.is_some(), flags.has_velocity(), "velocity")?;
        check(r.size.is_some(), flags.has_size(), "size")?;
        check(r.confidence.is_some(), flags.has_confidence(), "confidence")?;
        check(r.semantics.is_some(), flags.has_semantics(), "semantics")?;
        push(&mut out, &r.position);
        if let Some(v) = &r.velocity {
            push(&mut out, v);
        }
        if let Some(s) = &r.size {
            push(&mut out, s);
        }
        if let Some(c) = r.confidence {
            push(&mut out, &[c]);
        }
        if let Some(sem) = &r.semantics {
            if sem.len() != dim {
                return Err(WireError::SemanticsDimension {
                    record,
                    expected: dim,
                    found: sem.len(),
                });
            }
            push(&mut out, sem);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.buf[self.pos..self.pos + N]);
        self.pos += N;
        a
    }

    fn f32s<const N: usize>(&mut self) -> [f32; N] {
        std::array::from_fn(|_| f32::from_le_bytes(self.take::<4>()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<WireMessage, WireError> {
    if bytes.len() < HEADER_BYTES {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(WireError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(WireError::Truncated {
            needed: HEADER_BYTES,
            available: bytes.len(),
        });
    }
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take::<4>();
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let [version] = r.take::<1>();
    if version != VERSION {
        return Err(WireError::UnsupportedVersion(version));
    }
    let [flag_bits] = r.take::<1>();
    let flags = PayloadFlags::from_bits(flag_bits)?;
    let agent_id = u32::from_le_bytes(r.take());
    let frame_index = u64::from_le_bytes(r.take());
    let timestamp_us = u64::from_le_bytes(r.take());
    let count = u16::from_le_bytes(r.take()) as usize;
    let embed_dim = u16::from_le_bytes(r.take());
    if r.take::<2>() != [0, 0] {
        return Err(WireError::ReservedHeaderBytes);
    }
    if flags.has_semantics() && embed_dim == 0 {
        return Err(WireError::ZeroEmbedDim);
    }
    if !flags.has_semantics() && embed_dim != 0 {
        return Err(WireError::EmbedDimWithoutSemantics(embed_dim));
    }

    let dim = embed_dim as usize;
    let needed = HEADER_BYTES + count * record_width(flags, dim);
    if bytes.len() < needed {
        return Err(WireError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(WireError::TrailingBytes(bytes.len() - needed));
    }

    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let position = r.f32s::<3>();
        let velocity = flags.has_velocity().then(|| r.f32s::<2>());
        let size = flags.has_size().then(|| r.f32s::<3>());
        let confidence = flags.has_confidence().then(|| r.f32s::<1>()[0]);
        let semantics = flags
            .has_semantics()
            .then(|| (0..dim).map(|_| f32::from_le_bytes(r.take())).collect());
        records.push(WireRecord {
            position,
            velocity,
            size,
            confidence,
            semantics,
        });
    }
    Ok(WireMessage {
        header: WireHeader {
            version,
            flags,
            agent_id,
            frame_index,
            timestamp_us,
            embed_dim,
        },
        records,
    })
}

/// Decoded content, keyed by whether the payload carries semantics.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Points(AgentFrame),
    Queries(Vec<Query>),
}

pub fn encode_frame(frame: &AgentFrame, flags: PayloadFlags) -> Result<Vec<u8>, WireError> {
    encode(&WireMessage::from_frame(frame, flags)?)
}

pub fn decode_payload(bytes: &[u8]) -> Result<(Payload, PayloadFlags), WireError> {
    let msg = decode(bytes)?;
    let flags = msg.header.flags;
    let payload = if flags.has_semantics() {
        Payload::Queries(msg.to_queries()?)
    } else {
        Payload::Points(msg.to_frame()?)
    };
    Ok((payload, flags))
}

/// Offset / hex / ASCII dump, 16 bytes per line.
pub fn hex_dump(bytes: &[u8]) -> String {
    let mut out = String::new();
    for (line, chunk) in bytes.chunks(16).enumerate() {
        let _ = write!(out, "{:08x}  ", line * 16);
        for i in 0..16 {
            match chunk.get(i) {
                Some(b) => {
                    let _ = write!(out, "{b:02x} ");
                }
                None => out.push_str("   "),
            }
            if i == 7 {
                out.push(' ');
            }
        }
        out.push(' ');
        out.extend(
            chunk
                .iter()
                .map(|&b| if b.is_ascii_graphic() { b as char } else { '.' }),
        );
        out.push('\n');
    }
    out
}
