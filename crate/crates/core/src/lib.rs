//! Reference-point fusion for cooperative perception.
//!
//! Agents exchange compact reference points (position, optionally velocity
//! and size) instead of feature maps. This crate covers the full exchange:
//! rigid alignment into the ego frame, gated one-to-one association, fusion,
//! selective Top-K query fusion, the binary wire format with exact payload
//! accounting, a seeded multi-agent simulator, a lightweight tracker with
//! CLEAR-style metrics, and the run/sweep/bandwidth harness behind the CLI.

pub mod assignment;
pub mod geometry;
pub mod harness;
pub mod query;
pub mod refpts;
pub mod sim;
pub mod tracker;
pub mod wire;

pub use assignment::MatchingPolicy;
pub use geometry::{GeometryError, Point3, Size3, TransformSE3, Velocity2};
pub use query::{fuse_queries, select_top_k, Query, QueryError, QueryFusionConfig};
pub use refpts::{
    align_sender_frame, associate, fuse, AgentFrame, BevRect, FusionConfig, MatchSet, ReferencePoint,
};
pub use wire::{decode, encode, payload_bytes, Attrs, PayloadFlags, WireError, WireMessage};
