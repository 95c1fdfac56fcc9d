//! Cross-agent alignment, association and fusion of reference-point sets.
//!
//! A sender frame is first aligned into the ego coordinate frame, then each
//! sender point is associated one-to-one with an ego point closer than
//! `tau_d`. Matched pairs keep the ego point as-is. Sender points with no ego
//! point inside the gate are appended when they fall inside the ego's visible
//! range, carrying velocity and size only when the configuration enables
//! them.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{gated_assignment, MatchingPolicy};
use crate::geometry::{Point3, Size3, TransformSE3, Velocity2};

/// Query capacity of the detection head; the largest frame a sender can emit.
pub const DEFAULT_QUERY_CAPACITY: usize = 900;

pub const DEFAULT_TAU_D: f64 = 2.0;

pub const DEFAULT_VISIBLE_HALF_EXTENT: f64 = 51.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("duplicate instance id {0} in frame")]
    DuplicateInstanceId(u64),
    #[error("frame holds {count} points, capacity is {capacity}")]
    OverCapacity { count: usize, capacity: usize },
    #[error("point {index}: confidence {confidence} outside [0, 1]")]
    Confidence { index: usize, confidence: f64 },
    #[error("point {index}: non-finite position or velocity")]
    NonFinite { index: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("tau_d must be positive and finite, got {0}")]
    TauD(f64),
    #[error("visible range is empty: {0:?}")]
    EmptyRange(BevRect),
}

/// Where a point in a (possibly fused) frame came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Origin {
    #[default]
    Local,
    Injected { agent_id: u32 },
}

/// One detected instance as exchanged between agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub position: Point3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<Velocity2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<Size3>,
    pub confidence: f64,
    #[serde(default)]
    pub class_label: u8,
    pub instance_id: u64,
    #[serde(default)]
    pub origin: Origin,
}

impl ReferencePoint {
    pub fn new(instance_id: u64, position: Point3, confidence: f64) -> Self {
        Self {
            position,
            velocity: None,
            size: None,
            confidence,
            class_label: 0,
            instance_id,
            origin: Origin::Local,
        }
    }

    pub fn with_velocity(mut self, v: Velocity2) -> Self {
        self.velocity = Some(v);
        self
    }

    pub fn with_size(mut self, s: Size3) -> Self {
        self.size = Some(s);
        self
    }

    pub fn with_class(mut self, class_label: u8) -> Self {
        self.class_label = class_label;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateFrame {
    #[default]
    AgentLocal,
    Ego,
}

/// One agent's detections at one timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFrame {
    pub agent_id: u32,
    pub frame_index: u64,
    /// Seconds.
    pub timestamp: f64,
    pub points: Vec<ReferencePoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_ego: Option<TransformSE3>,
    #[serde(default)]
    pub coordinates: CoordinateFrame,
}

impl AgentFrame {
    pub fn new(agent_id: u32, frame_index: u64, timestamp: f64) -> Self {
        Self {
            agent_id,
            frame_index,
            timestamp,
            points: Vec::new(),
            to_ego: None,
            coordinates: CoordinateFrame::AgentLocal,
        }
    }

    pub fn with_points(mut self, points: Vec<ReferencePoint>) -> Self {
        self.points = points;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Point3> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn validate(&self, capacity: usize) -> Result<(), FrameError> {
        if self.points.len() > capacity {
            return Err(FrameError::OverCapacity {
                count: self.points.len(),
                capacity,
            });
        }
        let mut seen = HashSet::with_capacity(self.points.len());
        for (index, p) in self.points.iter().enumerate() {
            if !seen.insert(p.instance_id) {
                return Err(FrameError::DuplicateInstanceId(p.instance_id));
            }
            if !(0.0..=1.0).contains(&p.confidence) {
                return Err(FrameError::Confidence {
                    index,
                    confidence: p.confidence,
                });
            }
            if !p.position.is_finite() || p.velocity.is_some_and(|v| !v.is_finite()) {
                return Err(FrameError::NonFinite { index });
            }
        }
        Ok(())
    }
}

/// Axis-aligned ground-plane rectangle, meters. Bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevRect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl BevRect {
    pub const fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self { x_min, x_max, y_min, y_max }
    }

    pub const fn centered(half_extent: f64) -> Self {
        Self::new(-half_extent, half_extent, -half_extent, half_extent)
    }

    pub fn contains(&self, p: &Point3) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

impl Default for BevRect {
    fn default() -> Self {
        Self::centered(DEFAULT_VISIBLE_HALF_EXTENT)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Euclidean3d,
    Planar,
}

impl DistanceMetric {
    pub fn distance(&self, a: &Point3, b: &Point3) -> f64 {
        match self {
            DistanceMetric::Euclidean3d => a.distance(b),
            DistanceMetric::Planar => a.planar_distance(b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub tau_d: f64,
    pub visible_range: BevRect,
    pub use_velocity: bool,
    pub use_size: bool,
    pub matching_policy: MatchingPolicy,
    pub distance_metric: DistanceMetric,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            tau_d: DEFAULT_TAU_D,
            visible_range: BevRect::default(),
            use_velocity: true,
            use_size: true,
            matching_policy: MatchingPolicy::GreedyDistance,
            distance_metric: DistanceMetric::Euclidean3d,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.tau_d.is_finite() && self.tau_d > 0.0) {
            return Err(ConfigError::TauD(self.tau_d));
        }
        if !self.visible_range.is_valid() {
            return Err(ConfigError::EmptyRange(self.visible_range));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub ego: usize,
    pub sender: usize,
    pub distance: f64,
}

/// Result of associating an ego set with an aligned sender set.
///
/// Every sender index lands in exactly one of `pairs`, `absorbed_sender` or
/// `unmatched_sender`. Absorbed points have an ego point inside the gate but
/// lost the one-to-one assignment to another sender point; they describe an
/// instance the ego already holds and are never appended.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchSet {
    pub pairs: Vec<MatchPair>,
    pub unmatched_sender: Vec<usize>,
    pub unmatched_ego: Vec<usize>,
    pub absorbed_sender: Vec<usize>,
}

impl MatchSet {
    pub fn sender_partner(&self, sender: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.sender == sender).map(|p| p.ego)
    }
}

/// Gated one-to-one association between two position sets.
pub fn associate_points(
    ego: &[Point3],
    sender: &[Point3],
    gate: f64,
    policy: MatchingPolicy,
    metric: DistanceMetric,
) -> MatchSet {
    let distances: Vec<Vec<f64>> = ego
        .iter()
        .map(|e| sender.iter().map(|s| metric.distance(e, s)).collect())
        .collect();
    let assigned = gated_assignment(&distances, sender.len(), gate, policy);

    let mut ego_paired = vec![false; ego.len()];
    let mut sender_paired = vec![false; sender.len()];
    let pairs: Vec<MatchPair> = assigned
        .into_iter()
        .map(|p| {
            ego_paired[p.row] = true;
            sender_paired[p.col] = true;
            MatchPair {
                ego: p.row,
                sender: p.col,
                distance: p.distance,
            }
        })
        .collect();

    let mut unmatched_sender = Vec::new();
    let mut absorbed_sender = Vec::new();
    for (s, paired) in sender_paired.iter().enumerate() {
        if *paired {
            continue;
        }
        if distances.iter().any(|row| row[s] < gate) {
            absorbed_sender.push(s);
        } else {
            unmatched_sender.push(s);
        }
    }
    let unmatched_ego = (0..ego.len()).filter(|e| !ego_paired[*e]).collect();
    MatchSet {
        pairs,
        unmatched_sender,
        unmatched_ego,
        absorbed_sender,
    }
}

/// Maps every sender point into the ego frame: positions through the full
/// transform, velocities through the rotation, sizes unchanged.
pub fn align_sender_frame(sender: &AgentFrame, to_ego: &TransformSE3) -> AgentFrame {
    let points = sender
        .points
        .iter()
        .map(|p| ReferencePoint {
            position: to_ego.transform_point(&p.position),
            velocity: p.velocity.map(|v| to_ego.transform_velocity(&v)),
            size: p.size.map(|s| to_ego.transform_size(&s)),
            ..p.clone()
        })
        .collect();
    AgentFrame {
        points,
        to_ego: None,
        coordinates: CoordinateFrame::Ego,
        ..sender.clone()
    }
}

pub fn associate(ego: &AgentFrame, sender_aligned: &AgentFrame, cfg: &FusionConfig) -> MatchSet {
    associate_points(
        &ego.positions(),
        &sender_aligned.positions(),
        cfg.tau_d,
        cfg.matching_policy,
        cfg.distance_metric,
    )
}

/// Builds the fused frame: ego points first and untouched, then every
/// unmatched in-range sender point with fresh ego-side instance ids.
pub fn fuse(ego: &AgentFrame, sender_aligned: &AgentFrame, matches: &MatchSet, cfg: &FusionConfig) -> AgentFrame {
    let mut next_id = ego
        .points
        .iter()
        .map(|p| p.instance_id + 1)
        .max()
        .unwrap_or(0);
    let mut points = ego.points.clone();
    for &s in &matches.unmatched_sender {
        let src = &sender_aligned.points[s];
        if !cfg.visible_range.contains(&src.position) {
            continue;
        }
        let origin = match src.origin {
            Origin::Local => Origin::Injected {
                agent_id: sender_aligned.agent_id,
            },
            injected => injected,
        };
        points.push(ReferencePoint {
            position: src.position,
            velocity: src.velocity.filter(|_| cfg.use_velocity),
            size: src.size.filter(|_| cfg.use_size),
            confidence: src.confidence,
            class_label: src.class_label,
            instance_id: next_id,
            origin,
        });
        next_id += 1;
    }
    AgentFrame {
        points,
        to_ego: None,
        coordinates: CoordinateFrame::Ego,
        ..ego.clone()
    }
}

/// Align, associate and fuse in one call.
pub fn fuse_sender(ego: &AgentFrame, sender: &AgentFrame, to_ego: &TransformSE3, cfg: &FusionConfig) -> AgentFrame {
    let aligned = align_sender_frame(sender, to_ego);
    let matches = associate(ego, &aligned, cfg);
    fuse(ego, &aligned, &matches, cfg)
}
