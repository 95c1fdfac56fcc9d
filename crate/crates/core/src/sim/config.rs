//! Scenario configuration, read from TOML.

use serde::{Deserialize, Serialize};

use crate::geometry::TransformSE3;
use crate::query::QueryFusionConfig;
use crate::refpts::{BevRect, FusionConfig, DEFAULT_QUERY_CAPACITY};
use crate::tracker::TrackerConfig;
use crate::wire::Attrs;

use super::ScenarioError;

fn default_fps() -> f64 {
    5.0
}

/// Lossy, latent V2V link at a fixed frame rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelModel {
    pub drop_probability: f64,
    pub latency_frames: u32,
    pub fps: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            drop_probability: 0.0,
            latency_frames: 0,
            fps: default_fps(),
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(ScenarioError::config(format!(
                "channel.drop_probability {} outside [0, 1]",
                self.drop_probability
            )));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(ScenarioError::config(format!("channel.fps must be positive, got {}", self.fps)));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.fps
    }
}

/// Ground-truth object pinned by the config instead of drawn at random.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedObject {
    pub position: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 2],
    #[serde(default = "default_object_size")]
    pub size: [f64; 3],
    #[serde(default)]
    pub class_label: u8,
}

fn default_object_size() -> [f64; 3] {
    [4.5, 1.9, 1.6]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    /// Randomly placed objects, in addition to `objects`.
    pub object_count: usize,
    /// Spawn region; with `wrap` objects leaving it re-enter on the far side.
    pub region: BevRect,
    pub wrap: bool,
    /// Speed bounds for random objects, m/s.
    pub speed_range: [f64; 2],
    pub length_range: [f64; 2],
    pub width_range: [f64; 2],
    pub height_range: [f64; 2],
    pub class_count: u8,
    /// Scripted objects take gt ids `0..objects.len()`.
    pub objects: Vec<ScriptedObject>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            object_count: 40,
            region: BevRect::centered(80.0),
            wrap: true,
            speed_range: [0.0, 12.0],
            length_range: [3.8, 5.2],
            width_range: [1.7, 2.1],
            height_range: [1.4, 1.9],
            class_count: 3,
            objects: Vec::new(),
        }
    }
}

fn check_range(name: &str, r: [f64; 2], lo: f64, hi: f64) -> Result<(), ScenarioError> {
    if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && r[0] >= lo && r[1] <= hi {
        Ok(())
    } else {
        Err(ScenarioError::config(format!("{name} = {r:?} must satisfy {lo} <= lo <= hi <= {hi}")))
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !self.region.is_valid() {
            return Err(ScenarioError::config("world.region is empty"));
        }
        check_range("world.speed_range", self.speed_range, 0.0, f64::MAX)?;
        check_range("world.length_range", self.length_range, f64::MIN_POSITIVE, f64::MAX)?;
        check_range("world.width_range", self.width_range, f64::MIN_POSITIVE, f64::MAX)?;
        check_range("world.height_range", self.height_range, f64::MIN_POSITIVE, f64::MAX)?;
        if self.class_count == 0 {
            return Err(ScenarioError::config("world.class_count must be at least 1"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.size.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(ScenarioError::config(format!("world.objects[{i}].size must be positive")));
            }
        }
        Ok(())
    }
}

/// Frames `[start_frame, end_frame)` during which an agent cannot see an object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occlusion {
    pub gt_id: u64,
    pub start_frame: u64,
    pub end_frame: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorProfile {
    /// Field of view in the agent's local frame.
    pub fov_range: BevRect,
    pub position_noise_sigma: f64,
    pub fn_rate: f64,
    pub fp_rate: f64,
    pub fp_confidence_range: [f64; 2],
    pub tp_confidence_range: [f64; 2],
    pub provides_velocity: bool,
    pub provides_size: bool,
    pub occlusions: Vec<Occlusion>,
}

impl Default for DetectorProfile {
    fn default() -> Self {
        Self {
            fov_range: BevRect::default(),
            position_noise_sigma: 0.3,
            fn_rate: 0.0,
            fp_rate: 0.0,
            fp_confidence_range: [0.2, 0.6],
            tp_confidence_range: [0.5, 1.0],
            provides_velocity: true,
            provides_size: true,
            occlusions: Vec::new(),
        }
    }
}

impl DetectorProfile {
    pub fn validate(&self, who: &str) -> Result<(), ScenarioError> {
        if !self.fov_range.is_valid() {
            return Err(ScenarioError::config(format!("{who}: fov_range is empty")));
        }
        if !(self.position_noise_sigma.is_finite() && self.position_noise_sigma >= 0.0) {
            return Err(ScenarioError::config(format!("{who}: position_noise_sigma must be >= 0")));
        }
        for (name, rate) in [("fn_rate", self.fn_rate), ("fp_rate", self.fp_rate)] {
            if !(0.0..1.0).contains(&rate) && !(name == "fn_rate" && rate == 1.0) {
                return Err(ScenarioError::config(format!("{who}: {name} {rate} outside [0, 1)")));
            }
        }
        check_range(&format!("{who}: fp_confidence_range"), self.fp_confidence_range, 0.0, 1.0)?;
        check_range(&format!("{who}: tp_confidence_range"), self.tp_confidence_range, 0.0, 1.0)?;
        Ok(())
    }

    pub fn is_occluded(&self, gt_id: u64, frame: u64) -> bool {
        self.occlusions
            .iter()
            .any(|o| o.gt_id == gt_id && (o.start_frame..o.end_frame).contains(&frame))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Ego,
    #[default]
    Sender,
}

/// Planar pose moving at constant velocity with fixed heading.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseTrajectory {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
}

impl PoseTrajectory {
    /// Agent-local to world transform at time `t`.
    pub fn pose_at(&self, t: f64) -> TransformSE3 {
        TransformSE3::from_yaw(self.yaw, self.x + self.vx * t, self.y + self.vy * t, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub agent_id: u32,
    #[serde(default)]
    pub role: AgentRole,
    #[serde(default)]
    pub trajectory: PoseTrajectory,
    #[serde(default)]
    pub detector: DetectorProfile,
}

/// What senders put on the wire each frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransmissionConfig {
    pub attrs: Attrs,
    pub confidence: bool,
    /// Send exactly this many reference points (the most confident entries of
    /// the full query set) instead of the effective detections.
    pub points: Option<usize>,
    /// Confidence range of background queries that fill the query set up to
    /// capacity.
    pub background_confidence_range: [f64; 2],
}

impl Default for TransmissionConfig {
    fn default() -> Self {
        Self {
            attrs: Attrs::Pvs,
            confidence: false,
            points: None,
            background_confidence_range: [0.0, 0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration_frames: u64,
    #[serde(default = "default_capacity")]
    pub query_capacity: usize,
    #[serde(default)]
    pub world: WorldConfig,
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_fusion: Option<QueryFusionConfig>,
    #[serde(default)]
    pub channel: ChannelModel,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub transmission: TransmissionConfig,
}

fn default_capacity() -> usize {
    DEFAULT_QUERY_CAPACITY
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config serializes to TOML")
    }

    pub fn ego_index(&self) -> Option<usize> {
        self.agents.iter().position(|a| a.role == AgentRole::Ego)
    }

    pub fn senders_mut(&mut self) -> impl Iterator<Item = &mut AgentConfig> {
        self.agents.iter_mut().filter(|a| a.role == AgentRole::Sender)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let egos = self.agents.iter().filter(|a| a.role == AgentRole::Ego).count();
        if egos != 1 {
            return Err(ScenarioError::config(format!("exactly one ego agent required, found {egos}")));
        }
        let mut ids: Vec<u32> = self.agents.iter().map(|a| a.agent_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(ScenarioError::config("agent ids must be unique"));
        }
        self.world.validate()?;
        self.fusion.validate().map_err(|e| ScenarioError::config(e.to_string()))?;
        self.channel.validate()?;
        self.tracker.validate().map_err(ScenarioError::config)?;
        if let Some(q) = &self.query_fusion {
            q.validate().map_err(|e| ScenarioError::config(e.to_string()))?;
            if q.embed_dim == 0 || q.embed_dim > u16::MAX as usize {
                return Err(ScenarioError::config("query_fusion.embed_dim must lie in 1..=65535"));
            }
        }
        if self.query_capacity == 0 || self.query_capacity > crate::wire::MAX_RECORDS {
            return Err(ScenarioError::config("query_capacity must lie in 1..=65535"));
        }
        if let Some(n) = self.transmission.points {
            if n > self.query_capacity {
                return Err(ScenarioError::config(format!(
                    "transmission.points {n} exceeds query capacity {}",
                    self.query_capacity
                )));
            }
        }
        check_range(
            "transmission.background_confidence_range",
            self.transmission.background_confidence_range,
            0.0,
            1.0,
        )?;
        for a in &self.agents {
            let who = format!("agent {}", a.agent_id);
            a.detector.validate(&who)?;
            if a.role == AgentRole::Sender {
                let attrs = self.transmission.attrs;
                if attrs.has_velocity() && !a.detector.provides_velocity {
                    return Err(ScenarioError::config(format!(
                        "{who}: attrs {attrs} need velocity the detector does not provide"
                    )));
                }
                if attrs.has_size() && !a.detector.provides_size {
                    return Err(ScenarioError::config(format!(
                        "{who}: attrs {attrs} need size the detector does not provide"
                    )));
                }
            }
        }
        Ok(())
    }
}
