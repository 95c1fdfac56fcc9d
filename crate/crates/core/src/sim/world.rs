use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Point3, Size3, TransformSE3, Velocity2};

use super::config::{AgentConfig, WorldConfig};
use super::uniform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub gt_id: u64,
    pub position: Point3,
    pub velocity: Velocity2,
    pub size: Size3,
    pub class_label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub agent_id: u32,
    /// Agent-local to world.
    pub pose: TransformSE3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub frame_index: u64,
    pub time: f64,
    pub objects: Vec<GroundTruthObject>,
    pub agents: Vec<AgentState>,
    /// Objects that crossed the region edge and re-entered on the far side.
    pub reseeded: u64,
}

impl WorldState {
    /// Scripted objects first, then `object_count` random ones.
    pub fn spawn<R: Rng>(world: &WorldConfig, agents: &[AgentConfig], rng: &mut R) -> Result<Self, super::ScenarioError> {
        let mut objects = Vec::with_capacity(world.objects.len() + world.object_count);
        for (i, o) in world.objects.iter().enumerate() {
            let size = Size3::try_from(o.size).map_err(|e| super::ScenarioError::config(e.to_string()))?;
            objects.push(GroundTruthObject {
                gt_id: i as u64,
                position: Point3::new(o.position[0], o.position[1], o.position[2]),
                velocity: Velocity2::new(o.velocity[0], o.velocity[1]),
                size,
                class_label: o.class_label,
            });
        }
        let r = &world.region;
        for i in 0..world.object_count {
            let position = Point3::new(uniform(rng, [r.x_min, r.x_max]), uniform(rng, [r.y_min, r.y_max]), 0.0);
            let speed = uniform(rng, world.speed_range);
            let heading = uniform(rng, [-std::f64::consts::PI, std::f64::consts::PI]);
            let size = Size3::new(
                uniform(rng, world.length_range),
                uniform(rng, world.width_range),
                uniform(rng, world.height_range),
            )
            .expect("validated size ranges are positive");
            objects.push(GroundTruthObject {
                gt_id: (world.objects.len() + i) as u64,
                position,
                velocity: Velocity2::new(speed * heading.cos(), speed * heading.sin()),
                size,
                class_label: rng.random_range(0..world.class_count),
            });
        }
        Ok(Self {
            frame_index: 0,
            time: 0.0,
            objects,
            agents: agent_states(agents, 0.0),
            reseeded: 0,
        })
    }
}

fn agent_states(agents: &[AgentConfig], t: f64) -> Vec<AgentState> {
    agents
        .iter()
        .map(|a| AgentState {
            agent_id: a.agent_id,
            pose: a.trajectory.pose_at(t),
        })
        .collect()
}

/// Constant-velocity step of every object and agent. Objects are wrapped
/// back into the region when `world.wrap` is set.
pub fn step_world(state: &WorldState, dt: f64, world: &WorldConfig, agents: &[AgentConfig]) -> WorldState {
    let r = &world.region;
    let mut reseeded = state.reseeded;
    let objects = state
        .objects
        .iter()
        .map(|o| {
            let mut position = o.position.advanced(&o.velocity, dt);
            if world.wrap && !r.contains(&position) {
                position.x = wrap(position.x, r.x_min, r.x_max);
                position.y = wrap(position.y, r.y_min, r.y_max);
                reseeded += 1;
            }
            GroundTruthObject { position, ..*o }
        })
        .collect();
    let time = state.time + dt;
    WorldState {
        frame_index: state.frame_index + 1,
        time,
        objects,
        agents: agent_states(agents, time),
        reseeded,
    }
}

fn wrap(v: f64, lo: f64, hi: f64) -> f64 {
    if (lo..=hi).contains(&v) {
        v
    } else {
        lo + (v - lo).rem_euclid(hi - lo)
    }
}
