//! Synthetic per-agent detector: visibility, misses, noise, false alarms.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{Point3, Size3, Velocity2};
use crate::query::Query;
use crate::refpts::{AgentFrame, BevRect, ReferencePoint};
use crate::tracker::GtObservation;

use super::config::DetectorProfile;
use super::uniform;
use super::world::WorldState;

const FP_SPEED_RANGE: [f64; 2] = [0.0, 10.0];
const NOMINAL_SIZE: [f64; 3] = [4.5, 1.9, 1.6];

/// Where a simulated detection came from. Known only to the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    TruePositive { gt_id: u64 },
    FalsePositive,
    /// Filler query with no object behind it.
    Background,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detections {
    /// Local coordinates of the detecting agent.
    pub frame: AgentFrame,
    pub provenance: Vec<Provenance>,
    /// Objects the agent could have seen this frame, local coordinates.
    pub visible_gt: Vec<GtObservation>,
}

/// Detects the world from agent `agent_index`.
///
/// Every visible object consumes the same four draws whatever the rates, so
/// runs that differ only in `fn_rate` miss nested subsets of objects.
pub fn simulate_detector<R: Rng>(
    world: &WorldState,
    agent_index: usize,
    profile: &DetectorProfile,
    rng: &mut R,
) -> Detections {
    let agent = &world.agents[agent_index];
    let to_local = agent.pose.inverse();
    let mut points = Vec::new();
    let mut provenance = Vec::new();
    let mut visible_gt = Vec::new();
    for obj in &world.objects {
        let local = to_local.transform_point(&obj.position);
        if !profile.fov_range.contains(&local) || profile.is_occluded(obj.gt_id, world.frame_index) {
            continue;
        }
        visible_gt.push(GtObservation {
            gt_id: obj.gt_id,
            position: local,
        });
        let u_miss: f64 = rng.random();
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        let confidence = uniform(rng, profile.tp_confidence_range);
        if u_miss < profile.fn_rate {
            continue;
        }
        let sigma = profile.position_noise_sigma;
        let position = Point3::new(local.x + sigma * nx, local.y + sigma * ny, local.z);
        let mut p = ReferencePoint::new(points.len() as u64, position, confidence).with_class(obj.class_label);
        if profile.provides_velocity {
            p = p.with_velocity(to_local.transform_velocity(&obj.velocity));
        }
        if profile.provides_size {
            p = p.with_size(obj.size);
        }
        points.push(p);
        provenance.push(Provenance::TruePositive { gt_id: obj.gt_id });
    }

    let fp_count = false_positive_count(profile.fp_rate, visible_gt.len());
    for _ in 0..fp_count {
        let position = sample_in(rng, &profile.fov_range);
        let confidence = uniform(rng, profile.fp_confidence_range);
        let mut p = ReferencePoint::new(points.len() as u64, position, confidence);
        let velocity = random_velocity(rng);
        if profile.provides_velocity {
            p = p.with_velocity(velocity);
        }
        if profile.provides_size {
            p = p.with_size(random_size(rng));
        }
        points.push(p);
        provenance.push(Provenance::FalsePositive);
    }

    let frame = AgentFrame::new(agent.agent_id, world.frame_index, world.time).with_points(points);
    Detections {
        frame,
        provenance,
        visible_gt,
    }
}

/// `ceil(fp_rate * candidates)`, ignoring float error in the product so
/// that e.g. 0.3 * 10 gives 3.
pub fn false_positive_count(fp_rate: f64, candidates: usize) -> usize {
    let expected = fp_rate * candidates as f64;
    (expected - 1e-9).ceil().max(0.0) as usize
}

fn sample_in<R: Rng>(rng: &mut R, r: &BevRect) -> Point3 {
    Point3::new(uniform(rng, [r.x_min, r.x_max]), uniform(rng, [r.y_min, r.y_max]), 0.0)
}

fn random_velocity<R: Rng>(rng: &mut R) -> Velocity2 {
    let speed = uniform(rng, FP_SPEED_RANGE);
    let heading = uniform(rng, [-std::f64::consts::PI, std::f64::consts::PI]);
    Velocity2::new(speed * heading.cos(), speed * heading.sin())
}

fn random_size<R: Rng>(rng: &mut R) -> Size3 {
    let jitter = uniform(rng, [0.85, 1.15]);
    Size3::new(NOMINAL_SIZE[0] * jitter, NOMINAL_SIZE[1] * jitter, NOMINAL_SIZE[2] * jitter)
        .expect("nominal size is positive")
}

/// Pads detections with low-confidence background entries up to `capacity`,
/// the fixed query count of the detection head.
pub fn fill_query_set<R: Rng>(
    detections: &Detections,
    capacity: usize,
    fov: &BevRect,
    background_confidence: [f64; 2],
    rng: &mut R,
) -> (Vec<ReferencePoint>, Vec<Provenance>) {
    let mut points = detections.frame.points.clone();
    let mut provenance = detections.provenance.clone();
    points.truncate(capacity);
    provenance.truncate(capacity);
    while points.len() < capacity {
        let position = sample_in(rng, fov);
        let confidence = uniform(rng, background_confidence);
        points.push(
            ReferencePoint::new(points.len() as u64, position, confidence)
                .with_velocity(Velocity2::new(0.0, 0.0))
                .with_size(random_size(rng)),
        );
        provenance.push(Provenance::Background);
    }
    (points, provenance)
}

/// Queries for a point set with random embeddings of dimension `dim`.
pub fn synthesize_queries<R: Rng>(points: &[ReferencePoint], dim: usize, rng: &mut R) -> Vec<Query> {
    points
        .iter()
        .map(|p| Query {
            pos_embed: (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            sem_embed: (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            confidence: p.confidence,
            reference_point: p.position,
            instance_id: p.instance_id,
        })
        .collect()
}
