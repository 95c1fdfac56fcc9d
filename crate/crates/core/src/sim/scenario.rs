use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::MatchingPolicy;
use crate::geometry::{Point3, TransformSE3};
use crate::query::{fuse_queries, top_k_indices, Query};
use crate::refpts::{
    align_sender_frame, associate, associate_points, fuse, AgentFrame, CoordinateFrame, FusionConfig,
};
use crate::tracker::{evaluate, FrameEvents, GroundTruthFrame, GtObservation, Tracker, TrackingMetrics};
use crate::wire::{decode_payload, encode, Payload, WireMessage};

use super::channel::{Channel, PayloadKind, TransmissionRecord};
use super::config::{AgentRole, ScenarioConfig};
use super::detector::{fill_query_set, simulate_detector, synthesize_queries, Detections, Provenance};
use super::world::{step_world, WorldState};
use super::{derive_seed, ScenarioError};

const STREAM_WORLD: u64 = 1;
const STREAM_DETECT: u64 = 2;
const STREAM_QUERY_SET: u64 = 3;
const STREAM_CHANNEL: u64 = 4;
const STREAM_EGO_QUERIES: u64 = 5;

fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame_index: u64,
    pub ego_detections: usize,
    pub fused_points: usize,
    pub injected_points: usize,
    pub gt_in_range: usize,
    pub live_tracks: usize,
    pub transmitted_points: usize,
    pub transmitted_queries: usize,
    pub bytes_sent: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BandwidthSummary {
    pub fps: f64,
    pub frames: u64,
    pub transmissions: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub total_bytes: u64,
    pub total_body_bytes: u64,
    pub refpts_messages: u64,
    pub refpts_body_bytes: u64,
    pub query_messages: u64,
    pub query_body_bytes: u64,
    /// All senders, averaged over the run length.
    pub mean_bytes_per_frame: f64,
    pub bytes_per_second: f64,
    pub max_payload_bytes: u64,
    pub max_body_bytes: u64,
}

impl BandwidthSummary {
    pub fn from_ledger(ledger: &[TransmissionRecord], frames: u64, fps: f64) -> Self {
        let mut s = BandwidthSummary {
            fps,
            frames,
            ..Default::default()
        };
        for r in ledger {
            s.transmissions += 1;
            if r.delivered_at.is_some() {
                s.delivered += 1;
            } else {
                s.dropped += 1;
            }
            s.total_bytes += r.total_bytes();
            s.total_body_bytes += r.body_bytes;
            match r.kind {
                PayloadKind::ReferencePoints => {
                    s.refpts_messages += 1;
                    s.refpts_body_bytes += r.body_bytes;
                }
                PayloadKind::Queries => {
                    s.query_messages += 1;
                    s.query_body_bytes += r.body_bytes;
                }
            }
            s.max_payload_bytes = s.max_payload_bytes.max(r.total_bytes());
            s.max_body_bytes = s.max_body_bytes.max(r.body_bytes);
        }
        if frames > 0 {
            s.mean_bytes_per_frame = s.total_bytes as f64 / frames as f64;
            s.bytes_per_second = s.mean_bytes_per_frame * fps;
        }
        s
    }
}

/// How many GT-matched sender detections made it into the Top-K selection.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TopKCoverage {
    pub k: usize,
    pub gt_matched_detections: u64,
    pub selected_gt_matched: u64,
    pub coverage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SenderQuality {
    pub sender_frames: u64,
    /// Sender detections gated one-to-one to a visible GT object.
    pub gt_matched_detections: u64,
    pub mean_gt_matched_per_frame: f64,
    pub effective_points: u64,
    pub mean_effective_points: f64,
}

/// Fate of transmitted false positives on the ego side.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FpContainment {
    pub fp_delivered: u64,
    /// Delivered FPs landing within `tau_d` of an ego detection.
    pub fp_near_ego: u64,
    /// Of those, the ones kept out of the fused set.
    pub fp_near_ego_absorbed: u64,
    /// FPs appended to the fused set.
    pub fp_injected: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub seed: u64,
    pub duration_frames: u64,
    /// Full configuration; rerunning it reproduces this report exactly.
    pub config: ScenarioConfig,
    pub metrics: TrackingMetrics,
    pub bandwidth: BandwidthSummary,
    pub sender_quality: SenderQuality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk: Option<TopKCoverage>,
    pub fp_containment: FpContainment,
    /// Transmitted reference points per message.
    pub effective_points_histogram: BTreeMap<usize, u64>,
    /// GT-matched sender detections per sender frame.
    pub valid_detection_histogram: BTreeMap<usize, u64>,
    pub world_reseeds: u64,
    pub frames: Vec<FrameMetrics>,
}

/// A report plus the raw streams it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub events: Vec<FrameEvents>,
    pub ground_truth: Vec<GroundTruthFrame>,
    pub ledger: Vec<TransmissionRecord>,
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport, ScenarioError> {
    run_scenario_detailed(cfg).map(|r| r.report)
}

struct Stats {
    sender: SenderQuality,
    topk: TopKCoverage,
    fp: FpContainment,
    effective: BTreeMap<usize, u64>,
    valid: BTreeMap<usize, u64>,
}

/// Sender pose and detection provenance at send time, keyed by
/// (agent, frame), for use when the payload arrives.
type SentLog = BTreeMap<(u32, u64), (TransformSE3, Vec<Provenance>)>;

pub fn run_scenario_detailed(cfg: &ScenarioConfig) -> Result<ScenarioRun, ScenarioError> {
    cfg.validate()?;
    let ego_idx = cfg.ego_index().expect("validated: one ego");
    let ego_profile = &cfg.agents[ego_idx].detector;
    let dt = cfg.channel.dt();
    let fusion = &cfg.fusion;

    let mut world = WorldState::spawn(&cfg.world, &cfg.agents, &mut stream(cfg.seed, &[STREAM_WORLD]))?;
    let mut channel = Channel::new(cfg.channel);
    let mut tracker = Tracker::new(cfg.tracker);
    let mut sent: SentLog = BTreeMap::new();
    let mut stats = Stats {
        sender: SenderQuality::default(),
        topk: TopKCoverage {
            k: cfg.query_fusion.map_or(0, |q| q.k),
            ..Default::default()
        },
        fp: FpContainment::default(),
        effective: BTreeMap::new(),
        valid: BTreeMap::new(),
    };
    let mut events = Vec::new();
    let mut ground_truth = Vec::new();
    let mut frames = Vec::new();
    let mut prev_ego_pose: Option<TransformSE3> = None;

    for f in 0..cfg.duration_frames {
        if f > 0 {
            world = step_world(&world, dt, &cfg.world, &cfg.agents);
        }
        let ego_pose = world.agents[ego_idx].pose;
        let ego_id = cfg.agents[ego_idx].agent_id;
        let ego_det = simulate_detector(&world, ego_idx, ego_profile, &mut stream(cfg.seed, &[STREAM_DETECT, ego_id.into(), f]));
        let mut ego_frame = ego_det.frame;
        ego_frame.coordinates = CoordinateFrame::Ego;

        let ledger_before = channel.ledger().len();
        for (s, agent) in cfg.agents.iter().enumerate() {
            if agent.role != AgentRole::Sender {
                continue;
            }
            transmit(cfg, &world, s, f, &mut channel, &mut sent, &mut stats)?;
        }
        let new_records = &channel.ledger()[ledger_before..];
        let mut fm = FrameMetrics {
            frame_index: f,
            ego_detections: ego_frame.len(),
            bytes_sent: new_records.iter().map(TransmissionRecord::total_bytes).sum(),
            transmitted_points: new_records
                .iter()
                .filter(|r| r.kind == PayloadKind::ReferencePoints)
                .map(|r| r.count)
                .sum(),
            transmitted_queries: new_records
                .iter()
                .filter(|r| r.kind == PayloadKind::Queries)
                .map(|r| r.count)
                .sum(),
            ..Default::default()
        };

        let mut fused = ego_frame.clone();
        let mut ego_queries: Option<Vec<Query>> = None;
        for msg in channel.deliver(f) {
            let (sender_pose, prov) = sent
                .remove(&(msg.agent_id, msg.send_frame))
                .expect("every delivered payload was logged when sent");
            let to_ego = ego_pose.inverse().compose(&sender_pose);
            let (payload, _) = decode_payload(&msg.bytes)?;
            match payload {
                Payload::Points(frame) => {
                    let aligned = align_sender_frame(&frame, &to_ego);
                    let matches = associate(&fused, &aligned, fusion);
                    count_fp(&prov, &aligned, &ego_frame, &matches.unmatched_sender, fusion, &mut stats.fp);
                    fused = fuse(&fused, &aligned, &matches, fusion);
                }
                Payload::Queries(queries) => {
                    let qcfg = cfg.query_fusion.expect("queries are only sent with query fusion on");
                    let selected: Vec<Query> = queries
                        .into_iter()
                        .map(|q| Query {
                            reference_point: to_ego.transform_point(&q.reference_point),
                            ..q
                        })
                        .collect();
                    let ego_q = ego_queries.get_or_insert_with(|| {
                        synthesize_queries(
                            &ego_frame.points,
                            qcfg.embed_dim,
                            &mut stream(cfg.seed, &[STREAM_EGO_QUERIES, f]),
                        )
                    });
                    let ego_pos: Vec<Point3> = ego_q.iter().map(|q| q.reference_point).collect();
                    let sel_pos: Vec<Point3> = selected.iter().map(|q| q.reference_point).collect();
                    let pairing = associate_points(
                        &ego_pos,
                        &sel_pos,
                        fusion.tau_d,
                        fusion.matching_policy,
                        fusion.distance_metric,
                    );
                    let out = fuse_queries(ego_q, &selected, &pairing, &qcfg)?;
                    *ego_q = out.queries;
                    let mut fallback = AgentFrame::new(msg.agent_id, msg.send_frame, fused.timestamp)
                        .with_points(out.fallback);
                    fallback.coordinates = CoordinateFrame::Ego;
                    let matches = associate(&fused, &fallback, fusion);
                    fused = fuse(&fused, &fallback, &matches, fusion);
                }
            }
        }
        fm.fused_points = fused.len();
        fm.injected_points = fused.len() - ego_frame.len();

        if let Some(prev) = prev_ego_pose {
            tracker.predict(dt);
            tracker.apply_ego_motion(&ego_pose.inverse().compose(&prev));
        }
        prev_ego_pose = Some(ego_pose);
        let mut ev = tracker.update(&fused);
        ev.frame_index = f;
        fm.live_tracks = ev.tracks.len();

        let to_ego_local = ego_pose.inverse();
        let objects: Vec<GtObservation> = world
            .objects
            .iter()
            .map(|o| GtObservation {
                gt_id: o.gt_id,
                position: to_ego_local.transform_point(&o.position),
            })
            .filter(|g| fusion.visible_range.contains(&g.position))
            .collect();
        fm.gt_in_range = objects.len();
        ground_truth.push(GroundTruthFrame {
            frame_index: f,
            objects,
        });
        events.push(ev);
        frames.push(fm);
    }

    let ledger = channel.into_ledger();
    let metrics = evaluate(&events, &ground_truth, cfg.tracker.gate_distance, cfg.tracker.distance_metric);
    let mut sender = stats.sender;
    if sender.sender_frames > 0 {
        sender.mean_gt_matched_per_frame = sender.gt_matched_detections as f64 / sender.sender_frames as f64;
    }
    let refpts_messages: u64 = stats.effective.values().sum();
    if refpts_messages > 0 {
        sender.mean_effective_points = sender.effective_points as f64 / refpts_messages as f64;
    }
    let topk = cfg.query_fusion.map(|_| {
        let mut t = stats.topk;
        t.coverage = if t.gt_matched_detections == 0 {
            1.0
        } else {
            t.selected_gt_matched as f64 / t.gt_matched_detections as f64
        };
        t
    });
    let report = ScenarioReport {
        seed: cfg.seed,
        duration_frames: cfg.duration_frames,
        config: cfg.clone(),
        metrics,
        bandwidth: BandwidthSummary::from_ledger(&ledger, cfg.duration_frames, cfg.channel.fps),
        sender_quality: sender,
        topk,
        fp_containment: stats.fp,
        effective_points_histogram: stats.effective,
        valid_detection_histogram: stats.valid,
        world_reseeds: world.reseeded,
        frames,
    };
    Ok(ScenarioRun {
        report,
        events,
        ground_truth,
        ledger,
    })
}

/// Indices of sender detections matched one-to-one to a visible GT object.
fn gt_matched(det: &Detections, fusion: &FusionConfig) -> Vec<bool> {
    let gt: Vec<Point3> = det.visible_gt.iter().map(|g| g.position).collect();
    let m = associate_points(
        &gt,
        &det.frame.positions(),
        fusion.tau_d,
        MatchingPolicy::OptimalAssignment,
        fusion.distance_metric,
    );
    let mut out = vec![false; det.frame.len()];
    for p in m.pairs {
        out[p.sender] = true;
    }
    out
}

fn transmit(
    cfg: &ScenarioConfig,
    world: &WorldState,
    s: usize,
    f: u64,
    channel: &mut Channel,
    sent: &mut SentLog,
    stats: &mut Stats,
) -> Result<(), ScenarioError> {
    let agent = &cfg.agents[s];
    let id = u64::from(agent.agent_id);
    let tx = &cfg.transmission;
    let det = simulate_detector(world, s, &agent.detector, &mut stream(cfg.seed, &[STREAM_DETECT, id, f]));

    let matched = gt_matched(&det, &cfg.fusion);
    let n_matched = matched.iter().filter(|m| **m).count();
    stats.sender.sender_frames += 1;
    stats.sender.gt_matched_detections += n_matched as u64;
    *stats.valid.entry(n_matched).or_default() += 1;

    let needs_full_set = tx.points.is_some() || cfg.query_fusion.is_some();
    let mut qrng = stream(cfg.seed, &[STREAM_QUERY_SET, id, f]);
    let (full, full_prov) = if needs_full_set {
        fill_query_set(
            &det,
            cfg.query_capacity,
            &agent.detector.fov_range,
            tx.background_confidence_range,
            &mut qrng,
        )
    } else {
        (det.frame.points.clone(), det.provenance.clone())
    };
    let keys: Vec<(f64, u64)> = full.iter().map(|p| (p.confidence, p.instance_id)).collect();
    let mut crng = stream(cfg.seed, &[STREAM_CHANNEL, id, f]);

    if let Some(qcfg) = cfg.query_fusion {
        let queries = synthesize_queries(&full, qcfg.embed_dim, &mut qrng);
        let chosen = top_k_indices(&keys, qcfg.k);
        stats.topk.gt_matched_detections += n_matched as u64;
        stats.topk.selected_gt_matched += chosen.iter().filter(|&&i| matched.get(i).copied().unwrap_or(false)).count() as u64;
        let selected: Vec<Query> = chosen.iter().map(|&i| queries[i].clone()).collect();
        let msg = WireMessage::from_queries(agent.agent_id, f, world.time, &selected, tx.confidence)?;
        let bytes = encode(&msg)?;
        if channel.send(f, PayloadKind::Queries, &msg, bytes, &mut crng) {
            sent.insert((agent.agent_id, f), (world.agents[s].pose, chosen.iter().map(|&i| full_prov[i]).collect()));
        }
        return Ok(());
    }

    let (points, prov) = match tx.points {
        Some(n) => {
            let chosen = top_k_indices(&keys, n);
            (
                chosen.iter().map(|&i| full[i].clone()).collect(),
                chosen.iter().map(|&i| full_prov[i]).collect(),
            )
        }
        None => (full, full_prov),
    };
    let frame = AgentFrame::new(agent.agent_id, f, world.time).with_points(points);
    let flags = tx.attrs.flags().with_confidence(tx.confidence);
    let msg = WireMessage::from_frame(&frame, flags)?;
    let bytes = encode(&msg)?;
    stats.sender.effective_points += frame.len() as u64;
    *stats.effective.entry(frame.len()).or_default() += 1;
    if channel.send(f, PayloadKind::ReferencePoints, &msg, bytes, &mut crng) {
        sent.insert((agent.agent_id, f), (world.agents[s].pose, prov));
    }
    Ok(())
}

fn count_fp(
    prov: &[Provenance],
    aligned: &AgentFrame,
    ego: &AgentFrame,
    unmatched_sender: &[usize],
    fusion: &FusionConfig,
    fp: &mut FpContainment,
) {
    for (i, p) in aligned.points.iter().enumerate() {
        if prov.get(i) != Some(&Provenance::FalsePositive) {
            continue;
        }
        fp.fp_delivered += 1;
        let appended = unmatched_sender.contains(&i) && fusion.visible_range.contains(&p.position);
        if appended {
            fp.fp_injected += 1;
        }
        let near = ego
            .points
            .iter()
            .any(|e| fusion.distance_metric.distance(&e.position, &p.position) < fusion.tau_d);
        if near {
            fp.fp_near_ego += 1;
            if !appended {
                fp.fp_near_ego_absorbed += 1;
            }
        }
    }
}
