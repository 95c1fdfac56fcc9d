//! Velocity-propagating multi-object tracker over fused reference points and
//! CLEAR-style evaluation against ground truth.
//!
//! Tracks move by their last known velocity between frames, are associated to
//! the fused detections with the same gated one-to-one matcher used for
//! cross-agent association, and adopt matched detection state outright.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assignment::MatchingPolicy;
use crate::geometry::{Point3, Size3, TransformSE3, Velocity2};
use crate::refpts::{associate_points, AgentFrame, DistanceMetric, Origin, DEFAULT_TAU_D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackSource {
    Ego,
    SenderInjected,
}

impl From<Origin> for TrackSource {
    fn from(o: Origin) -> Self {
        match o {
            Origin::Local => TrackSource::Ego,
            Origin::Injected { .. } => TrackSource::SenderInjected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: u64,
    pub position: Point3,
    pub velocity: Option<Velocity2>,
    pub size: Option<Size3>,
    pub confidence: f64,
    pub age_frames: u32,
    pub misses: u32,
    pub source: TrackSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub gate_distance: f64,
    /// A track dies once it has missed more than this many frames in a row.
    pub max_misses: u32,
    /// Confidence multiplier per missed frame.
    pub confidence_decay: f64,
    pub matching_policy: MatchingPolicy,
    pub distance_metric: DistanceMetric,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gate_distance: DEFAULT_TAU_D,
            max_misses: 3,
            confidence_decay: 0.9,
            matching_policy: MatchingPolicy::GreedyDistance,
            distance_metric: DistanceMetric::Euclidean3d,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gate_distance.is_finite() && self.gate_distance > 0.0) {
            return Err(format!("gate_distance must be positive, got {}", self.gate_distance));
        }
        if !(self.confidence_decay > 0.0 && self.confidence_decay <= 1.0) {
            return Err(format!("confidence_decay must lie in (0, 1], got {}", self.confidence_decay));
        }
        Ok(())
    }
}

/// Constant-velocity prediction. Tracks without velocity stay put.
pub fn predict(tracks: &[Track], dt: f64) -> Vec<Track> {
    tracks
        .iter()
        .map(|t| Track {
            position: match &t.velocity {
                Some(v) => t.position.advanced(v, dt),
                None => t.position,
            },
            ..t.clone()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackMatch {
    pub track_id: u64,
    pub detection: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSnapshot {
    pub track_id: u64,
    pub position: Point3,
    pub confidence: f64,
    pub misses: u32,
    pub source: TrackSource,
}

/// Everything the evaluator needs from one tracker step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameEvents {
    pub frame_index: u64,
    pub births: Vec<u64>,
    pub deaths: Vec<u64>,
    pub matches: Vec<TrackMatch>,
    /// Live tracks after the update, in tracker order.
    pub tracks: Vec<TrackSnapshot>,
    /// Fused detections the step consumed.
    pub detections: Vec<Point3>,
}

/// Owns the live track set and the id counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracker {
    pub cfg: TrackerConfig,
    pub tracks: Vec<Track>,
    next_id: u64,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Self {
        Self {
            cfg,
            tracks: Vec::new(),
            next_id: 0,
        }
    }

    pub fn predict(&mut self, dt: f64) {
        self.tracks = predict(&self.tracks, dt);
    }

    /// Re-expresses tracks after the ego moved; `delta` maps the previous ego
    /// frame into the current one.
    pub fn apply_ego_motion(&mut self, delta: &TransformSE3) {
        for t in &mut self.tracks {
            t.position = delta.transform_point(&t.position);
            t.velocity = t.velocity.map(|v| delta.transform_velocity(&v));
        }
    }

    pub fn update(&mut self, fused: &AgentFrame) -> FrameEvents {
        let (tracks, events) = update(&self.tracks, fused, &self.cfg, &mut self.next_id);
        self.tracks = tracks;
        events
    }
}

/// One association step. Unpaired detections that still lie inside the gate
/// of some track are treated as duplicates of that track and do not spawn.
pub fn update(
    tracks: &[Track],
    fused: &AgentFrame,
    cfg: &TrackerConfig,
    next_id: &mut u64,
) -> (Vec<Track>, FrameEvents) {
    let track_pos: Vec<Point3> = tracks.iter().map(|t| t.position).collect();
    let det_pos = fused.positions();
    let assoc = associate_points(
        &track_pos,
        &det_pos,
        cfg.gate_distance,
        cfg.matching_policy,
        cfg.distance_metric,
    );

    let mut events = FrameEvents {
        frame_index: fused.frame_index,
        detections: det_pos,
        ..Default::default()
    };
    let mut partner: Vec<Option<(usize, f64)>> = vec![None; tracks.len()];
    for p in &assoc.pairs {
        partner[p.ego] = Some((p.sender, p.distance));
    }

    let mut out = Vec::with_capacity(tracks.len() + assoc.unmatched_sender.len());
    for (t, pair) in tracks.iter().zip(&partner) {
        let mut t = t.clone();
        t.age_frames += 1;
        match pair {
            Some((d, distance)) => {
                let det = &fused.points[*d];
                t.position = det.position;
                t.velocity = det.velocity.or(t.velocity);
                t.size = det.size.or(t.size);
                t.confidence = det.confidence;
                t.misses = 0;
                events.matches.push(TrackMatch {
                    track_id: t.track_id,
                    detection: *d,
                    distance: *distance,
                });
                out.push(t);
            }
            None => {
                t.misses += 1;
                t.confidence *= cfg.confidence_decay;
                if t.misses > cfg.max_misses {
                    events.deaths.push(t.track_id);
                } else {
                    out.push(t);
                }
            }
        }
    }
    for &d in &assoc.unmatched_sender {
        let det = &fused.points[d];
        let id = *next_id;
        *next_id += 1;
        events.births.push(id);
        out.push(Track {
            track_id: id,
            position: det.position,
            velocity: det.velocity,
            size: det.size,
            confidence: det.confidence,
            age_frames: 1,
            misses: 0,
            source: det.origin.into(),
        });
    }
    events.tracks = out
        .iter()
        .map(|t| TrackSnapshot {
            track_id: t.track_id,
            position: t.position,
            confidence: t.confidence,
            misses: t.misses,
            source: t.source,
        })
        .collect();
    (out, events)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtObservation {
    pub gt_id: u64,
    pub position: Point3,
}

/// Ground-truth objects inside the ego's evaluation region, ego frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    pub frame_index: u64,
    pub objects: Vec<GtObservation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackingMetrics {
    pub recall: f64,
    pub precision: f64,
    pub id_switches: u64,
    /// Mean length, in frames, of runs where a GT object stays matched to the
    /// same track in consecutive frames.
    pub mean_track_persistence: f64,
    pub fused_detection_recall: f64,
    pub gt_instances: u64,
    pub gt_matched: u64,
    pub track_instances: u64,
    pub detections_matched: u64,
}

/// Per-object view of the same counting rules.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectStats {
    pub present_frames: u64,
    pub matched_frames: u64,
    pub id_switches: u64,
    pub runs: Vec<u64>,
    pub mean_persistence: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Optimal gated matching of GT to candidate positions; returns, per GT
/// object, the index of its candidate.
fn match_gt(gt: &[GtObservation], candidates: &[Point3], gate: f64, metric: DistanceMetric) -> Vec<Option<usize>> {
    let positions: Vec<Point3> = gt.iter().map(|g| g.position).collect();
    let m = associate_points(&positions, candidates, gate, MatchingPolicy::OptimalAssignment, metric);
    let mut out = vec![None; gt.len()];
    for p in m.pairs {
        out[p.ego] = Some(p.sender);
    }
    out
}

#[derive(Default)]
struct RunState {
    last_frame: Option<u64>,
    last_track: Option<u64>,
    run: u64,
    stats: ObjectStats,
}

impl RunState {
    fn close_run(&mut self) {
        if self.run > 0 {
            self.stats.runs.push(self.run);
            self.run = 0;
        }
    }

    fn observe(&mut self, frame: u64, track: Option<u64>) {
        self.stats.present_frames += 1;
        let Some(track) = track else {
            self.close_run();
            return;
        };
        self.stats.matched_frames += 1;
        if self.last_track.is_some_and(|prev| prev != track) {
            self.stats.id_switches += 1;
        }
        let continues = self.run > 0
            && self.last_track == Some(track)
            && self.last_frame.is_some_and(|f| f + 1 == frame);
        if !continues {
            self.close_run();
        }
        self.run += 1;
        self.last_track = Some(track);
        self.last_frame = Some(frame);
    }

    fn finish(mut self) -> ObjectStats {
        self.close_run();
        let n = self.stats.runs.len() as u64;
        self.stats.mean_persistence = if n == 0 {
            0.0
        } else {
            self.stats.runs.iter().sum::<u64>() as f64 / n as f64
        };
        self.stats
    }
}

fn per_object(
    events: &[FrameEvents],
    gt: &[GroundTruthFrame],
    gate: f64,
    metric: DistanceMetric,
) -> (BTreeMap<u64, ObjectStats>, TrackingMetrics) {
    let by_frame: BTreeMap<u64, &FrameEvents> = events.iter().map(|e| (e.frame_index, e)).collect();
    let mut states: BTreeMap<u64, RunState> = BTreeMap::new();
    let mut m = TrackingMetrics::default();
    let mut matched_tracks = 0u64;
    for frame in gt {
        let empty = FrameEvents::default();
        let ev = by_frame.get(&frame.frame_index).copied().unwrap_or(&empty);
        let track_pos: Vec<Point3> = ev.tracks.iter().map(|t| t.position).collect();
        let assigned = match_gt(&frame.objects, &track_pos, gate, metric);
        let det_assigned = match_gt(&frame.objects, &ev.detections, gate, metric);

        m.gt_instances += frame.objects.len() as u64;
        m.track_instances += ev.tracks.len() as u64;
        m.detections_matched += det_assigned.iter().flatten().count() as u64;
        for (obj, a) in frame.objects.iter().zip(&assigned) {
            let track = a.map(|i| ev.tracks[i].track_id);
            if track.is_some() {
                m.gt_matched += 1;
                matched_tracks += 1;
            }
            states
                .entry(obj.gt_id)
                .or_default()
                .observe(frame.frame_index, track);
        }
    }
    let stats: BTreeMap<u64, ObjectStats> = states.into_iter().map(|(k, s)| (k, s.finish())).collect();
    let runs: Vec<u64> = stats.values().flat_map(|s| s.runs.iter().copied()).collect();
    m.recall = ratio(m.gt_matched, m.gt_instances);
    m.precision = ratio(matched_tracks, m.track_instances);
    m.fused_detection_recall = ratio(m.detections_matched, m.gt_instances);
    m.id_switches = stats.values().map(|s| s.id_switches).sum();
    m.mean_track_persistence = if runs.is_empty() {
        0.0
    } else {
        runs.iter().sum::<u64>() as f64 / runs.len() as f64
    };
    (stats, m)
}

/// Aggregate metrics over a run. GT and events are joined on frame index.
pub fn evaluate(events: &[FrameEvents], gt: &[GroundTruthFrame], gate: f64, metric: DistanceMetric) -> TrackingMetrics {
    per_object(events, gt, gate, metric).1
}

pub fn object_stats(
    events: &[FrameEvents],
    gt: &[GroundTruthFrame],
    gate: f64,
    metric: DistanceMetric,
) -> BTreeMap<u64, ObjectStats> {
    per_object(events, gt, gate, metric).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refpts::ReferencePoint;

    fn det_frame(frame: u64, pts: &[(f64, f64)]) -> AgentFrame {
        AgentFrame::new(0, frame, frame as f64 * 0.2).with_points(
            pts.iter()
                .enumerate()
                .map(|(i, &(x, y))| ReferencePoint::new(i as u64, Point3::new(x, y, 0.0), 0.9))
                .collect(),
        )
    }

    fn track(id: u64, x: f64, v: Option<(f64, f64)>) -> Track {
        Track {
            track_id: id,
            position: Point3::new(x, 0.0, 0.0),
            velocity: v.map(|(vx, vy)| Velocity2::new(vx, vy)),
            size: None,
            confidence: 1.0,
            age_frames: 1,
            misses: 0,
            source: TrackSource::Ego,
        }
    }

    #[test]
    fn predict_moves_only_tracks_with_velocity() {
        let out = predict(&[track(0, 1.0, None), track(1, 1.0, Some((2.0, 0.0)))], 0.2);
        assert_eq!(out[0].position.x, 1.0);
        assert!((out[1].position.x - 1.4).abs() < 1e-12);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn empty_detections_make_everything_miss() {
        let mut next = 2;
        let (out, ev) = update(
            &[track(0, 0.0, None), track(1, 5.0, None)],
            &det_frame(0, &[]),
            &TrackerConfig::default(),
            &mut next,
        );
        assert!(out.iter().all(|t| t.misses == 1 && (t.confidence - 0.9).abs() < 1e-12));
        assert!(ev.births.is_empty() && ev.deaths.is_empty());
    }

    #[test]
    fn tracks_die_past_max_misses() {
        let mut tr = Tracker::new(TrackerConfig::default());
        tr.update(&det_frame(0, &[(0.0, 0.0)]));
        let mut deaths = Vec::new();
        for f in 1..=4 {
            deaths.extend(tr.update(&det_frame(f, &[])).deaths);
        }
        assert_eq!(deaths, vec![0]);
        assert!(tr.tracks.is_empty());
    }

    #[test]
    fn stationary_object_perfect_detections() {
        let mut tr = Tracker::new(TrackerConfig::default());
        let mut events = Vec::new();
        let mut gt = Vec::new();
        for f in 0..10 {
            events.push(tr.update(&det_frame(f, &[(3.0, 4.0)])));
            gt.push(GroundTruthFrame {
                frame_index: f,
                objects: vec![GtObservation {
                    gt_id: 7,
                    position: Point3::new(3.0, 4.0, 0.0),
                }],
            });
        }
        assert_eq!(tr.tracks.len(), 1);
        let m = evaluate(&events, &gt, 2.0, DistanceMetric::Euclidean3d);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.id_switches, 0);
        assert_eq!(m.mean_track_persistence, 10.0);
        assert_eq!(m.fused_detection_recall, 1.0);
    }

    #[test]
    fn no_tracks_means_zero_recall() {
        let gt = vec![GroundTruthFrame {
            frame_index: 0,
            objects: vec![GtObservation { gt_id: 1, position: Point3::default() }],
        }];
        let events = vec![FrameEvents::default()];
        let m = evaluate(&events, &gt, 2.0, DistanceMetric::Euclidean3d);
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.mean_track_persistence, 0.0);
    }

    #[test]
    fn id_switch_and_runs() {
        let mk = |f: u64, id: u64| FrameEvents {
            frame_index: f,
            tracks: vec![TrackSnapshot {
                track_id: id,
                position: Point3::default(),
                confidence: 1.0,
                misses: 0,
                source: TrackSource::Ego,
            }],
            ..Default::default()
        };
        let events = vec![mk(0, 1), mk(1, 1), mk(2, 2), FrameEvents { frame_index: 3, ..Default::default() }, mk(4, 2)];
        let gt: Vec<GroundTruthFrame> = (0..5)
            .map(|f| GroundTruthFrame {
                frame_index: f,
                objects: vec![GtObservation { gt_id: 0, position: Point3::default() }],
            })
            .collect();
        let s = &object_stats(&events, &gt, 2.0, DistanceMetric::Euclidean3d)[&0];
        assert_eq!(s.id_switches, 1);
        assert_eq!(s.runs, vec![2, 1, 1]);
        assert_eq!(s.matched_frames, 4);
        assert_eq!(s.present_frames, 5);
    }

    #[test]
    fn ego_motion_compensation() {
        let mut tr = Tracker::new(TrackerConfig::default());
        tr.tracks.push(track(0, 10.0, Some((1.0, 0.0))));
        tr.apply_ego_motion(&TransformSE3::from_translation(-2.0, 0.0, 0.0));
        assert_eq!(tr.tracks[0].position.x, 8.0);
        assert_eq!(tr.tracks[0].velocity, Some(Velocity2::new(1.0, 0.0)));
    }
}
