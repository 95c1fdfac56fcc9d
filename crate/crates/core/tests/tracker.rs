use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refpts_core::assignment::MatchingPolicy;
use refpts_core::geometry::{Point3, Velocity2};
use refpts_core::refpts::{AgentFrame, DistanceMetric, ReferencePoint};
use refpts_core::tracker::{
    evaluate, predict, FrameEvents, GroundTruthFrame, GtObservation, Track, TrackSource, Tracker, TrackerConfig,
};

const DT: f64 = 0.2;
const GATE: f64 = 2.0;

type Best = (usize, f64, Vec<(usize, usize)>);

fn dist(a: &Point3, b: &Point3) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
}

/// Exhaustive search over every partial injection of rows into columns,
/// memoised on (row, used columns). Most sub-gate pairs first, then least
/// total distance.
fn exhaustive(d: &[Vec<f64>], cols: usize, gate: f64) -> Vec<(usize, usize)> {
    fn best(
        d: &[Vec<f64>],
        cols: usize,
        gate: f64,
        row: usize,
        used: u64,
        memo: &mut HashMap<(usize, u64), Best>,
    ) -> Best {
        if row == d.len() {
            return (0, 0.0, Vec::new());
        }
        if let Some(v) = memo.get(&(row, used)) {
            return v.clone();
        }
        let mut out = best(d, cols, gate, row + 1, used, memo);
        for c in 0..cols {
            if used & (1 << c) != 0 || d[row][c] >= gate {
                continue;
            }
            let (n, cost, mut pairs) = best(d, cols, gate, row + 1, used | (1 << c), memo);
            let (n, cost) = (n + 1, cost + d[row][c]);
            if n > out.0 || (n == out.0 && cost < out.1) {
                pairs.push((row, c));
                out = (n, cost, pairs);
            }
        }
        memo.insert((row, used), out.clone());
        out
    }
    let mut pairs = best(d, cols, gate, 0, 0, &mut HashMap::new()).2;
    pairs.sort_unstable();
    pairs
}

fn matrix(a: &[Point3], b: &[Point3]) -> Vec<Vec<f64>> {
    a.iter().map(|p| b.iter().map(|q| dist(p, q)).collect()).collect()
}

struct OracleTrack {
    id: u64,
    pos: Point3,
    vel: Option<Velocity2>,
    misses: u32,
}

/// Second tracker: predict, exhaustive association, adopt-on-match, kill past
/// `max_misses`, and spawn only from detections outside every track gate.
fn oracle_tracker(frames: &[AgentFrame], max_misses: u32) -> Vec<Vec<(u64, Point3)>> {
    let mut tracks: Vec<OracleTrack> = Vec::new();
    let mut next = 0;
    let mut out = Vec::new();
    for (i, frame) in frames.iter().enumerate() {
        if i > 0 {
            for t in &mut tracks {
                if let Some(v) = t.vel {
                    t.pos = Point3::new(t.pos.x + v.vx * DT, t.pos.y + v.vy * DT, t.pos.z);
                }
            }
        }
        let dets: Vec<Point3> = frame.points.iter().map(|p| p.position).collect();
        let tp: Vec<Point3> = tracks.iter().map(|t| t.pos).collect();
        let d = matrix(&tp, &dets);
        let pairs = exhaustive(&d, dets.len(), GATE);
        let mut taken = vec![false; dets.len()];
        let mut hit = vec![false; tracks.len()];
        for &(t, c) in &pairs {
            taken[c] = true;
            hit[t] = true;
            tracks[t].pos = dets[c];
            tracks[t].vel = frame.points[c].velocity.or(tracks[t].vel);
            tracks[t].misses = 0;
        }
        for (t, h) in tracks.iter_mut().zip(&hit) {
            if !h {
                t.misses += 1;
            }
        }
        let spawn: Vec<usize> = (0..dets.len())
            .filter(|&c| !taken[c] && d.iter().all(|row| row[c] >= GATE))
            .collect();
        tracks.retain(|t| t.misses <= max_misses);
        for c in spawn {
            tracks.push(OracleTrack { id: next, pos: dets[c], vel: frame.points[c].velocity, misses: 0 });
            next += 1;
        }
        out.push(tracks.iter().map(|t| (t.id, t.pos)).collect());
    }
    out
}

#[derive(Debug, PartialEq)]
struct Counts {
    gt: u64,
    matched: u64,
    tracks: u64,
    det_matched: u64,
    switches: u64,
    runs: Vec<u64>,
}

/// Counting rules written out directly from their definitions.
fn oracle_counts(tracks: &[Vec<(u64, Point3)>], dets: &[Vec<Point3>], gt: &[GroundTruthFrame]) -> Counts {
    let mut c = Counts { gt: 0, matched: 0, tracks: 0, det_matched: 0, switches: 0, runs: Vec::new() };
    let mut last: BTreeMap<u64, u64> = BTreeMap::new();
    let mut run: BTreeMap<u64, (u64, u64, u64)> = BTreeMap::new();
    let mut runs: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for (f, frame) in gt.iter().enumerate() {
        let g: Vec<Point3> = frame.objects.iter().map(|o| o.position).collect();
        let tp: Vec<Point3> = tracks[f].iter().map(|t| t.1).collect();
        let pairs = exhaustive(&matrix(&g, &tp), tp.len(), GATE);
        c.gt += g.len() as u64;
        c.tracks += tp.len() as u64;
        c.matched += pairs.len() as u64;
        c.det_matched += exhaustive(&matrix(&g, &dets[f]), dets[f].len(), GATE).len() as u64;
        for (k, obj) in frame.objects.iter().enumerate() {
            let id = obj.gt_id;
            match pairs.iter().find(|p| p.0 == k) {
                Some(&(_, t)) => {
                    let tid = tracks[f][t].0;
                    if last.get(&id).is_some_and(|&prev| prev != tid) {
                        c.switches += 1;
                    }
                    last.insert(id, tid);
                    let entry = run.entry(id).or_insert((tid, f as u64, 0));
                    if entry.2 > 0 && entry.0 == tid && entry.1 + 1 == f as u64 {
                        entry.2 += 1;
                    } else {
                        if entry.2 > 0 {
                            runs.entry(id).or_default().push(entry.2);
                        }
                        *entry = (tid, f as u64, 1);
                    }
                    entry.1 = f as u64;
                }
                None => {
                    if let Some(entry) = run.get_mut(&id) {
                        if entry.2 > 0 {
                            runs.entry(id).or_default().push(entry.2);
                        }
                        entry.2 = 0;
                    }
                }
            }
        }
    }
    for (id, entry) in run {
        if entry.2 > 0 {
            runs.entry(id).or_default().push(entry.2);
        }
    }
    c.runs = runs.into_values().flatten().collect();
    c
}

struct Scene {
    frames: Vec<AgentFrame>,
    gt: Vec<GroundTruthFrame>,
}

/// Five objects crossing a small box, noisy detections, misses and the odd
/// false alarm.
fn scene(rng: &mut ChaCha8Rng, n_frames: u64) -> Scene {
    let mut obj: Vec<(Point3, Velocity2)> = (0..5)
        .map(|_| {
            (
                Point3::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), 0.0),
                Velocity2::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)),
            )
        })
        .collect();
    let mut frames = Vec::new();
    let mut gt = Vec::new();
    for f in 0..n_frames {
        if f > 0 {
            for (p, v) in &mut obj {
                *p = Point3::new(p.x + v.vx * DT, p.y + v.vy * DT, 0.0);
            }
        }
        let mut pts = Vec::new();
        for (p, v) in &obj {
            if rng.random_bool(0.2) {
                continue;
            }
            let noisy = Point3::new(p.x + rng.random_range(-0.5..0.5), p.y + rng.random_range(-0.5..0.5), 0.0);
            let mut rp = ReferencePoint::new(pts.len() as u64, noisy, 0.8);
            if rng.random_bool(0.7) {
                rp = rp.with_velocity(*v);
            }
            pts.push(rp);
        }
        if rng.random_bool(0.15) {
            let p = Point3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), 0.0);
            pts.push(ReferencePoint::new(pts.len() as u64, p, 0.3));
        }
        frames.push(AgentFrame::new(1, f, f as f64 * DT).with_points(pts));
        gt.push(GroundTruthFrame {
            frame_index: f,
            objects: obj.iter().enumerate().map(|(i, (p, _))| GtObservation { gt_id: i as u64, position: *p }).collect(),
        });
    }
    Scene { frames, gt }
}

fn run_tracker(frames: &[AgentFrame], cfg: TrackerConfig) -> Vec<FrameEvents> {
    let mut tracker = Tracker::new(cfg);
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            if i > 0 {
                tracker.predict(DT);
            }
            tracker.update(f)
        })
        .collect()
}

#[test]
fn tracker_and_metrics_match_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let cfg = TrackerConfig {
        gate_distance: GATE,
        max_misses: 2,
        matching_policy: MatchingPolicy::OptimalAssignment,
        ..Default::default()
    };
    let mut total_switches = 0;
    for _ in 0..200 {
        let s = scene(&mut rng, 25);
        let events = run_tracker(&s.frames, cfg);
        let oracle_tracks = oracle_tracker(&s.frames, cfg.max_misses);
        for (ev, ot) in events.iter().zip(&oracle_tracks) {
            let lib: Vec<(u64, Point3)> = ev.tracks.iter().map(|t| (t.track_id, t.position)).collect();
            let mut lib_sorted = lib.clone();
            lib_sorted.sort_by_key(|t| t.0);
            let mut or_sorted = ot.clone();
            or_sorted.sort_by_key(|t| t.0);
            assert_eq!(lib_sorted.len(), or_sorted.len());
            for (a, b) in lib_sorted.iter().zip(&or_sorted) {
                assert_eq!(a.0, b.0);
                assert!(dist(&a.1, &b.1) < 1e-9);
            }
        }

        let m = evaluate(&events, &s.gt, GATE, DistanceMetric::Euclidean3d);
        let lib_tracks: Vec<Vec<(u64, Point3)>> =
            events.iter().map(|e| e.tracks.iter().map(|t| (t.track_id, t.position)).collect()).collect();
        let dets: Vec<Vec<Point3>> = s.frames.iter().map(|f| f.points.iter().map(|p| p.position).collect()).collect();
        let c = oracle_counts(&lib_tracks, &dets, &s.gt);
        assert_eq!(m.id_switches, c.switches);
        assert_eq!((m.gt_instances, m.gt_matched, m.track_instances, m.detections_matched), (c.gt, c.matched, c.tracks, c.det_matched));
        assert!((m.recall - c.matched as f64 / c.gt as f64).abs() < 1e-12);
        assert!((m.precision - if c.tracks == 0 { 1.0 } else { c.matched as f64 / c.tracks as f64 }).abs() < 1e-12);
        assert!((m.fused_detection_recall - c.det_matched as f64 / c.gt as f64).abs() < 1e-12);
        let persistence = if c.runs.is_empty() { 0.0 } else { c.runs.iter().sum::<u64>() as f64 / c.runs.len() as f64 };
        assert!((m.mean_track_persistence - persistence).abs() < 1e-12);
        total_switches += m.id_switches;
    }
    assert!(total_switches > 0, "scenes never produced an identity switch");
}

#[test]
fn prediction_follows_closed_form_motion() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    for _ in 0..500 {
        let p0 = Point3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-1.0..1.0));
        let v = Velocity2::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
        let track = |velocity| Track {
            track_id: 0,
            position: p0,
            velocity,
            size: None,
            confidence: 0.5,
            age_frames: 1,
            misses: 0,
            source: TrackSource::Ego,
        };
        let n = rng.random_range(1..50);
        let dt = rng.random_range(0.01..0.5);
        let mut moving = vec![track(Some(v)), track(None)];
        for _ in 0..n {
            moving = predict(&moving, dt);
        }
        let t = n as f64 * dt;
        let expect = Point3::new(p0.x + v.vx * t, p0.y + v.vy * t, p0.z);
        assert_eq!(moving.len(), 2);
        assert!(dist(&moving[0].position, &expect) < 1e-9);
        assert_eq!(moving[1].position, p0);
        assert_eq!((moving[0].age_frames, moving[0].misses), (1, 0));
    }
}

#[test]
fn empty_frame_makes_every_track_miss_once() {
    let mut tracker = Tracker::new(TrackerConfig::default());
    let pts = (0..4).map(|i| ReferencePoint::new(i, Point3::new(10.0 * i as f64, 0.0, 0.0), 0.9)).collect();
    tracker.update(&AgentFrame::new(1, 0, 0.0).with_points(pts));
    let ev = tracker.update(&AgentFrame::new(1, 1, 0.2));
    assert!(ev.matches.is_empty() && ev.births.is_empty() && ev.deaths.is_empty());
    assert!(tracker.tracks.iter().all(|t| t.misses == 1 && (t.confidence - 0.81).abs() < 1e-12));
    for f in 2..5 {
        tracker.update(&AgentFrame::new(1, f, 0.2 * f as f64));
    }
    assert!(tracker.tracks.is_empty());
}
