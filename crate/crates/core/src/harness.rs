//! Run, sweep and bandwidth-table commands behind the `refpts` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::query::QueryFusionConfig;
use crate::sim::{derive_seed, run_scenario, run_scenario_detailed, ScenarioConfig, ScenarioError, ScenarioReport};
use crate::wire::{bandwidth_at_fps, baseline_payloads, payload_bytes, to_kb, Attrs};

pub const REPORT_FILE: &str = "report.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const SERIES_FILE: &str = "series.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("serialization failed: {0}")]
    Serialize(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn ser_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Serialize(e.to_string())
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Command-line overrides layered on a loaded config. Rates apply to every
/// sender; `k` or `lambda` switch query fusion on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub duration: Option<u64>,
    pub fps: Option<f64>,
    pub tau_d: Option<f64>,
    pub lambda: Option<f32>,
    pub k: Option<usize>,
    pub attrs: Option<Attrs>,
    pub fn_rate: Option<f64>,
    pub fp_rate: Option<f64>,
    pub points: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(d) = self.duration {
            cfg.duration_frames = d;
        }
        if let Some(fps) = self.fps {
            cfg.channel.fps = fps;
        }
        if let Some(tau) = self.tau_d {
            cfg.fusion.tau_d = tau;
        }
        if self.k.is_some() || self.lambda.is_some() {
            let q = cfg.query_fusion.get_or_insert_with(QueryFusionConfig::default);
            if let Some(k) = self.k {
                q.k = k;
            }
            if let Some(l) = self.lambda {
                q.lambda = l;
            }
        }
        if let Some(a) = self.attrs {
            cfg.transmission.attrs = a;
        }
        if let Some(n) = self.points {
            cfg.transmission.points = Some(n);
        }
        for agent in cfg.senders_mut() {
            if let Some(r) = self.fn_rate {
                agent.detector.fn_rate = r;
            }
            if let Some(r) = self.fp_rate {
                agent.detector.fp_rate = r;
            }
        }
    }
}

/// Canonical serialized form; the golden hash is taken over these bytes.
pub fn report_json(report: &ScenarioReport) -> Result<String, HarnessError> {
    let mut s = serde_json::to_string_pretty(report).map_err(ser_err)?;
    s.push('\n');
    Ok(s)
}

pub fn report_digest(report: &ScenarioReport) -> Result<String, HarnessError> {
    Ok(hex::encode(Sha256::digest(report_json(report)?.as_bytes())))
}

/// Runs a scenario and writes the report, per-frame tracker events and the
/// metric series into `out_dir`.
pub fn cmd_run(cfg: &ScenarioConfig, out_dir: &Path) -> Result<ScenarioReport, HarnessError> {
    let run = run_scenario_detailed(cfg)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let path = out_dir.join(REPORT_FILE);
    fs::write(&path, report_json(&run.report)?).map_err(io_err(&path))?;

    let mut events = String::new();
    for ev in &run.events {
        events.push_str(&serde_json::to_string(ev).map_err(ser_err)?);
        events.push('\n');
    }
    let path = out_dir.join(EVENTS_FILE);
    fs::write(&path, events).map_err(io_err(&path))?;

    let path = out_dir.join(SERIES_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(ser_err)?;
    for fm in &run.report.frames {
        w.serialize(fm).map_err(ser_err)?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(run.report)
}

/// Parameter grid. Cells are the cartesian product of the listed axes, in
/// field order; no axes, or any empty axis, means no cells.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub fn_rate: Option<Vec<f64>>,
    pub fp_rate: Option<Vec<f64>>,
    pub attrs: Option<Vec<Attrs>>,
    pub tau_d: Option<Vec<f64>>,
    pub k: Option<Vec<usize>>,
    pub lambda: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Scenario config, relative to the grid file.
    pub base: PathBuf,
    /// Master seed for cell sub-seeds; defaults to the base config's seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub duration_frames: Option<u64>,
    #[serde(default)]
    pub axes: SweepAxes,
}

impl SweepAxes {
    pub fn cells(&self) -> Vec<Overrides> {
        let listed = [
            self.fn_rate.as_ref().map(Vec::len),
            self.fp_rate.as_ref().map(Vec::len),
            self.attrs.as_ref().map(Vec::len),
            self.tau_d.as_ref().map(Vec::len),
            self.k.as_ref().map(Vec::len),
            self.lambda.as_ref().map(Vec::len),
        ];
        if listed.iter().all(Option::is_none) || listed.contains(&Some(0)) {
            return Vec::new();
        }
        let mut cells = vec![Overrides::default()];
        fn expand<T: Copy>(cells: Vec<Overrides>, axis: &Option<Vec<T>>, set: impl Fn(&mut Overrides, T)) -> Vec<Overrides> {
            match axis {
                None => cells,
                Some(values) => cells
                    .into_iter()
                    .flat_map(|c| {
                        values.iter().map(|v| {
                            let mut c = c;
                            set(&mut c, *v);
                            c
                        }).collect::<Vec<_>>()
                    })
                    .collect(),
            }
        }
        cells = expand(cells, &self.fn_rate, |c, v| c.fn_rate = Some(v));
        cells = expand(cells, &self.fp_rate, |c, v| c.fp_rate = Some(v));
        cells = expand(cells, &self.attrs, |c, v| c.attrs = Some(v));
        cells = expand(cells, &self.tau_d, |c, v| c.tau_d = Some(v));
        cells = expand(cells, &self.k, |c, v| c.k = Some(v));
        cells = expand(cells, &self.lambda, |c, v| c.lambda = Some(v));
        cells
    }
}

/// One sweep cell. Metric fields are empty when the cell failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: usize,
    pub seed: u64,
    pub fn_rate: Option<f64>,
    pub fp_rate: Option<f64>,
    pub attrs: Attrs,
    pub tau_d: f64,
    pub k: Option<usize>,
    pub lambda: Option<f32>,
    pub status: String,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub id_switches: Option<u64>,
    pub mean_track_persistence: Option<f64>,
    pub fused_detection_recall: Option<f64>,
    pub mean_bytes_per_frame: Option<f64>,
    pub bytes_per_second: Option<f64>,
    pub refpts_body_bytes_per_message: Option<f64>,
    pub query_body_bytes_per_message: Option<f64>,
    pub max_body_bytes: Option<u64>,
    pub error: String,
}

/// Sub-seed of sweep cell `index`.
pub fn cell_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, &[index as u64])
}

/// The config a sweep cell runs, with its derived seed.
pub fn cell_config(base: &ScenarioConfig, master: u64, index: usize, cell: &Overrides) -> ScenarioConfig {
    let mut cfg = base.clone();
    cell.apply(&mut cfg);
    cfg.seed = cell_seed(master, index);
    cfg
}

fn mean(total: u64, n: u64) -> Option<f64> {
    (n > 0).then(|| total as f64 / n as f64)
}

pub fn run_cell(base: &ScenarioConfig, master: u64, index: usize, cell: &Overrides) -> SweepRow {
    let cfg = cell_config(base, master, index, cell);
    let senders: Vec<_> = cfg.agents.iter().filter(|a| a.role == crate::sim::AgentRole::Sender).collect();
    let mut row = SweepRow {
        cell: index,
        seed: cfg.seed,
        fn_rate: senders.first().map(|a| a.detector.fn_rate),
        fp_rate: senders.first().map(|a| a.detector.fp_rate),
        attrs: cfg.transmission.attrs,
        tau_d: cfg.fusion.tau_d,
        k: cfg.query_fusion.map(|q| q.k),
        lambda: cfg.query_fusion.map(|q| q.lambda),
        status: "ok".into(),
        recall: None,
        precision: None,
        id_switches: None,
        mean_track_persistence: None,
        fused_detection_recall: None,
        mean_bytes_per_frame: None,
        bytes_per_second: None,
        refpts_body_bytes_per_message: None,
        query_body_bytes_per_message: None,
        max_body_bytes: None,
        error: String::new(),
    };
    match run_scenario(&cfg) {
        Ok(r) => {
            let m = r.metrics;
            let b = r.bandwidth;
            row.recall = Some(m.recall);
            row.precision = Some(m.precision);
            row.id_switches = Some(m.id_switches);
            row.mean_track_persistence = Some(m.mean_track_persistence);
            row.fused_detection_recall = Some(m.fused_detection_recall);
            row.mean_bytes_per_frame = Some(b.mean_bytes_per_frame);
            row.bytes_per_second = Some(b.bytes_per_second);
            row.refpts_body_bytes_per_message = mean(b.refpts_body_bytes, b.refpts_messages);
            row.query_body_bytes_per_message = mean(b.query_body_bytes, b.query_messages);
            row.max_body_bytes = Some(b.max_body_bytes);
        }
        Err(e) => {
            row.status = "error".into();
            row.error = e.to_string();
        }
    }
    row
}

pub fn load_sweep(path: &Path) -> Result<(SweepSpec, ScenarioConfig), HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let spec: SweepSpec = toml::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base_path = path.parent().unwrap_or(Path::new(".")).join(&spec.base);
    let mut base = load_config(&base_path)?;
    if let Some(d) = spec.duration_frames {
        base.duration_frames = d;
    }
    Ok((spec, base))
}

/// Runs every cell of a grid, in parallel. Failed cells become error rows.
pub fn cmd_sweep(spec: &SweepSpec, base: &ScenarioConfig, extra: &Overrides) -> Vec<SweepRow> {
    let mut base = base.clone();
    extra.apply(&mut base);
    let master = spec.seed.unwrap_or(base.seed);
    let cells = spec.axes.cells();
    cells
        .par_iter()
        .enumerate()
        .map(|(i, cell)| run_cell(&base, master, i, cell))
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(SWEEP_COLUMNS).map_err(ser_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(ser_err)?;
    }
    let bytes = w.into_inner().map_err(ser_err)?;
    String::from_utf8(bytes).map_err(ser_err)
}

const SWEEP_COLUMNS: [&str; 20] = [
    "cell",
    "seed",
    "fn_rate",
    "fp_rate",
    "attrs",
    "tau_d",
    "k",
    "lambda",
    "status",
    "recall",
    "precision",
    "id_switches",
    "mean_track_persistence",
    "fused_detection_recall",
    "mean_bytes_per_frame",
    "bytes_per_second",
    "refpts_body_bytes_per_message",
    "query_body_bytes_per_message",
    "max_body_bytes",
    "error",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Baseline,
    ReferencePoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthRow {
    pub method: String,
    pub kind: RowKind,
    pub payload_bytes: u64,
    pub payload_kb: f64,
    pub bandwidth_kb_s: f64,
}

impl BandwidthRow {
    /// Baselines print as whole KB with separators, reference-point rows
    /// with one decimal.
    pub fn display_payload(&self) -> String {
        format_kb(self.payload_kb, self.kind)
    }

    pub fn display_bandwidth(&self) -> String {
        format_kb(self.bandwidth_kb_s, self.kind)
    }
}

pub fn format_kb(v: f64, kind: RowKind) -> String {
    match kind {
        RowKind::ReferencePoints => format!("{v:.1}"),
        RowKind::Baseline => thousands(v.round() as u64),
    }
}

fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Payload rows for the two feature/query baselines and the four attribute
/// sets at full query capacity (900 points, no confidence, header excluded).
pub fn cmd_bandwidth_table(fps: f64) -> Vec<BandwidthRow> {
    let base = baseline_payloads();
    let row = |method: &str, kind, bytes: u64| BandwidthRow {
        method: method.to_string(),
        kind,
        payload_bytes: bytes,
        payload_kb: to_kb(bytes as f64),
        bandwidth_kb_s: to_kb(bandwidth_at_fps(bytes, fps)),
    };
    let mut rows = vec![
        row("M3CAD (BEV features)", RowKind::Baseline, base.bev_feature.bytes_per_frame()),
        row("UniV2X (query fusion)", RowKind::Baseline, base.query_fusion_bytes),
    ];
    for attrs in Attrs::ALL {
        let bytes = payload_bytes(crate::refpts::DEFAULT_QUERY_CAPACITY, attrs.flags(), 0).body;
        let name = format!("RefPtsFusion ({})", attrs.as_str().to_uppercase());
        rows.push(row(&name, RowKind::ReferencePoints, bytes));
    }
    rows
}

pub fn format_bandwidth_table(rows: &[BandwidthRow], fps: f64) -> String {
    let bw_header = format!("Bandwidth @ {fps} FPS (KB/s)");
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>14}  {:>28}", "Method", "Payload (KB)", bw_header);
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>14}  {:>28}",
            r.method,
            r.display_payload(),
            r.display_bandwidth()
        );
    }
    out
}
