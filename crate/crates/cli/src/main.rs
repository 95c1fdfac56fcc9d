use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use refpts_core::harness::{self, Overrides};
use refpts_core::wire::{decode, hex_dump, Attrs};

#[derive(Parser)]
#[command(name = "refpts", version, about = "Reference-point fusion scenarios, sweeps and payload reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write report.json, events.jsonl and series.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every cell of a parameter grid and emit one CSV row per cell.
    Sweep {
        /// Grid file naming a base scenario and the axes to vary.
        #[arg(long, alias = "grid")]
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
        /// Directory for sweep.csv; the table is printed to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print per-frame payload and bandwidth of the baselines and of each
    /// attribute set at full query capacity.
    BandwidthTable {
        #[arg(long, default_value_t = 5.0)]
        fps: f64,
    },
    /// Decode an encoded message and hex-dump it.
    Decode {
        input: PathBuf,
        /// Input holds hex text instead of raw bytes.
        #[arg(long)]
        hex: bool,
    },
}

#[derive(Args, Default)]
struct OverrideArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long)]
    tau_d: Option<f64>,
    #[arg(long)]
    lambda: Option<f32>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_parser = parse_attrs)]
    attrs: Option<Attrs>,
    #[arg(long)]
    fn_rate: Option<f64>,
    #[arg(long)]
    fp_rate: Option<f64>,
    /// Transmit exactly this many reference points per frame.
    #[arg(long)]
    points: Option<usize>,
    /// Number of frames to simulate.
    #[arg(long)]
    duration: Option<u64>,
}

fn parse_attrs(s: &str) -> Result<Attrs, String> {
    s.parse()
}

impl From<OverrideArgs> for Overrides {
    fn from(a: OverrideArgs) -> Self {
        Overrides {
            seed: a.seed,
            duration: a.duration,
            fps: a.fps,
            tau_d: a.tau_d,
            lambda: a.lambda,
            k: a.k,
            attrs: a.attrs,
            fn_rate: a.fn_rate,
            fp_rate: a.fp_rate,
            points: a.points,
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, overrides, out } => {
            let mut cfg = harness::load_config(&config)?;
            Overrides::from(overrides).apply(&mut cfg);
            let report = harness::cmd_run(&cfg, &out)?;
            let m = report.metrics;
            let b = report.bandwidth;
            println!("frames            {}", report.duration_frames);
            println!("recall            {:.4}", m.recall);
            println!("precision         {:.4}", m.precision);
            println!("id switches       {}", m.id_switches);
            println!("persistence       {:.2}", m.mean_track_persistence);
            println!("fused det recall  {:.4}", m.fused_detection_recall);
            println!("bytes/frame       {:.1}", b.mean_bytes_per_frame);
            println!("bytes/s           {:.1}", b.bytes_per_second);
            println!("max payload       {} B (+{} B header)", b.max_body_bytes, b.max_payload_bytes - b.max_body_bytes);
            println!("report digest     {}", harness::report_digest(&report)?);
            println!("wrote             {}", out.display());
        }
        Command::Sweep { config, overrides, out } => {
            let (spec, base) = harness::load_sweep(&config)?;
            let rows = harness::cmd_sweep(&spec, &base, &overrides.into());
            let table = harness::sweep_csv(&rows)?;
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                    let path = dir.join(harness::SWEEP_FILE);
                    fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
                    println!("{} cells -> {}", rows.len(), path.display());
                }
                None => print!("{table}"),
            }
            for r in rows.iter().filter(|r| r.status != "ok") {
                eprintln!("cell {} failed: {}", r.cell, r.error);
            }
        }
        Command::BandwidthTable { fps } => {
            if !(fps.is_finite() && fps > 0.0) {
                bail!("--fps must be positive, got {fps}");
            }
            print!("{}", harness::format_bandwidth_table(&harness::cmd_bandwidth_table(fps), fps));
        }
        Command::Decode { input, hex } => {
            let raw = fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let bytes = if hex {
                let text: String = String::from_utf8(raw)
                    .context("hex input is not UTF-8")?
                    .split_whitespace()
                    .collect();
                hex::decode(&text).context("invalid hex input")?
            } else {
                raw
            };
            print!("{}", hex_dump(&bytes));
            let msg = decode(&bytes).context("decoding message")?;
            println!("{}", serde_json::to_string_pretty(&msg)?);
        }
    }
    Ok(())
}
