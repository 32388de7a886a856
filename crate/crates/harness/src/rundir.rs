//! On-disk run records.
//!
//! ```text
//! config.toml    the exact configuration, seed included
//! meta.json      schema version, counters, warnings, stress trigger
//! timing.json    wall-clock runtime (the only file that varies between
//!                repeats of a seed)
//! trades.jsonl   trade log: header line, then one TradeRecord per line
//! prices.csv     every local trade print
//! samples.csv    best prices and last trade on the sample grid
//! depth.jsonl    order book depth snapshots
//! agents.jsonl   one line per agent decision
//! report.json    analytics report
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use anyhow::Context;
use lobsim_core::order_book::DepthSnapshot;
use lobsim_core::persist::{read_trade_log, TradeLogHeader, TradeLogWriter, TradeRecord, TradeSink};
use lobsim_core::types::{Price, Timestamp};
use serde::{Deserialize, Serialize};

use crate::analyze::{Report, RunRecord};
use crate::config::SimConfig;
use crate::sim::{RunCounters, RunOutput, Sample};

pub const RUN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub session_end_us: Timestamp,
    pub trigger_us: Option<Timestamp>,
    pub counters: RunCounters,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

#[derive(Serialize, Deserialize)]
struct DepthLine {
    time_us: Timestamp,
    #[serde(flatten)]
    depth: DepthSnapshot,
}

#[derive(Serialize, Deserialize)]
struct PriceRow {
    time_us: Timestamp,
    price_ticks: Price,
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_jsonl<T: Serialize>(dir: &Path, name: &str, items: impl IntoIterator<Item = T>) -> anyhow::Result<()> {
    let mut w = create(dir, name)?;
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: impl IntoIterator<Item = T>) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, name)?);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> anyhow::Result<Vec<T>> {
    let path = dir.join(name);
    let mut r = csv::Reader::from_path(&path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize().collect::<Result<_, _>>().with_context(|| format!("parsing {}", path.display()))
}

pub fn write_trades(path: &Path, cfg: &SimConfig, trades: &[TradeRecord]) -> anyhow::Result<()> {
    let header = TradeLogHeader::new(cfg.exchange.fee(), vec![cfg.exchange.symbol.clone()]);
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut log = TradeLogWriter::new(BufWriter::new(file), &header, Duration::from_secs(3600))?;
    for t in trades {
        log.append(t)?;
    }
    log.flush()?;
    Ok(())
}

/// Write everything a run produced, plus its report, into `dir`.
pub fn write_run(dir: &Path, cfg: &SimConfig, out: &RunOutput, report: &Report) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let meta = RunMeta {
        schema_version: RUN_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.agents.seed,
        session_end_us: (cfg.agents.session_seconds * 1e6) as Timestamp,
        trigger_us: out.trigger_us,
        counters: out.counters.clone(),
        warnings: out.warnings.clone(),
    };
    write_json(dir, "meta.json", &meta)?;
    write_json(dir, "timing.json", &Timing { wall_seconds: out.wall_seconds })?;
    write_trades(&dir.join("trades.jsonl"), cfg, &out.trades)?;
    write_csv(
        dir,
        "prices.csv",
        out.last_prices.iter().map(|&(time_us, price_ticks)| PriceRow { time_us, price_ticks }),
    )?;
    write_csv(dir, "samples.csv", &out.samples)?;
    write_jsonl(
        dir,
        "depth.jsonl",
        out.depth.iter().map(|(t, d)| DepthLine {
            time_us: *t,
            depth: d.clone(),
        }),
    )?;
    write_jsonl(dir, "agents.jsonl", &out.actions)?;
    write_report(dir, report)
}

pub fn write_report(dir: &Path, report: &Report) -> anyhow::Result<()> {
    write_json(dir, "report.json", report)
}

pub fn read_meta(dir: &Path) -> anyhow::Result<RunMeta> {
    let path = dir.join("meta.json");
    let meta: RunMeta = serde_json::from_reader(BufReader::new(
        File::open(&path).with_context(|| format!("opening {}", path.display()))?,
    ))?;
    anyhow::ensure!(
        meta.schema_version == RUN_SCHEMA_VERSION,
        "{}: schema version {} is not supported (expected {RUN_SCHEMA_VERSION})",
        path.display(),
        meta.schema_version
    );
    Ok(meta)
}

pub fn read_report(dir: &Path) -> anyhow::Result<Report> {
    let path = dir.join("report.json");
    Ok(serde_json::from_reader(BufReader::new(File::open(&path).with_context(|| format!("opening {}", path.display()))?))?)
}

pub fn read_trades(dir: &Path) -> anyhow::Result<Vec<TradeRecord>> {
    let path = dir.join("trades.jsonl");
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_trade_log(BufReader::new(file))?.1)
}

/// Load the series needed for analysis.
pub fn load_run(dir: &Path) -> anyhow::Result<RunRecord> {
    let meta = read_meta(dir)?;
    let config = SimConfig::from_toml(&fs::read_to_string(dir.join("config.toml"))?)
        .with_context(|| format!("in {}", dir.join("config.toml").display()))?;
    let prices: Vec<PriceRow> = read_csv(dir, "prices.csv")?;
    let samples: Vec<Sample> = read_csv(dir, "samples.csv")?;
    let mut depth = Vec::new();
    let depth_path = dir.join("depth.jsonl");
    let reader = BufReader::new(File::open(&depth_path).with_context(|| format!("opening {}", depth_path.display()))?);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let d: DepthLine =
            serde_json::from_str(&line).with_context(|| format!("{} line {}", depth_path.display(), i + 1))?;
        depth.push((d.time_us, d.depth));
    }
    Ok(RunRecord {
        config,
        prices: prices.into_iter().map(|r| (r.time_us, r.price_ticks)).collect(),
        samples,
        depth,
        trigger_us: meta.trigger_us,
    })
}
