use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lobsim_core::order_book::LiquiditySource;
use lobsim_harness::analyze::{analyze, RunRecord};
use lobsim_harness::config::SimConfig;
use lobsim_harness::grid::{run_grid, GridSpec};
use lobsim_harness::{rundir, sim};

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn small(seed: u64) -> SimConfig {
    let mut cfg = SimConfig::baseline(seed);
    cfg.agents.n = 30;
    cfg.agents.session_seconds = 600.0;
    cfg.agents.lambda = 60.0;
    cfg.agents.total_shares = 300_000;
    cfg
}

#[test]
fn example_configs_load() {
    let e1 = SimConfig::load(&repo("configs/experiment1.toml")).unwrap();
    assert_eq!(e1, SimConfig::baseline(0));
    let smoke = SimConfig::load(&repo("configs/smoke.toml")).unwrap();
    assert_eq!(smoke.agents.n, 10);
    let replay = SimConfig::load(&repo("configs/replay.toml")).unwrap();
    assert!(replay.replay.unwrap().file.exists());
    let grid = GridSpec::load(&repo("configs/experiment2.toml")).unwrap();
    assert_eq!(grid.cells().len() * grid.replicates, 240);
}

#[test]
fn validation_names_the_field() {
    let base = SimConfig::baseline(0).to_toml();
    let cases = [
        ("r_high = 0.6", "r_high = 1.5", "agents.r_low/r_high"),
        ("lambda = 390.0", "lambda = -1.0", "agents.lambda"),
        ("sample_interval_us = 1000000", "sample_interval_us = 0", "sample_interval_us"),
        ("depth_interval_us = 10000000", "depth_interval_us = 1500000", "depth_interval_us"),
        ("depth_levels = 50", "depth_levels = 0", "exchange.depth_levels"),
    ];
    for (from, to, field) in cases {
        assert!(base.contains(from), "{from} not in\n{base}");
        let err = SimConfig::from_toml(&base.replace(from, to)).unwrap_err();
        assert!(format!("{err:#}").contains(field), "{field}: {err:#}");
    }
    let err = SimConfig::from_toml(&format!("{base}\n[stress]\nsize_fraction = 0.0\ntraders = \"ONE\"\ntrigger_seconds = 10.0\n"))
        .unwrap_err();
    assert!(format!("{err:#}").contains("stress.size_fraction"), "{err:#}");
    let err = SimConfig::from_toml(&base.replace("[agents]", "[agents]\nbogus = 1")).unwrap_err();
    assert!(format!("{err:#}").contains("bogus"), "{err:#}");
}

#[test]
fn smoke_config_is_fast_at_time_scale_100() {
    let cfg = SimConfig::load(&repo("configs/smoke.toml")).unwrap();
    let start = Instant::now();
    let out = sim::run(&cfg).unwrap();
    let wall = start.elapsed().as_secs_f64();
    // 60 simulated seconds at 100x is 0.6 s of pacing.
    assert!((0.5..5.0).contains(&wall), "{wall}");
    assert!(out.counters.orders > 0);
}

#[test]
fn pacing_does_not_change_results() {
    let mut cfg = small(5);
    cfg.agents.session_seconds = 30.0;
    let fast = sim::run(&cfg).unwrap();
    cfg.time_scale = Some(200.0);
    let paced = sim::run(&cfg).unwrap();
    assert_eq!(fast.trades, paced.trades);
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn same_seed_gives_identical_run_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(9);
    for name in ["a", "b"] {
        let out = sim::run(&cfg).unwrap();
        let report = analyze(&RunRecord::from_output(&cfg, &out), None);
        rundir::write_run(&tmp.path().join(name), &cfg, &out, &report).unwrap();
    }
    let a = dir_files(&tmp.path().join("a"));
    let b = dir_files(&tmp.path().join("b"));
    assert_eq!(a.len(), 9);
    for ((na, ca), (nb, cb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        if na != "timing.json" {
            assert!(ca == cb, "{na} differs");
        }
    }
}

#[test]
fn report_recomputes_from_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(4);
    let out = sim::run(&cfg).unwrap();
    let report = analyze(&RunRecord::from_output(&cfg, &out), None);
    rundir::write_run(tmp.path(), &cfg, &out, &report).unwrap();
    let loaded = rundir::load_run(tmp.path()).unwrap();
    assert_eq!(loaded.config, cfg);
    assert_eq!(analyze(&loaded, None), report);
    assert_eq!(rundir::read_report(tmp.path()).unwrap(), report);
    assert_eq!(rundir::read_trades(tmp.path()).unwrap(), out.trades);
}

#[test]
fn grid_rows_recompute_from_run_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = GridSpec::stress_experiment(1, 500);
    spec.session_seconds = 600.0;
    spec.trigger_seconds = 300.0;
    spec.calm_replicates = 1;
    let result = run_grid(&spec, Some(tmp.path())).unwrap();
    assert_eq!(result.rows.len(), 24);
    assert_eq!(result.calm.len(), 4);
    let calm = lobsim_harness::grid::read_calm_stats(&tmp.path().join("calm_stats.json")).unwrap();
    assert_eq!(calm, result.calm);

    let mut summary = csv::Reader::from_path(tmp.path().join("summary.csv")).unwrap();
    let parsed: Vec<lobsim_harness::grid::SummaryRow> = summary.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(parsed.len(), 24);

    for row in result.rows.iter().step_by(5) {
        let dir = tmp.path().join("runs").join(&row.run);
        let rec = rundir::load_run(&dir).unwrap();
        let key = format!("{}min-{}", row.frequency_minutes, row.market);
        let report = analyze(&rec, Some(&calm[&key]));
        let stress = report.stress.unwrap();
        assert_eq!(stress.drawdown_slope, row.drawdown_slope, "{}", row.run);
        assert_eq!(stress.impact_detected(), row.impact_detected, "{}", row.run);
        assert_eq!(stress.impact_duration_seconds, row.impact_duration_seconds, "{}", row.run);
    }
}

#[test]
fn late_trigger_warns_and_injects_nothing() {
    let mut cfg = small(1);
    cfg.stress = Some(lobsim_agents::StressConfig {
        size_fraction: 0.05,
        traders: lobsim_agents::StressTraders::One,
        trigger_seconds: 10_000.0,
        stagger_seconds: 3.0,
    });
    let out = sim::run(&cfg).unwrap();
    assert_eq!(out.counters.stress_orders, 0);
    assert_eq!(out.warnings.len(), 1);
}

#[test]
fn replay_quotes_provide_liquidity() {
    let cfg = SimConfig::load(&repo("configs/replay.toml")).unwrap();
    let out = sim::run(&cfg).unwrap();
    assert!(out.counters.replay_events > 700);
    assert!(out.trades.iter().any(|t| t.liquidity_source == LiquiditySource::Global));
    assert!(out.trades.iter().any(|t| t.liquidity_source == LiquiditySource::Local));
    // Global fills consume quoted size, so a side can be briefly empty, but
    // the combined book is two-sided most of the time.
    let two_sided = out.samples.iter().filter(|s| s.best_bid.is_some() && s.best_ask.is_some()).count();
    assert!(two_sided * 10 > out.samples.len() * 9, "{two_sided} of {}", out.samples.len());
}

#[test]
fn replay_file_errors_carry_line_numbers() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("bad.csv");
    fs::write(&file, "CS1,1000,9999,100,10001,100\nCS1,2000,oops,100,10001,100\n").unwrap();
    let mut cfg = small(0);
    cfg.replay = Some(lobsim_harness::config::ReplaySection { file });
    let err = format!("{:#}", sim::run(&cfg).unwrap_err());
    assert!(err.contains("line 2"), "{err}");
}
