use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use aftershock_cli::{execute, exit_code, stage_battery, Command, Invocation, PipelineConfig, StagePoints, TestConfig, ALL_CLASSES};
use aftershock_core::market_data::parse_timestamp;
use aftershock_core::ClassFilter;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn config(dir: &Path, toml: &str) -> PipelineConfig {
    let mut c = PipelineConfig::from_toml(toml, dir).unwrap();
    let seed = c.seed;
    c.apply_seed(seed);
    c
}

fn run(command: Command, cfg: PipelineConfig) -> anyhow::Result<Vec<PathBuf>> {
    execute(command, &Invocation::new(cfg)).map(|o| o.files)
}

/// Data rows of a CSV written by the pipeline.
fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

/// One Shanghai day of quiet minutes with spikes at the given returns.
fn spiky_day(dir: &Path, spikes: &[usize]) {
    let t0 = parse_timestamp("2016-01-04T00:00").unwrap();
    let mut text = String::from("timestamp,price,volume\n");
    let mut price = 100.0f64;
    let mut r = 0;
    for (open, close) in [(570, 690), (780, 900)] {
        for m in open..=close {
            if m > open {
                let size: f64 = if spikes.contains(&r) { 1e-2 } else { 5e-4 };
                price *= if r % 2 == 0 { size.exp() } else { (-size).exp() };
                r += 1;
            }
            let ts = aftershock_core::market_data::format_timestamp(t0 + m);
            text.push_str(&format!("{ts},{price:.8},{}\n", 1000 + (m % 17) * 10));
        }
    }
    fs::write(dir.join("bars.csv"), text).unwrap();
}

fn synthetic_market(dir: &Path, market: &str) {
    let cfg = config(dir, &format!("output = \".\"\nseed = 7\n[simulate]\nmode = \"market\"\n[simulate.market]\n{market}"));
    run(Command::Simulate, cfg).unwrap();
}

#[test]
fn detect_counts_spikes_and_respects_news() {
    let dir = tempfile::tempdir().unwrap();
    spiky_day(dir.path(), &[10, 50, 100, 150, 200]);
    let cfg = config(dir.path(), "output = \"out\"\n[data]\nbars = \"bars.csv\"\n[detect]\nthresholds = [2.0, 4.0, 6.0, 8.0]");
    run(Command::Detect, cfg.clone()).unwrap();
    let counts = rows(&dir.path().join("out/event_counts.csv"));
    assert_eq!(counts[0], ["2", "5", "5", "0"]);
    let all: Vec<usize> = counts.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(all.windows(2).all(|w| w[1] <= w[0]));
    assert!(counts.iter().all(|r| r[3] == "0"));
    assert_eq!(rows(&dir.path().join("out/events_S2.csv")).len(), 5);

    // news one minute after two of the spikes
    let series = aftershock_core::market_data::load_series(dir.path().join("bars.csv"), cfg.calendar().unwrap()).unwrap();
    let news: Vec<String> = [10usize, 100]
        .iter()
        .map(|&i| aftershock_core::market_data::format_timestamp(series.timestamp[i] + 1))
        .collect();
    fs::write(dir.path().join("news.csv"), format!("timestamp\n{}\n", news.join("\n"))).unwrap();
    let mut cfg = cfg;
    cfg.data.news = Some(dir.path().join("news.csv"));
    run(Command::Detect, cfg).unwrap();
    assert_eq!(rows(&dir.path().join("out/event_counts.csv"))[0], ["2", "5", "3", "2"]);
    let events = rows(&dir.path().join("out/events_S2.csv"));
    assert_eq!(events.iter().filter(|r| r[2] == "exogenous").count(), 2);
}

#[test]
fn generated_market_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_market(dir.path(), "");
    let injected = rows(&dir.path().join("market_injected.csv"));
    assert_eq!(injected.len(), 50);
    let cfg = config(
        dir.path(),
        "output = \"out\"\n[data]\nbars = \"market_bars.csv\"\nnews = \"market_news.csv\"\n[detect]\nthresholds = [4.0]",
    );
    run(Command::Detect, cfg.clone()).unwrap();
    let events = rows(&dir.path().join("out/events_S4.csv"));
    let found = injected
        .iter()
        .filter(|inj| events.iter().any(|e| e[1] == inj[0] && e[2] == inj[1]))
        .count();
    assert!(found >= 45, "found {found} of 50");

    run(Command::Fit, cfg).unwrap();
    let fit = &rows(&dir.path().join("out/fits_endogenous.csv"))[0];
    assert_eq!(fit[1], "12");
    let truth = [1.26e-3, 0.42, 2.37, 1.73e-3, 0.10];
    for (got, want) in fit[2..7].iter().zip(truth) {
        let got: f64 = got.parse().unwrap();
        assert!((got - want).abs() / want < 0.15, "{fit:?}");
    }
}

#[test]
fn noiseless_exogenous_responses_fit_a_pure_power_law() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_market(dir.path(), "sigma_v = 0.0\nn_days = 20\nn_events = 20");
    let mut cfg = config(
        dir.path(),
        "output = \"out\"\n[data]\nbars = \"market_bars.csv\"\nnews = \"market_news.csv\"\n[detect]\nthresholds = [4.0]",
    );
    let inv = Invocation { classes: vec![ClassFilter::Exogenous], ..Invocation::new(cfg.clone()) };
    execute(Command::Fit, &inv).unwrap();
    let fit = &rows(&dir.path().join("out/fits_exogenous.csv"))[0];
    assert_eq!(fit[1], "0");
    assert_eq!(fit[2], "");
    let b2: f64 = fit[6].parse().unwrap();
    assert!((b2 - 0.13).abs() < 0.01, "{fit:?}");

    cfg.fit.heston_omega = Some(0.0);
    let inv = Invocation { classes: vec![ClassFilter::Exogenous], ..Invocation::new(cfg) };
    execute(Command::Fit, &inv).unwrap();
    let heston = &rows(&dir.path().join("out/heston_exogenous.csv"))[0];
    assert_eq!(heston[6], "ve");
}

#[test]
fn empty_event_sets_need_allow_empty() {
    let dir = tempfile::tempdir().unwrap();
    spiky_day(dir.path(), &[10, 50, 100, 150, 200]);
    let cfg = config(
        dir.path(),
        "output = \"out\"\n[data]\nbars = \"bars.csv\"\n[detect]\nthresholds = [2.0, 500.0]\nhorizon = 100",
    );
    let inv = Invocation { classes: vec![ClassFilter::All], ..Invocation::new(cfg) };
    let err = execute(Command::Fit, &inv).unwrap_err();
    assert_eq!(exit_code(&err), 3);
    let table = rows(&dir.path().join("out/fits_all.csv"));
    assert_eq!(table[1][0], "500");
    assert!(table[1][1..].iter().all(|v| v == "n/a"));

    execute(Command::Fit, &Invocation { allow_empty: true, ..inv }).unwrap();
}

#[test]
fn short_stages_are_marked_insufficient() {
    let points = StagePoints {
        t: vec![1, 2],
        volatility: vec![2e-3, 1e-3],
        volume: vec![9.0, 8.5],
        informed: vec![0.1, -0.1],
        uninformed: vec![8.9, 8.6],
    };
    let report = stage_battery(&points, &TestConfig::default(), None);
    assert!(report.adf_volatility.is_insufficient());
    assert!(report.var.is_insufficient());
    assert!(report.granger_volume_to_volatility.is_insufficient());
    assert!(report.regression.is_insufficient());
    let json = serde_json::to_string(&report).unwrap();
    assert!(json.contains("\"status\":\"insufficient sample\""));
}

#[test]
fn volume_leading_volatility_in_stage_one_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 80;
    let t_w = 40;
    let mut noise = |s: f64| s * rng.sample::<f64, _>(StandardNormal);
    let volume: Vec<f64> = (0..n).map(|_| 9.0 + noise(1.0)).collect();
    let mut volatility = vec![1e-3; n];
    for k in 1..n {
        volatility[k] = if k < t_w { 1e-3 + 8e-4 * (volume[k - 1] - 9.0) + noise(2e-4) } else { 1e-3 + noise(1e-3) };
    }
    let informed: Vec<f64> = (0..n).map(|_| noise(0.5)).collect();
    let uninformed: Vec<f64> = volume.iter().zip(&informed).map(|(z, i)| z - i).collect();
    let points = StagePoints { t: (1..=n as u32).collect(), volatility, volume, informed, uninformed };
    let (early, late) = points.split(t_w as u32);
    assert_eq!((early.t.len(), late.t.len()), (40, 40));
    let cfg = TestConfig::default();
    let p = |s: &StagePoints| stage_battery(s, &cfg, None).granger_volume_to_volatility.ok().unwrap().p_value;
    assert!(p(&early) < 0.01, "stage 1 p = {}", p(&early));
    assert!(p(&late) > 0.05, "stage 2 p = {}", p(&late));
}

#[test]
fn report_is_deterministic_and_reruns_are_no_ops() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_market(dir.path(), "n_days = 30\nn_events = 24");
    let text = "output = \"out\"\n[data]\nbars = \"market_bars.csv\"\nnews = \"market_news.csv\"\n[detect]\nthresholds = [4.0, 6.0]\n[fit]\nt_w_max = 30";
    let files = run(Command::Report, config(dir.path(), text)).unwrap();
    assert!(files.iter().any(|f| f.ends_with("report_S4_endogenous_stage2.json")));
    let snapshot: Vec<(PathBuf, Vec<u8>)> = files.iter().map(|f| (f.clone(), fs::read(f).unwrap())).collect();

    run(Command::Report, config(dir.path(), text)).unwrap();
    for (f, bytes) in &snapshot {
        assert_eq!(&fs::read(f).unwrap(), bytes, "{} changed", f.display());
    }
    // a lone test rerun reads the existing fit tables and rewrites identical reports
    run(Command::Test, config(dir.path(), text)).unwrap();
    for (f, bytes) in &snapshot {
        assert_eq!(&fs::read(f).unwrap(), bytes, "{} changed", f.display());
    }
    let header = fs::read_to_string(dir.path().join("out/fits_all.csv")).unwrap();
    assert!(header.starts_with("# aftershock 0.1.0 config-sha256="));
}

#[test]
fn noiseless_simulation_matches_the_analytic_mean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "output = \".\"\n[simulate]\nmode = \"ensemble\"\n[simulate.sde]\nn_paths = 3\nt_end = 50.0");
    run(Command::Simulate, cfg).unwrap();
    for r in rows(&dir.path().join("ensemble.csv")) {
        let (mean, se, analytic): (f64, f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap());
        assert!((mean - analytic).abs() / analytic < 1e-3, "{r:?}");
        assert!(se <= 1e-12 * analytic);
    }
}

#[test]
fn seeded_simulation_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let text = "output = \".\"\nseed = 5\n[simulate]\nmode = \"paths\"\n[simulate.sde]\nsigma_v = 1e-4\ndt = 0.01\nn_paths = 4";
    run(Command::Simulate, config(dir.path(), text)).unwrap();
    let first = fs::read(dir.path().join("simulated_paths.csv")).unwrap();
    run(Command::Simulate, config(dir.path(), text)).unwrap();
    assert_eq!(first, fs::read(dir.path().join("simulated_paths.csv")).unwrap());
    let other = text.replace("seed = 5", "seed = 6");
    run(Command::Simulate, config(dir.path(), &other)).unwrap();
    assert_ne!(first, fs::read(dir.path().join("simulated_paths.csv")).unwrap());
}

#[test]
fn binary_flags_and_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_aftershock");
    let dir = tempfile::tempdir().unwrap();

    let schema = Process::new(exe).arg("--print-schema").output().unwrap();
    assert!(schema.status.success());
    let text = String::from_utf8(schema.stdout).unwrap();
    assert!(PipelineConfig::from_toml(&text, dir.path()).is_ok());

    fs::write(dir.path().join("bad.toml"), "unknown_key = 1\n").unwrap();
    let bad = Process::new(exe).args(["detect", "--config"]).arg(dir.path().join("bad.toml")).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));

    fs::write(dir.path().join("nodata.toml"), "[data]\nbars = \"missing.csv\"\n").unwrap();
    let missing = Process::new(exe)
        .args(["detect", "--config"])
        .arg(dir.path().join("nodata.toml"))
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));

    spiky_day(dir.path(), &[10, 50, 100, 150, 200]);
    fs::write(dir.path().join("run.toml"), "[data]\nbars = \"bars.csv\"\n[detect]\nthresholds = [2.0, 500.0]\n").unwrap();
    let empty = Process::new(exe)
        .args(["fit", "--class", "endo", "--config"])
        .arg(dir.path().join("run.toml"))
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(empty.status.code(), Some(3), "{}", String::from_utf8_lossy(&empty.stderr));

    let sim = Process::new(exe)
        .args(["simulate", "--seed", "9", "--out"])
        .arg(dir.path().join("sim"))
        .output()
        .unwrap();
    assert!(sim.status.success());
    assert!(dir.path().join("sim/ensemble.csv").exists());
    assert_eq!(ALL_CLASSES.len(), 3);
}
