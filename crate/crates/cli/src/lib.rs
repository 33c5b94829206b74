//! Pipeline driver behind the `aftershock` binary.
//!
//! Every command reads the configured inputs, writes CSV/JSON tables into the
//! output directory and returns the list of files it produced. Stages talk to
//! each other only through those files: `test` reads the stage boundaries
//! from the fit tables, running `fit` first when they are missing.

pub mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use aftershock_core::econometrics::{
    adf_test, granger_test, mdh_decompose, var_fit_aic, vv_regression, AdfResult, Direction, GrangerResult,
    VolumeDecomposition,
};
use aftershock_core::events::{aligned_mean, build_response, classify_events, detect_events};
use aftershock_core::fitting::{fit_heston, fit_two_stage, FitResult};
use aftershock_core::market_data::{load_news, load_series, format_timestamp};
use aftershock_core::synth::generate_market;
use aftershock_core::ve_model::{ensemble_stats, simulate};
use aftershock_core::{ClassFilter, EventSet, MarketSeries, ResponseCurve};
use anyhow::{Context, Result};
use serde::Serialize;

pub use config::{PipelineConfig, SimulateMode, TestConfig, SCHEMA};

/// Bad configuration, flags or input files.
#[derive(Debug)]
pub struct ValidationError(pub String);

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationError {}

/// Some (S, class) combinations had no events and `--allow-empty` was not given.
#[derive(Debug)]
pub struct EmptyResults(pub Vec<String>);

impl fmt::Display for EmptyResults {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "no events for {} (rerun with --allow-empty to accept n/a rows)", self.0.join(", "))
    }
}

impl std::error::Error for EmptyResults {}

/// At least one estimate failed numerically; the outputs are written with `failed` markers.
#[derive(Debug)]
pub struct NumericalFailure(pub Vec<String>);

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "numerical failure in {}", self.0.join("; "))
    }
}

impl std::error::Error for NumericalFailure {}

/// 0 success, 2 validation failure, 3 insufficient data, 4 numerical failure.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use aftershock_core::Error as CoreError;
    for cause in err.chain() {
        if cause.is::<ValidationError>() {
            return 2;
        }
        if cause.is::<EmptyResults>() {
            return 3;
        }
        if cause.is::<NumericalFailure>() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::InsufficientData(_) | CoreError::ZeroVolatility => 3,
                e if e.is_numerical() => 4,
                _ => 2,
            };
        }
    }
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Detect,
    Fit,
    Test,
    Simulate,
    Report,
}

#[derive(Debug, Clone)]
pub struct Invocation {
    pub config: PipelineConfig,
    /// Event classes to process; `fit`, `test` and `report` cover all three by default.
    pub classes: Vec<ClassFilter>,
    pub allow_empty: bool,
}

impl Invocation {
    pub fn new(config: PipelineConfig) -> Self {
        Self { config, classes: ALL_CLASSES.to_vec(), allow_empty: false }
    }
}

pub const ALL_CLASSES: [ClassFilter; 3] = [ClassFilter::All, ClassFilter::Endogenous, ClassFilter::Exogenous];

/// Files written by a command, in order.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
}

pub fn execute(command: Command, inv: &Invocation) -> Result<Outcome> {
    inv.config.validate()?;
    let mut run = Run::new(inv)?;
    match command {
        Command::Detect => run.detect()?,
        Command::Fit => run.fit()?,
        Command::Test => run.test()?,
        Command::Simulate => run.simulate()?,
        Command::Report => {
            run.detect()?;
            run.fit()?;
            run.test()?;
            run.summary()?;
        }
    }
    run.finish()
}

/// `4` for 4.0, `2.5` for 2.5.
pub fn threshold_label(s: f64) -> String {
    format!("{s}")
}

fn class_label(c: ClassFilter) -> &'static str {
    c.as_str()
}

/// Shortest round-trip form, switching to exponent notation for very small or large values.
fn num(v: f64) -> String {
    if v.is_finite() { format!("{v:?}") } else { String::new() }
}

struct Writer {
    dir: PathBuf,
    digest: String,
    files: Vec<PathBuf>,
}

impl Writer {
    fn header(&self) -> String {
        format!("# aftershock {} config-sha256={}\n", env!("CARGO_PKG_VERSION"), self.digest)
    }

    fn csv(&mut self, name: &str, columns: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
        let mut text = self.header();
        text.push_str(columns);
        text.push('\n');
        for row in rows {
            text.push_str(&row);
            text.push('\n');
        }
        self.write(name, text)
    }

    fn json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<()> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            tool: &'static str,
            version: &'static str,
            config_sha256: &'a str,
            #[serde(flatten)]
            body: &'a T,
        }
        let wrapped =
            Wrapped { tool: "aftershock", version: env!("CARGO_PKG_VERSION"), config_sha256: &self.digest, body };
        let mut text = serde_json::to_string_pretty(&wrapped)?;
        text.push('\n');
        self.write(name, text)
    }

    fn write(&mut self, name: &str, text: String) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(path);
        Ok(())
    }
}

struct Inputs {
    series: MarketSeries,
    news: Vec<i64>,
}

struct Run<'a> {
    inv: &'a Invocation,
    out: Writer,
    inputs: Option<Inputs>,
    events: BTreeMap<String, EventSet>,
    empty: Vec<String>,
    failures: Vec<String>,
}

impl<'a> Run<'a> {
    fn new(inv: &'a Invocation) -> Result<Self> {
        let dir = inv.config.output.clone();
        fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            inv,
            out: Writer { dir, digest: inv.config.digest(), files: Vec::new() },
            inputs: None,
            events: BTreeMap::new(),
            empty: Vec::new(),
            failures: Vec::new(),
        })
    }

    fn cfg(&self) -> &'a PipelineConfig {
        &self.inv.config
    }

    fn finish(self) -> Result<Outcome> {
        if !self.failures.is_empty() {
            return Err(NumericalFailure(self.failures).into());
        }
        if !self.empty.is_empty() && !self.inv.allow_empty {
            let mut empty = self.empty;
            empty.dedup();
            return Err(EmptyResults(empty).into());
        }
        Ok(Outcome { files: self.out.files })
    }

    fn inputs(&mut self) -> Result<&Inputs> {
        if self.inputs.is_none() {
            let cfg = self.cfg();
            let bars = cfg
                .data
                .bars
                .clone()
                .ok_or_else(|| ValidationError("data.bars is not set".into()))?;
            let series = load_series(&bars, cfg.calendar()?).with_context(|| format!("loading {}", bars.display()))?;
            let news = match &cfg.data.news {
                Some(p) => load_news(p).with_context(|| format!("loading {}", p.display()))?,
                None => Vec::new(),
            };
            self.inputs = Some(Inputs { series, news });
        }
        Ok(self.inputs.as_ref().expect("loaded"))
    }

    /// Classified events at every threshold, computed once per run.
    fn event_sets(&mut self) -> Result<()> {
        if !self.events.is_empty() {
            return Ok(());
        }
        let thresholds = self.cfg().detect.thresholds.clone();
        let options = self.cfg().detect.options();
        let inputs = self.inputs()?;
        let mut sets = BTreeMap::new();
        for s in thresholds {
            let raw = detect_events(&inputs.series, s, &options)?;
            sets.insert(threshold_label(s), classify_events(&inputs.series, &raw, &inputs.news));
        }
        self.events = sets;
        Ok(())
    }

    fn thresholds(&self) -> Vec<(String, f64)> {
        self.cfg().detect.thresholds.iter().map(|&s| (threshold_label(s), s)).collect()
    }

    fn detect(&mut self) -> Result<()> {
        self.event_sets()?;
        let single = (self.inv.classes.len() == 1).then(|| self.inv.classes[0]);
        let filter = single.unwrap_or(ClassFilter::All);
        let mut counts = Vec::new();
        for (label, _) in self.thresholds() {
            let set = &self.events[&label];
            let series = &self.inputs.as_ref().expect("loaded").series;
            let rows: Vec<String> = set
                .events
                .iter()
                .filter(|e| filter.admits(e.class))
                .map(|e| {
                    format!(
                        "{},{},{},{},{}",
                        e.index,
                        format_timestamp(series.timestamp[e.index]),
                        e.class.as_str(),
                        num(series.volatility[e.index]),
                        label
                    )
                })
                .collect();
            counts.push(format!(
                "{},{},{},{}",
                label,
                set.count(ClassFilter::All),
                set.count(ClassFilter::Endogenous),
                set.count(ClassFilter::Exogenous)
            ));
            self.out.csv(&format!("events_S{label}.csv"), "minute_index,timestamp,class,V,threshold", rows)?;
        }
        self.out.csv("event_counts.csv", "S,all,endogenous,exogenous", counts)
    }

    fn curve(&mut self, label: &str, class: ClassFilter) -> Result<Option<ResponseCurve>> {
        self.event_sets()?;
        let horizon = self.cfg().detect.horizon;
        let set = &self.events[label];
        if set.count(class) == 0 {
            self.empty.push(format!("S={label} class={}", class_label(class)));
            return Ok(None);
        }
        let series = &self.inputs.as_ref().expect("loaded").series;
        Ok(Some(build_response(series, set, horizon, class)?))
    }

    fn fit(&mut self) -> Result<()> {
        self.fit_classes(&self.inv.classes)
    }

    fn fit_classes(&mut self, classes: &[ClassFilter]) -> Result<()> {
        let options = self.cfg().fit.two_stage_options();
        let heston_omega = self.cfg().fit.heston_omega;
        let lm = self.cfg().fit.lm;
        for &class in classes {
            let name = class_label(class);
            let mut rows = Vec::new();
            let mut heston_rows = Vec::new();
            let mut records = Vec::new();
            for (label, s) in self.thresholds() {
                let Some(curve) = self.curve(&label, class)? else {
                    rows.push(format!("{label},n/a,n/a,n/a,n/a,n/a,n/a,n/a"));
                    if heston_omega.is_some() {
                        heston_rows.push(format!("{label},n/a,n/a,n/a,n/a,n/a,n/a"));
                    }
                    records.push(FitRecord { s, events: 0, fit: None, candidates: Vec::new() });
                    self.write_curve(&label, name, None, None)?;
                    continue;
                };
                let fitted = match fit_two_stage(&curve, &options) {
                    Ok(f) => f,
                    Err(e) if e.is_insufficient_data() => {
                        self.empty.push(format!("S={label} class={name} ({e})"));
                        rows.push(format!("{label},n/a,n/a,n/a,n/a,n/a,n/a,n/a"));
                        records.push(FitRecord { s, events: self.events[&label].count(class), fit: None, candidates: Vec::new() });
                        self.write_curve(&label, name, Some(&curve), None)?;
                        continue;
                    }
                    Err(e) => return Err(e).with_context(|| format!("fitting S={label} class={name}")),
                };
                let best = &fitted.best;
                let ve = best.ve().expect("two-stage fit");
                let (r1, b1, c1) = match ve.stage1 {
                    Some(s1) => (num(s1.rho), num(s1.b), num(s1.c)),
                    None => (String::new(), String::new(), String::new()),
                };
                rows.push(format!(
                    "{label},{},{r1},{b1},{c1},{},{},{}",
                    ve.t_w,
                    num(ve.stage2.rho),
                    num(ve.stage2.b),
                    num(best.rss)
                ));
                if let Some(omega) = heston_omega {
                    let h = fit_heston(&curve, omega, &lm).with_context(|| format!("baseline S={label} class={name}"))?;
                    let (a, theta) = match h.fit.params {
                        aftershock_core::FittedParams::Heston(p) => (p.a, p.theta),
                        _ => unreachable!("baseline fit returns baseline parameters"),
                    };
                    let preferred = if best.rss <= h.fit.rss { "ve" } else { "heston" };
                    heston_rows.push(format!(
                        "{label},{},{},{},{},{},{preferred}",
                        num(a),
                        num(theta),
                        num(omega),
                        num(h.fit.rss),
                        num(best.rss)
                    ));
                }
                self.write_curve(&label, name, Some(&curve), Some(best))?;
                records.push(FitRecord {
                    s,
                    events: self.events[&label].count(class),
                    fit: Some(best.clone()),
                    candidates: fitted.candidates.iter().map(|c| (c.t_w, c.rss)).collect(),
                });
            }
            self.out.csv(&format!("fits_{name}.csv"), "S,t_w,rho1,b1,c1,rho2,b2,rss", rows)?;
            self.out.json(&format!("fits_{name}.json"), &FitsDocument { class: name, fits: records })?;
            if heston_omega.is_some() {
                self.out.csv(&format!("heston_{name}.csv"), "S,a,theta,omega,rss,ve_rss,preferred", heston_rows)?;
            }
        }
        Ok(())
    }

    fn write_curve(&mut self, label: &str, class: &str, curve: Option<&ResponseCurve>, fit: Option<&FitResult>) -> Result<()> {
        let rows: Vec<String> = match curve {
            None => Vec::new(),
            Some(c) => (0..c.horizon)
                .map(|k| {
                    let t = (k + 1) as f64;
                    let fitted = match fit {
                        Some(f) if c.n_contributing[k] > 0 => num(f.predict(t)),
                        _ => String::new(),
                    };
                    format!(
                        "{},{},{},{},{fitted}",
                        k + 1,
                        num(c.mean_volatility[k]),
                        num(c.mean_log_volume[k]),
                        c.n_contributing[k]
                    )
                })
                .collect(),
        };
        self.out.csv(&format!("curve_S{label}_{class}.csv"), "t,mean_volatility,mean_log_volume,n,fitted", rows)
    }

    /// Stage boundaries per threshold from `fits_{class}.csv`; `None` marks an n/a row.
    fn boundaries(&mut self, class: ClassFilter) -> Result<BTreeMap<String, Option<u32>>> {
        let path = self.out.dir.join(format!("fits_{}.csv", class_label(class)));
        let expected: Vec<String> = self.thresholds().into_iter().map(|(l, _)| l).collect();
        let needs_fit = match fs::read_to_string(&path) {
            Ok(text) => {
                let table = parse_fit_table(&text)?;
                if expected.iter().all(|l| table.contains_key(l)) && text.starts_with(&self.out.header()) {
                    return Ok(table);
                }
                true
            }
            Err(_) => true,
        };
        if needs_fit {
            self.fit_classes(&[class])?;
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        parse_fit_table(&text)
    }

    fn test(&mut self) -> Result<()> {
        self.event_sets()?;
        let test_cfg = self.cfg().test.clone();
        let lm = self.cfg().fit.lm;
        let horizon = self.cfg().detect.horizon;
        // the volume split is a property of the whole series, not of an event set
        let decomposition: std::result::Result<VolumeDecomposition, aftershock_core::Error> =
            mdh_decompose(&self.inputs.as_ref().expect("loaded").series, test_cfg.arma, &lm);
        let n_obs = self.inputs.as_ref().expect("loaded").series.len();
        let (informed, uninformed) = match &decomposition {
            Ok(d) => (d.by_observation(n_obs, &d.informed), d.by_observation(n_obs, &d.uninformed)),
            Err(_) => (vec![None; n_obs], vec![None; n_obs]),
        };
        let mdh_error = decomposition.as_ref().err().map(|e| e.to_string());
        if let Err(e) = &decomposition {
            if e.is_numerical() {
                self.failures.push(format!("volume decomposition: {e}"));
            }
        }
        let mdh_summary = decomposition.as_ref().ok().map(|d| MdhSummary {
            p: d.arma.ar.len(),
            q: d.arma.ma.len(),
            intercept: d.arma.intercept,
            ar: d.arma.ar.clone(),
            ma: d.arma.ma.clone(),
            converged: d.arma.converged,
            stationary: d.arma.stationary,
            invertible: d.arma.invertible,
        });

        for class in self.inv.classes.clone() {
            let name = class_label(class);
            let bounds = self.boundaries(class)?;
            let mut granger_rows = [Vec::new(), Vec::new()];
            let mut regression_rows = [Vec::new(), Vec::new()];
            for (label, _) in self.thresholds() {
                let t_w = bounds.get(&label).copied().flatten();
                let set = &self.events[&label];
                let series = &self.inputs.as_ref().expect("loaded").series;
                let stages: [StageReport; 2] = match t_w {
                    Some(t_w) if set.count(class) > 0 => {
                        let curve = build_response(series, set, horizon, class)?;
                        let (zi, _) = aligned_mean(series, set, horizon, class, |j| informed[j]);
                        let (zu, _) = aligned_mean(series, set, horizon, class, |j| uninformed[j]);
                        let points = StagePoints::collect(&curve, &zi, &zu);
                        let (early, late) = points.split(t_w);
                        [
                            stage_battery(&early, &test_cfg, mdh_error.as_deref()),
                            stage_battery(&late, &test_cfg, mdh_error.as_deref()),
                        ]
                    }
                    _ => {
                        let reason = format!("no fitted stage boundary for S={label} class={name}");
                        [StageReport::unavailable(&reason), StageReport::unavailable(&reason)]
                    }
                };
                for (k, stage) in stages.iter().enumerate() {
                    for f in stage.numerical_failures() {
                        self.failures.push(format!("S={label} class={name} stage {}: {f}", k + 1));
                    }
                    for (direction, section) in [
                        (Direction::VolumeToVolatility, &stage.granger_volume_to_volatility),
                        (Direction::VolatilityToVolume, &stage.granger_volatility_to_volume),
                    ] {
                        let (f, p) = match section {
                            Section::Ok { result } => (num(result.f_stat), num(result.p_value)),
                            _ => ("n/a".into(), "n/a".into()),
                        };
                        granger_rows[k].push(format!("{label},{},{f},{p}", direction.null_hypothesis()));
                    }
                    regression_rows[k].push(match &stage.regression {
                        Section::Ok { result: r } => format!(
                            "{label},{},{},{},{},{},{},{}",
                            num(r.beta0),
                            num(r.beta_i),
                            num(r.beta_u),
                            num(r.p_beta0),
                            num(r.p_beta_i),
                            num(r.p_beta_u),
                            num(r.f_pvalue)
                        ),
                        _ => format!("{label},n/a,n/a,n/a,n/a,n/a,n/a,n/a"),
                    });
                    let doc = StageDocument {
                        s: label.clone(),
                        class: name,
                        stage: k + 1,
                        t_w,
                        volume_model: mdh_summary.clone(),
                        report: stage,
                    };
                    self.out.json(&format!("report_S{label}_{name}_stage{}.json", k + 1), &doc)?;
                }
            }
            for k in 0..2 {
                self.out.csv(
                    &format!("granger_{name}_stage{}.csv", k + 1),
                    "S,null_hypothesis,F,p",
                    std::mem::take(&mut granger_rows[k]),
                )?;
                self.out.csv(
                    &format!("regression_{name}_stage{}.csv", k + 1),
                    "S,beta0,beta_i,beta_u,p_beta0,p_beta_i,p_beta_u,f_pvalue",
                    std::mem::take(&mut regression_rows[k]),
                )?;
            }
        }
        Ok(())
    }

    fn simulate(&mut self) -> Result<()> {
        let sim = self.cfg().simulate.clone();
        match sim.mode {
            SimulateMode::Paths => {
                let paths = simulate(&sim.sde)?;
                let rows = paths.paths.iter().enumerate().flat_map(|(i, path)| {
                    paths.times.iter().zip(path).map(move |(t, v)| format!("{i},{t},{}", num(*v)))
                });
                self.out.csv("simulated_paths.csv", "path,t,V", rows.collect::<Vec<_>>())
            }
            SimulateMode::Ensemble => {
                let stats = ensemble_stats(&simulate(&sim.sde)?);
                let rows: Vec<String> = stats
                    .times
                    .iter()
                    .zip(stats.mean.iter().zip(&stats.stderr))
                    .map(|(t, (m, se))| format!("{t},{},{},{}", num(*m), num(*se), num(sim.sde.analytic_mean(*t))))
                    .collect();
                self.out.csv("ensemble.csv", "t,mean_V,stderr,analytic", rows)
            }
            SimulateMode::Market => {
                let market = generate_market(&sim.market)?;
                let header = self.out.header();
                // bars and news stay loadable by the market-data readers, which skip `#` lines
                self.out.write("market_bars.csv", format!("{header}{}", market.bars_csv()))?;
                self.out.write("market_news.csv", format!("{header}{}", market.news_csv()))?;
                self.out.write("market_injected.csv", format!("{header}{}", market.injected_csv()))
            }
        }
    }

    fn summary(&mut self) -> Result<()> {
        let mut rows = Vec::new();
        for class in self.inv.classes.clone() {
            let bounds = self.boundaries(class)?;
            for (label, _) in self.thresholds() {
                let t_w = bounds.get(&label).copied().flatten().map_or("n/a".to_string(), |t| t.to_string());
                rows.push(format!("{label},{},{},{t_w}", class_label(class), self.events[&label].count(class)));
            }
        }
        self.out.csv("summary.csv", "S,class,events,t_w", rows)
    }
}

#[derive(Serialize)]
struct FitRecord {
    #[serde(rename = "S")]
    s: f64,
    events: usize,
    fit: Option<FitResult>,
    /// `(t_w, total RSS)` for every feasible boundary.
    candidates: Vec<(u32, f64)>,
}

#[derive(Serialize)]
struct FitsDocument<'a> {
    class: &'a str,
    fits: Vec<FitRecord>,
}

#[derive(Debug, Clone, Serialize)]
struct MdhSummary {
    p: usize,
    q: usize,
    intercept: f64,
    ar: Vec<f64>,
    ma: Vec<f64>,
    converged: bool,
    stationary: bool,
    invertible: bool,
}

#[derive(Serialize)]
struct StageDocument<'a> {
    #[serde(rename = "S")]
    s: String,
    class: &'a str,
    stage: usize,
    t_w: Option<u32>,
    volume_model: Option<MdhSummary>,
    report: &'a StageReport,
}

fn parse_fit_table(text: &str) -> Result<BTreeMap<String, Option<u32>>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    if lines.next().map(str::trim) != Some("S,t_w,rho1,b1,c1,rho2,b2,rss") {
        return Err(ValidationError("fit table has an unexpected header".into()).into());
    }
    let mut out = BTreeMap::new();
    for line in lines {
        let mut fields = line.split(',');
        let (Some(s), Some(t_w)) = (fields.next(), fields.next()) else {
            return Err(ValidationError(format!("malformed fit row {line:?}")).into());
        };
        let t_w = match t_w {
            "n/a" => None,
            v => Some(v.parse().map_err(|_| ValidationError(format!("bad t_w in fit row {line:?}")))?),
        };
        out.insert(s.to_string(), t_w);
    }
    Ok(out)
}

/// Lags at which volatility, volume and both volume parts are all defined.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StagePoints {
    pub t: Vec<u32>,
    pub volatility: Vec<f64>,
    pub volume: Vec<f64>,
    pub informed: Vec<f64>,
    pub uninformed: Vec<f64>,
}

impl StagePoints {
    pub fn collect(curve: &ResponseCurve, informed: &[f64], uninformed: &[f64]) -> Self {
        let mut p = Self::default();
        for k in 0..curve.horizon {
            let values = [curve.mean_volatility[k], curve.mean_log_volume[k], informed[k], uninformed[k]];
            if curve.n_contributing[k] > 0 && values.iter().all(|v| v.is_finite()) {
                p.t.push(k as u32 + 1);
                p.volatility.push(values[0]);
                p.volume.push(values[1]);
                p.informed.push(values[2]);
                p.uninformed.push(values[3]);
            }
        }
        p
    }

    /// `(t ≤ t_w, t > t_w)`.
    pub fn split(&self, t_w: u32) -> (Self, Self) {
        let cut = self.t.partition_point(|&t| t <= t_w);
        let part = |r: std::ops::Range<usize>| Self {
            t: self.t[r.clone()].to_vec(),
            volatility: self.volatility[r.clone()].to_vec(),
            volume: self.volume[r.clone()].to_vec(),
            informed: self.informed[r.clone()].to_vec(),
            uninformed: self.uninformed[r].to_vec(),
        };
        (part(0..cut), part(cut..self.t.len()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status")]
pub enum Section<T> {
    #[serde(rename = "ok")]
    Ok { result: T },
    #[serde(rename = "insufficient sample")]
    InsufficientSample { reason: String },
    #[serde(rename = "failed")]
    Failed { reason: String, numerical: bool },
}

impl<T> Section<T> {
    fn from_result(r: aftershock_core::Result<T>) -> Self {
        match r {
            Ok(result) => Section::Ok { result },
            Err(e) if e.is_insufficient_data() => Section::InsufficientSample { reason: e.to_string() },
            Err(e) => Section::Failed { numerical: e.is_numerical(), reason: e.to_string() },
        }
    }

    pub fn ok(&self) -> Option<&T> {
        match self {
            Section::Ok { result } => Some(result),
            _ => None,
        }
    }

    /// The same non-`ok` status for another section type.
    fn failure_as<U>(&self) -> Section<U> {
        match self {
            Section::Ok { .. } => panic!("failure_as on an ok section"),
            Section::InsufficientSample { reason } => Section::InsufficientSample { reason: reason.clone() },
            Section::Failed { reason, numerical } => Section::Failed { reason: reason.clone(), numerical: *numerical },
        }
    }

    pub fn is_insufficient(&self) -> bool {
        matches!(self, Section::InsufficientSample { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarSummary {
    pub lag: usize,
    pub aic: f64,
    pub aic_by_lag: Vec<f64>,
    pub n_obs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionSummary {
    pub beta0: f64,
    pub beta_i: f64,
    pub beta_u: f64,
    pub p_beta0: f64,
    pub p_beta_i: f64,
    pub p_beta_u: f64,
    pub f_pvalue: f64,
    pub r_squared: f64,
    pub n: usize,
    pub collinear: bool,
}

/// Test battery for one stage of one response curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub n_points: usize,
    pub first_lag: Option<u32>,
    pub last_lag: Option<u32>,
    pub adf_volatility: Section<AdfResult>,
    pub adf_volume: Section<AdfResult>,
    pub var: Section<VarSummary>,
    pub granger_volume_to_volatility: Section<GrangerResult>,
    pub granger_volatility_to_volume: Section<GrangerResult>,
    pub regression: Section<RegressionSummary>,
}

impl StageReport {
    fn unavailable(reason: &str) -> Self {
        fn s<T>(reason: &str) -> Section<T> {
            Section::InsufficientSample { reason: reason.to_string() }
        }
        Self {
            n_points: 0,
            first_lag: None,
            last_lag: None,
            adf_volatility: s(reason),
            adf_volume: s(reason),
            var: s(reason),
            granger_volume_to_volatility: s(reason),
            granger_volatility_to_volume: s(reason),
            regression: s(reason),
        }
    }

    fn numerical_failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |name: &str, failed: Option<(&String, bool)>| {
            if let Some((reason, true)) = failed {
                out.push(format!("{name}: {reason}"));
            }
        };
        fn failed<T>(s: &Section<T>) -> Option<(&String, bool)> {
            match s {
                Section::Failed { reason, numerical } => Some((reason, *numerical)),
                _ => None,
            }
        }
        check("ADF volatility", failed(&self.adf_volatility));
        check("ADF volume", failed(&self.adf_volume));
        check("VAR", failed(&self.var));
        check("Granger", failed(&self.granger_volume_to_volatility));
        check("Granger", failed(&self.granger_volatility_to_volume));
        check("regression", failed(&self.regression));
        out
    }
}

/// ADF on both curves, the VAR with Granger tests in both directions, and the
/// regression of volatility on informed and uninformed volume.
///
/// `volume_split_error` marks the regression as failed when the volume
/// decomposition could not be computed.
pub fn stage_battery(points: &StagePoints, cfg: &TestConfig, volume_split_error: Option<&str>) -> StageReport {
    let adf_volatility = Section::from_result(adf_test(&points.volatility, cfg.adf_max_lag));
    let adf_volume = Section::from_result(adf_test(&points.volume, cfg.adf_max_lag));
    let model = var_fit_aic(&points.volatility, &points.volume, cfg.max_var_lag);
    let (var, g_zv, g_vz) = match model {
        Ok(m) => (
            Section::Ok { result: VarSummary { lag: m.lag, aic: m.aic, aic_by_lag: m.aic_by_lag.clone(), n_obs: m.n_obs } },
            Section::from_result(granger_test(&m, Direction::VolumeToVolatility)),
            Section::from_result(granger_test(&m, Direction::VolatilityToVolume)),
        ),
        Err(e) => {
            let s = Section::<VarSummary>::from_result(Err(e));
            (s.clone(), s.failure_as(), s.failure_as())
        }
    };
    let regression = match volume_split_error {
        Some(reason) => Section::Failed { reason: format!("volume decomposition: {reason}"), numerical: false },
        None => Section::from_result(vv_regression(&points.volatility, &points.informed, &points.uninformed).map(|r| {
            let o = &r.ols;
            RegressionSummary {
                beta0: o.coefficients[0],
                beta_i: o.coefficients[1],
                beta_u: o.coefficients[2],
                p_beta0: o.t_pvalues[0],
                p_beta_i: o.t_pvalues[1],
                p_beta_u: o.t_pvalues[2],
                f_pvalue: o.f_pvalue,
                r_squared: o.r_squared,
                n: o.n,
                collinear: r.collinear,
            }
        })),
    };
    StageReport {
        n_points: points.t.len(),
        first_lag: points.t.first().copied(),
        last_lag: points.t.last().copied(),
        adf_volatility,
        adf_volume,
        var,
        granger_volume_to_volatility: g_zv,
        granger_volatility_to_volume: g_vz,
        regression,
    }
}

/// Resolve the effective configuration from an optional file and flag overrides.
pub fn resolve_config(path: Option<&Path>, out: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut config = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = out {
        config.output = out.to_path_buf();
    }
    let seed = seed.unwrap_or(config.seed);
    config.apply_seed(seed);
    Ok(config)
}
