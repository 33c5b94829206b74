//! Versioned TOML pipeline configuration.

use std::path::{Path, PathBuf};

use aftershock_core::econometrics::ArmaOrders;
use aftershock_core::events::{DetectOptions, MeanMode};
use aftershock_core::fitting::{LmSettings, TwoStageOptions};
use aftershock_core::synth::MarketConfig;
use aftershock_core::{SdeConfig, SessionCalendar};
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ValidationError;

pub const CONFIG_VERSION: u32 = 1;

/// Annotated reference configuration printed by `--print-schema`.
pub const SCHEMA: &str = r#"# aftershock pipeline configuration, version 1.
# Every key is optional; defaults are shown. Relative paths resolve against
# the directory holding the config file.

version = 1                 # schema version, must be 1
seed = 0                    # RNG seed for `simulate` (overridden by --seed)
output = "out"              # output directory (overridden by --out)

[data]
bars = "bars.csv"           # CSV with header timestamp,price,volume; timestamps YYYY-MM-DDTHH:MM
# news = "news.csv"         # optional CSV with header timestamp
sessions = [["09:30", "11:30"], ["13:00", "15:00"]]   # trading sessions, wall clock

[detect]
thresholds = [2.0, 4.0, 6.0, 8.0]   # S values; an event is V > S * <V>
horizon = 240                       # post-event lags, minutes
mean_mode = "pooled"                # "pooled" or "daily_means"
exclusion_window = 0                # minimum spacing between retained events; 0 keeps all
trim_open = 0                       # minutes after each open left out of <V>
trim_close = 0                      # minutes before each close left out of <V>

[fit]
t_w_min = 3                 # smallest nonzero stage boundary (>= 3)
t_w_max = 60                # largest stage boundary; 0 is always a candidate
omega = 0.0                 # fixed long-run level; 0 gives the primary variant
# heston_omega = 0.0011     # when set, also fit omega + exp(a - theta t) and write a comparison table

[fit.lm]
max_iterations = 300
gradient_tolerance = 1e-8
step_tolerance = 1e-12
initial_damping = 1e-3
damping_up = 10.0
damping_down = 0.1
jacobian = { kind = "analytic" }    # or { kind = "central_difference", step = 1e-6 }

[test]
adf_max_lag = 1
max_var_lag = 1
arma = { mode = "aic", max_p = 2, max_q = 2 }   # or { mode = "fixed", p = 1, q = 1 }

[simulate]
mode = "ensemble"           # "paths", "ensemble" or "market"

[simulate.sde]              # one VE stage; seed comes from the top-level seed
rho = 1.06e-3
b = 0.05
c = 1.0
omega = 0.0
sigma_v = 0.0
dt = 1e-3
t_start = 1.0
t_end = 100.0
n_paths = 1

[simulate.market]           # synthetic market; seed comes from the top-level seed
start_date = "2016-01-04"
n_days = 60
n_events = 50
exogenous_fraction = 0.5
event_offset = 0
jump = 1e-2
sigma_v = 5e-6
dt = 0.01
background = 5e-4
background_spread = 0.3
extra_news = 20
start_price = 3000.0
endogenous = { t_w = 12, stage1 = { rho = 1.26e-3, b = 0.42, c = 2.37 }, stage2 = { rho = 1.73e-3, b = 0.10 }, omega = 0.0 }
exogenous = { t_w = 0, stage2 = { rho = 1.69e-3, b = 0.13 }, omega = 0.0 }
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub seed: u64,
    pub output: PathBuf,
    pub data: DataConfig,
    pub detect: DetectConfig,
    pub fit: FitConfig,
    pub test: TestConfig,
    pub simulate: SimulateConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            output: PathBuf::from("out"),
            data: DataConfig::default(),
            detect: DetectConfig::default(),
            fit: FitConfig::default(),
            test: TestConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub bars: Option<PathBuf>,
    pub news: Option<PathBuf>,
    pub sessions: Vec<[String; 2]>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            bars: None,
            news: None,
            sessions: vec![["09:30".into(), "11:30".into()], ["13:00".into(), "15:00".into()]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub thresholds: Vec<f64>,
    pub horizon: usize,
    pub mean_mode: MeanMode,
    pub exclusion_window: usize,
    pub trim_open: u32,
    pub trim_close: u32,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![2.0, 4.0, 6.0, 8.0],
            horizon: 240,
            mean_mode: MeanMode::Pooled,
            exclusion_window: 0,
            trim_open: 0,
            trim_close: 0,
        }
    }
}

impl DetectConfig {
    pub fn options(&self) -> DetectOptions {
        DetectOptions {
            mean_mode: self.mean_mode,
            exclusion_window: self.exclusion_window,
            trim_open: self.trim_open,
            trim_close: self.trim_close,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub t_w_min: u32,
    pub t_w_max: u32,
    pub omega: f64,
    pub heston_omega: Option<f64>,
    pub lm: LmSettings,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { t_w_min: 3, t_w_max: 60, omega: 0.0, heston_omega: None, lm: LmSettings::default() }
    }
}

impl FitConfig {
    pub fn two_stage_options(&self) -> TwoStageOptions {
        TwoStageOptions {
            t_w_grid: std::iter::once(0).chain(self.t_w_min..=self.t_w_max).collect(),
            omega: self.omega,
            settings: self.lm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    pub adf_max_lag: usize,
    pub max_var_lag: usize,
    pub arma: ArmaOrders,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self { adf_max_lag: 1, max_var_lag: 1, arma: ArmaOrders::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimulateMode {
    Paths,
    #[default]
    Ensemble,
    Market,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub mode: SimulateMode,
    pub sde: SdeConfig,
    pub market: MarketConfig,
}

fn invalid(message: impl Into<String>) -> anyhow::Error {
    ValidationError(message.into()).into()
}

impl PipelineConfig {
    /// Parse TOML text; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut config: PipelineConfig = toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = config.data.bars.as_mut() {
            resolve(p);
        }
        if let Some(p) = config.data.news.as_mut() {
            resolve(p);
        }
        resolve(&mut config.output);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Push the top-level seed into the simulator sections.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.simulate.sde.seed = seed;
        self.simulate.market.seed = seed;
    }

    pub fn calendar(&self) -> Result<SessionCalendar> {
        let pairs: Vec<(&str, &str)> = self.data.sessions.iter().map(|[o, c]| (o.as_str(), c.as_str())).collect();
        SessionCalendar::from_wall_clock(&pairs).map_err(|e| invalid(format!("sessions: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(invalid(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version)));
        }
        self.calendar()?;
        let d = &self.detect;
        if d.thresholds.is_empty() {
            return Err(invalid("detect.thresholds must list at least one S"));
        }
        if d.thresholds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(invalid("detect.thresholds must be positive"));
        }
        if d.horizon == 0 || d.horizon > 10_000 {
            return Err(invalid("detect.horizon must lie in 1..=10000"));
        }
        let f = &self.fit;
        if f.t_w_min < 3 || f.t_w_max < f.t_w_min {
            return Err(invalid("fit needs 3 <= t_w_min <= t_w_max"));
        }
        if !(f.omega >= 0.0 && f.omega.is_finite()) {
            return Err(invalid("fit.omega must be a non-negative number"));
        }
        if f.heston_omega.is_some_and(|w| !(w >= 0.0 && w.is_finite())) {
            return Err(invalid("fit.heston_omega must be a non-negative number"));
        }
        f.lm.validate().map_err(|e| invalid(format!("fit.lm: {e}")))?;
        let t = &self.test;
        if t.max_var_lag == 0 {
            return Err(invalid("test.max_var_lag must be at least 1"));
        }
        match t.arma {
            ArmaOrders::Fixed { p, q } if p + q == 0 => return Err(invalid("test.arma needs p + q >= 1")),
            ArmaOrders::Aic { max_p, max_q } if max_p + max_q == 0 => {
                return Err(invalid("test.arma caps need max_p + max_q >= 1"))
            }
            _ => {}
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration.
    pub fn digest(&self) -> String {
        let text = toml::to_string(self).unwrap_or_default();
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
