//! Run configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//! episodes = 50          # E
//! episode_hours = 168    # T
//! out_dir = "runs/desk"
//! backend = "conic"      # or "search"
//! updates_per_step = 1.0
//!
//! [grid]                 # omit for the bundled 33-bus case
//! branches = "net/branches.csv"
//! meta = "net/meta.txt"
//! devices = "net/devices.csv"
//! loads = "net/loads.csv"
//! risk_buses = [12, 13, 14, 15, 16, 17, 18, 29, 30, 31, 32, 33]
//!
//! [data]                 # a factor file, or synthetic days
//! factors = "data/factors.csv"
//! synth_days = 120
//! synth_seed = 11
//! train_from = 2019-09-21
//! train_to = 2019-12-18
//!
//! [eval]
//! from = 2019-12-19
//! to = 2020-01-18
//! initial_soe = 0.1
//!
//! [env]                  # any EnvConfig field except episode_len
//! [sac]                  # any SacConfig field
//! [guard]                # any GuardConfig field
//! ```
//!
//! Relative paths resolve against the directory holding the file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::assets::{GridCase, ProfileSet, Split};
use crate::dispatch::{Backend, DEFAULT_TIGHTENING};
use crate::env::{load_dataset, synth_dataset, EnvConfig};
use crate::error::{Error, Result};
use crate::guard::{GuardConfig, HighRiskSet};
use crate::sac::SacConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridFiles {
    pub branches: Option<PathBuf>,
    pub meta: Option<PathBuf>,
    pub devices: Option<PathBuf>,
    pub loads: Option<PathBuf>,
    /// 1-based; the 33-bus default set when absent.
    pub risk_buses: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSource {
    pub factors: Option<PathBuf>,
    pub synth_days: usize,
    pub synth_seed: u64,
    pub train_from: Option<NaiveDate>,
    pub train_to: Option<NaiveDate>,
}

impl Default for DataSource {
    fn default() -> Self {
        Self {
            factors: None,
            synth_days: 120,
            synth_seed: 11,
            train_from: None,
            train_to: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    pub initial_soe: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            from: None,
            to: None,
            initial_soe: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub episodes: usize,
    pub episode_hours: usize,
    pub out_dir: PathBuf,
    pub backend: Backend,
    /// Voltage-box shrink used by the optimizing backends, p.u.
    pub tightening: f64,
    /// Network updates at episode end per post-warmup step of the episode.
    pub updates_per_step: f64,
    pub grid: GridFiles,
    pub data: DataSource,
    pub eval: EvalConfig,
    pub env: EnvConfig,
    pub sac: SacConfig,
    pub guard: GuardConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            episodes: 300,
            episode_hours: 480,
            out_dir: PathBuf::from("runs"),
            backend: Backend::Conic,
            tightening: DEFAULT_TIGHTENING,
            updates_per_step: 1.0,
            grid: GridFiles::default(),
            data: DataSource::default(),
            eval: EvalConfig::default(),
            env: EnvConfig::default(),
            sac: SacConfig::default(),
            guard: GuardConfig::default(),
        }
    }
}

fn in_range(d: NaiveDate, from: Option<NaiveDate>, to: Option<NaiveDate>) -> bool {
    from.is_none_or(|f| d >= f) && to.is_none_or(|t| d <= t)
}

impl RunConfig {
    /// Laptop-sized run: 50 weekly episodes on 120 synthetic days, 128-wide
    /// networks, tuned temperature and a cost scale of 3 £ so the voltage
    /// penalty competes with the price signal.
    pub fn desk() -> Self {
        Self {
            seed: 7,
            episodes: 50,
            episode_hours: 168,
            out_dir: PathBuf::from("runs/desk"),
            env: EnvConfig {
                cost_scale: 3.0,
                ..EnvConfig::default()
            },
            sac: SacConfig {
                hidden: 128,
                auto_alpha: true,
                ..SacConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        for p in [&mut self.grid.branches, &mut self.grid.meta, &mut self.grid.devices, &mut self.grid.loads, &mut self.data.factors]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.episode_hours == 0 {
            return Err(Error::Config("episode count and length must be positive".into()));
        }
        let g = &self.grid;
        let files = [&g.branches, &g.meta, &g.devices, &g.loads];
        let given = files.iter().filter(|f| f.is_some()).count();
        if given != 0 && given != 4 {
            return Err(Error::Config("grid needs all of branches, meta, devices and loads, or none".into()));
        }
        for p in files.into_iter().chain([&self.data.factors]).flatten() {
            if !p.is_file() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        if self.data.factors.is_none() && self.data.synth_days < 2 {
            return Err(Error::Config("synthetic data needs at least two days".into()));
        }
        if !(self.tightening >= 0.0 && self.updates_per_step >= 0.0) {
            return Err(Error::Config("tightening and updates per step must be nonnegative".into()));
        }
        self.sac.validate()?;
        self.guard.validate()
    }

    /// Environment settings with this run's episode length.
    pub fn env_config(&self, episode_len: usize) -> EnvConfig {
        EnvConfig {
            episode_len,
            ..self.env.clone()
        }
    }
}

/// Loaded case, profiles and high-risk set shared by every run.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub case: Arc<GridCase>,
    pub profiles: Arc<ProfileSet>,
    pub risk: HighRiskSet,
}

impl RunContext {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let g = &cfg.grid;
        let case = match (&g.branches, &g.meta, &g.devices, &g.loads) {
            (Some(b), Some(m), Some(d), Some(l)) => GridCase::from_files(b, m, d, l)?,
            _ => GridCase::ieee33(),
        };
        let n = case.network().bus_count();
        let risk = match &g.risk_buses {
            Some(b) => HighRiskSet::from_one_based(b, n)?,
            None if n == 33 => HighRiskSet::ieee33(),
            None => return Err(Error::Config("risk_buses is required for a custom network".into())),
        };
        let profiles = match &cfg.data.factors {
            Some(p) => load_dataset(&case, p)?,
            None => synth_dataset(&case, cfg.data.synth_seed, cfg.data.synth_days)?,
        };
        Ok(Self {
            case: Arc::new(case),
            profiles: Arc::new(profiles),
            risk,
        })
    }

    /// Training episode starts inside the configured date range.
    pub fn train_starts(&self, cfg: &RunConfig) -> Result<Vec<usize>> {
        let p = &self.profiles;
        let starts: Vec<usize> = p
            .episode_starts(Split::Train, cfg.episode_hours)
            .into_iter()
            .filter(|&t| in_range(p.timestamps[t].date(), cfg.data.train_from, cfg.data.train_to))
            .collect();
        if starts.is_empty() {
            return Err(Error::Config(format!("no {}-hour training window in the data", cfg.episode_hours)));
        }
        Ok(starts)
    }

    /// Test-split day starts inside the evaluation range.
    pub fn eval_days(&self, cfg: &RunConfig) -> Result<Vec<usize>> {
        let p = &self.profiles;
        let days: Vec<usize> = p
            .day_starts(Split::Test)
            .into_iter()
            .filter(|&t| in_range(p.timestamps[t].date(), cfg.eval.from, cfg.eval.to))
            .collect();
        if days.is_empty() {
            return Err(Error::Config("no complete test day in the evaluation range".into()));
        }
        Ok(days)
    }
}
