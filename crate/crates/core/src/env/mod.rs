//! The dispatch MDP: observations, action application, reward, and the
//! hourly data that drives an episode.

mod data;
mod norm;

pub use data::{
    load_dataset, parse_factor_rows, synth_dataset, synth_rows, write_factor_rows, SynthOptions,
    TEST_RANGE, TRAIN_RANGE,
};
pub use norm::RunningNorm;

use std::io::Write;
use std::sync::Arc;

use chrono::NaiveDateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::assets::{ess_step, net_injections, power_bounds_dt, EssState, GridCase, PowerBounds, ProfileSet};
use crate::error::{Error, Result};
use crate::grid::{violations_of, VoltageSolution};
use crate::guard::HighRiskSet;

/// Hours of price look-ahead in the observation.
pub const PRICE_WINDOW: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Set by the run configuration's episode length, not read from files.
    #[serde(skip)]
    pub episode_len: usize,
    /// Cost scale `C_w` in £.
    pub cost_scale: f64,
    /// Weight on the violation count.
    pub violation_weight: f64,
    pub initial_soe: f64,
    pub dt: f64,
    /// Standard deviation (£/kWh) of noise added to future prices in the window; 0 = perfect forecast.
    pub price_noise_std: f64,
    pub noise_seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            episode_len: 480,
            cost_scale: 1000.0,
            violation_weight: 1.0,
            initial_soe: 0.1,
            dt: 1.0,
            price_noise_std: 0.0,
            noise_seed: 0,
        }
    }
}

/// Observation dimension for `n` buses and `n_ess` storage units.
#[inline]
pub const fn observation_dim(n: usize, n_ess: usize) -> usize {
    n + 1 + 4 * n_ess + PRICE_WINDOW
}

/// Exact power-flow evaluation of one storage dispatch at one hour.
#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub solution: VoltageSolution<f64>,
    /// Grid draw at the slack bus, kW.
    pub p_r_kw: f64,
    pub magnitudes: Vec<f64>,
    /// Limit violations among the high-risk buses.
    pub delta: usize,
    /// Limit violations over every bus.
    pub violations_all: usize,
    /// Largest distance outside the limits over all buses, p.u. (0 when none).
    pub max_excess: f64,
}

impl GridOutcome {
    #[inline]
    pub fn converged(&self) -> bool {
        self.solution.converged
    }

    #[inline]
    pub fn is_safe(&self) -> bool {
        self.converged() && self.violations_all == 0
    }
}

/// Runs the power flow for `ess_kw` at hour `t` and counts violations.
///
/// A non-converged solve counts every high-risk bus as violated; its grid
/// draw falls back to the lossless sum of injections.
pub fn assess_dispatch(
    case: &GridCase,
    profiles: &ProfileSet,
    risk: &HighRiskSet,
    t: usize,
    ess_kw: &[f64],
    warm: Option<&VoltageSolution<f64>>,
) -> Result<GridOutcome> {
    let inj = net_injections(case, profiles, ess_kw, t)?;
    let solution = match warm {
        Some(w) => case.solver.solve_warm(&inj, w)?,
        None => case.solver.solve(&inj)?,
    };
    let net = case.network();
    let s = net.s_base_kva();
    if !solution.converged {
        let slack = net.slack_bus();
        let lossless: f64 = inj.p.iter().enumerate().filter(|&(i, _)| i != slack).map(|(_, p)| p).sum();
        return Ok(GridOutcome {
            p_r_kw: lossless * s,
            magnitudes: vec![f64::NAN; net.bus_count()],
            delta: risk.len(),
            violations_all: net.bus_count() - 1,
            max_excess: f64::INFINITY,
            solution,
        });
    }
    let magnitudes = solution.magnitudes();
    let limits = net.limits();
    let all = violations_of(&magnitudes, &limits, 0..net.bus_count());
    let delta = violations_of(&magnitudes, &limits, risk.buses().iter().copied()).len();
    let max_excess = all.iter().map(|v| v.excess(&limits)).fold(0.0, f64::max);
    Ok(GridOutcome {
        p_r_kw: solution.slack_p * s,
        magnitudes,
        delta,
        violations_all: all.len(),
        max_excess,
        solution,
    })
}

/// Per-step cost in £: grid purchase at the slack price plus storage power at node prices.
pub fn step_cost(profiles: &ProfileSet, t: usize, p_r_kw: f64, ess_kw: &[f64], dt: f64) -> f64 {
    let storage: f64 = ess_kw
        .iter()
        .enumerate()
        .map(|(k, p)| profiles.node_price(t, k) * p)
        .sum();
    (profiles.price_grid[t] * p_r_kw + storage) * dt
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// Raw (unstandardized) observation after the step.
    pub next_obs: Vec<f64>,
    pub reward: f64,
    pub step_cost: f64,
    /// Violations among the high-risk buses.
    pub violations: usize,
    /// Violations over all buses.
    pub violations_all: usize,
    pub executed_action_kw: Vec<f64>,
    pub done: bool,
    pub used_fallback: bool,
    pub converged: bool,
    pub p_r_kw: f64,
    /// SoE after the step.
    pub soe: Vec<f64>,
    /// Absolute hour index the step executed at, and its timestamp.
    pub hour: usize,
    pub timestamp: NaiveDateTime,
    /// Voltage magnitudes at the high-risk buses under the executed action.
    pub risk_voltages: Vec<f64>,
}

/// One storage-dispatch episode over a shared data set.
#[derive(Debug, Clone)]
pub struct DispatchEnv {
    case: Arc<GridCase>,
    profiles: Arc<ProfileSet>,
    risk: HighRiskSet,
    cfg: EnvConfig,
    t: usize,
    steps: usize,
    soe: Vec<EssState>,
    last_kw: Vec<f64>,
    base_draw_kw: f64,
    warm: Option<VoltageSolution<f64>>,
    done: bool,
    rng: ChaCha8Rng,
    price_noise: Vec<f64>,
}

impl DispatchEnv {
    pub fn new(case: Arc<GridCase>, profiles: Arc<ProfileSet>, risk: HighRiskSet, cfg: EnvConfig) -> Result<Self> {
        if profiles.bus_count() != case.network().bus_count() {
            return Err(Error::Shape("profiles and network disagree on bus count".into()));
        }
        if cfg.episode_len == 0 || !(cfg.dt > 0.0) || !(cfg.cost_scale > 0.0) {
            return Err(Error::Config("episode length, dt, and cost scale must be positive".into()));
        }
        let n_ess = case.ess_count();
        let rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed);
        Ok(Self {
            soe: case.devices.ess.iter().map(|u| EssState { soe: u.soe_min }).collect(),
            last_kw: vec![0.0; n_ess],
            case,
            profiles,
            risk,
            cfg,
            t: 0,
            steps: 0,
            base_draw_kw: 0.0,
            warm: None,
            done: true,
            rng,
            price_noise: vec![0.0; PRICE_WINDOW],
        })
    }

    #[inline]
    pub fn case(&self) -> &GridCase {
        &self.case
    }

    #[inline]
    pub fn profiles(&self) -> &ProfileSet {
        &self.profiles
    }

    #[inline]
    pub fn risk(&self) -> &HighRiskSet {
        &self.risk
    }

    #[inline]
    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    #[inline]
    pub fn hour(&self) -> usize {
        self.t
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn is_done(&self) -> bool {
        self.done
    }

    #[inline]
    pub fn obs_dim(&self) -> usize {
        observation_dim(self.case.network().bus_count(), self.case.ess_count())
    }

    #[inline]
    pub fn action_dim(&self) -> usize {
        self.case.ess_count()
    }

    /// State of the price-noise stream, which persists across resets.
    pub fn noise_rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn set_noise_rng(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }

    pub fn soe(&self) -> Vec<f64> {
        self.soe.iter().map(|s| s.soe).collect()
    }

    pub fn states(&self) -> &[EssState] {
        &self.soe
    }

    /// Storage power bounds at the current hour.
    pub fn bounds(&self) -> Vec<PowerBounds> {
        self.case
            .devices
            .ess
            .iter()
            .zip(&self.soe)
            .map(|(u, &s)| power_bounds_dt(u, s, self.cfg.dt))
            .collect()
    }

    /// Maps a normalized action onto the current bounds.
    pub fn denormalize(&self, action: &[f64]) -> Result<Vec<f64>> {
        if action.len() != self.action_dim() {
            return Err(Error::Shape(format!("action of length {} for {} units", action.len(), self.action_dim())));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Contract("non-finite action".into()));
        }
        Ok(self.bounds().iter().zip(action).map(|(b, &a)| b.denormalize(a)).collect())
    }

    pub fn normalize(&self, kw: &[f64]) -> Vec<f64> {
        self.bounds().iter().zip(kw).map(|(b, &p)| b.normalize(p)).collect()
    }

    pub fn reset(&mut self, start: usize, initial_soe: f64) -> Result<Vec<f64>> {
        let hours = self.profiles.hours();
        if start + self.cfg.episode_len > hours {
            return Err(Error::Range(format!(
                "episode of {} hours from hour {start} exceeds the {hours}-hour data set",
                self.cfg.episode_len
            )));
        }
        let mut soe = Vec::with_capacity(self.case.ess_count());
        for u in &self.case.devices.ess {
            if !(u.soe_min..=u.soe_max).contains(&initial_soe) {
                return Err(Error::Range(format!("initial SoE {initial_soe} outside {}'s window", u.name)));
            }
            soe.push(EssState { soe: initial_soe });
        }
        self.soe = soe;
        self.t = start;
        self.steps = 0;
        self.done = false;
        self.warm = None;
        self.last_kw.iter_mut().for_each(|p| *p = 0.0);
        self.refresh_base_draw()?;
        Ok(self.observation())
    }

    fn refresh_base_draw(&mut self) -> Result<()> {
        let t = self.t.min(self.profiles.hours() - 1);
        let zero = vec![0.0; self.case.ess_count()];
        let out = assess_dispatch(&self.case, &self.profiles, &self.risk, t, &zero, self.warm.as_ref())?;
        if !out.converged() {
            return Err(Error::Solver(format!("power flow failed at hour {t} with storage idle")));
        }
        self.base_draw_kw = out.p_r_kw;
        self.warm = Some(out.solution);
        if self.cfg.price_noise_std > 0.0 {
            // the current price is known; only the look-ahead is perturbed
            for w in self.price_noise.iter_mut().skip(1) {
                let z: f64 = self.rng.sample(StandardNormal);
                *w = self.cfg.price_noise_std * z;
            }
        }
        Ok(())
    }

    /// Raw observation at the current hour: bus loads, idle-storage grid draw,
    /// last executed storage powers, SoE, power bounds, then the price window.
    pub fn observation(&self) -> Vec<f64> {
        let p = &self.profiles;
        let t = self.t.min(p.hours() - 1);
        let mut obs = Vec::with_capacity(self.obs_dim());
        obs.extend_from_slice(&p.load_p_kw[t]);
        obs.push(self.base_draw_kw);
        obs.extend_from_slice(&self.last_kw);
        obs.extend(self.soe.iter().map(|s| s.soe));
        let bounds = self.bounds();
        obs.extend(bounds.iter().map(|b| b.lower));
        obs.extend(bounds.iter().map(|b| b.upper));
        let window = p.price_window(t, PRICE_WINDOW);
        obs.extend(window.iter().zip(&self.price_noise).map(|(c, e)| c + e));
        obs
    }

    /// Applies a normalized action.
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let kw = self.denormalize(action)?;
        self.step_kw(&kw, false)
    }

    /// Evaluates `kw` (clipped to the current bounds) at the current hour without advancing.
    pub fn assess_kw(&self, kw: &[f64]) -> Result<GridOutcome> {
        let kw = self.clip(kw)?;
        assess_dispatch(&self.case, &self.profiles, &self.risk, self.t, &kw, self.warm.as_ref())
    }

    pub fn clip(&self, kw: &[f64]) -> Result<Vec<f64>> {
        if kw.len() != self.action_dim() {
            return Err(Error::Shape(format!("{} powers for {} units", kw.len(), self.action_dim())));
        }
        if kw.iter().any(|p| !p.is_finite()) {
            return Err(Error::Contract("non-finite storage power".into()));
        }
        Ok(self.bounds().iter().zip(kw).map(|(b, &p)| b.clip(p)).collect())
    }

    /// Executes storage powers in kW, clipped to the current bounds.
    pub fn step_kw(&mut self, kw: &[f64], used_fallback: bool) -> Result<StepResult> {
        if self.done {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        let kw = self.clip(kw)?;
        let t = self.t;
        let out = assess_dispatch(&self.case, &self.profiles, &self.risk, t, &kw, self.warm.as_ref())?;
        let cost = step_cost(&self.profiles, t, out.p_r_kw, &kw, self.cfg.dt);
        let reward = -(cost / self.cfg.cost_scale + self.cfg.violation_weight * out.delta as f64);
        for ((u, s), &p) in self.case.devices.ess.iter().zip(self.soe.iter_mut()).zip(&kw) {
            *s = ess_step(u, *s, p, self.cfg.dt)?;
        }
        let risk_voltages = self.risk.buses().iter().map(|&b| out.magnitudes[b]).collect();
        let converged = out.converged();
        if converged {
            self.warm = Some(out.solution);
        }
        self.last_kw.copy_from_slice(&kw);
        self.t += 1;
        self.steps += 1;
        self.done = self.steps >= self.cfg.episode_len;
        if self.t < self.profiles.hours() {
            self.refresh_base_draw()?;
        }
        Ok(StepResult {
            next_obs: self.observation(),
            reward,
            step_cost: cost,
            violations: out.delta,
            violations_all: out.violations_all,
            executed_action_kw: kw,
            done: self.done,
            used_fallback,
            converged,
            p_r_kw: out.p_r_kw,
            soe: self.soe(),
            hour: t,
            timestamp: self.profiles.timestamps[t],
            risk_voltages,
        })
    }
}

/// Streams trajectory rows: time, storage powers, SoE, grid draw, cost, reward, violations, fallback flag.
pub struct TrajectoryWriter<W: Write> {
    w: csv::Writer<W>,
    n_ess: usize,
}

impl<W: Write> TrajectoryWriter<W> {
    /// Writes the header unless `append` is set.
    pub fn new(out: W, n_ess: usize, append: bool) -> Result<Self> {
        let mut w = csv::Writer::from_writer(out);
        if !append {
            let mut header = vec!["time".to_string()];
            header.extend((1..=n_ess).map(|k| format!("p_ess{k}_kw")));
            header.extend((1..=n_ess).map(|k| format!("soe{k}")));
            header.extend(["p_r_kw", "cost", "reward", "delta", "used_fallback"].map(String::from));
            w.write_record(&header)?;
        }
        Ok(Self { w, n_ess })
    }

    pub fn write(&mut self, s: &StepResult) -> Result<()> {
        if s.executed_action_kw.len() != self.n_ess || s.soe.len() != self.n_ess {
            return Err(Error::Shape("trajectory row does not match the unit count".into()));
        }
        let mut rec = vec![s.timestamp.format("%Y-%m-%d %H:%M:%S").to_string()];
        rec.extend(s.executed_action_kw.iter().map(f64::to_string));
        rec.extend(s.soe.iter().map(f64::to_string));
        rec.push(s.p_r_kw.to_string());
        rec.push(s.step_cost.to_string());
        rec.push(s.reward.to_string());
        rec.push(s.violations.to_string());
        rec.push(u8::from(s.used_fallback).to_string());
        self.w.write_record(&rec)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io("<trajectory>", e))
    }

    pub fn get_ref(&self) -> &W {
        self.w.get_ref()
    }

    pub fn into_inner(self) -> Result<W> {
        self.w.into_inner().map_err(|e| Error::io("<trajectory>", e.into_error()))
    }
}

pub fn write_trajectory(steps: &[StepResult], n_ess: usize, out: impl Write) -> Result<()> {
    let mut w = TrajectoryWriter::new(out, n_ess, false)?;
    for s in steps {
        w.write(s)?;
    }
    w.flush()
}
