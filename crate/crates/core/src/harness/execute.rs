//! Deterministic execution over evaluation days, for the trained policy and the baselines.

use std::fmt;
use std::fs::File;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use super::config::{RunConfig, RunContext};
use super::screen::{fallback, verdict, RunMode, Screen};
use super::train::Policy;
use crate::dispatch::{plan_day, write_solution_log, Backend, ConicTolerances, SolutionLogRow};
use crate::env::{DispatchEnv, StepResult, TrajectoryWriter};
use crate::error::{Error, Result};
use crate::sac::SacAgent;

/// Every controller the evaluation compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Uncontrolled,
    PerfectForesight,
    Sa2co,
    SacPlain,
    AcpfSac,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Uncontrolled,
        Method::PerfectForesight,
        Method::Sa2co,
        Method::SacPlain,
        Method::AcpfSac,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Uncontrolled => "uncontrolled",
            Method::PerfectForesight => "perfect_foresight",
            Method::Sa2co => "sa2co",
            Method::SacPlain => "sac_plain",
            Method::AcpfSac => "acpf_sac",
        }
    }

    /// Training mode whose checkpoint the method executes.
    pub fn mode(self) -> Option<RunMode> {
        match self {
            Method::Sa2co => Some(RunMode::Sa2co),
            Method::SacPlain => Some(RunMode::PlainSac),
            Method::AcpfSac => Some(RunMode::AcpfSac),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Who picks the storage powers.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    /// Storage idle every hour.
    Idle,
    /// Full-information schedule for the whole episode.
    Plan,
    /// Deterministic policy screened by `screen`.
    Agent { agent: &'a SacAgent, screen: Screen<'a> },
}

#[derive(Debug, Clone)]
pub struct EpisodeLog {
    pub start: usize,
    pub steps: Vec<StepResult>,
    /// Wall-clock seconds per decision (proposal, screen and fallback).
    pub decision_secs: Vec<f64>,
    pub unsafe_proposals: usize,
    pub fallbacks: usize,
    pub solutions: Vec<SolutionLogRow>,
}

impl EpisodeLog {
    pub fn cost(&self) -> f64 {
        self.steps.iter().map(|s| s.step_cost).sum()
    }

    pub fn executed_violations(&self) -> usize {
        self.steps.iter().map(|s| s.violations_all).sum()
    }
}

/// Runs one episode from `start`; an unready surrogate is refused.
pub fn execute_episode(
    env: &mut DispatchEnv,
    controller: Controller<'_>,
    start: usize,
    initial_soe: f64,
    backend: Backend,
    tightening: f64,
) -> Result<EpisodeLog> {
    if let Controller::Agent { screen: Screen::Guard(g), .. } = controller {
        if !g.is_ready() {
            return Err(Error::NotReady("execution needs a frozen voltage surrogate".into()));
        }
    }
    let mut obs = env.reset(start, initial_soe)?;
    let hours = env.config().episode_len;
    let mut log = EpisodeLog {
        start,
        steps: Vec::with_capacity(hours),
        decision_secs: Vec::with_capacity(hours),
        unsafe_proposals: 0,
        fallbacks: 0,
        solutions: Vec::new(),
    };
    let mut plan = None;
    let mut plan_secs = 0.0;
    if let Controller::Plan = controller {
        let t0 = Instant::now();
        let soe = vec![initial_soe; env.action_dim()];
        let p = plan_day(env.case(), env.profiles(), start, hours, &soe, env.config().dt, tightening, ConicTolerances::default())?;
        plan_secs = t0.elapsed().as_secs_f64() / hours as f64;
        plan = Some(p);
    }
    while !env.is_done() {
        let t0 = Instant::now();
        let (proposal, exec) = match controller {
            Controller::Idle => (vec![0.0; env.action_dim()], None),
            Controller::Plan => {
                let p = plan.as_ref().expect("plan solved");
                (env.clip(&p.ess_kw[env.steps()])?, None)
            }
            Controller::Agent { agent, screen } => {
                let kw = env.clip(&env.denormalize(&agent.act_greedy(&obs)?)?)?;
                let replaced = if verdict(env, screen, &kw, None)? {
                    None
                } else {
                    Some(fallback(env, backend, tightening)?)
                };
                (kw, replaced)
            }
        };
        log.decision_secs.push(t0.elapsed().as_secs_f64() + plan_secs);
        if !env.assess_kw(&proposal)?.is_safe() {
            log.unsafe_proposals += 1;
        }
        let res = match exec {
            None => env.step_kw(&proposal, false)?,
            Some(sol) => {
                log.fallbacks += 1;
                let res = env.step_kw(&sol.ess_kw, true)?;
                log.solutions.push(SolutionLogRow {
                    hour: res.hour,
                    solution: sol,
                });
                res
            }
        };
        obs = res.next_obs.clone();
        log.steps.push(res);
    }
    Ok(log)
}

/// One method's episodes over the evaluation days.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub logs: Vec<EpisodeLog>,
    pub training_seconds: Option<f64>,
}

/// Environment for one-day evaluation episodes.
pub fn eval_env(cfg: &RunConfig, ctx: &RunContext) -> Result<DispatchEnv> {
    let mut env_cfg = cfg.env_config(24);
    env_cfg.noise_seed = env_cfg.noise_seed.wrapping_add(cfg.seed);
    DispatchEnv::new(ctx.case.clone(), ctx.profiles.clone(), ctx.risk.clone(), env_cfg)
}

/// Runs `method` on every evaluation day. The SAC methods need their checkpoints.
pub fn run_method(cfg: &RunConfig, ctx: &RunContext, method: Method) -> Result<MethodRun> {
    let policy = method.mode().map(|m| Policy::load_mode(cfg, m)).transpose()?;
    let controller = match (&policy, method) {
        (None, Method::Uncontrolled) => Controller::Idle,
        (None, Method::PerfectForesight) => Controller::Plan,
        (Some(p), Method::Sa2co) => {
            let g = p.guard.as_ref().ok_or_else(|| Error::Config("the sa2co checkpoint has no surrogate".into()))?;
            Controller::Agent {
                agent: &p.agent,
                screen: Screen::Guard(g),
            }
        }
        (Some(p), Method::SacPlain) => Controller::Agent {
            agent: &p.agent,
            screen: Screen::Open,
        },
        (Some(p), Method::AcpfSac) => Controller::Agent {
            agent: &p.agent,
            screen: Screen::Exact,
        },
        _ => unreachable!("policy presence follows the method"),
    };
    let mut env = eval_env(cfg, ctx)?;
    let logs = ctx
        .eval_days(cfg)?
        .into_iter()
        .map(|d| execute_episode(&mut env, controller, d, cfg.eval.initial_soe, cfg.backend, cfg.tightening))
        .collect::<Result<Vec<_>>>()?;
    Ok(MethodRun {
        method,
        logs,
        training_seconds: policy.map(|p| p.training_seconds),
    })
}

/// Writes `trajectory.csv` and `solutions.csv` for `logs` into `dir`.
pub fn write_logs(logs: &[EpisodeLog], n_ess: usize, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| {
        let p = dir.join(name);
        File::create(&p).map_err(|e| Error::io(&p, e))
    };
    let mut w = TrajectoryWriter::new(create("trajectory.csv")?, n_ess, false)?;
    for s in logs.iter().flat_map(|l| &l.steps) {
        w.write(s)?;
    }
    w.flush()?;
    let rows: Vec<SolutionLogRow> = logs.iter().flat_map(|l| l.solutions.iter().cloned()).collect();
    write_solution_log(&rows, n_ess, create("solutions.csv")?)
}
