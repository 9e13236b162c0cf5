//! The training loop: propose, screen, execute or fall back, store, and
//! update the networks at episode end.
//!
//! Output directory `<out_dir>/<mode>/`:
//!
//! - `trajectory.csv`: every executed step
//! - `training_curve.csv`: `episode,cum_reward,mean_q_loss,mean_pi_loss,unsafe_proposals`
//! - `unsafe_counts.csv`: per-episode unsafe proposals, executed violations and fallbacks
//! - `solutions.csv`: every fallback decision
//! - `guard_eval.csv`: held-out surrogate errors, once the surrogate is frozen
//! - `checkpoint.txt`: policy (and surrogate) for execution
//! - `resume.txt`: full training state; written at the end and when a step fails

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{RunConfig, RunContext};
use super::screen::{fallback, verdict, RunMode, Screen};
use crate::dispatch::{solution_log_header, solution_log_record, SolutionLogRow};
use crate::env::{DispatchEnv, GridOutcome, TrajectoryWriter};
use crate::error::{Error, Result};
use crate::guard::{
    evaluate_guard, featurize, label, perturbed_injections, random_samples, write_guard_eval, GuardModel,
    GuardSample, GuardTrainer,
};
use crate::nn::Checkpoint;
use crate::sac::{load_rng, save_rng, PerBuffer, SacAgent, Transition};

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const RESUME_FILE: &str = "resume.txt";
const GUARD_EVAL_SAMPLES: usize = 500;

/// One training episode's summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// 1-based.
    pub episode: usize,
    pub start: usize,
    pub cum_reward: f64,
    pub cost: f64,
    /// NaN when no update ran.
    pub mean_q_loss: f64,
    pub mean_pi_loss: f64,
    /// Proposals the exact power flow rejects, whatever screened them.
    pub unsafe_proposals: usize,
    /// Bus-limit violations of the executed dispatches.
    pub executed_violations: usize,
    pub fallbacks: usize,
    /// The frozen surrogate screened this episode.
    pub guard_ready: bool,
}

const RECORD_COLS: usize = 10;

impl EpisodeRecord {
    fn to_row(&self) -> [f64; RECORD_COLS] {
        [
            self.episode as f64,
            self.start as f64,
            self.cum_reward,
            self.cost,
            self.mean_q_loss,
            self.mean_pi_loss,
            self.unsafe_proposals as f64,
            self.executed_violations as f64,
            self.fallbacks as f64,
            f64::from(u8::from(self.guard_ready)),
        ]
    }

    fn from_row(r: &[f64]) -> Self {
        Self {
            episode: r[0] as usize,
            start: r[1] as usize,
            cum_reward: r[2],
            cost: r[3],
            mean_q_loss: r[4],
            mean_pi_loss: r[5],
            unsafe_proposals: r[6] as usize,
            executed_violations: r[7] as usize,
            fallbacks: r[8] as usize,
            guard_ready: r[9] != 0.0,
        }
    }
}

pub fn write_training_curve(records: &[EpisodeRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "cum_reward", "mean_q_loss", "mean_pi_loss", "unsafe_proposals"])?;
    for r in records {
        w.write_record([
            r.episode.to_string(),
            r.cum_reward.to_string(),
            r.mean_q_loss.to_string(),
            r.mean_pi_loss.to_string(),
            r.unsafe_proposals.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<training curve>", e))
}

pub fn write_training_counts(records: &[EpisodeRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "unsafe_proposals", "executed_violations", "fallbacks", "guard_ready", "cost"])?;
    for r in records {
        w.write_record([
            r.episode.to_string(),
            r.unsafe_proposals.to_string(),
            r.executed_violations.to_string(),
            r.fallbacks.to_string(),
            u8::from(r.guard_ready).to_string(),
            r.cost.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<unsafe counts>", e))
}

#[derive(Debug, Clone)]
enum GuardPhase {
    Absent,
    Training(Box<GuardTrainer>),
    Ready(GuardModel),
}

#[derive(Debug, Clone)]
struct TrainState {
    agent: SacAgent,
    buffer: PerBuffer,
    guard: GuardPhase,
    rng: ChaCha8Rng,
    env_rng: ChaCha8Rng,
    /// Episodes completed.
    episode: usize,
    global_step: u64,
    ready_episode: Option<usize>,
    records: Vec<EpisodeRecord>,
    trajectory_bytes: u64,
    solution_bytes: u64,
    seconds: f64,
}

/// What a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub dir: PathBuf,
    pub records: Vec<EpisodeRecord>,
    /// 1-based episode after which the surrogate was frozen.
    pub ready_episode: Option<usize>,
    pub seconds: f64,
    pub agent: SacAgent,
    pub guard: Option<GuardModel>,
}

struct Logs {
    trajectory: TrajectoryWriter<File>,
    solutions: csv::Writer<File>,
}

fn open_log(path: &Path, keep: Option<u64>) -> Result<File> {
    match keep {
        Some(len) => {
            let f = OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, e))?;
            let have = f.metadata().map_err(|e| Error::io(path, e))?.len();
            if have < len {
                return Err(Error::Checkpoint(format!("{} is shorter than the resume point", path.display())));
            }
            f.set_len(len).map_err(|e| Error::io(path, e))?;
            OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))
        }
        None => File::create(path).map_err(|e| Error::io(path, e)),
    }
}

fn byte_len(f: &File, path: &Path) -> Result<u64> {
    Ok(f.metadata().map_err(|e| Error::io(path, e))?.len())
}

/// A configured training run for one mode.
pub struct Trainer {
    cfg: RunConfig,
    mode: RunMode,
    ctx: RunContext,
    dir: PathBuf,
    stub: Option<bool>,
    stop_after: Option<usize>,
}

impl Trainer {
    pub fn new(cfg: RunConfig, mode: RunMode) -> Result<Self> {
        let ctx = RunContext::build(&cfg)?;
        Ok(Self::with_context(cfg, mode, ctx))
    }

    pub fn with_context(cfg: RunConfig, mode: RunMode, ctx: RunContext) -> Self {
        let dir = cfg.out_dir.join(mode.name());
        Self {
            cfg,
            mode,
            ctx,
            dir,
            stub: None,
            stop_after: None,
        }
    }

    /// Replaces every screening verdict with `safe` (exact labels are still collected).
    pub fn with_stub(mut self, safe: bool) -> Self {
        self.stub = Some(safe);
        self
    }

    /// Ends the run after `episodes` completed episodes, as an interruption would.
    pub fn stop_after(mut self, episodes: usize) -> Self {
        self.stop_after = Some(episodes);
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn context(&self) -> &RunContext {
        &self.ctx
    }

    fn new_env(&self) -> Result<DispatchEnv> {
        let mut env_cfg = self.cfg.env_config(self.cfg.episode_hours);
        env_cfg.noise_seed = env_cfg.noise_seed.wrapping_add(self.cfg.seed);
        DispatchEnv::new(self.ctx.case.clone(), self.ctx.profiles.clone(), self.ctx.risk.clone(), env_cfg)
    }

    fn fresh_state(&self, env: &DispatchEnv) -> Result<TrainState> {
        let seed = self.cfg.seed;
        let agent = SacAgent::new(env.obs_dim(), env.action_dim(), self.cfg.sac.clone(), seed)?;
        let buffer = PerBuffer::new(self.cfg.sac.buffer_capacity, env.obs_dim(), env.action_dim(), self.cfg.sac.per_alpha)?;
        let guard = match self.mode {
            RunMode::Sa2co => {
                let mut init = ChaCha8Rng::seed_from_u64(seed ^ 0x67_7561_7264);
                let model = GuardModel::new(&self.ctx.case, self.ctx.risk.clone(), &self.cfg.guard, &mut init)?;
                GuardPhase::Training(Box::new(GuardTrainer::new(model, self.cfg.guard.clone(), seed.wrapping_add(1))?))
            }
            _ => GuardPhase::Absent,
        };
        Ok(TrainState {
            agent,
            buffer,
            guard,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x74_7261_696e),
            env_rng: env.noise_rng().clone(),
            episode: 0,
            global_step: 0,
            ready_episode: None,
            records: Vec::new(),
            trajectory_bytes: 0,
            solution_bytes: 0,
            seconds: 0.0,
        })
    }

    /// Trains from scratch.
    pub fn run(&self) -> Result<TrainOutput> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let env = self.new_env()?;
        let state = self.fresh_state(&env)?;
        self.drive(state, env, false)
    }

    /// Continues from a resume file up to the configured episode count.
    pub fn resume(&self, path: &Path) -> Result<TrainOutput> {
        let ck = Checkpoint::load(path)?;
        let state = self.load_state(&ck)?;
        let mut env = self.new_env()?;
        env.set_noise_rng(state.env_rng.clone());
        self.drive(state, env, true)
    }

    fn drive(&self, state: TrainState, mut env: DispatchEnv, resuming: bool) -> Result<TrainOutput> {
        let n_ess = env.action_dim();
        let traj_path = self.dir.join("trajectory.csv");
        let sol_path = self.dir.join("solutions.csv");
        let keep = |b: u64| resuming.then_some(b);
        let tf = open_log(&traj_path, keep(state.trajectory_bytes))?;
        let sf = open_log(&sol_path, keep(state.solution_bytes))?;
        let mut solutions = csv::WriterBuilder::new().has_headers(false).from_writer(sf);
        if !resuming {
            solutions.write_record(solution_log_header(n_ess))?;
        }
        let mut logs = Logs {
            trajectory: TrajectoryWriter::new(tf, n_ess, resuming)?,
            solutions,
        };
        let mut state = state;
        if !resuming {
            self.flush_logs(&mut logs, &mut state, &traj_path, &sol_path)?;
        }
        let mut good = state.clone();
        let starts = self.ctx.train_starts(&self.cfg)?;
        let last = self.stop_after.map_or(self.cfg.episodes, |n| n.min(self.cfg.episodes));
        while state.episode < last {
            let t0 = Instant::now();
            let outcome = self
                .episode(&mut state, &mut env, &starts, &mut logs)
                .and_then(|()| self.flush_logs(&mut logs, &mut state, &traj_path, &sol_path));
            if let Err(e) = outcome {
                let path = self.dir.join(RESUME_FILE);
                log::error!("episode {} failed: {e}; resumable state in {}", state.episode + 1, path.display());
                self.save_state(&good, &path)?;
                return Err(e);
            }
            state.seconds += t0.elapsed().as_secs_f64();
            state.env_rng = env.noise_rng().clone();
            self.write_summaries(&state.records)?;
            let r = state.records.last().expect("episode recorded");
            log::info!(
                "{} episode {}/{}: reward {:.3}, cost {:.2}, unsafe {}, fallbacks {}, violations {}",
                self.mode,
                r.episode,
                self.cfg.episodes,
                r.cum_reward,
                r.cost,
                r.unsafe_proposals,
                r.fallbacks,
                r.executed_violations
            );
            good = state.clone();
        }
        self.save_state(&state, &self.dir.join(RESUME_FILE))?;
        let guard = match &state.guard {
            GuardPhase::Ready(m) => Some(m.clone()),
            GuardPhase::Training(t) => Some(t.model().clone()),
            GuardPhase::Absent => None,
        };
        self.save_policy(&state.agent, guard.as_ref(), state.ready_episode, state.seconds)?;
        Ok(TrainOutput {
            dir: self.dir.clone(),
            records: state.records,
            ready_episode: state.ready_episode,
            seconds: state.seconds,
            agent: state.agent,
            guard,
        })
    }

    fn flush_logs(&self, logs: &mut Logs, state: &mut TrainState, traj: &Path, sol: &Path) -> Result<()> {
        logs.trajectory.flush()?;
        logs.solutions.flush().map_err(|e| Error::io(sol, e))?;
        state.trajectory_bytes = byte_len(logs.trajectory_file(), traj)?;
        state.solution_bytes = byte_len(logs.solutions.get_ref(), sol)?;
        Ok(())
    }

    fn write_summaries(&self, records: &[EpisodeRecord]) -> Result<()> {
        let open = |name: &str| {
            let p = self.dir.join(name);
            File::create(&p).map_err(|e| Error::io(&p, e))
        };
        write_training_curve(records, open("training_curve.csv")?)?;
        write_training_counts(records, open("unsafe_counts.csv")?)
    }

    fn episode(&self, st: &mut TrainState, env: &mut DispatchEnv, starts: &[usize], logs: &mut Logs) -> Result<()> {
        let cfg = &self.cfg;
        let start = starts[st.rng.random_range(0..starts.len())];
        let mut obs = env.reset(start, cfg.env.initial_soe)?;
        st.agent.observe(&obs);
        let screened_by_guard = matches!(st.guard, GuardPhase::Ready(_));
        let mut rec = EpisodeRecord {
            episode: st.episode + 1,
            start,
            cum_reward: 0.0,
            cost: 0.0,
            mean_q_loss: f64::NAN,
            mean_pi_loss: f64::NAN,
            unsafe_proposals: 0,
            executed_violations: 0,
            fallbacks: 0,
            guard_ready: screened_by_guard,
        };
        let mut learning_steps = 0usize;
        while !env.is_done() {
            let warm = st.global_step < cfg.sac.warmup_steps as u64;
            let a = if warm {
                st.agent.random_action()
            } else {
                st.agent.act(&obs, true)?.0
            };
            let kw = env.clip(&env.denormalize(&a)?)?;
            let exact = env.assess_kw(&kw)?;
            if !exact.is_safe() {
                rec.unsafe_proposals += 1;
            }
            if let GuardPhase::Training(tr) = &mut st.guard {
                collect(tr, env, &kw, &exact, &mut st.rng)?;
            }
            let approved = match (self.stub, self.mode, &st.guard) {
                (Some(v), _, _) => v,
                (None, RunMode::PlainSac, _) => true,
                (None, RunMode::Sa2co, GuardPhase::Ready(g)) => verdict(env, Screen::Guard(g), &kw, None)?,
                (None, _, _) => exact.is_safe(),
            };
            let (exec, used_fallback) = if approved {
                (kw, false)
            } else {
                let sol = fallback(env, cfg.backend, cfg.tightening)?;
                let row = SolutionLogRow {
                    hour: env.hour(),
                    solution: sol,
                };
                logs.solutions.write_record(solution_log_record(&row))?;
                rec.fallbacks += 1;
                (row.solution.ess_kw, true)
            };
            let a_exec = env.normalize(&exec);
            let res = env.step_kw(&exec, used_fallback)?;
            logs.trajectory.write(&res)?;
            rec.cum_reward += res.reward;
            rec.cost += res.step_cost;
            rec.executed_violations += res.violations_all;
            st.buffer.push(Transition {
                s: obs,
                a: a_exec,
                r: res.reward,
                s2: res.next_obs.clone(),
                done: false,
            })?;
            st.agent.observe(&res.next_obs);
            obs = res.next_obs;
            st.global_step += 1;
            if !warm {
                learning_steps += 1;
            }
        }
        let updates = (learning_steps as f64 * cfg.updates_per_step).round() as usize;
        if updates > 0 && st.buffer.len() >= cfg.sac.batch_size {
            let beta = cfg.sac.beta_at(st.episode as f64 / cfg.episodes as f64);
            let (mut q, mut pi, mut n) = (0.0, 0.0, 0usize);
            for _ in 0..updates {
                let s = st.agent.update(&mut st.buffer, beta)?;
                if !s.skipped {
                    q += s.q_loss;
                    pi += s.pi_loss;
                    n += 1;
                }
            }
            if n > 0 {
                rec.mean_q_loss = q / n as f64;
                rec.mean_pi_loss = pi / n as f64;
            }
        }
        if let GuardPhase::Training(tr) = &mut st.guard {
            tr.end_epoch()?;
            if let Some(model) = tr.try_finalize()? {
                self.evaluate_frozen(&model)?;
                st.guard = GuardPhase::Ready(model);
                st.ready_episode = Some(st.episode + 1);
            }
        }
        st.records.push(rec);
        st.episode += 1;
        Ok(())
    }

    fn evaluate_frozen(&self, model: &GuardModel) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x6576_616c);
        let held_out = random_samples(
            &self.ctx.case,
            &self.ctx.profiles,
            &self.ctx.risk,
            GUARD_EVAL_SAMPLES,
            self.cfg.guard.load_jitter,
            &mut rng,
        )?;
        let rows = evaluate_guard(model, &held_out)?;
        let p = self.dir.join("guard_eval.csv");
        write_guard_eval(&rows, File::create(&p).map_err(|e| Error::io(&p, e))?)?;
        let worst = rows.iter().map(|r| r.max_abs_err).fold(0.0, f64::max);
        log::info!("guard frozen; held-out worst error {worst:.2e} p.u.");
        Ok(())
    }

    fn save_policy(&self, agent: &SacAgent, guard: Option<&GuardModel>, ready: Option<usize>, seconds: f64) -> Result<()> {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "policy")?;
        ck.set_meta("mode", self.mode)?;
        ck.set_meta("seed", self.cfg.seed)?;
        ck.set_meta("training_seconds", format!("{seconds:e}"))?;
        ck.set_meta("ready_episode", ready.map_or("none".into(), |e| e.to_string()))?;
        agent.save_to(&mut ck, "agent")?;
        if let Some(g) = guard {
            g.save_to(&mut ck, "guard")?;
        }
        ck.save(&self.dir.join(CHECKPOINT_FILE))
    }

    fn save_state(&self, st: &TrainState, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "training")?;
        ck.set_meta("mode", self.mode)?;
        ck.set_meta("seed", self.cfg.seed)?;
        ck.set_meta("episode_hours", self.cfg.episode_hours)?;
        ck.set_meta("episode", st.episode)?;
        ck.set_meta("global_step", st.global_step)?;
        ck.set_meta("ready_episode", st.ready_episode.map_or("none".into(), |e| e.to_string()))?;
        ck.set_meta("trajectory_bytes", st.trajectory_bytes)?;
        ck.set_meta("solution_bytes", st.solution_bytes)?;
        ck.set_meta("seconds", format!("{:e}", st.seconds))?;
        st.agent.save_to(&mut ck, "agent")?;
        st.buffer.save_to(&mut ck, "buffer")?;
        save_rng(&mut ck, "rng", &st.rng)?;
        save_rng(&mut ck, "env_rng", &st.env_rng)?;
        match &st.guard {
            GuardPhase::Absent => ck.set_meta("guard", "absent")?,
            GuardPhase::Training(t) => {
                ck.set_meta("guard", "training")?;
                t.save_to(&mut ck, "trainer")?;
            }
            GuardPhase::Ready(m) => {
                ck.set_meta("guard", "ready")?;
                m.save_to(&mut ck, "guard")?;
            }
        }
        let rows: Vec<f64> = st.records.iter().flat_map(|r| r.to_row()).collect();
        ck.put("records", &[st.records.len(), RECORD_COLS], rows)?;
        ck.save(path)
    }

    fn load_state(&self, ck: &Checkpoint) -> Result<TrainState> {
        if ck.meta("kind")? != "training" {
            return Err(Error::Checkpoint("not a training-state checkpoint".into()));
        }
        let mode: RunMode = ck.meta("mode")?.parse()?;
        let seed: u64 = ck.meta_parse("seed")?;
        let hours: usize = ck.meta_parse("episode_hours")?;
        if mode != self.mode || seed != self.cfg.seed || hours != self.cfg.episode_hours {
            return Err(Error::Config(format!(
                "resume state is {mode} seed {seed} with {hours}-hour episodes; the configuration asks for {} seed {} with {}",
                self.mode, self.cfg.seed, self.cfg.episode_hours
            )));
        }
        let guard = match ck.meta("guard")? {
            "absent" => GuardPhase::Absent,
            "training" => GuardPhase::Training(Box::new(GuardTrainer::load_from(ck, "trainer", self.cfg.guard.clone())?)),
            "ready" => GuardPhase::Ready(GuardModel::load_from(ck, "guard")?),
            g => return Err(Error::Checkpoint(format!("unknown guard phase {g:?}"))),
        };
        let rec = ck.get("records")?;
        let records = if rec.data.is_empty() {
            Vec::new()
        } else {
            if rec.dims.len() != 2 || rec.dims[1] != RECORD_COLS {
                return Err(Error::Checkpoint("malformed episode records".into()));
            }
            rec.data.chunks(RECORD_COLS).map(EpisodeRecord::from_row).collect()
        };
        let ready = ck.meta("ready_episode")?;
        Ok(TrainState {
            agent: SacAgent::load_from(ck, "agent", self.cfg.sac.clone())?,
            buffer: PerBuffer::load_from(ck, "buffer")?,
            guard,
            rng: load_rng(ck, "rng")?,
            env_rng: load_rng(ck, "env_rng")?,
            episode: ck.meta_parse("episode")?,
            global_step: ck.meta_parse("global_step")?,
            ready_episode: if ready == "none" {
                None
            } else {
                Some(ready.parse().map_err(|_| Error::Checkpoint("bad ready_episode".into()))?)
            },
            records,
            trajectory_bytes: ck.meta_parse("trajectory_bytes")?,
            solution_bytes: ck.meta_parse("solution_bytes")?,
            seconds: ck.meta_parse("seconds")?,
        })
    }
}

impl Logs {
    fn trajectory_file(&mut self) -> &File {
        self.trajectory.get_ref()
    }
}

/// Labels the visited state and `perturbations` nearby ones for the surrogate.
fn collect(tr: &mut GuardTrainer, env: &DispatchEnv, kw: &[f64], exact: &GridOutcome, rng: &mut ChaCha8Rng) -> Result<()> {
    let (case, profiles, t) = (env.case(), env.profiles(), env.hour());
    if exact.converged() {
        let labels = env.risk().buses().iter().map(|&b| exact.magnitudes[b]).collect();
        tr.add(GuardSample {
            features: featurize(case, profiles, kw, t)?,
            labels,
        })?;
    }
    let bounds: Vec<(f64, f64)> = env.bounds().iter().map(|b| (b.lower, b.upper)).collect();
    let (n, jitter) = (tr.config().perturbations, tr.config().load_jitter);
    for _ in 0..n {
        let inj = perturbed_injections(case, profiles, t, &bounds, jitter, rng)?;
        if let Some(s) = label(case, env.risk(), &inj)? {
            tr.add(s)?;
        }
    }
    Ok(())
}

/// Policy checkpoint written by a finished run.
#[derive(Debug, Clone)]
pub struct Policy {
    pub mode: RunMode,
    pub agent: SacAgent,
    pub guard: Option<GuardModel>,
    pub training_seconds: f64,
}

impl Policy {
    pub fn load(path: &Path, cfg: &RunConfig) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Config(format!("no trained policy at {}", path.display())));
        }
        let ck = Checkpoint::load(path)?;
        if ck.meta("kind")? != "policy" {
            return Err(Error::Checkpoint(format!("{} is not a policy checkpoint", path.display())));
        }
        let guard = if ck.meta.contains_key("guard.ready") {
            Some(GuardModel::load_from(&ck, "guard")?)
        } else {
            None
        };
        Ok(Self {
            mode: ck.meta("mode")?.parse()?,
            agent: SacAgent::load_from(&ck, "agent", cfg.sac.clone())?,
            guard,
            training_seconds: ck.meta_parse("training_seconds")?,
        })
    }

    /// The checkpoint a `mode` run writes under `cfg.out_dir`.
    pub fn load_mode(cfg: &RunConfig, mode: RunMode) -> Result<Self> {
        Self::load(&cfg.out_dir.join(mode.name()).join(CHECKPOINT_FILE), cfg)
    }
}
