//! Soft actor-critic with twin critics, target networks, a squashed Gaussian
//! policy, and proportional prioritized replay.

mod per;
pub mod policy;

pub use per::{Batch, PerBuffer, SumTree, Transition, PRIORITY_EPS};
pub use policy::{squash_backward, squash_mean, squash_sample, SquashedSample};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::RunningNorm;
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, Checkpoint, MlpParams};

type Net = MlpParams<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    /// Fixed temperature, or the starting value when `auto_alpha` is set.
    pub alpha: f64,
    pub auto_alpha: bool,
    /// Entropy target for automatic tuning; `None` means `-action_dim`.
    pub target_entropy: Option<f64>,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub hidden: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub weight_decay: f64,
    /// Steps of uniform-random actions before the policy acts.
    pub warmup_steps: usize,
    pub per_alpha: f64,
    pub per_beta_start: f64,
    pub per_beta_end: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 1e-2,
            alpha: 0.2,
            auto_alpha: false,
            target_entropy: None,
            batch_size: 64,
            buffer_capacity: 200_000,
            hidden: 512,
            actor_lr: 2e-4,
            critic_lr: 2e-4,
            alpha_lr: 3e-4,
            weight_decay: 1e-2,
            warmup_steps: 1000,
            per_alpha: 0.6,
            per_beta_start: 0.4,
            per_beta_end: 1.0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("discount {} outside (0, 1]", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("soft-update factor {} outside (0, 1]", self.tau)));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config("temperature must be nonnegative".into()));
        }
        if self.auto_alpha && self.alpha <= 0.0 {
            return Err(Error::Config("automatic temperature needs a positive start".into()));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size || self.hidden == 0 {
            return Err(Error::Config("batch, buffer and hidden sizes must be positive with buffer ≥ batch".into()));
        }
        Ok(())
    }

    /// Importance exponent after `progress ∈ [0, 1]` of training.
    pub fn beta_at(&self, progress: f64) -> f64 {
        let p = progress.clamp(0.0, 1.0);
        self.per_beta_start + (self.per_beta_end - self.per_beta_start) * p
    }
}

/// Soft Bellman target `r + γ (1 − done) (min(q1, q2) − α log π)`.
#[inline]
pub fn soft_target(r: f64, done: bool, q1: f64, q2: f64, log_prob: f64, alpha: f64, gamma: f64) -> f64 {
    if done {
        return r;
    }
    r + gamma * (q1.min(q2) - alpha * log_prob)
}

/// Concatenates state rows and action rows into critic input rows.
pub fn critic_input(s: &[f64], a: &[f64], batch: usize) -> Vec<f64> {
    let (o, d) = (s.len() / batch.max(1), a.len() / batch.max(1));
    let mut x = Vec::with_capacity(batch * (o + d));
    for b in 0..batch {
        x.extend_from_slice(&s[b * o..(b + 1) * o]);
        x.extend_from_slice(&a[b * d..(b + 1) * d]);
    }
    x
}

/// Importance-weighted `mean_b w_b · ½ (Q(x_b) − y_b)²` and its parameter gradient.
/// Also returns the per-sample residuals `Q − y`.
pub fn critic_loss(critic: &Net, x: &[f64], y: &[f64], w: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let batch = y.len();
    let cache = critic.forward_batch(x, batch)?;
    let q = cache.output();
    let n = batch as f64;
    let mut loss = 0.0;
    let mut dq = Vec::with_capacity(batch);
    let mut resid = Vec::with_capacity(batch);
    for b in 0..batch {
        let e = q[b] - y[b];
        loss += w[b] * 0.5 * e * e / n;
        dq.push(w[b] * e / n);
        resid.push(e);
    }
    let (g, _) = critic.backward(&cache, &dq)?;
    Ok((loss, g, resid))
}

/// Reparameterized actor objective `mean_b [α log π(a_b|s_b) − min(Q1, Q2)(s_b, a_b)]`
/// for fixed noise `eps` (`batch × action_dim`), with its gradient.
pub fn actor_loss(actor: &Net, q1: &Net, q2: &Net, s: &[f64], eps: &[f64], alpha: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let d = actor.output_dim() / 2;
    let batch = eps.len() / d;
    let cache = actor.forward_batch(s, batch)?;
    let head = cache.output();
    if head.iter().any(|h| !h.is_finite()) {
        return Err(Error::Numerical("policy head produced a non-finite value".into()));
    }
    let samples: Vec<SquashedSample> = (0..batch)
        .map(|b| squash_sample(&head[b * 2 * d..(b + 1) * 2 * d], &eps[b * d..(b + 1) * d]))
        .collect();
    let actions: Vec<f64> = samples.iter().flat_map(|s| s.action.iter().copied()).collect();
    let x = critic_input(s, &actions, batch);
    let c1 = q1.forward_batch(&x, batch)?;
    let c2 = q2.forward_batch(&x, batch)?;
    let n = batch as f64;
    let mut loss = 0.0;
    let mut g1 = vec![0.0; batch];
    let mut g2 = vec![0.0; batch];
    let mut log_probs = Vec::with_capacity(batch);
    for b in 0..batch {
        let (v1, v2) = (c1.output()[b], c2.output()[b]);
        loss += (alpha * samples[b].log_prob - v1.min(v2)) / n;
        if v1 <= v2 {
            g1[b] = -1.0 / n;
        } else {
            g2[b] = -1.0 / n;
        }
        log_probs.push(samples[b].log_prob);
    }
    let dx1 = q1.input_grad(&c1, &g1)?;
    let dx2 = q2.input_grad(&c2, &g2)?;
    let width = x.len() / batch;
    let o = width - d;
    let mut dhead = Vec::with_capacity(batch * 2 * d);
    for b in 0..batch {
        let da: Vec<f64> = (0..d).map(|i| dx1[b * width + o + i] + dx2[b * width + o + i]).collect();
        dhead.extend(squash_backward(&samples[b], alpha / n, &da));
    }
    let (g, _) = actor.backward(&cache, &dhead)?;
    Ok((loss, g, log_probs))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub q_loss: f64,
    pub pi_loss: f64,
    pub alpha: f64,
    pub skipped: bool,
}

/// Actor, twin critics, their targets and optimizers, the observation
/// standardizer, and the sampling RNG.
#[derive(Debug, Clone)]
pub struct SacAgent {
    pub cfg: SacConfig,
    pub actor: Net,
    pub q1: Net,
    pub q2: Net,
    pub q1_target: Net,
    pub q2_target: Net,
    pub actor_opt: AdamState<f64>,
    pub q1_opt: AdamState<f64>,
    pub q2_opt: AdamState<f64>,
    pub log_alpha: f64,
    pub alpha_opt: AdamState<f64>,
    pub norm: RunningNorm,
    pub updates: u64,
    rng: ChaCha8Rng,
    obs_dim: usize,
    act_dim: usize,
}

impl SacAgent {
    pub fn new(obs_dim: usize, act_dim: usize, cfg: SacConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = cfg.hidden;
        let hidden = [Activation::Relu, Activation::Relu, Activation::Identity];
        let actor = Net::init(&[obs_dim, h, h, 2 * act_dim], &hidden, 1e-2, &mut rng)?;
        let q1 = Net::init(&[obs_dim + act_dim, h, h, 1], &hidden, 1.0, &mut rng)?;
        let q2 = Net::init(&[obs_dim + act_dim, h, h, 1], &hidden, 1.0, &mut rng)?;
        Ok(Self {
            actor_opt: AdamState::for_net(&actor, cfg.actor_lr, cfg.weight_decay),
            q1_opt: AdamState::for_net(&q1, cfg.critic_lr, cfg.weight_decay),
            q2_opt: AdamState::for_net(&q2, cfg.critic_lr, cfg.weight_decay),
            alpha_opt: AdamState::new(1, cfg.alpha_lr, 0.0),
            log_alpha: cfg.alpha.max(f64::MIN_POSITIVE).ln(),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            norm: RunningNorm::new(obs_dim),
            updates: 0,
            rng,
            obs_dim,
            act_dim,
            cfg,
        })
    }

    #[inline]
    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    #[inline]
    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn alpha(&self) -> f64 {
        if self.cfg.auto_alpha {
            self.log_alpha.exp()
        } else {
            self.cfg.alpha
        }
    }

    /// Folds a raw observation into the running standardizer.
    pub fn observe(&mut self, raw: &[f64]) {
        self.norm.update(raw);
    }

    pub fn random_action(&mut self) -> Vec<f64> {
        (0..self.act_dim).map(|_| self.rng.random_range(-1.0..=1.0)).collect()
    }

    /// Action in `[-1, 1]^d` and its log-probability (0 for the deterministic mean).
    pub fn act(&mut self, raw_obs: &[f64], stochastic: bool) -> Result<(Vec<f64>, f64)> {
        let s = self.norm.normalize(raw_obs);
        let (head, _) = self.actor.forward(&s)?;
        if head.iter().any(|h| !h.is_finite()) {
            return Err(Error::Numerical("policy head produced a non-finite value".into()));
        }
        if !stochastic {
            return Ok((squash_mean(&head), 0.0));
        }
        let eps: Vec<f64> = (0..self.act_dim).map(|_| self.rng.sample(StandardNormal)).collect();
        let smp = squash_sample(&head, &eps);
        Ok((smp.action, smp.log_prob))
    }

    /// Deterministic action on an immutable agent (evaluation).
    pub fn act_greedy(&self, raw_obs: &[f64]) -> Result<Vec<f64>> {
        let s = self.norm.normalize(raw_obs);
        let (head, _) = self.actor.forward(&s)?;
        if head.iter().any(|h| !h.is_finite()) {
            return Err(Error::Numerical("policy head produced a non-finite value".into()));
        }
        Ok(squash_mean(&head))
    }

    fn normalize_rows(&self, rows: &[f64], batch: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len());
        let mut tmp = Vec::with_capacity(self.obs_dim);
        for b in 0..batch {
            self.norm.normalize_into(&rows[b * self.obs_dim..(b + 1) * self.obs_dim], &mut tmp);
            out.extend_from_slice(&tmp);
        }
        out
    }

    /// Bootstrapped targets for a batch, from the target critics at fresh policy samples.
    pub fn targets(&mut self, s2: &[f64], r: &[f64], done: &[f64]) -> Result<Vec<f64>> {
        let batch = r.len();
        let d = self.act_dim;
        let cache = self.actor.forward_batch(s2, batch)?;
        let head = cache.output();
        let mut actions = Vec::with_capacity(batch * d);
        let mut logp = Vec::with_capacity(batch);
        for b in 0..batch {
            let eps: Vec<f64> = (0..d).map(|_| self.rng.sample(StandardNormal)).collect();
            let smp = squash_sample(&head[b * 2 * d..(b + 1) * 2 * d], &eps);
            actions.extend_from_slice(&smp.action);
            logp.push(smp.log_prob);
        }
        let x = critic_input(s2, &actions, batch);
        let t1 = self.q1_target.forward_batch(&x, batch)?;
        let t2 = self.q2_target.forward_batch(&x, batch)?;
        let alpha = self.alpha();
        Ok((0..batch)
            .map(|b| {
                soft_target(r[b], done[b] > 0.5, t1.output()[b], t2.output()[b], logp[b], alpha, self.cfg.gamma)
            })
            .collect())
    }

    /// One critic step, one actor step, optional temperature step, then Polyak averaging.
    pub fn update(&mut self, buffer: &mut PerBuffer, beta: f64) -> Result<UpdateStats> {
        let batch = buffer.sample(self.cfg.batch_size, beta, &mut self.rng)?;
        let n = batch.size;
        let s = self.normalize_rows(&batch.s, n);
        let s2 = self.normalize_rows(&batch.s2, n);
        let y = self.targets(&s2, &batch.r, &batch.done)?;
        let x = critic_input(&s, &batch.a, n);
        let (l1, g1, e1) = critic_loss(&self.q1, &x, &y, &batch.weights)?;
        let (l2, g2, e2) = critic_loss(&self.q2, &x, &y, &batch.weights)?;
        if !(l1.is_finite() && l2.is_finite()) {
            log::warn!("skipping update {}: critic loss not finite", self.updates);
            return Ok(UpdateStats {
                skipped: true,
                alpha: self.alpha(),
                ..UpdateStats::default()
            });
        }
        self.q1_opt.step_net(&mut self.q1, &g1)?;
        self.q2_opt.step_net(&mut self.q2, &g2)?;
        let td: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| 0.5 * (a.abs() + b.abs())).collect();
        buffer.update_priorities(&batch.indices, &td)?;

        let eps: Vec<f64> = (0..n * self.act_dim).map(|_| self.rng.sample(StandardNormal)).collect();
        let alpha = self.alpha();
        let (pl, ga, logp) = actor_loss(&self.actor, &self.q1, &self.q2, &s, &eps, alpha)?;
        if !pl.is_finite() {
            log::warn!("skipping actor step {}: loss not finite", self.updates);
        } else {
            self.actor_opt.step_net(&mut self.actor, &ga)?;
        }
        if self.cfg.auto_alpha {
            let target = self.cfg.target_entropy.unwrap_or(-(self.act_dim as f64));
            let mean_lp = logp.iter().sum::<f64>() / n as f64;
            // d/d(log α) of −α (log π + target)
            let g = -self.log_alpha.exp() * (mean_lp + target);
            let mut la = [self.log_alpha];
            self.alpha_opt.apply(&mut la, &[g])?;
            self.log_alpha = la[0];
        }
        let tau = self.cfg.tau;
        self.q1_target.soft_update_from(&self.q1, tau)?;
        self.q2_target.soft_update_from(&self.q2, tau)?;
        self.updates += 1;
        Ok(UpdateStats {
            q_loss: 0.5 * (l1 + l2),
            pi_loss: pl,
            alpha: self.alpha(),
            skipped: false,
        })
    }

    pub fn save_to(&self, ck: &mut Checkpoint, prefix: &str) -> Result<()> {
        for (name, net) in [
            ("actor", &self.actor),
            ("q1", &self.q1),
            ("q2", &self.q2),
            ("q1_target", &self.q1_target),
            ("q2_target", &self.q2_target),
        ] {
            ck.put_net(&format!("{prefix}.{name}"), net)?;
        }
        for (name, opt) in [
            ("actor_opt", &self.actor_opt),
            ("q1_opt", &self.q1_opt),
            ("q2_opt", &self.q2_opt),
            ("alpha_opt", &self.alpha_opt),
        ] {
            ck.put_adam(&format!("{prefix}.{name}"), opt)?;
        }
        ck.put_vec(&format!("{prefix}.log_alpha"), &[self.log_alpha])?;
        ck.set_meta(&format!("{prefix}.updates"), self.updates)?;
        ck.set_meta(&format!("{prefix}.dims"), format!("{} {}", self.obs_dim, self.act_dim))?;
        save_norm(ck, &format!("{prefix}.norm"), &self.norm)?;
        save_rng(ck, &format!("{prefix}.rng"), &self.rng)
    }

    /// Restores an agent saved with [`SacAgent::save_to`]; `cfg` supplies the
    /// hyperparameters that are not part of the learned state.
    pub fn load_from(ck: &Checkpoint, prefix: &str, cfg: SacConfig) -> Result<Self> {
        let dims: Vec<usize> = ck
            .meta(&format!("{prefix}.dims"))?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| Error::Checkpoint("bad agent dims".into())))
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(Error::Checkpoint("bad agent dims".into()));
        }
        let net = |n: &str| ck.get_net::<f64>(&format!("{prefix}.{n}"));
        let opt = |n: &str| ck.get_adam::<f64>(&format!("{prefix}.{n}"));
        let actor = net("actor")?;
        if actor.input_dim() != dims[0] || actor.output_dim() != 2 * dims[1] {
            return Err(Error::Checkpoint("actor shape disagrees with stored dims".into()));
        }
        Ok(Self {
            actor,
            q1: net("q1")?,
            q2: net("q2")?,
            q1_target: net("q1_target")?,
            q2_target: net("q2_target")?,
            actor_opt: opt("actor_opt")?,
            q1_opt: opt("q1_opt")?,
            q2_opt: opt("q2_opt")?,
            alpha_opt: opt("alpha_opt")?,
            log_alpha: ck.get_vec::<f64>(&format!("{prefix}.log_alpha"))?[0],
            norm: load_norm(ck, &format!("{prefix}.norm"))?,
            updates: ck.meta_parse(&format!("{prefix}.updates"))?,
            rng: load_rng(ck, &format!("{prefix}.rng"))?,
            obs_dim: dims[0],
            act_dim: dims[1],
            cfg,
        })
    }
}

pub fn save_norm(ck: &mut Checkpoint, prefix: &str, n: &RunningNorm) -> Result<()> {
    ck.put_vec(&format!("{prefix}.mean"), &n.mean)?;
    ck.put_vec(&format!("{prefix}.m2"), &n.m2)?;
    ck.put_vec(&format!("{prefix}.scalars"), &[n.count, n.clip])
}

pub fn load_norm(ck: &Checkpoint, prefix: &str) -> Result<RunningNorm> {
    let sc: Vec<f64> = ck.get_vec(&format!("{prefix}.scalars"))?;
    let mean: Vec<f64> = ck.get_vec(&format!("{prefix}.mean"))?;
    let m2: Vec<f64> = ck.get_vec(&format!("{prefix}.m2"))?;
    if sc.len() != 2 || mean.len() != m2.len() {
        return Err(Error::Checkpoint(format!("{prefix}: malformed standardizer")));
    }
    Ok(RunningNorm {
        count: sc[0],
        mean,
        m2,
        clip: sc[1],
    })
}

/// Stores seed, stream and word position so the stream resumes exactly.
pub fn save_rng(ck: &mut Checkpoint, prefix: &str, rng: &ChaCha8Rng) -> Result<()> {
    let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    ck.set_meta(&format!("{prefix}.seed"), seed)?;
    ck.set_meta(&format!("{prefix}.stream"), rng.get_stream())?;
    ck.set_meta(&format!("{prefix}.word_pos"), rng.get_word_pos())
}

pub fn load_rng(ck: &Checkpoint, prefix: &str) -> Result<ChaCha8Rng> {
    let hex = ck.meta(&format!("{prefix}.seed"))?;
    if hex.len() != 64 {
        return Err(Error::Checkpoint(format!("{prefix}.seed must be 64 hex digits")));
    }
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
            .map_err(|_| Error::Checkpoint(format!("{prefix}.seed is not hex")))?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(ck.meta_parse(&format!("{prefix}.stream"))?);
    rng.set_word_pos(ck.meta_parse(&format!("{prefix}.word_pos"))?);
    Ok(rng)
}
