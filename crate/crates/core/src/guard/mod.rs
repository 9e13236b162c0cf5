//! Voltage surrogate for the high-risk buses: features, screening rule,
//! training against exact power flow, and persistence.

mod risk;
mod train;

pub use risk::HighRiskSet;
pub use train::{evaluate_guard, train_guard, write_guard_eval, GuardEvalRow, GuardTrainer};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assets::{net_injections, GridCase, ProfileSet};
use crate::error::{Error, Result};
use crate::grid::{InjectionVector, VoltageLimits};
use crate::nn::{Activation, Checkpoint, MlpParams};

/// Output `y` maps to `|V| = 1 + VOLTAGE_SCALE · y`.
pub const VOLTAGE_SCALE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuardConfig {
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Readiness threshold on the running-average RMSE, p.u.
    pub threshold: f64,
    /// Labeled samples in the running average.
    pub window: usize,
    /// Samples collected before readiness may be declared.
    pub min_samples: usize,
    /// Passes over the whole sample store once the threshold is met.
    pub consolidation_epochs: usize,
    pub margin: f64,
    /// Epoch loss above this multiple of the first-epoch loss counts as diverging.
    pub divergence_factor: f64,
    pub divergence_epochs: usize,
    /// Offline training gives up after this many epochs.
    pub max_epochs: usize,
    /// Perturbed samples labeled per visited state.
    pub perturbations: usize,
    /// Relative load perturbation half-width.
    pub load_jitter: f64,
    /// Minibatch steps per labeled sample during online collection.
    pub steps_per_sample: f64,
}

impl Default for GuardConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            lr: 2e-4,
            weight_decay: 0.0,
            batch_size: 64,
            threshold: 1e-2,
            window: 200,
            min_samples: 20_000,
            consolidation_epochs: 40,
            margin: 0.002,
            divergence_factor: 10.0,
            divergence_epochs: 5,
            max_epochs: 200,
            perturbations: 9,
            load_jitter: 0.3,
            steps_per_sample: 0.25,
        }
    }
}

impl GuardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 || self.window == 0 {
            return Err(Error::Config("guard sizes must be positive".into()));
        }
        if !(self.margin >= 0.0 && self.threshold > 0.0 && self.lr > 0.0) {
            return Err(Error::Config("guard margin ≥ 0, threshold > 0 and lr > 0 required".into()));
        }
        if !(0.0..1.0).contains(&self.load_jitter) {
            return Err(Error::Config("load jitter must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One labeled state: `(P_1..P_N, Q_1..Q_N)` in p.u. and the exact high-risk magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct GuardSample {
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
}

pub fn features_of(inj: &InjectionVector<f64>) -> Vec<f64> {
    let mut f = Vec::with_capacity(2 * inj.len());
    f.extend_from_slice(&inj.p);
    f.extend_from_slice(&inj.q);
    f
}

/// Injections at hour `t` with the candidate storage powers folded in, serialized.
pub fn featurize(case: &GridCase, profiles: &ProfileSet, ess_kw: &[f64], t: usize) -> Result<Vec<f64>> {
    Ok(features_of(&net_injections(case, profiles, ess_kw, t)?))
}

/// Exact labels for `inj`; `None` when the power flow does not converge.
pub fn label(case: &GridCase, risk: &HighRiskSet, inj: &InjectionVector<f64>) -> Result<Option<GuardSample>> {
    let sol = case.solver.solve(inj)?;
    if !sol.converged {
        return Ok(None);
    }
    Ok(Some(GuardSample {
        features: features_of(inj),
        labels: risk.buses().iter().map(|&b| sol.magnitude(b)).collect(),
    }))
}

/// A nearby state: every bus's non-storage injection scaled by `1 ± jitter`,
/// storage powers drawn uniformly from `[lo, hi]` per unit.
pub fn perturbed_injections<R: Rng + ?Sized>(
    case: &GridCase,
    profiles: &ProfileSet,
    t: usize,
    bounds_kw: &[(f64, f64)],
    jitter: f64,
    rng: &mut R,
) -> Result<InjectionVector<f64>> {
    let mut inj = net_injections(case, profiles, &vec![0.0; case.ess_count()], t)?;
    for i in 0..inj.len() {
        let f = 1.0 + jitter * rng.random_range(-1.0..=1.0);
        inj.p[i] *= f;
        inj.q[i] *= f;
    }
    let s = case.network().s_base_kva();
    for (u, &(lo, hi)) in case.devices.ess.iter().zip(bounds_kw) {
        let p = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        inj.p[u.bus] += p / s;
    }
    Ok(inj)
}

/// `count` labeled states at random hours with random storage powers in
/// `[-p_max, p_max]` and load jitter; non-converged draws are retried.
pub fn random_samples<R: Rng + ?Sized>(
    case: &GridCase,
    profiles: &ProfileSet,
    risk: &HighRiskSet,
    count: usize,
    jitter: f64,
    rng: &mut R,
) -> Result<Vec<GuardSample>> {
    let full: Vec<(f64, f64)> = case.devices.ess.iter().map(|u| (-u.p_max, u.p_max)).collect();
    let mut out = Vec::with_capacity(count);
    let mut misses = 0;
    while out.len() < count {
        let t = rng.random_range(0..profiles.hours());
        let inj = perturbed_injections(case, profiles, t, &full, jitter, rng)?;
        match label(case, risk, &inj)? {
            Some(s) => out.push(s),
            None => {
                misses += 1;
                if misses > count + 100 {
                    return Err(Error::Numerical("power flow fails on most random states".into()));
                }
            }
        }
    }
    Ok(out)
}

/// Safe iff every prediction lies in `[lower + margin, upper − margin]`.
pub fn within_margin(pred: &[f64], limits: &VoltageLimits<f64>, margin: f64) -> bool {
    pred.iter()
        .all(|&v| v >= limits.lower + margin && v <= limits.upper - margin)
}

/// `sqrt(mean (pred − label)²)` over a batch of rows and its gradient with respect to `pred`.
pub fn rmse_loss(pred: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let sq: f64 = pred.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum();
    let l = (sq / n).sqrt();
    if l == 0.0 {
        return (0.0, vec![0.0; pred.len()]);
    }
    let g = pred.iter().zip(labels).map(|(p, y)| (p - y) / (n * l)).collect();
    (l, g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuardModel {
    pub net: MlpParams<f64>,
    pub risk: HighRiskSet,
    /// Per-feature divisor applied before the network.
    pub feature_scale: Vec<f64>,
    pub margin: f64,
    ready: bool,
}

impl GuardModel {
    /// Untrained model whose feature scale is each bus's largest plausible injection.
    pub fn new<R: Rng + ?Sized>(case: &GridCase, risk: HighRiskSet, cfg: &GuardConfig, rng: &mut R) -> Result<Self> {
        let net = case.network();
        let n = net.bus_count();
        let s = net.s_base_kva();
        let mut sp: Vec<f64> = case.base_loads.p_kw.clone();
        let mut sq: Vec<f64> = case.base_loads.q_kvar.iter().map(|q| q.abs()).collect();
        for u in case.devices.pv.iter().chain(&case.devices.wt) {
            sp[u.bus] += u.p_max;
        }
        for u in &case.devices.ess {
            sp[u.bus] += u.p_max;
        }
        let mut scale: Vec<f64> = sp.into_iter().map(|v| (v / s).max(1e-3)).collect();
        scale.extend(sq.iter_mut().map(|v| (*v / s).max(1e-3)));
        let h = cfg.hidden;
        let mlp = MlpParams::init(
            &[2 * n, h, h, risk.len()],
            &[Activation::Relu, Activation::Relu, Activation::Identity],
            0.1,
            rng,
        )?;
        Self::from_parts(mlp, risk, scale, cfg.margin)
    }

    pub fn from_parts(net: MlpParams<f64>, risk: HighRiskSet, feature_scale: Vec<f64>, margin: f64) -> Result<Self> {
        if net.input_dim() != feature_scale.len() || net.output_dim() != risk.len() {
            return Err(Error::Shape(format!(
                "guard network {}→{} for {} features and {} buses",
                net.input_dim(),
                net.output_dim(),
                feature_scale.len(),
                risk.len()
            )));
        }
        if feature_scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("feature scale must be positive".into()));
        }
        Ok(Self {
            net,
            risk,
            feature_scale,
            margin,
            ready: false,
        })
    }

    #[inline]
    pub fn is_ready(&self) -> bool {
        self.ready
    }

    /// Marks the model ready; it is treated as frozen afterwards.
    pub fn mark_ready(&mut self) {
        self.ready = true;
    }

    pub fn scale_features(&self, features: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(features.iter().zip(&self.feature_scale).map(|(f, s)| f / s));
    }

    /// Predicted high-risk magnitudes; usable whether or not the model is ready.
    pub fn predict(&self, features: &[f64]) -> Result<Vec<f64>> {
        let mut x = Vec::new();
        let mut out = Vec::new();
        let mut scratch = Vec::new();
        self.predict_with(features, &mut x, &mut out, &mut scratch)?;
        Ok(out)
    }

    /// Allocation-free prediction into `out`.
    pub fn predict_with(&self, features: &[f64], x: &mut Vec<f64>, out: &mut Vec<f64>, scratch: &mut Vec<f64>) -> Result<()> {
        self.scale_features(features, x);
        self.net.predict_into(x, out, scratch)?;
        for v in out.iter_mut() {
            *v = 1.0 + VOLTAGE_SCALE * *v;
        }
        Ok(())
    }

    /// Screening verdict: predictions and whether they all clear the margin.
    pub fn predict_and_assess(&self, features: &[f64], limits: &VoltageLimits<f64>) -> Result<(Vec<f64>, bool)> {
        if !self.ready {
            return Err(Error::NotReady("guard has not met its readiness threshold".into()));
        }
        let pred = self.predict(features)?;
        if pred.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("guard prediction is not finite".into()));
        }
        let safe = within_margin(&pred, limits, self.margin);
        Ok((pred, safe))
    }

    /// Batch RMSE over `samples[idx]` and its parameter gradient.
    pub fn loss_and_grad(&self, samples: &[GuardSample], idx: &[usize]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let d = self.net.input_dim();
        let k = self.net.output_dim();
        let mut x = Vec::with_capacity(idx.len() * d);
        let mut y = Vec::with_capacity(idx.len() * k);
        for &i in idx {
            let s = &samples[i];
            x.extend(s.features.iter().zip(&self.feature_scale).map(|(f, c)| f / c));
            y.extend_from_slice(&s.labels);
        }
        let cache = self.net.forward_batch(&x, idx.len())?;
        let pred: Vec<f64> = cache.output().iter().map(|v| 1.0 + VOLTAGE_SCALE * v).collect();
        let per_sample: Vec<f64> = pred
            .chunks(k)
            .zip(y.chunks(k))
            .map(|(p, l)| rmse_loss(p, l).0)
            .collect();
        let (loss, dpred) = rmse_loss(&pred, &y);
        let dout: Vec<f64> = dpred.iter().map(|g| g * VOLTAGE_SCALE).collect();
        let (g, _) = self.net.backward(&cache, &dout)?;
        Ok((loss, g, per_sample))
    }

    pub fn save_to(&self, ck: &mut Checkpoint, prefix: &str) -> Result<()> {
        ck.put_net(&format!("{prefix}.net"), &self.net)?;
        ck.put_vec(&format!("{prefix}.feature_scale"), &self.feature_scale)?;
        let buses: Vec<String> = self.risk.buses().iter().map(|b| (b + 1).to_string()).collect();
        ck.set_meta(&format!("{prefix}.risk_buses"), buses.join(","))?;
        ck.set_meta(&format!("{prefix}.margin"), format!("{:e}", self.margin))?;
        ck.set_meta(&format!("{prefix}.ready"), self.ready)
    }

    pub fn load_from(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let net = ck.get_net::<f64>(&format!("{prefix}.net"))?;
        let buses: Vec<usize> = ck
            .meta(&format!("{prefix}.risk_buses"))?
            .split(',')
            .map(|b| b.trim().parse().map_err(|_| Error::Checkpoint(format!("bad bus {b:?}"))))
            .collect::<Result<_>>()?;
        let n = net.input_dim() / 2;
        let risk = HighRiskSet::from_one_based(&buses, n)?;
        let mut m = Self::from_parts(net, risk, ck.get_vec(&format!("{prefix}.feature_scale"))?, ck.meta_parse(&format!("{prefix}.margin"))?)?;
        m.ready = ck.meta_parse(&format!("{prefix}.ready"))?;
        Ok(m)
    }
}
