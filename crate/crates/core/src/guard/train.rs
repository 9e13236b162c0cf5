use std::collections::VecDeque;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{rmse_loss, GuardConfig, GuardModel, GuardSample};
use crate::error::{Error, Result};
use crate::nn::{AdamState, Checkpoint};
use crate::sac::{load_rng, save_rng};

/// Collects labeled samples, trains the surrogate on them, and decides readiness.
#[derive(Debug, Clone)]
pub struct GuardTrainer {
    model: GuardModel,
    opt: AdamState<f64>,
    cfg: GuardConfig,
    samples: Vec<GuardSample>,
    window: VecDeque<f64>,
    rng: ChaCha8Rng,
    trace: Vec<f64>,
    first_epoch: Option<f64>,
    bad_epochs: usize,
    credit: f64,
    epoch_sum: f64,
    epoch_batches: usize,
    steps: u64,
}

impl GuardTrainer {
    pub fn new(model: GuardModel, cfg: GuardConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if model.is_ready() {
            return Err(Error::Contract("guard is already frozen".into()));
        }
        Ok(Self {
            opt: AdamState::for_net(&model.net, cfg.lr, cfg.weight_decay),
            model,
            cfg,
            samples: Vec::new(),
            window: VecDeque::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            trace: Vec::new(),
            first_epoch: None,
            bad_epochs: 0,
            credit: 0.0,
            epoch_sum: 0.0,
            epoch_batches: 0,
            steps: 0,
        })
    }

    pub fn model(&self) -> &GuardModel {
        &self.model
    }

    pub fn config(&self) -> &GuardConfig {
        &self.cfg
    }

    pub fn samples(&self) -> &[GuardSample] {
        &self.samples
    }

    /// Mean minibatch RMSE per closed epoch.
    pub fn trace(&self) -> &[f64] {
        &self.trace
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn push_window(&mut self, v: f64) {
        if self.window.len() == self.cfg.window {
            self.window.pop_front();
        }
        self.window.push_back(v);
    }

    /// Running-average RMSE once the window is full.
    pub fn running_average(&self) -> Option<f64> {
        (self.window.len() == self.cfg.window).then(|| self.window.iter().sum::<f64>() / self.window.len() as f64)
    }

    pub fn threshold_met(&self) -> bool {
        self.samples.len() >= self.cfg.min_samples
            && self.running_average().is_some_and(|a| a < self.cfg.threshold)
    }

    /// Stores a labeled sample, scoring it before any training on it, then
    /// takes the minibatch steps it has earned. Returns the pre-training RMSE.
    pub fn add(&mut self, sample: GuardSample) -> Result<f64> {
        if sample.features.len() != self.model.net.input_dim() || sample.labels.len() != self.model.net.output_dim() {
            return Err(Error::Shape("guard sample does not match the model".into()));
        }
        let pred = self.model.predict(&sample.features)?;
        let (err, _) = rmse_loss(&pred, &sample.labels);
        self.push_window(err);
        self.samples.push(sample);
        self.credit += self.cfg.steps_per_sample;
        while self.credit >= 1.0 && self.samples.len() >= self.cfg.batch_size {
            self.credit -= 1.0;
            let idx: Vec<usize> = (0..self.cfg.batch_size)
                .map(|_| self.rng.random_range(0..self.samples.len()))
                .collect();
            self.step(&idx, false)?;
        }
        Ok(err)
    }

    fn step(&mut self, idx: &[usize], track: bool) -> Result<f64> {
        let (loss, g, per_sample) = self.model.loss_and_grad(&self.samples, idx)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!("guard loss not finite at step {}", self.steps)));
        }
        self.opt.step_net(&mut self.model.net, &g)?;
        if track {
            for v in per_sample {
                self.push_window(v);
            }
        }
        self.epoch_sum += loss;
        self.epoch_batches += 1;
        self.steps += 1;
        Ok(loss)
    }

    /// Closes the current epoch: records its mean loss and checks for divergence.
    pub fn end_epoch(&mut self) -> Result<Option<f64>> {
        if self.epoch_batches == 0 {
            return Ok(None);
        }
        let mean = self.epoch_sum / self.epoch_batches as f64;
        self.epoch_sum = 0.0;
        self.epoch_batches = 0;
        self.record_epoch(mean)?;
        Ok(Some(mean))
    }

    /// Appends an epoch loss to the trace; too many consecutive epochs far above
    /// the first one abort training.
    pub fn record_epoch(&mut self, loss: f64) -> Result<()> {
        self.trace.push(loss);
        let first = *self.first_epoch.get_or_insert(loss);
        if loss > self.cfg.divergence_factor * first || !loss.is_finite() {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.cfg.divergence_epochs {
                return Err(Error::Training(format!(
                    "guard diverged: loss {loss:e} against initial {first:e} for {} epochs",
                    self.bad_epochs
                )));
            }
        } else {
            self.bad_epochs = 0;
        }
        Ok(())
    }

    /// One shuffled pass over every stored sample.
    pub fn epoch(&mut self) -> Result<Option<f64>> {
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut self.rng);
        for chunk in order.chunks(self.cfg.batch_size) {
            self.step(chunk, true)?;
        }
        self.end_epoch()
    }

    /// Runs the consolidation passes and freezes the model.
    pub fn finalize(&mut self) -> Result<GuardModel> {
        self.end_epoch()?;
        for _ in 0..self.cfg.consolidation_epochs {
            self.epoch()?;
        }
        self.model.mark_ready();
        log::info!(
            "guard ready after {} samples, {} steps, running RMSE {:.2e}",
            self.samples.len(),
            self.steps,
            self.running_average().unwrap_or(f64::NAN)
        );
        Ok(self.model.clone())
    }

    /// Freezes the model if the readiness condition holds.
    pub fn try_finalize(&mut self) -> Result<Option<GuardModel>> {
        if self.model.is_ready() {
            return Ok(Some(self.model.clone()));
        }
        if !self.threshold_met() {
            return Ok(None);
        }
        self.finalize().map(Some)
    }
}

impl GuardTrainer {
    /// Stores everything needed to continue collection and training exactly.
    pub fn save_to(&self, ck: &mut Checkpoint, prefix: &str) -> Result<()> {
        self.model.save_to(ck, &format!("{prefix}.model"))?;
        ck.put_adam(&format!("{prefix}.opt"), &self.opt)?;
        let n = self.samples.len();
        let (d, k) = (self.model.net.input_dim(), self.model.net.output_dim());
        let feats: Vec<f64> = self.samples.iter().flat_map(|s| s.features.iter().copied()).collect();
        let labels: Vec<f64> = self.samples.iter().flat_map(|s| s.labels.iter().copied()).collect();
        ck.put(&format!("{prefix}.features"), &[n, d], feats)?;
        ck.put(&format!("{prefix}.labels"), &[n, k], labels)?;
        ck.put_vec(&format!("{prefix}.window"), &self.window.iter().copied().collect::<Vec<_>>())?;
        ck.put_vec(&format!("{prefix}.trace"), &self.trace)?;
        ck.put_vec(
            &format!("{prefix}.scalars"),
            &[self.first_epoch.unwrap_or(f64::NAN), self.credit, self.epoch_sum],
        )?;
        ck.set_meta(&format!("{prefix}.counters"), format!("{} {} {}", self.bad_epochs, self.epoch_batches, self.steps))?;
        save_rng(ck, &format!("{prefix}.rng"), &self.rng)
    }

    pub fn load_from(ck: &Checkpoint, prefix: &str, cfg: GuardConfig) -> Result<Self> {
        let model = GuardModel::load_from(ck, &format!("{prefix}.model"))?;
        let feats = ck.get(&format!("{prefix}.features"))?;
        let labels = ck.get(&format!("{prefix}.labels"))?;
        let (d, k) = (model.net.input_dim(), model.net.output_dim());
        if feats.dims.len() != 2 || labels.dims.len() != 2 || feats.dims[1] != d || labels.dims[1] != k || feats.dims[0] != labels.dims[0] {
            return Err(Error::Checkpoint(format!("{prefix}: sample arrays do not match the model")));
        }
        let samples = feats
            .data
            .chunks(d)
            .zip(labels.data.chunks(k))
            .map(|(f, l)| GuardSample {
                features: f.to_vec(),
                labels: l.to_vec(),
            })
            .collect();
        let sc: Vec<f64> = ck.get_vec(&format!("{prefix}.scalars"))?;
        let counters: Vec<u64> = ck
            .meta(&format!("{prefix}.counters"))?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| Error::Checkpoint(format!("{prefix}: bad counters"))))
            .collect::<Result<_>>()?;
        if sc.len() != 3 || counters.len() != 3 {
            return Err(Error::Checkpoint(format!("{prefix}: malformed trainer state")));
        }
        Ok(Self {
            opt: ck.get_adam(&format!("{prefix}.opt"))?,
            model,
            cfg,
            samples,
            window: ck.get_vec::<f64>(&format!("{prefix}.window"))?.into(),
            rng: load_rng(ck, &format!("{prefix}.rng"))?,
            trace: ck.get_vec(&format!("{prefix}.trace"))?,
            first_epoch: (!sc[0].is_nan()).then_some(sc[0]),
            bad_epochs: counters[0] as usize,
            credit: sc[1],
            epoch_sum: sc[2],
            epoch_batches: counters[1] as usize,
            steps: counters[2],
        })
    }
}

/// Offline training: epochs over `samples` until the readiness rule holds,
/// then consolidation. Returns the model (ready or not) and the epoch-loss trace.
pub fn train_guard(model: GuardModel, samples: Vec<GuardSample>, cfg: GuardConfig, seed: u64) -> Result<(GuardModel, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::Training("no guard samples".into()));
    }
    let mut tr = GuardTrainer::new(model, cfg, seed)?;
    for s in &samples {
        if s.features.len() != tr.model.net.input_dim() || s.labels.len() != tr.model.net.output_dim() {
            return Err(Error::Shape("guard sample does not match the model".into()));
        }
    }
    tr.samples = samples;
    for _ in 0..tr.cfg.max_epochs {
        tr.epoch()?;
        if tr.threshold_met() {
            let m = tr.finalize()?;
            return Ok((m, tr.trace));
        }
    }
    Ok((tr.model.clone(), tr.trace))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuardEvalRow {
    pub sample: usize,
    pub rmse: f64,
    pub max_abs_err: f64,
}

pub fn evaluate_guard(model: &GuardModel, samples: &[GuardSample]) -> Result<Vec<GuardEvalRow>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let pred = model.predict(&s.features)?;
            let (rmse, _) = rmse_loss(&pred, &s.labels);
            let max_abs_err = pred.iter().zip(&s.labels).map(|(p, y)| (p - y).abs()).fold(0.0, f64::max);
            Ok(GuardEvalRow {
                sample: i,
                rmse,
                max_abs_err,
            })
        })
        .collect()
}

pub fn write_guard_eval(rows: &[GuardEvalRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample", "rmse", "max_abs_err"])?;
    for r in rows {
        w.write_record([r.sample.to_string(), format!("{:e}", r.rmse), format!("{:e}", r.max_abs_err)])?;
    }
    w.flush().map_err(|e| Error::io("guard evaluation", e))?;
    Ok(())
}
