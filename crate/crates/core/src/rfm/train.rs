use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{batch_loss, build_batch, ObjectiveConfig};
use crate::energy::{ema_update, EnergyModel};
use crate::error::{Error, Result};
use crate::rng;
use crate::state::{sample_prior, MixedState, PriorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Linear decay to zero at the final step.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global-norm gradient clip; 0 disables.
    pub clip_norm: f64,
    pub ema_decay: f64,
    /// Loss above this counts toward divergence.
    pub divergence_bound: f64,
    /// Consecutive steps above the bound before aborting.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 16,
            lr: 5e-5,
            lr_schedule: LrSchedule::Linear,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            ema_decay: 0.999,
            divergence_bound: 1e8,
            patience: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: &str| Err(Error::config(format!("training.{k}"), m));
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr", "must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", "must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", "must be in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps", "must be > 0");
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip_norm", "must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad("ema_decay", "must be in [0, 1]");
        }
        if !(self.divergence_bound > 0.0) {
            return bad("divergence_bound", "must be > 0");
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Linear => self.lr * (1.0 - step as f64 / self.steps.max(1) as f64),
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub l_rfm: f64,
    pub l_reg: f64,
    pub total: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

pub fn history_csv(history: &[LossRecord]) -> String {
    let mut s = String::from("step,L_RFM,L_reg,total,grad_norm\n");
    for r in history {
        s.push_str(&format!(
            "{},{:.10e},{:.10e},{:.10e},{:.10e}\n",
            r.step, r.l_rfm, r.l_reg, r.total, r.grad_norm
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: EnergyModel,
    pub ema: EnergyModel,
    pub history: Vec<LossRecord>,
}

/// Samples data and same-size prior draws for one step.
fn sample_pairs(
    data: &[MixedState],
    prior: &PriorSpec,
    batch: usize,
    rng: &mut rng::Rng,
) -> Result<Vec<(MixedState, MixedState)>> {
    let mut pairs = Vec::with_capacity(batch);
    for _ in 0..batch {
        let x0 = data[rng.gen_range(0..data.len())].clone();
        let x1 = sample_prior(prior, x0.n_atoms(), rng)?;
        pairs.push((x0, x1));
    }
    Ok(pairs)
}

/// The training loop: sample, pair, loss, clipped Adam step, EMA.
///
/// Every step draws from its own stream `(seed, step)`, so a run is a pure
/// function of its inputs.
pub fn train(
    model: &EnergyModel,
    data: &[MixedState],
    prior: &PriorSpec,
    objective: &ObjectiveConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainResult> {
    objective.validate()?;
    cfg.validate()?;
    prior.validate()?;
    if data.is_empty() {
        return Err(Error::config("dataset", "training needs a nonempty dataset"));
    }
    for x in data {
        model.check_state(x)?;
    }
    let mut model = model.clone();
    let mut ema = model.clone();
    let mut opt = Adam::new(model.n_params(), cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut history = Vec::with_capacity(cfg.steps);
    let mut over = 0usize;
    for step in 0..cfg.steps {
        let mut r = rng::stream(seed, step as u64);
        let pairs = sample_pairs(data, prior, cfg.batch_size, &mut r)?;
        let items = build_batch(&pairs, objective, rng::fork(&mut r))?;
        let report = match batch_loss(&model, &items, objective.lambda_reg, true) {
            Ok(rep) => rep,
            Err(Error::Numerical { msg, .. }) => {
                return Err(Error::Diverged(format!("step {step}: {msg}")));
            }
            Err(e) => return Err(e),
        };
        let mut grad = report.grad.expect("gradient requested");
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        history.push(LossRecord {
            step,
            l_rfm: report.l_rfm,
            l_reg: report.l_reg,
            total: report.total,
            grad_norm: norm,
        });
        if report.total > cfg.divergence_bound {
            over += 1;
            if over > cfg.patience {
                return Err(Error::Diverged(format!(
                    "loss {:.3e} above bound {:.3e} for {over} consecutive steps (step {step})",
                    report.total, cfg.divergence_bound
                )));
            }
        } else {
            over = 0;
        }
        if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
            let s = cfg.clip_norm / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        opt.step(&mut model.params.flat, &grad, cfg.lr_at(step));
        ema_update(&mut ema.params, &model.params, cfg.ema_decay)?;
    }
    Ok(TrainResult { model, ema, history })
}
