//! Single-chain samplers: the Mirror-Langevin step (Euclidean mirror map for
//! coordinates, negative entropy for type rows), forward-Euler flow,
//! annealed Langevin and zero-temperature relaxation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::energy::{EnergyEval, Potential};
use crate::error::{Error, Result};
use crate::state::{center_in_place, AtomMask, MixedState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub eta: f64,
    pub tau: f64,
    pub sigma_c: f64,
    pub sigma_p: f64,
    /// Simplex floor: type entries are clamped to at least this before the
    /// dual update.
    pub eps: f64,
    /// Global-norm clip on the joint gradient; 0 disables.
    pub grad_clip: f64,
    /// Absolute energy bound; `|E|` above it (or above `median_factor`
    /// times the chain's running median) marks the chain diverged.
    pub energy_bound: f64,
    pub median_factor: f64,
    /// Any coordinate beyond this magnitude marks the chain diverged.
    pub coord_bound: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            eta: 0.1,
            tau: 1.0,
            sigma_c: 0.2,
            sigma_p: 0.4,
            eps: 5e-4,
            grad_clip: 0.0,
            energy_bound: 1e4,
            median_factor: 1e3,
            coord_bound: 1e3,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, n_types: usize) -> Result<()> {
        let bad = |k: &str, m: String| Err(Error::config(format!("sampler.{k}"), m));
        let fin = |v: f64| v.is_finite();
        if !(self.eta >= 0.0) || !fin(self.eta) {
            return bad("eta", "must be >= 0".into());
        }
        if !(self.tau >= 0.0) || !fin(self.tau) {
            return bad("tau", "must be >= 0".into());
        }
        if !(self.sigma_c >= 0.0) || !fin(self.sigma_c) {
            return bad("sigma_c", "must be >= 0".into());
        }
        if !(self.sigma_p >= 0.0) || !fin(self.sigma_p) {
            return bad("sigma_p", "must be >= 0".into());
        }
        if !(self.eps > 0.0) || self.eps * n_types as f64 >= 1.0 {
            return bad("eps", format!("must satisfy 0 < eps < 1/K (K = {n_types})"));
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip", "must be >= 0".into());
        }
        if !(self.energy_bound > 0.0) {
            return bad("energy_bound", "must be > 0".into());
        }
        if !(self.median_factor > 0.0) {
            return bad("median_factor", "must be > 0".into());
        }
        if !(self.coord_bound > 0.0) {
            return bad("coord_bound", "must be > 0".into());
        }
        Ok(())
    }

    pub fn with_tau(&self, tau: f64) -> Self {
        SamplerConfig { tau, ..self.clone() }
    }

    /// `sqrt(2 eta tau)`: the factor in front of the configured noise scales.
    pub fn noise_scale(&self) -> f64 {
        (2.0 * self.eta * self.tau).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub energy_before: f64,
    pub grad_norm_c: f64,
    pub grad_norm_p: f64,
    pub diverged: bool,
}

/// Running-median divergence check over one chain. The median is taken
/// over a sliding window of recent `|E|` values.
#[derive(Debug, Clone, Default)]
pub struct DivergenceMonitor {
    window: std::collections::VecDeque<f64>,
}

const MONITOR_WINDOW: usize = 256;

impl DivergenceMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn median(&self) -> Option<f64> {
        if self.window.is_empty() {
            return None;
        }
        let mut v: Vec<f64> = self.window.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        Some(v[v.len() / 2])
    }

    /// Records `e` and reports whether it breaks either bound.
    pub fn observe(&mut self, e: f64, cfg: &SamplerConfig) -> bool {
        if !e.is_finite() {
            return true;
        }
        let bound = match self.median() {
            Some(m) => cfg.energy_bound.max(cfg.median_factor * m),
            None => cfg.energy_bound,
        };
        if e.abs() > bound {
            return true;
        }
        if self.window.len() == MONITOR_WINDOW {
            self.window.pop_front();
        }
        self.window.push_back(e.abs());
        false
    }
}

fn state_out_of_bounds(state: &MixedState, cfg: &SamplerConfig) -> bool {
    !state.is_finite() || state.coords.iter().flatten().any(|v| v.abs() > cfg.coord_bound)
}

/// Row-wise softmax, shifted by the row max.
pub fn softmax_row(y: &mut [f64]) {
    let m = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in y.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in y.iter_mut() {
        *v /= s;
    }
}

/// One Mirror-Langevin update.
///
/// Coordinates: `c - eta g + sqrt(2 eta tau) sigma_c xi`, then centering
/// (skipped when any atom is frozen). Types: clamp at `eps`, step in the
/// log domain with noise scaled by `p^{-1/2}`, map back with softmax.
/// Frozen atoms keep their rows bitwise. A non-finite evaluation, a broken
/// energy bound or non-finite/out-of-range output is reported as
/// `diverged` and the input state is returned unchanged.
pub fn mla_step<P: Potential + ?Sized, R: Rng + ?Sized>(
    state: &MixedState,
    potential: &P,
    mask: Option<&AtomMask>,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(MixedState, StepReport)> {
    let eval = match potential.evaluate(state) {
        Ok(e) => e,
        Err(Error::Numerical { .. }) => {
            return Ok((state.clone(), diverged_report(f64::NAN)));
        }
        Err(e) => return Err(e),
    };
    mla_step_with(state, &eval, mask, cfg, rng)
}

fn diverged_report(e: f64) -> StepReport {
    StepReport {
        energy_before: e,
        grad_norm_c: f64::NAN,
        grad_norm_p: f64::NAN,
        diverged: true,
    }
}

/// [`mla_step`] with the gradient evaluation at `state` supplied.
pub fn mla_step_with<R: Rng + ?Sized>(
    state: &MixedState,
    eval: &EnergyEval,
    mask: Option<&AtomMask>,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(MixedState, StepReport)> {
    if let Some(m) = mask {
        m.check_against(state)?;
    }
    let n = state.n_atoms();
    let k = state.n_types;
    let (gn_c, gn_p) = eval.grad_norm();
    let mut report = StepReport {
        energy_before: eval.total,
        grad_norm_c: gn_c,
        grad_norm_p: gn_p,
        diverged: false,
    };
    if !eval.total.is_finite() || !gn_c.is_finite() || !gn_p.is_finite() || eval.total.abs() > cfg.energy_bound {
        report.diverged = true;
        return Ok((state.clone(), report));
    }
    let gscale = if cfg.grad_clip > 0.0 {
        let norm = (gn_c * gn_c + gn_p * gn_p).sqrt();
        if norm > cfg.grad_clip {
            cfg.grad_clip / norm
        } else {
            1.0
        }
    } else {
        1.0
    };
    let fixed = |i: usize| mask.is_some_and(|m| m.is_fixed(i));
    let s = cfg.noise_scale();
    let noisy = s > 0.0;

    let mut out = state.clone();
    for i in 0..n {
        let mut xi = [0.0; 3];
        if noisy && cfg.sigma_c > 0.0 {
            for v in xi.iter_mut() {
                *v = rng.sample::<f64, _>(StandardNormal);
            }
        }
        if fixed(i) {
            continue;
        }
        let g = eval.grad_coords[i];
        let c = &mut out.coords[i];
        for a in 0..3 {
            c[a] = c[a] - cfg.eta * gscale * g[a] + s * cfg.sigma_c * xi[a];
        }
    }
    if !mask.is_some_and(|m| m.any_fixed()) {
        center_in_place(&mut out.coords);
    }

    let mut y = vec![0.0; k];
    for i in 0..n {
        let mut xi = vec![0.0; k];
        if noisy && cfg.sigma_p > 0.0 {
            for v in xi.iter_mut() {
                *v = rng.sample::<f64, _>(StandardNormal);
            }
        }
        if fixed(i) {
            continue;
        }
        let p = state.type_row(i);
        let g = &eval.grad_types[i * k..(i + 1) * k];
        for j in 0..k {
            let pc = p[j].max(cfg.eps);
            y[j] = pc.ln() - cfg.eta * gscale * g[j] + s * cfg.sigma_p * xi[j] / pc.sqrt();
        }
        softmax_row(&mut y);
        out.type_row_mut(i).copy_from_slice(&y);
    }

    if state_out_of_bounds(&out, cfg) {
        report.diverged = true;
        return Ok((state.clone(), report));
    }
    Ok((out, report))
}

/// One row of a chain trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub tau: f64,
    pub energy: f64,
    pub grad_norm_c: f64,
    pub grad_norm_p: f64,
    pub diverged: bool,
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from("step,tau,energy,grad_norm_c,grad_norm_p,diverged\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.6e},{:.10e},{:.10e},{:.10e},{}\n",
            r.step, r.tau, r.energy, r.grad_norm_c, r.grad_norm_p, r.diverged as u8
        ));
    }
    s
}

/// Endpoint of a single-chain run.
#[derive(Debug, Clone)]
pub struct ChainOutcome {
    pub state: MixedState,
    /// Gradient evaluations performed.
    pub nfe: u64,
    pub diverged: bool,
    /// Filled only when tracing was requested.
    pub trace: Vec<TraceRow>,
}

/// Temperature schedule for annealed runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Schedule {
    Constant { tau: f64 },
    Geometric { tau_max: f64, tau_min: f64 },
    Linear { tau_max: f64, tau_min: f64 },
    Explicit { taus: Vec<f64> },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Geometric {
            tau_max: 1.0,
            tau_min: 0.05,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::config("chains.schedule", m));
        match self {
            Schedule::Constant { tau } if !(*tau >= 0.0) => err("tau must be >= 0"),
            Schedule::Geometric { tau_max, tau_min } => {
                if !(*tau_min > 0.0) || !(tau_max >= tau_min) {
                    err("geometric schedule needs tau_max >= tau_min > 0")
                } else {
                    Ok(())
                }
            }
            Schedule::Linear { tau_max, tau_min } => {
                if !(*tau_min >= 0.0) || !(tau_max >= tau_min) {
                    err("linear schedule needs tau_max >= tau_min >= 0")
                } else {
                    Ok(())
                }
            }
            Schedule::Explicit { taus } => {
                if taus.is_empty() || taus.iter().any(|t| !(*t >= 0.0)) {
                    err("explicit schedule needs nonnegative temperatures")
                } else if taus.windows(2).any(|w| w[1] > w[0]) {
                    err("schedule must be nonincreasing")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Temperature at step `k` of `steps`. Explicit schedules hold their
    /// last value past the end.
    pub fn tau_at(&self, k: usize, steps: usize) -> f64 {
        let f = if steps <= 1 { 0.0 } else { k as f64 / (steps - 1) as f64 };
        match self {
            Schedule::Constant { tau } => *tau,
            Schedule::Geometric { tau_max, tau_min } => tau_max * (tau_min / tau_max).powf(f),
            Schedule::Linear { tau_max, tau_min } => tau_max + f * (tau_min - tau_max),
            Schedule::Explicit { taus } => taus[k.min(taus.len() - 1)],
        }
    }
}

/// Generic driver: `steps` updates with temperature `tau_of(k)`.
fn run_chain<P, R, F>(
    state: &MixedState,
    potential: &P,
    steps: usize,
    cfg: &SamplerConfig,
    mask: Option<&AtomMask>,
    trace: bool,
    rng: &mut R,
    tau_of: F,
) -> Result<ChainOutcome>
where
    P: Potential + ?Sized,
    R: Rng + ?Sized,
    F: Fn(usize) -> f64,
{
    cfg.validate(state.n_types)?;
    let mut x = if mask.is_some_and(|m| m.any_fixed()) {
        state.clone()
    } else {
        crate::state::center(state)
    };
    let mut monitor = DivergenceMonitor::new();
    let mut out = ChainOutcome {
        state: x.clone(),
        nfe: 0,
        diverged: false,
        trace: Vec::new(),
    };
    for k in 0..steps {
        let c = cfg.with_tau(tau_of(k));
        let (next, rep) = mla_step(&x, potential, mask, &c, rng)?;
        out.nfe += 1;
        let diverged = rep.diverged || monitor.observe(rep.energy_before, &c);
        if trace {
            out.trace.push(TraceRow {
                step: k,
                tau: c.tau,
                energy: rep.energy_before,
                grad_norm_c: rep.grad_norm_c,
                grad_norm_p: rep.grad_norm_p,
                diverged,
            });
        }
        if diverged {
            out.diverged = true;
            break;
        }
        x = next;
    }
    out.state = x;
    Ok(out)
}

/// Deterministic gradient flow: `steps` updates at zero temperature.
pub fn fwde_run<P: Potential + ?Sized>(
    state: &MixedState,
    potential: &P,
    steps: usize,
    eta: f64,
    cfg: &SamplerConfig,
    mask: Option<&AtomMask>,
) -> Result<ChainOutcome> {
    let c = SamplerConfig {
        eta,
        tau: 0.0,
        sigma_c: 0.0,
        sigma_p: 0.0,
        ..cfg.clone()
    };
    // no noise is drawn at tau = 0; the generator is never touched
    let mut rng = crate::rng::root(0);
    run_chain(state, potential, steps, &c, mask, false, &mut rng, |_| 0.0)
}

/// Zero-temperature relaxation.
pub fn relax<P: Potential + ?Sized>(
    state: &MixedState,
    potential: &P,
    steps: usize,
    eta: f64,
    cfg: &SamplerConfig,
    mask: Option<&AtomMask>,
) -> Result<ChainOutcome> {
    fwde_run(state, potential, steps, eta, cfg, mask)
}

pub const RELAX_STEPS: usize = 200;
pub const RELAX_ETA: f64 = 0.01;

/// Annealed Langevin: the step is iterated with `tau` following `schedule`.
#[allow(clippy::too_many_arguments)]
pub fn ald_run<P: Potential + ?Sized, R: Rng + ?Sized>(
    state: &MixedState,
    potential: &P,
    steps: usize,
    schedule: &Schedule,
    cfg: &SamplerConfig,
    mask: Option<&AtomMask>,
    trace: bool,
    rng: &mut R,
) -> Result<ChainOutcome> {
    schedule.validate()?;
    run_chain(state, potential, steps, cfg, mask, trace, rng, |k| {
        schedule.tau_at(k, steps)
    })
}

/// Hard labels: per-row argmax (ties to the lowest index), coordinates
/// passed through.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    pub coords: Vec<crate::geometry::Vec3>,
    pub labels: Vec<usize>,
    pub n_types: usize,
}

impl LabeledCloud {
    /// One-hot state for file output.
    pub fn to_state(&self) -> MixedState {
        MixedState::from_labels(self.coords.clone(), &self.labels, self.n_types)
            .expect("labels come from argmax over K columns")
    }
}

pub fn discretize(state: &MixedState) -> LabeledCloud {
    LabeledCloud {
        coords: state.coords.clone(),
        labels: state.labels(),
        n_types: state.n_types,
    }
}

#[cfg(test)]
mod tests;
