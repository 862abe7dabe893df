//! Restoring Field Matching: equivariant OT pairing, extended interpolants,
//! smoothed restoring targets and the training loop.

mod ot;
mod train;

pub use ot::{align, hungarian, ot_align, Alignment, OT_MAX_ROUNDS, OT_TOL};
pub use train::{history_csv, train, Adam, LossRecord, LrSchedule, TrainConfig, TrainResult};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{self, EnergyModel, LossSeeds};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::rng;
use crate::state::MixedState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    /// Extended interpolant on [-1, 1] with smoothed, two-sided targets.
    Rfm,
    /// Equivariant-OT flow matching: t in [0, 1], target c0 - c1.
    Otfm,
    /// Flow matching without OT pairing.
    Plainfm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    pub gamma: f64,
    pub lambda_reg: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            kind: ObjectiveKind::Rfm,
            gamma: 25.0,
            lambda_reg: 1e-3,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::config("objective.gamma", "must be > 0"));
        }
        if !(self.lambda_reg >= 0.0) || !self.lambda_reg.is_finite() {
            return Err(Error::config("objective.lambda_reg", "must be >= 0"));
        }
        Ok(())
    }

    /// Lower end of the t range.
    pub fn t_min(&self) -> f64 {
        match self.kind {
            ObjectiveKind::Rfm => -1.0,
            _ => 0.0,
        }
    }

    pub fn uses_ot(&self) -> bool {
        self.kind != ObjectiveKind::Plainfm
    }
}

/// One training element: the interpolated state with its target field.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolantBatch {
    pub x_t: MixedState,
    pub t: f64,
    pub u_coords: Vec<Vec3>,
    pub u_types: Vec<f64>,
    pub x0_ref: MixedState,
}

fn check_pair(x0: &MixedState, x1: &MixedState) -> Result<()> {
    if x0.n_atoms() != x1.n_atoms() || x0.n_types != x1.n_types {
        return Err(Error::Shape(format!(
            "pair shapes differ: {}x{} vs {}x{}",
            x0.n_atoms(),
            x0.n_types,
            x1.n_atoms(),
            x1.n_types
        )));
    }
    Ok(())
}

fn check_t(t: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&t) {
        return Err(Error::contract(format!("t = {t} outside [-1, 1]")));
    }
    Ok(())
}

/// `c_t = c0 + t (c1 - c0)`, `p_t = p0 + |t| (p1 - p0)`.
pub fn interpolate(x0: &MixedState, x1: &MixedState, t: f64) -> Result<MixedState> {
    check_t(t)?;
    check_pair(x0, x1)?;
    let coords = x0
        .coords
        .iter()
        .zip(&x1.coords)
        .map(|(a, b)| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])])
        .collect();
    let s = t.abs();
    let types = x0.types.iter().zip(&x1.types).map(|(a, b)| a + s * (b - a)).collect();
    Ok(MixedState {
        coords,
        types,
        n_types: x0.n_types,
    })
}

fn sign(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Target field at `x_t`. RFM: `tanh(g|t|) sign(t) (c0 - c1)` and
/// `tanh(g|t|) (p0 - p1)`. Flow-matching kinds: the unscaled `c0 - c1`, `p0 - p1`.
pub fn restoring_targets(
    x0: &MixedState,
    x1: &MixedState,
    t: f64,
    cfg: &ObjectiveConfig,
) -> Result<(Vec<Vec3>, Vec<f64>)> {
    check_t(t)?;
    check_pair(x0, x1)?;
    let (sc, sp) = match cfg.kind {
        ObjectiveKind::Rfm => {
            let b = (cfg.gamma * t.abs()).tanh();
            (b * sign(t), b)
        }
        _ => (1.0, 1.0),
    };
    let uc = x0
        .coords
        .iter()
        .zip(&x1.coords)
        .map(|(a, b)| [sc * (a[0] - b[0]), sc * (a[1] - b[1]), sc * (a[2] - b[2])])
        .collect();
    let up = x0.types.iter().zip(&x1.types).map(|(a, b)| sp * (a - b)).collect();
    Ok((uc, up))
}

/// Pairs a data sample with a prior draw of the same size: OT alignment
/// (types permuted with their atoms) unless the objective is plain FM.
pub fn pair_with_prior(x0: &MixedState, prior: &MixedState, cfg: &ObjectiveConfig) -> Result<MixedState> {
    check_pair(x0, prior)?;
    if !cfg.uses_ot() {
        return Ok(prior.clone());
    }
    let a = align(&prior.coords, &x0.coords);
    let k = prior.n_types;
    let mut types = Vec::with_capacity(prior.types.len());
    for &j in &a.perm {
        types.extend_from_slice(prior.type_row(j));
    }
    Ok(MixedState {
        coords: a.aligned,
        types,
        n_types: k,
    })
}

/// Draws `t` and assembles one training element from an aligned pair.
pub fn make_interpolant<R: Rng + ?Sized>(
    x0: &MixedState,
    x1_aligned: &MixedState,
    cfg: &ObjectiveConfig,
    rng: &mut R,
) -> Result<InterpolantBatch> {
    let t = rng.gen_range(cfg.t_min()..=1.0);
    interpolant_at(x0, x1_aligned, t, cfg)
}

pub fn interpolant_at(
    x0: &MixedState,
    x1_aligned: &MixedState,
    t: f64,
    cfg: &ObjectiveConfig,
) -> Result<InterpolantBatch> {
    let x_t = interpolate(x0, x1_aligned, t)?;
    let (u_coords, u_types) = restoring_targets(x0, x1_aligned, t, cfg)?;
    Ok(InterpolantBatch {
        x_t,
        t,
        u_coords,
        u_types,
        x0_ref: x0.clone(),
    })
}

/// Loss value, its components and (optionally) its parameter gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub l_rfm: f64,
    pub l_reg: f64,
    pub grad: Option<Vec<f64>>,
}

/// `|v - u|^2` with `v = -grad E(x_t)`, summed over coordinates and types.
fn field_error(eval: &energy::EnergyEval, item: &InterpolantBatch) -> (f64, LossSeeds) {
    let n = item.x_t.n_atoms();
    let mut seeds = LossSeeds::zeros(n, item.x_t.n_types);
    let mut l = 0.0;
    for i in 0..n {
        for a in 0..3 {
            // v - u = -(g + u)
            let r = eval.grad_coords[i][a] + item.u_coords[i][a];
            l += r * r;
            seeds.grad_coords[i][a] = 2.0 * r;
        }
    }
    for (j, (g, u)) in eval.grad_types.iter().zip(&item.u_types).enumerate() {
        let r = g + u;
        l += r * r;
        seeds.grad_types[j] = 2.0 * r;
    }
    (l, seeds)
}

/// Loss of a single element; `lambda_reg * mean_i E_i(x0)^2` included.
pub fn element_loss(
    model: &EnergyModel,
    item: &InterpolantBatch,
    lambda_reg: f64,
    want_grad: bool,
) -> Result<LossReport> {
    let n = item.x0_ref.n_atoms() as f64;
    if !want_grad {
        let eval = energy::grad_input(model, &item.x_t)?;
        let (l_rfm, _) = field_error(&eval, item);
        let e0 = energy::forward(model, &item.x0_ref)?;
        let l_reg = e0.per_atom.iter().map(|e| e * e).sum::<f64>() / n;
        return Ok(LossReport {
            total: l_rfm + lambda_reg * l_reg,
            l_rfm,
            l_reg,
            grad: None,
        });
    }
    let (l_rfm, mut grad) = energy::loss_param_grad(model, &item.x_t, |eval| field_error(eval, item))?;
    let e0 = energy::forward(model, &item.x0_ref)?;
    let l_reg = e0.per_atom.iter().map(|e| e * e).sum::<f64>() / n;
    if lambda_reg > 0.0 {
        let seeds: Vec<f64> = e0.per_atom.iter().map(|e| lambda_reg * 2.0 * e / n).collect();
        let (_, g_reg) = energy::param_grad(model, &item.x0_ref, &seeds)?;
        for (g, r) in grad.iter_mut().zip(g_reg) {
            *g += r;
        }
    }
    Ok(LossReport {
        total: l_rfm + lambda_reg * l_reg,
        l_rfm,
        l_reg,
        grad: Some(grad),
    })
}

/// Batch mean of [`element_loss`]. Elements are independent; the reduction
/// runs in index order so the result does not depend on thread count.
pub fn batch_loss(
    model: &EnergyModel,
    items: &[InterpolantBatch],
    lambda_reg: f64,
    want_grad: bool,
) -> Result<LossReport> {
    if items.is_empty() {
        return Err(Error::contract("loss needs a nonempty batch"));
    }
    let parts: Vec<Result<LossReport>> = items
        .par_iter()
        .map(|it| element_loss(model, it, lambda_reg, want_grad))
        .collect();
    let inv = 1.0 / items.len() as f64;
    let mut out = LossReport {
        total: 0.0,
        l_rfm: 0.0,
        l_reg: 0.0,
        grad: want_grad.then(|| vec![0.0; model.n_params()]),
    };
    for p in parts {
        let p = p?;
        out.total += p.total * inv;
        out.l_rfm += p.l_rfm * inv;
        out.l_reg += p.l_reg * inv;
        if let (Some(acc), Some(g)) = (out.grad.as_mut(), p.grad) {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v * inv;
            }
        }
    }
    if !out.total.is_finite() {
        return Err(Error::numerical("non-finite loss", None));
    }
    Ok(out)
}

/// Builds the interpolants for `(data, prior)` pairs, one random stream per
/// element derived from `seed`.
pub fn build_batch(
    pairs: &[(MixedState, MixedState)],
    cfg: &ObjectiveConfig,
    seed: u64,
) -> Result<Vec<InterpolantBatch>> {
    pairs
        .par_iter()
        .enumerate()
        .map(|(b, (x0, x1))| {
            let mut r = rng::stream(seed, b as u64);
            let aligned = pair_with_prior(x0, x1, cfg)?;
            make_interpolant(x0, &aligned, cfg, &mut r)
        })
        .collect()
}

/// Samples t per pair, builds targets and evaluates the full loss with its
/// parameter gradient.
pub fn rfm_loss<R: Rng + ?Sized>(
    model: &EnergyModel,
    pairs: &[(MixedState, MixedState)],
    cfg: &ObjectiveConfig,
    rng: &mut R,
) -> Result<LossReport> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::contract("loss needs a nonempty batch"));
    }
    let seed = rng.next_u64();
    let items = build_batch(pairs, cfg, seed)?;
    batch_loss(model, &items, cfg.lambda_reg, true)
}
