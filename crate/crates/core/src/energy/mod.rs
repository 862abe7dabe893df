//! Per-atom additive, rotation/translation-invariant energy network and its
//! exact first- and second-order derivatives.

mod checkpoint;
mod model;
mod params;
pub mod scalar;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use model::{Activation, EnergyModel, ModelConfig};
pub use params::{ema_update, ParamEntry, Parameters};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::state::MixedState;
use scalar::Dual;

/// Energies and, when requested, input gradients of the total energy.
///
/// `grad_coords`/`grad_types` are empty for a forward-only evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyEval {
    pub per_atom: Vec<f64>,
    pub total: f64,
    pub grad_coords: Vec<Vec3>,
    pub grad_types: Vec<f64>,
}

impl EnergyEval {
    pub fn has_grads(&self) -> bool {
        !self.grad_coords.is_empty()
    }

    pub fn max_atom(&self) -> f64 {
        self.per_atom.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean_atom(&self) -> f64 {
        self.total / self.per_atom.len().max(1) as f64
    }

    pub fn grad_norm(&self) -> (f64, f64) {
        let gc = self.grad_coords.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        let gp = self.grad_types.iter().map(|v| v * v).sum::<f64>().sqrt();
        (gc, gp)
    }

    fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.per_atom.iter().all(|v| v.is_finite())
            && self.grad_coords.iter().flatten().all(|v| v.is_finite())
            && self.grad_types.iter().all(|v| v.is_finite())
    }
}

/// Anything the samplers can descend: energies plus input gradients.
pub trait Potential: Sync {
    fn n_types(&self) -> usize;

    /// Energies and gradients at `state`.
    fn evaluate(&self, state: &MixedState) -> Result<EnergyEval>;

    /// Energies only. Defaults to the full evaluation.
    fn energy(&self, state: &MixedState) -> Result<EnergyEval> {
        self.evaluate(state)
    }
}

fn sum(v: &[f64]) -> f64 {
    v.iter().sum()
}

/// Per-atom energies and their sum.
pub fn forward(model: &EnergyModel, state: &MixedState) -> Result<EnergyEval> {
    model.check_state(state)?;
    let per_atom = model.per_atom_raw(state);
    let eval = EnergyEval {
        total: sum(&per_atom),
        per_atom,
        grad_coords: Vec::new(),
        grad_types: Vec::new(),
    };
    if !eval.is_finite() {
        return Err(Error::numerical("non-finite energy", Some(state)));
    }
    Ok(eval)
}

/// Energies plus exact reverse-mode gradients of the total with respect to
/// coordinates and (ambient, unprojected) type rows.
pub fn grad_input(model: &EnergyModel, state: &MixedState) -> Result<EnergyEval> {
    model.check_state(state)?;
    let (per_atom, adj) = model.eval_raw(state, None, false);
    let eval = EnergyEval {
        total: sum(&per_atom),
        per_atom,
        grad_coords: adj.coords,
        grad_types: adj.types,
    };
    if !eval.is_finite() {
        return Err(Error::numerical("non-finite energy or gradient", Some(state)));
    }
    Ok(eval)
}

/// Partial derivatives of a scalar loss with respect to the outputs of
/// [`grad_input`]. A dependence on the total folds into `per_atom` (see
/// [`LossSeeds::add_total`]).
#[derive(Debug, Clone, PartialEq)]
pub struct LossSeeds {
    pub per_atom: Vec<f64>,
    pub grad_coords: Vec<Vec3>,
    pub grad_types: Vec<f64>,
}

impl LossSeeds {
    pub fn zeros(n_atoms: usize, n_types: usize) -> Self {
        LossSeeds {
            per_atom: vec![0.0; n_atoms],
            grad_coords: vec![[0.0; 3]; n_atoms],
            grad_types: vec![0.0; n_atoms * n_types],
        }
    }

    pub fn add_total(mut self, d_total: f64) -> Self {
        for v in &mut self.per_atom {
            *v += d_total;
        }
        self
    }
}

/// Exact parameter gradient of `loss(grad_input(model, state))`.
///
/// With `a = dL/dE_i` and `w = dL/d(grad E)` the gradient is
/// `sum_i a_i dE_i/dθ + d/dθ <w, grad_x E>`. Both terms come out of a single
/// dual-number pass at `x + eps*w` seeded with `1 + eps*a_i`: the `eps` part
/// of the parameter adjoint is exactly that sum.
pub fn loss_param_grad<F>(model: &EnergyModel, state: &MixedState, loss: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&EnergyEval) -> (f64, LossSeeds),
{
    let eval = grad_input(model, state)?;
    let (value, seeds) = loss(&eval);
    if !value.is_finite() {
        return Err(Error::numerical("non-finite loss", Some(state)));
    }
    let n = state.n_atoms();
    if seeds.per_atom.len() != n
        || seeds.grad_coords.len() != n
        || seeds.grad_types.len() != state.types.len()
    {
        return Err(Error::Shape("loss seeds do not match the state".into()));
    }
    let dual_seeds: Vec<Dual> = seeds.per_atom.iter().map(|&a| Dual::new(1.0, a)).collect();
    let g = model.eval_dual_params(state, &seeds.grad_coords, &seeds.grad_types, &dual_seeds);
    let grad: Vec<f64> = g.into_iter().map(|d| d.eps).collect();
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite parameter gradient", Some(state)));
    }
    Ok((value, grad))
}

/// First-order parameter gradient of `sum_i seeds_i * E_i`.
pub fn param_grad(model: &EnergyModel, state: &MixedState, seeds: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    model.check_state(state)?;
    if seeds.len() != state.n_atoms() {
        return Err(Error::Shape("seed count must equal atom count".into()));
    }
    let (per_atom, adj) = model.eval_raw(state, Some(seeds), true);
    let grad = adj.params.expect("params requested");
    if per_atom.iter().chain(&grad).any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite parameter gradient", Some(state)));
    }
    Ok((per_atom, grad))
}

impl Potential for EnergyModel {
    fn n_types(&self) -> usize {
        self.config.n_types
    }

    fn evaluate(&self, state: &MixedState) -> Result<EnergyEval> {
        grad_input(self, state)
    }

    fn energy(&self, state: &MixedState) -> Result<EnergyEval> {
        forward(self, state)
    }
}

/// Auxiliary potential over coordinates only, such as a shape penalty.
pub trait CoordPotential: Sync {
    /// Value and gradient with respect to each coordinate.
    fn energy_grad(&self, coords: &[Vec3]) -> (f64, Vec<Vec3>);

    fn energy_only(&self, coords: &[Vec3]) -> f64 {
        self.energy_grad(coords).0
    }
}

/// `E + w U`. The extra term is spread evenly over atoms (`w U / N` each)
/// so the result is still per-atom additive. With `w == 0` the base
/// evaluation is returned untouched.
pub struct Composed<'a, P: Potential + ?Sized> {
    pub base: &'a P,
    pub extra: &'a dyn CoordPotential,
    pub weight: f64,
}

impl<P: Potential + ?Sized> Composed<'_, P> {
    fn add_extra(&self, mut eval: EnergyEval, state: &MixedState, grads: bool) -> EnergyEval {
        if self.weight == 0.0 {
            return eval;
        }
        let n = state.n_atoms() as f64;
        let (u, g) = if grads {
            self.extra.energy_grad(&state.coords)
        } else {
            (self.extra.energy_only(&state.coords), Vec::new())
        };
        for e in &mut eval.per_atom {
            *e += self.weight * u / n;
        }
        eval.total = sum(&eval.per_atom);
        if grads && eval.has_grads() {
            for (gc, gu) in eval.grad_coords.iter_mut().zip(&g) {
                for a in 0..3 {
                    gc[a] += self.weight * gu[a];
                }
            }
        }
        eval
    }
}

impl<P: Potential + ?Sized> Potential for Composed<'_, P> {
    fn n_types(&self) -> usize {
        self.base.n_types()
    }

    fn evaluate(&self, state: &MixedState) -> Result<EnergyEval> {
        let eval = self.base.evaluate(state)?;
        Ok(self.add_extra(eval, state, true))
    }

    fn energy(&self, state: &MixedState) -> Result<EnergyEval> {
        let eval = self.base.energy(state)?;
        Ok(self.add_extra(eval, state, false))
    }
}

/// `E = sum_i |c_i|^2 / (2 s^2)`: a closed-form test potential.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticPotential {
    pub scale: f64,
    pub n_types: usize,
}

impl Potential for QuadraticPotential {
    fn n_types(&self) -> usize {
        self.n_types
    }

    fn evaluate(&self, state: &MixedState) -> Result<EnergyEval> {
        let s2 = self.scale * self.scale;
        let per_atom: Vec<f64> = state
            .coords
            .iter()
            .map(|c| 0.5 * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]) / s2)
            .collect();
        Ok(EnergyEval {
            total: sum(&per_atom),
            per_atom,
            grad_coords: state.coords.iter().map(|c| [c[0] / s2, c[1] / s2, c[2] / s2]).collect(),
            grad_types: vec![0.0; state.types.len()],
        })
    }
}
