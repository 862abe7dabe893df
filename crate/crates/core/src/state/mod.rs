//! Mixed coordinate/simplex states, priors, toy datasets and XYZ files.

mod prior;
mod toy;
mod xyz;

pub use prior::{sample_dirichlet_row, sample_prior, DonorTable, PositionPrior, PriorSpec};
pub use toy::{generate_toy_dataset, SizeHistogram, Template, ToyDataset, BOND};
pub use xyz::{load_xyz, parse_xyz, save_xyz, write_xyz, type_symbol};

use crate::error::{Error, Result};
use crate::geometry::{self, Vec3};
use serde::{Deserialize, Serialize};

/// Row-sum tolerance for simplex membership.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Joint state: N x 3 coordinates plus N rows on the (K-1)-simplex.
///
/// `types` is stored row-major, `types[i * n_types + k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedState {
    pub coords: Vec<Vec3>,
    pub types: Vec<f64>,
    pub n_types: usize,
}

impl MixedState {
    /// Builds a state and checks every invariant.
    pub fn new(coords: Vec<Vec3>, types: Vec<f64>, n_types: usize) -> Result<Self> {
        let s = MixedState {
            coords,
            types,
            n_types,
        };
        s.validate()?;
        Ok(s)
    }

    /// One-hot types from integer labels.
    pub fn from_labels(coords: Vec<Vec3>, labels: &[usize], n_types: usize) -> Result<Self> {
        if labels.len() != coords.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} atoms",
                labels.len(),
                coords.len()
            )));
        }
        let mut types = vec![0.0; labels.len() * n_types];
        for (i, &l) in labels.iter().enumerate() {
            if l >= n_types {
                return Err(Error::Shape(format!("label {l} outside 0..{n_types}")));
            }
            types[i * n_types + l] = 1.0;
        }
        Self::new(coords, types, n_types)
    }

    pub fn n_atoms(&self) -> usize {
        self.coords.len()
    }

    pub fn type_row(&self, i: usize) -> &[f64] {
        &self.types[i * self.n_types..(i + 1) * self.n_types]
    }

    pub fn type_row_mut(&mut self, i: usize) -> &mut [f64] {
        let k = self.n_types;
        &mut self.types[i * k..(i + 1) * k]
    }

    pub fn validate(&self) -> Result<()> {
        if self.coords.is_empty() {
            return Err(Error::Shape("state has no atoms".into()));
        }
        if self.n_types == 0 {
            return Err(Error::Shape("n_types must be positive".into()));
        }
        if self.types.len() != self.coords.len() * self.n_types {
            return Err(Error::Shape(format!(
                "types has {} entries, expected {}x{}",
                self.types.len(),
                self.coords.len(),
                self.n_types
            )));
        }
        if self.coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite coordinate", Some(self)));
        }
        for i in 0..self.n_atoms() {
            if !on_simplex(self.type_row(i), SIMPLEX_TOL) {
                return Err(Error::Shape(format!("types row {i} is off the simplex")));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().flatten().all(|v| v.is_finite())
            && self.types.iter().all(|v| v.is_finite())
    }

    pub fn is_centered(&self, tol: f64) -> bool {
        geometry::centroid(&self.coords).iter().all(|m| m.abs() <= tol)
    }

    /// Per-row argmax of the type distribution; ties go to the lowest index.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.n_atoms())
            .map(|i| argmax_first(self.type_row(i)))
            .collect()
    }
}

/// Zero-mean copy of the coordinates; types untouched.
pub fn center(state: &MixedState) -> MixedState {
    let mut out = state.clone();
    center_in_place(&mut out.coords);
    out
}

/// Axes whose mean is already at round-off level relative to the cloud's
/// extent are left alone, which makes centering bitwise idempotent.
pub(crate) fn center_in_place(coords: &mut [Vec3]) {
    let m = geometry::centroid(coords);
    for a in 0..3 {
        let scale = coords.iter().fold(0.0f64, |acc, c| acc.max(c[a].abs()));
        if m[a].abs() <= 1e-12 * scale {
            continue;
        }
        for c in coords.iter_mut() {
            c[a] -= m[a];
        }
    }
}

pub fn on_simplex(row: &[f64], tol: f64) -> bool {
    let s: f64 = row.iter().sum();
    row.iter().all(|&p| p >= 0.0 && p.is_finite()) && (s - 1.0).abs() <= tol
}

pub(crate) fn argmax_first(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Atoms flagged `true` stay frozen during conditional sampling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomMask {
    pub fixed: Vec<bool>,
}

impl AtomMask {
    pub fn none(n: usize) -> Self {
        AtomMask {
            fixed: vec![false; n],
        }
    }

    pub fn from_indices(n: usize, frozen: &[usize]) -> Result<Self> {
        let mut fixed = vec![false; n];
        for &i in frozen {
            if i >= n {
                return Err(Error::contract(format!("frozen index {i} out of range 0..{n}")));
            }
            fixed[i] = true;
        }
        Ok(AtomMask { fixed })
    }

    pub fn len(&self) -> usize {
        self.fixed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixed.is_empty()
    }

    pub fn any_fixed(&self) -> bool {
        self.fixed.iter().any(|&f| f)
    }

    pub fn n_free(&self) -> usize {
        self.fixed.iter().filter(|&&f| !f).count()
    }

    pub fn is_fixed(&self, i: usize) -> bool {
        self.fixed[i]
    }

    pub fn check_against(&self, state: &MixedState) -> Result<()> {
        if self.fixed.len() != state.n_atoms() {
            return Err(Error::contract(format!(
                "mask length {} != atom count {}",
                self.fixed.len(),
                state.n_atoms()
            )));
        }
        Ok(())
    }
}
