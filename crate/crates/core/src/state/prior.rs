use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};

use super::{center_in_place, MixedState};
use crate::error::{Error, Result};
use crate::geometry;

/// PCA eigenvalues of every training molecule, grouped by atom count.
#[derive(Debug, Clone, Default)]
pub struct DonorTable {
    by_size: BTreeMap<usize, Vec<[f64; 3]>>,
}

impl DonorTable {
    pub fn from_dataset(data: &[MixedState]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::config(
                "dataset",
                "pca_matched prior needs a non-empty dataset",
            ));
        }
        let mut by_size: BTreeMap<usize, Vec<[f64; 3]>> = BTreeMap::new();
        for m in data {
            let (vals, _) = geometry::sym_eigen_desc(&geometry::covariance(&m.coords));
            by_size
                .entry(m.n_atoms())
                .or_default()
                .push(vals.map(|v| v.max(0.0)));
        }
        Ok(DonorTable { by_size })
    }

    /// Donor pool for `n` atoms: exact match, else nearest count with ties
    /// going to the smaller count.
    pub fn donors_for(&self, n: usize) -> Option<&[[f64; 3]]> {
        let below = self.by_size.range(..=n).next_back();
        let above = self.by_size.range(n..).next();
        let pick = match (below, above) {
            (Some(b), Some(a)) => {
                if n - *b.0 <= *a.0 - n {
                    b
                } else {
                    a
                }
            }
            (Some(b), None) => b,
            (None, Some(a)) => a,
            (None, None) => return None,
        };
        Some(pick.1.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.by_size.is_empty()
    }
}

#[derive(Debug, Clone)]
pub enum PositionPrior {
    Isotropic { sigma: f64 },
    PcaMatched(Arc<DonorTable>),
}

#[derive(Debug, Clone)]
pub struct PriorSpec {
    pub position: PositionPrior,
    pub n_types: usize,
    /// Dirichlet concentration, `1/K` by default.
    pub concentration: f64,
}

impl PriorSpec {
    pub fn isotropic(sigma: f64, n_types: usize) -> Self {
        PriorSpec {
            position: PositionPrior::Isotropic { sigma },
            n_types,
            concentration: 1.0 / n_types as f64,
        }
    }

    pub fn pca_matched(data: &[MixedState], n_types: usize) -> Result<Self> {
        Ok(PriorSpec {
            position: PositionPrior::PcaMatched(Arc::new(DonorTable::from_dataset(data)?)),
            n_types,
            concentration: 1.0 / n_types as f64,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.concentration > 0.0) {
            return Err(Error::config("prior.concentration", "must be > 0"));
        }
        if self.n_types == 0 {
            return Err(Error::config("prior.n_types", "must be positive"));
        }
        match &self.position {
            PositionPrior::Isotropic { sigma } if !(*sigma >= 0.0) => {
                Err(Error::config("prior.sigma", "must be >= 0"))
            }
            PositionPrior::PcaMatched(t) if t.is_empty() => Err(Error::config(
                "dataset",
                "pca_matched prior needs a non-empty dataset",
            )),
            _ => Ok(()),
        }
    }
}

/// One Dirichlet(alpha, ..., alpha) row of length `k`.
pub fn sample_dirichlet_row<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    loop {
        let row: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let s: f64 = row.iter().sum();
        if s > 0.0 && s.is_finite() {
            let mut row: Vec<f64> = row.into_iter().map(|g| g / s).collect();
            // exact normalization of the residual onto the largest entry
            let r: f64 = 1.0 - row.iter().sum::<f64>();
            let m = super::argmax_first(&row);
            row[m] += r;
            return row;
        }
    }
}

/// Draw coordinates from the position prior (then center) and types from
/// the Dirichlet prior.
pub fn sample_prior<R: Rng + ?Sized>(
    spec: &PriorSpec,
    n_atoms: usize,
    rng: &mut R,
) -> Result<MixedState> {
    if n_atoms == 0 {
        return Err(Error::contract("sample_prior needs n_atoms >= 1"));
    }
    spec.validate()?;
    let std = match &spec.position {
        PositionPrior::Isotropic { sigma } => [*sigma; 3],
        PositionPrior::PcaMatched(table) => {
            let donors = table.donors_for(n_atoms).ok_or_else(|| {
                Error::config("dataset", "pca_matched prior needs a non-empty dataset")
            })?;
            let d = donors[rng.gen_range(0..donors.len())];
            d.map(f64::sqrt)
        }
    };
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut coords = Vec::with_capacity(n_atoms);
    for _ in 0..n_atoms {
        coords.push([
            std[0] * normal.sample(rng),
            std[1] * normal.sample(rng),
            std[2] * normal.sample(rng),
        ]);
    }
    center_in_place(&mut coords);
    let k = spec.n_types;
    let mut types = Vec::with_capacity(n_atoms * k);
    for _ in 0..n_atoms {
        types.extend(sample_dirichlet_row(spec.concentration, k, rng));
    }
    Ok(MixedState {
        coords,
        types,
        n_types: k,
    })
}
