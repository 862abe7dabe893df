//! Landscape diagnostics: relaxation from data, gradient profiles along
//! interpolants, energy against noise, the W2 pairwise-distance metric and
//! a uniqueness proxy.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::energy::Potential;
use crate::error::{Error, Result};
use crate::geometry::{self, Vec3};
use crate::mla::{self, LabeledCloud, SamplerConfig};
use crate::rfm::{self, ObjectiveConfig};
use crate::rng;
use crate::state::{sample_prior, MixedState, PriorSpec};
use crate::tempering::median;

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelaxationRow {
    pub delta_e: f64,
    pub delta_e_per_atom: f64,
    pub rmsd: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelaxationReport {
    pub n: usize,
    pub steps: usize,
    pub eta: f64,
    pub median_delta_e: f64,
    pub median_delta_e_per_atom: f64,
    pub mean_rmsd: f64,
    pub diverged: usize,
    pub rows: Vec<RelaxationRow>,
}

impl RelaxationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("molecule,delta_e,delta_e_per_atom,aligned_rmsd,diverged\n");
        for (i, r) in self.rows.iter().enumerate() {
            s.push_str(&format!(
                "{i},{:.10e},{:.10e},{:.10e},{}\n",
                r.delta_e, r.delta_e_per_atom, r.rmsd, r.diverged as u8
            ));
        }
        s
    }
}

pub const RELAX_TEST_STEPS: usize = 500;
pub const RELAX_TEST_ETA: f64 = 0.01;

/// Zero-temperature descent from each molecule; energy change and RMSD to
/// the start after optimal rigid alignment. A chain that trips the
/// divergence bounds stops there and is scored at its last finite state.
pub fn relaxation_test<P: Potential + ?Sized>(
    potential: &P,
    data: &[MixedState],
    steps: usize,
    eta: f64,
    cfg: &SamplerConfig,
) -> Result<RelaxationReport> {
    if data.is_empty() {
        return Err(Error::contract("relaxation test needs molecules"));
    }
    let rows: Vec<Result<RelaxationRow>> = data
        .par_iter()
        .map(|x| {
            let e0 = potential.energy(x)?.total;
            let out = mla::relax(x, potential, steps, eta, cfg, None)?;
            let e1 = potential.energy(&out.state).map(|e| e.total).unwrap_or(f64::NAN);
            let n = x.n_atoms() as f64;
            Ok(RelaxationRow {
                delta_e: e1 - e0,
                delta_e_per_atom: (e1 - e0) / n,
                rmsd: geometry::aligned_rmsd(&out.state.coords, &x.coords),
                diverged: out.diverged,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let de: Vec<f64> = rows.iter().map(|r| r.delta_e).collect();
    let dea: Vec<f64> = rows.iter().map(|r| r.delta_e_per_atom).collect();
    let rm: Vec<f64> = rows.iter().map(|r| r.rmsd).collect();
    Ok(RelaxationReport {
        n: rows.len(),
        steps,
        eta,
        median_delta_e: median(&de),
        median_delta_e_per_atom: median(&dea),
        mean_rmsd: mean_std(&rm).0,
        diverged: rows.iter().filter(|r| r.diverged).count(),
        rows,
    })
}

/// Long-format curve point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub x: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientProfile {
    pub magnitude: Vec<CurvePoint>,
    pub cosine: Vec<CurvePoint>,
    /// Samples dropped from the cosine at each t (a vector below 1e-12).
    pub excluded: Vec<usize>,
}

impl GradientProfile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("series,t,mean,std,n,excluded\n");
        for p in &self.magnitude {
            s.push_str(&format!("grad_norm,{},{:.10e},{:.10e},{},{}\n", p.x, p.mean, p.std, p.n, 0));
        }
        for (p, ex) in self.cosine.iter().zip(&self.excluded) {
            s.push_str(&format!("cosine,{},{:.10e},{:.10e},{},{}\n", p.x, p.mean, p.std, p.n, ex));
        }
        s
    }
}

pub fn default_t_grid() -> Vec<f64> {
    (0..=20).map(|i| -1.0 + 0.1 * i as f64).map(|t: f64| (t * 10.0).round() / 10.0).collect()
}

/// Per-(molecule, t) gradient magnitude and cosine (None when excluded).
type ProfileCell = (f64, Option<f64>);

/// `|grad_c E(x_t)|` and `cos(-grad_c E(x_t), sign(t)(c0 - c1))` along
/// OT-aligned interpolants, one prior partner per molecule shared across
/// the grid.
pub fn gradient_profile<P: Potential + ?Sized>(
    potential: &P,
    data: &[MixedState],
    prior: &PriorSpec,
    t_grid: &[f64],
    n_molecules: usize,
    seed: u64,
) -> Result<GradientProfile> {
    if t_grid.len() < 3 || t_grid.iter().any(|t| !(-1.0..=1.0).contains(t)) {
        return Err(Error::config("eval.t_grid", "need at least 3 points in [-1, 1]"));
    }
    if data.is_empty() || n_molecules == 0 {
        return Err(Error::contract("gradient profile needs molecules"));
    }
    let obj = ObjectiveConfig::default();
    let per_mol: Vec<Result<Vec<ProfileCell>>> = (0..n_molecules)
        .into_par_iter()
        .map(|m| {
            let x0 = &data[m % data.len()];
            let mut r = rng::stream(seed, m as u64);
            let x1 = sample_prior(prior, x0.n_atoms(), &mut r)?;
            let x1 = rfm::pair_with_prior(x0, &x1, &obj)?;
            t_grid
                .iter()
                .map(|&t| {
                    let xt = rfm::interpolate(x0, &x1, t)?;
                    let g = potential.evaluate(&xt)?;
                    let s = if t > 0.0 { 1.0 } else if t < 0.0 { -1.0 } else { 0.0 };
                    let (mut dot, mut nu, mut ng) = (0.0, 0.0, 0.0);
                    for (gi, (a, b)) in g.grad_coords.iter().zip(x0.coords.iter().zip(&x1.coords)) {
                        for d in 0..3 {
                            let u = s * (a[d] - b[d]);
                            dot += -gi[d] * u;
                            nu += u * u;
                            ng += gi[d] * gi[d];
                        }
                    }
                    let (nu, ng) = (nu.sqrt(), ng.sqrt());
                    let cos = (nu >= 1e-12 && ng >= 1e-12).then(|| dot / (nu * ng));
                    Ok((ng, cos))
                })
                .collect()
        })
        .collect();
    let per_mol = per_mol.into_iter().collect::<Result<Vec<_>>>()?;
    let mut out = GradientProfile {
        magnitude: Vec::new(),
        cosine: Vec::new(),
        excluded: Vec::new(),
    };
    for (k, &t) in t_grid.iter().enumerate() {
        let mags: Vec<f64> = per_mol.iter().map(|v| v[k].0).collect();
        let coss: Vec<f64> = per_mol.iter().filter_map(|v| v[k].1).collect();
        let (mm, ms) = mean_std(&mags);
        let (cm, cs) = mean_std(&coss);
        out.magnitude.push(CurvePoint { x: t, mean: mm, std: ms, n: mags.len() });
        out.cosine.push(CurvePoint { x: t, mean: cm, std: cs, n: coss.len() });
        out.excluded.push(mags.len() - coss.len());
    }
    Ok(out)
}

pub fn default_sigma_grid() -> Vec<f64> {
    (0..=10).map(|i| 0.05 * i as f64).collect()
}

/// Mean and spread of `E(c + sigma xi, p)` per noise level.
pub fn energy_vs_noise<P: Potential + ?Sized>(
    potential: &P,
    data: &[MixedState],
    sigmas: &[f64],
    n_molecules: usize,
    draws: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if data.is_empty() || n_molecules == 0 || draws == 0 {
        return Err(Error::contract("energy-vs-noise needs molecules and draws"));
    }
    if sigmas.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::config("eval.sigma_grid", "noise levels must be >= 0"));
    }
    sigmas
        .iter()
        .enumerate()
        .map(|(k, &sigma)| {
            let es: Vec<Result<Vec<f64>>> = (0..n_molecules)
                .into_par_iter()
                .map(|m| {
                    let x0 = &data[m % data.len()];
                    let mut r = rng::stream(seed.wrapping_add(k as u64), m as u64);
                    (0..draws)
                        .map(|_| {
                            let mut x = x0.clone();
                            for c in x.coords.iter_mut().flatten() {
                                *c += sigma * r.sample::<f64, _>(StandardNormal);
                            }
                            Ok(potential.energy(&x)?.total)
                        })
                        .collect()
                })
                .collect();
            let es: Vec<f64> = es.into_iter().collect::<Result<Vec<_>>>()?.concat();
            let (m, s) = mean_std(&es);
            Ok(CurvePoint { x: sigma, mean: m, std: s, n: es.len() })
        })
        .collect()
}

/// Number of decreases between consecutive means.
pub fn inversions(curve: &[CurvePoint]) -> usize {
    curve.windows(2).filter(|w| w[1].mean < w[0].mean).count()
}

/// Monotone nondecreasing up to one inversion per ten grid points.
pub fn is_monotone_with_tolerance(curve: &[CurvePoint]) -> bool {
    inversions(curve) <= curve.len() / 10
}

pub fn curve_csv(series: &str, curve: &[CurvePoint]) -> String {
    let mut s = String::from("series,x,mean,std,n\n");
    for p in curve {
        s.push_str(&format!("{series},{},{:.10e},{:.10e},{}\n", p.x, p.mean, p.std, p.n));
    }
    s
}

fn band_distances(sets: &[Vec<Vec3>], lo: f64, hi: f64) -> Vec<f64> {
    let mut d: Vec<f64> = sets
        .iter()
        .flat_map(|c| geometry::pairwise_distances(c))
        .filter(|d| *d >= lo && *d <= hi)
        .collect();
    d.sort_by(f64::total_cmp);
    d
}

/// Exact W2 between two sorted 1-D samples via their quantile functions.
pub fn w2_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut acc = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        let d = a[i] - b[j];
        acc += (next - u) * d * d;
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    acc.max(0.0).sqrt()
}

/// W2 between the pairwise-distance distributions of two sets of clouds,
/// keeping only distances in `[lo, hi]`.
pub fn w2_pairwise_distance(samples: &[Vec<Vec3>], reference: &[Vec<Vec3>], band: (f64, f64)) -> Result<f64> {
    let (lo, hi) = band;
    if !(lo <= hi) {
        return Err(Error::config("eval.band", "need lo <= hi"));
    }
    let a = band_distances(samples, lo, hi);
    if a.is_empty() {
        return Err(Error::contract(format!("samples have no pairwise distance in [{lo}, {hi}]")));
    }
    let b = band_distances(reference, lo, hi);
    if b.is_empty() {
        return Err(Error::contract(format!("reference has no pairwise distance in [{lo}, {hi}]")));
    }
    Ok(w2_sorted(&a, &b))
}

pub const UNIQUENESS_QUANTUM: f64 = 0.05;

/// `(sorted labels, sorted pairwise distances rounded to 0.05)`.
pub fn canonical_key(s: &LabeledCloud) -> (Vec<usize>, Vec<i64>) {
    let mut labels = s.labels.clone();
    labels.sort_unstable();
    let mut d: Vec<i64> = geometry::pairwise_distances(&s.coords)
        .into_iter()
        .map(|d| (d / UNIQUENESS_QUANTUM).round() as i64)
        .collect();
    d.sort_unstable();
    (labels, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Uniqueness {
    pub samples: usize,
    pub unique: usize,
    pub fraction: f64,
}

/// Fraction of distinct canonical keys; a stand-in for graph-based
/// uniqueness.
pub fn uniqueness_proxy(samples: &[LabeledCloud]) -> Uniqueness {
    let keys: BTreeSet<_> = samples.iter().map(canonical_key).collect();
    Uniqueness {
        samples: samples.len(),
        unique: keys.len(),
        fraction: if samples.is_empty() { 0.0 } else { keys.len() as f64 / samples.len() as f64 },
    }
}
