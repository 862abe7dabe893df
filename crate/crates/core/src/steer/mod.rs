//! Shape steering by composing the learned energy with PCA-eigenvalue
//! potentials, and fragment-fixed conditional sampling (inpainting).

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::energy::{Composed, CoordPotential, Potential};
use crate::error::{Error, Result};
use crate::geometry::{self, Vec3};
use crate::mla::{self, LabeledCloud, SamplerConfig};
use crate::rng;
use crate::state::{sample_dirichlet_row, AtomMask, MixedState, BOND};
use crate::tempering::{self, median, Generated, Ladder, Refill};

/// Eigenvalues of the population covariance of the centered coordinates,
/// descending, clamped at zero.
pub fn pca_eigs(coords: &[Vec3]) -> [f64; 3] {
    let (vals, _) = geometry::sym_eigen_desc(&geometry::covariance(coords));
    vals.map(|v| v.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    /// `l2 + l3`: favours rods.
    Linear,
    /// `l3 + l1 - l2`: favours flat, round clouds.
    Disk,
    /// `l1 - l3`: favours isotropic clouds.
    Sphere,
}

impl ShapeKind {
    pub fn coefficients(self) -> [f64; 3] {
        match self {
            ShapeKind::Linear => [0.0, 1.0, 1.0],
            ShapeKind::Disk => [1.0, -1.0, 1.0],
            ShapeKind::Sphere => [1.0, 0.0, -1.0],
        }
    }

    pub fn value(self, eigs: &[f64; 3]) -> f64 {
        let a = self.coefficients();
        a[0] * eigs[0] + a[1] * eigs[1] + a[2] * eigs[2]
    }
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ShapeKind::Linear),
            "disk" => Ok(ShapeKind::Disk),
            "sphere" => Ok(ShapeKind::Sphere),
            _ => Err(Error::config("steering.kind", format!("unknown shape `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapePotential {
    pub kind: ShapeKind,
    pub weight: f64,
}

impl Default for ShapePotential {
    fn default() -> Self {
        ShapePotential {
            kind: ShapeKind::Linear,
            weight: 1.0,
        }
    }
}

impl ShapePotential {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return Err(Error::config("steering.weight", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Relative gap below which neighbouring eigenvalues are treated as equal.
const DEGENERACY_TOL: f64 = 1e-9;

/// `U` and its gradient. Through `C = (1/N) sum (c_i - mu)(c_i - mu)^T`,
/// `dU/dc_i = (2/N) G (c_i - mu)` with `G = sum_k a_k v_k v_k^T`. Within a
/// block of equal eigenvalues the coefficients are averaged, so `G` stays
/// well defined at crossings.
pub fn shape_energy_and_grad(coords: &[Vec3], kind: ShapeKind) -> (f64, Vec<Vec3>) {
    let n = coords.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let (vals, vecs) = geometry::sym_eigen_desc(&geometry::covariance(coords));
    let eigs = vals.map(|v| v.max(0.0));
    let u = kind.value(&eigs);
    let a = kind.coefficients();
    let scale = vals[0].abs().max(f64::MIN_POSITIVE);
    let mut coef = a;
    let mut k = 0;
    while k < 3 {
        let mut end = k + 1;
        while end < 3 && (vals[end - 1] - vals[end]).abs() <= DEGENERACY_TOL * scale {
            end += 1;
        }
        let avg = a[k..end].iter().sum::<f64>() / (end - k) as f64;
        coef[k..end].iter_mut().for_each(|c| *c = avg);
        k = end;
    }
    let mut g = Matrix3::zeros();
    for k in 0..3 {
        let v: Vector3<f64> = vecs.column(k).into();
        g += coef[k] * v * v.transpose();
    }
    let mu = geometry::centroid(coords);
    let grad = coords
        .iter()
        .map(|c| {
            let d = Vector3::new(c[0] - mu[0], c[1] - mu[1], c[2] - mu[2]);
            let r = g * d * (2.0 / n as f64);
            [r[0], r[1], r[2]]
        })
        .collect();
    (u, grad)
}

impl CoordPotential for ShapeKind {
    fn energy_grad(&self, coords: &[Vec3]) -> (f64, Vec<Vec3>) {
        shape_energy_and_grad(coords, *self)
    }

    fn energy_only(&self, coords: &[Vec3]) -> f64 {
        self.value(&pca_eigs(coords))
    }
}

/// Per-sample eigenvalues and all three shape values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShapeStats {
    pub eigs: [f64; 3],
    pub u_lin: f64,
    pub u_disk: f64,
    pub u_sphere: f64,
}

impl ShapeStats {
    pub fn of(coords: &[Vec3]) -> Self {
        let eigs = pca_eigs(coords);
        ShapeStats {
            eigs,
            u_lin: ShapeKind::Linear.value(&eigs),
            u_disk: ShapeKind::Disk.value(&eigs),
            u_sphere: ShapeKind::Sphere.value(&eigs),
        }
    }
}

pub fn shape_stats_csv(stats: &[ShapeStats]) -> String {
    let mut s = String::from("sample,lambda1,lambda2,lambda3,u_lin,u_disk,u_sphere\n");
    for (i, st) in stats.iter().enumerate() {
        s.push_str(&format!(
            "{i},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}\n",
            st.eigs[0], st.eigs[1], st.eigs[2], st.u_lin, st.u_disk, st.u_sphere
        ));
    }
    s
}

/// Connectivity proxy: the graph joining atoms closer than `cutoff` has a
/// single component. One cutoff for every type pair.
pub fn is_connected(coords: &[Vec3], cutoff: f64) -> bool {
    let n = coords.len();
    if n <= 1 {
        return true;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let c2 = cutoff * cutoff;
    let mut comps = n;
    for i in 0..n {
        for j in i + 1..n {
            if geometry::sq_dist(&coords[i], &coords[j]) < c2 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                    comps -= 1;
                }
            }
        }
    }
    comps == 1
}

/// Default adjacency cutoff: 1.3 toy bond lengths.
pub const CONNECT_CUTOFF: f64 = 1.3 * BOND;

#[derive(Debug, Clone)]
pub struct SteeredOutput {
    pub generated: Generated,
    pub stats: Vec<ShapeStats>,
}

/// Tempering on `E + w U`. With `w = 0` the composition is a no-op and the
/// output equals unsteered generation for the same seed.
pub fn steered_generate<P, F>(
    potential: &P,
    shape: &ShapePotential,
    count: usize,
    ladder: &Ladder,
    cfg: &SamplerConfig,
    refill: &F,
    seed: u64,
) -> Result<SteeredOutput>
where
    P: Potential + ?Sized,
    F: Refill + ?Sized,
{
    shape.validate()?;
    let composed = Composed {
        base: potential,
        extra: &shape.kind,
        weight: shape.weight,
    };
    let generated = tempering::generate(&composed, count, ladder, cfg, refill, seed)?;
    let stats = generated.samples.iter().map(|s| ShapeStats::of(&s.coords)).collect();
    Ok(SteeredOutput { generated, stats })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub weight: f64,
    pub median_u: f64,
    /// Fraction of samples passing the connectivity proxy.
    pub connected: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("weight,median_u,connected_fraction_proxy\n");
    for r in rows {
        s.push_str(&format!("{},{:.8e},{:.6}\n", r.weight, r.median_u, r.connected));
    }
    s
}

/// Steered generation at each weight, summarised.
#[allow(clippy::too_many_arguments)]
pub fn weight_sweep<P, F>(
    potential: &P,
    kind: ShapeKind,
    weights: &[f64],
    count: usize,
    ladder: &Ladder,
    cfg: &SamplerConfig,
    refill: &F,
    seed: u64,
) -> Result<Vec<SweepRow>>
where
    P: Potential + ?Sized,
    F: Refill + ?Sized,
{
    weights
        .iter()
        .map(|&weight| {
            let out = steered_generate(potential, &ShapePotential { kind, weight }, count, ladder, cfg, refill, seed)?;
            let us: Vec<f64> = out.stats.iter().map(|s| kind.value(&s.eigs)).collect();
            let ok = out
                .generated
                .samples
                .iter()
                .filter(|s| is_connected(&s.coords, CONNECT_CUTOFF))
                .count();
            Ok(SweepRow {
                weight,
                median_u: median(&us),
                connected: ok as f64 / out.generated.samples.len() as f64,
            })
        })
        .collect()
}

/// Frozen fragment plus a Gaussian initializer for the free atoms matched to
/// the removed atoms' mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct InpaintTask {
    pub base: MixedState,
    pub mask: AtomMask,
    pub noise_mean: Vec3,
    /// Lower-triangular factor of the (floored) noise covariance.
    noise_chol: Matrix3<f64>,
}

/// Variance floor added to the removed atoms' covariance; two atoms give a
/// rank-one estimate, which would pin the noise to a line.
pub const NOISE_VAR_FLOOR: f64 = 0.1;

impl InpaintTask {
    pub fn new(base: MixedState, frozen: &[usize]) -> Result<Self> {
        let mask = AtomMask::from_indices(base.n_atoms(), frozen)?;
        if mask.n_free() == 0 {
            return Err(Error::contract("inpainting needs at least one free atom"));
        }
        let removed: Vec<Vec3> = (0..base.n_atoms())
            .filter(|&i| !mask.is_fixed(i))
            .map(|i| base.coords[i])
            .collect();
        let mean = geometry::centroid(&removed);
        let cov = geometry::covariance(&removed) + Matrix3::identity() * NOISE_VAR_FLOOR;
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::numerical("inpaint noise covariance not positive definite", None))?;
        Ok(InpaintTask {
            base,
            mask,
            noise_mean: mean,
            noise_chol: chol.l(),
        })
    }

    pub fn frozen_indices(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask.is_fixed(i)).collect()
    }

    /// Frozen rows copied from `base`; free atoms drawn from the matched
    /// Gaussian with Dirichlet(1/K) type rows.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> MixedState {
        let mut s = self.base.clone();
        let k = s.n_types;
        for i in 0..s.n_atoms() {
            if self.mask.is_fixed(i) {
                continue;
            }
            let z = Vector3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            let x = self.noise_chol * z;
            s.coords[i] = [
                self.noise_mean[0] + x[0],
                self.noise_mean[1] + x[1],
                self.noise_mean[2] + x[2],
            ];
            let row = sample_dirichlet_row(1.0 / k as f64, k, rng);
            s.type_row_mut(i).copy_from_slice(&row);
        }
        s
    }
}

impl Refill for InpaintTask {
    fn fresh(&self, rng: &mut rng::Rng) -> Result<MixedState> {
        Ok(self.init(rng))
    }

    fn mask(&self) -> Option<&AtomMask> {
        Some(&self.mask)
    }
}

#[derive(Debug, Clone)]
pub struct InpaintReport {
    pub attempts: usize,
    pub successes: usize,
    pub baseline_successes: usize,
    pub cutoff: f64,
    pub samples: Vec<LabeledCloud>,
    pub nfe: u64,
    pub diverged: u64,
}

impl InpaintReport {
    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.attempts.max(1) as f64
    }

    pub fn baseline_rate(&self) -> f64 {
        self.baseline_successes as f64 / self.attempts.max(1) as f64
    }

    /// Success table; connectivity stands in for chemical sanitization.
    pub fn to_csv(&self) -> String {
        format!(
            "method,attempts,successes,rate,criterion\n\
             sampled,{a},{s},{r:.4},connected_proxy(cutoff={c:.3})\n\
             init_plus_relax,{a},{b},{br:.4},connected_proxy(cutoff={c:.3})\n",
            a = self.attempts,
            s = self.successes,
            r = self.rate(),
            b = self.baseline_successes,
            br = self.baseline_rate(),
            c = self.cutoff
        )
    }
}

/// Masked tempering from the task's initializer, scored by connectivity,
/// against the baseline of initializer plus relaxation only.
pub fn inpaint<P: Potential + ?Sized>(
    potential: &P,
    task: &InpaintTask,
    attempts: usize,
    ladder: &Ladder,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<InpaintReport> {
    if attempts == 0 {
        return Err(Error::contract("attempts must be >= 1"));
    }
    let g = tempering::generate(potential, attempts, ladder, cfg, task, seed)?;
    let successes = g
        .samples
        .iter()
        .filter(|s| is_connected(&s.coords, CONNECT_CUTOFF))
        .count();
    let mut baseline = 0;
    for i in 0..attempts {
        let mut r = rng::stream(seed ^ 0xb45e_11fe, i as u64);
        let x = task.init(&mut r);
        let out = mla::relax(&x, potential, ladder.relax_steps, ladder.relax_eta, cfg, Some(&task.mask))?;
        if !out.diverged && is_connected(&out.state.coords, CONNECT_CUTOFF) {
            baseline += 1;
        }
    }
    Ok(InpaintReport {
        attempts,
        successes,
        baseline_successes: baseline,
        cutoff: CONNECT_CUTOFF,
        samples: g.samples,
        nfe: g.report.nfe,
        diverged: g.report.diverged,
    })
}
