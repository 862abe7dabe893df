//! Equivariant optimal-transport pairing: atom permutation (Hungarian
//! assignment) alternated with proper rotation (Kabsch).

use nalgebra::Matrix3;

use crate::geometry::{self, Vec3};

/// Minimum-cost perfect assignment on a square cost matrix (row-major).
/// Returns `assign[row] = col`.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    // potentials formulation, 1-based with a virtual column 0
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Result of aligning a source cloud onto a target.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `perm[i]` is the source index placed at target position `i`.
    pub perm: Vec<usize>,
    pub rotation: Matrix3<f64>,
    /// `rotation * source[perm[i]]` for each `i`.
    pub aligned: Vec<Vec3>,
    pub cost: f64,
    pub rounds: usize,
}

pub const OT_MAX_ROUNDS: usize = 10;
pub const OT_TOL: f64 = 1e-10;

fn assign_to(src: &[Vec3], dst: &[Vec3]) -> Vec<usize> {
    let n = src.len();
    let mut cost = vec![0.0; n * n];
    // rows: target positions, cols: source atoms
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = geometry::sq_dist(&dst[i], &src[j]);
        }
    }
    hungarian(&cost, n)
}

fn alternate(source: &[Vec3], target: &[Vec3], start: Matrix3<f64>) -> Alignment {
    let mut rot = start;
    let mut best: Option<Alignment> = None;
    let mut prev = f64::INFINITY;
    for round in 1..=OT_MAX_ROUNDS {
        let rotated = geometry::rotate(source, &rot);
        let perm = assign_to(&rotated, target);
        let permuted: Vec<Vec3> = perm.iter().map(|&j| source[j]).collect();
        rot = geometry::kabsch(&permuted, target);
        let aligned = geometry::rotate(&permuted, &rot);
        let cost = geometry::sum_sq_diff(&aligned, target);
        let improved = best.as_ref().is_none_or(|b| cost < b.cost);
        if improved {
            best = Some(Alignment {
                perm,
                rotation: rot,
                aligned,
                cost,
                rounds: round,
            });
        }
        if prev - cost < OT_TOL {
            break;
        }
        prev = cost;
    }
    best.expect("at least one round")
}

/// Candidate starting rotations: identity plus the 24 proper rotations
/// mapping the source's principal frame onto the target's up to axis order
/// and sign (the octahedral group expressed in the two frames).
fn starts(source: &[Vec3], target: &[Vec3]) -> Vec<Matrix3<f64>> {
    let (_, vs) = geometry::sym_eigen_desc(&geometry::covariance(source));
    let (_, vt) = geometry::sym_eigen_desc(&geometry::covariance(target));
    let mut out = vec![Matrix3::identity()];
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    for p in perms {
        for signs in [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]] {
            let mut m = Matrix3::zeros();
            m[(0, p[0])] = signs[0];
            m[(1, p[1])] = signs[1];
            m[(2, p[2])] = 1.0;
            let r = vt * m * vs.transpose();
            if r.determinant() < 0.0 {
                m[(2, p[2])] = -1.0;
                out.push(vt * m * vs.transpose());
            } else {
                out.push(r);
            }
        }
    }
    out
}

/// Aligns `source` (prior sample) onto `target` (data) by alternating
/// assignment and rotation from several starts; returns the cheapest.
/// The result never costs more than the unaligned pairing.
pub fn align(source: &[Vec3], target: &[Vec3]) -> Alignment {
    assert_eq!(source.len(), target.len(), "ot_align needs equal atom counts");
    let identity_cost = geometry::sum_sq_diff(source, target);
    let mut best = Alignment {
        perm: (0..source.len()).collect(),
        rotation: Matrix3::identity(),
        aligned: source.to_vec(),
        cost: identity_cost,
        rounds: 0,
    };
    for start in starts(source, target) {
        let a = alternate(source, target, start);
        if a.cost < best.cost {
            best = a;
        }
    }
    best
}

/// `R (P c1)` minimizing the squared distance to `c0`.
pub fn ot_align(c1: &[Vec3], c0: &[Vec3]) -> Vec<Vec3> {
    align(c1, c0).aligned
}
