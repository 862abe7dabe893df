//! Small 3-D helpers shared by the state, alignment and steering code.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

pub type Vec3 = [f64; 3];

pub fn centroid(coords: &[Vec3]) -> Vec3 {
    let n = coords.len().max(1) as f64;
    let mut m = [0.0; 3];
    for c in coords {
        for a in 0..3 {
            m[a] += c[a];
        }
    }
    [m[0] / n, m[1] / n, m[2] / n]
}

pub fn centered(coords: &[Vec3]) -> Vec<Vec3> {
    let m = centroid(coords);
    coords
        .iter()
        .map(|c| [c[0] - m[0], c[1] - m[1], c[2] - m[2]])
        .collect()
}

pub fn sq_dist(a: &Vec3, b: &Vec3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

pub fn pairwise_distances(coords: &[Vec3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(coords.len() * coords.len().saturating_sub(1) / 2);
    for i in 0..coords.len() {
        for j in (i + 1)..coords.len() {
            out.push(sq_dist(&coords[i], &coords[j]).sqrt());
        }
    }
    out
}

/// Uniformly distributed proper rotation (normalized Gaussian quaternion).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    loop {
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = (q.iter().map(|x| x * x).sum::<f64>()).sqrt();
        if n < 1e-12 {
            continue;
        }
        let uq = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            q[0], q[1], q[2], q[3],
        ));
        return *uq.to_rotation_matrix().matrix();
    }
}

pub fn rotate(coords: &[Vec3], r: &Matrix3<f64>) -> Vec<Vec3> {
    coords
        .iter()
        .map(|c| {
            let v = r * Vector3::new(c[0], c[1], c[2]);
            [v[0], v[1], v[2]]
        })
        .collect()
}

/// Population covariance (divide by N) of the centered cloud.
pub fn covariance(coords: &[Vec3]) -> Matrix3<f64> {
    let n = coords.len().max(1) as f64;
    let m = centroid(coords);
    let mut c = Matrix3::zeros();
    for p in coords {
        let d = Vector3::new(p[0] - m[0], p[1] - m[1], p[2] - m[2]);
        c += d * d.transpose();
    }
    c / n
}

/// Eigen-decomposition of a symmetric 3x3 matrix, sorted by descending
/// eigenvalue. Columns of the returned matrix are the eigenvectors.
pub fn sym_eigen_desc(m: &Matrix3<f64>) -> ([f64; 3], Matrix3<f64>) {
    let eig = SymmetricEigen::new(*m);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = [
        eig.eigenvalues[idx[0]],
        eig.eigenvalues[idx[1]],
        eig.eigenvalues[idx[2]],
    ];
    let vecs = Matrix3::from_columns(&[
        eig.eigenvectors.column(idx[0]).into_owned(),
        eig.eigenvectors.column(idx[1]).into_owned(),
        eig.eigenvectors.column(idx[2]).into_owned(),
    ]);
    (vals, vecs)
}

/// Proper rotation R minimizing sum |R src_i - dst_i|^2. Both clouds are
/// expected to be centered.
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Matrix3<f64> {
    let mut h = Matrix3::zeros();
    for (p, q) in src.iter().zip(dst) {
        h += Vector3::new(p[0], p[1], p[2]) * Vector3::new(q[0], q[1], q[2]).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let d = if d == 0.0 { 1.0 } else { d };
    let corr = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    v * corr * u.transpose()
}

pub fn sum_sq_diff(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(p, q)| sq_dist(p, q)).sum()
}

/// RMSD after centering both clouds and optimal proper rotation of `a` onto `b`.
pub fn aligned_rmsd(a: &[Vec3], b: &[Vec3]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let ac = centered(a);
    let bc = centered(b);
    let r = kabsch(&ac, &bc);
    let ar = rotate(&ac, &r);
    (sum_sq_diff(&ar, &bc) / a.len() as f64).sqrt()
}
