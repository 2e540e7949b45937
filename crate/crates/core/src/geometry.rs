//! Coordinate-space machinery: centering, Kabsch alignment, the rigid-body
//! projector and the shared-noise coordinate triple.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::{dot, norm};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("conformation has no atoms")]
    Empty,
    #[error("atomic number at index {index} must be positive")]
    InvalidAtomicNumber { index: usize },
    #[error("{atoms} atomic numbers but {coords} coordinate rows")]
    LengthMismatch { atoms: usize, coords: usize },
    #[error("coordinates contain a non-finite value")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("sigma and lambda must be positive (sigma {sigma}, lambda {lambda})")]
    InvalidNoise { sigma: f64, lambda: f64 },
}

/// One molecule: atomic numbers and Cartesian coordinates in Å.
#[derive(Clone, Debug, PartialEq)]
pub struct Conformation {
    atomic_numbers: Vec<u32>,
    coords: Vec<Vec3>,
}

impl Conformation {
    pub fn new(atomic_numbers: Vec<u32>, coords: Vec<Vec3>) -> Result<Self, GeometryError> {
        if atomic_numbers.len() != coords.len() {
            return Err(GeometryError::LengthMismatch { atoms: atomic_numbers.len(), coords: coords.len() });
        }
        if coords.is_empty() {
            return Err(GeometryError::Empty);
        }
        if let Some(index) = atomic_numbers.iter().position(|&z| z == 0) {
            return Err(GeometryError::InvalidAtomicNumber { index });
        }
        if !coords.iter().flatten().all(|x| x.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Conformation { atomic_numbers, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    /// Always false; a conformation holds at least one atom.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn atomic_numbers(&self) -> &[u32] {
        &self.atomic_numbers
    }

    pub fn coords(&self) -> &[Vec3] {
        &self.coords
    }

    /// Same atoms at new positions.
    pub fn with_coords(&self, coords: Vec<Vec3>) -> Result<Self, GeometryError> {
        Conformation::new(self.atomic_numbers.clone(), coords)
    }

    pub fn flat_coords(&self) -> Vec<f64> {
        flatten(&self.coords)
    }

    pub fn centroid(&self) -> Vec3 {
        centroid(&self.coords)
    }
}

pub fn flatten(coords: &[Vec3]) -> Vec<f64> {
    coords.iter().flatten().copied().collect()
}

/// # Panics
///
/// Panics if the length is not a multiple of 3.
pub fn unflatten(flat: &[f64]) -> Vec<Vec3> {
    assert_eq!(flat.len() % 3, 0, "flat coordinate length must be a multiple of 3");
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

pub fn centroid(coords: &[Vec3]) -> Vec3 {
    let n = coords.len() as f64;
    let mut c = [0.0; 3];
    for r in coords {
        for a in 0..3 {
            c[a] += r[a];
        }
    }
    c.map(|x| x / n)
}

fn centered(coords: &[Vec3]) -> Vec<Vec3> {
    let c = centroid(coords);
    coords.iter().map(|r| [r[0] - c[0], r[1] - c[1], r[2] - c[2]]).collect()
}

/// Translates the conformation so its centroid is the origin.
pub fn center(conf: &Conformation) -> Conformation {
    Conformation { atomic_numbers: conf.atomic_numbers.clone(), coords: centered(&conf.coords) }
}

pub fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// `R r + t` for every row.
pub fn apply_rigid(coords: &[Vec3], rotation: &Mat3, translation: &Vec3) -> Vec<Vec3> {
    coords
        .iter()
        .map(|r| {
            let q = mat_vec(rotation, r);
            [q[0] + translation[0], q[1] + translation[1], q[2] + translation[2]]
        })
        .collect()
}

/// `R v` for every row.
pub fn rotate_rows(rows: &[Vec3], rotation: &Mat3) -> Vec<Vec3> {
    rows.iter().map(|v| mat_vec(rotation, v)).collect()
}

/// Uniformly distributed proper rotation (normalized Gaussian quaternion).
pub fn random_rotation(rng: &mut Rng) -> Mat3 {
    let q = rng.unit_vector(4);
    quaternion_to_matrix(q[0], q[1], q[2], q[3])
}

pub(crate) fn quaternion_to_matrix(w: f64, x: f64, y: f64, z: f64) -> Mat3 {
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Optimal superposition of `y` onto `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentResult {
    /// Proper rotation (`det = +1`).
    pub rotation: Mat3,
    pub translation: Vec3,
    /// `min ‖x − (R y + t)‖` over proper rotations and translations, as a
    /// Frobenius norm over all atoms (not divided by `√N`).
    pub distance: f64,
}

/// Kabsch superposition via the SVD of the 3×3 cross-covariance, with the
/// determinant correction that excludes reflections.
pub fn kabsch_align(x: &[Vec3], y: &[Vec3]) -> Result<AlignmentResult, GeometryError> {
    if x.len() != y.len() {
        return Err(GeometryError::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    if x.is_empty() {
        return Err(GeometryError::Empty);
    }
    if !x.iter().chain(y).flatten().all(|v| v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let (cx, cy) = (centroid(x), centroid(y));
    let (xc, yc) = (centered(x), centered(y));

    // H = Σ y_i x_iᵀ; the optimal R maps centered y onto centered x.
    let mut h = Matrix3::<f64>::zeros();
    for (a, b) in yc.iter().zip(&xc) {
        h += Vector3::from(*a) * Vector3::from(*b).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, if d == 0.0 { 1.0 } else { d }));
    let r = v * correction * u.transpose();

    let rotation: Mat3 = [0, 1, 2].map(|i| [0, 1, 2].map(|j| r[(i, j)]));
    let ry = mat_vec(&rotation, &cy);
    let translation = [cx[0] - ry[0], cx[1] - ry[1], cx[2] - ry[2]];
    let distance = xc
        .iter()
        .zip(&yc)
        .map(|(a, b)| {
            let rb = mat_vec(&rotation, b);
            (0..3).map(|k| (a[k] - rb[k]).powi(2)).sum::<f64>()
        })
        .sum::<f64>()
        .sqrt();
    Ok(AlignmentResult { rotation, translation, distance })
}

/// Procrustes distance between two equally sized conformations.
pub fn procrustes_distance(x: &[Vec3], y: &[Vec3]) -> Result<f64, GeometryError> {
    kabsch_align(x, y).map(|a| a.distance)
}

/// Orthonormal basis of the rigid-motion subspace at a reference geometry;
/// the projector onto its complement is `P = I − Q Qᵀ`.
#[derive(Clone, Debug)]
pub struct RigidProjector {
    basis: Vec<Vec<f64>>,
    dimension: usize,
}

impl RigidProjector {
    /// Orthonormal columns, each of length `3N`.
    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Dimension of the non-rigid subspace, `3N − columns`.
    pub fn rank(&self) -> usize {
        self.dimension - self.basis.len()
    }

    /// `v − Q Qᵀ v`.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>, GeometryError> {
        if v.len() != self.dimension {
            return Err(GeometryError::DimensionMismatch { expected: self.dimension, found: v.len() });
        }
        let mut out = v.to_vec();
        for q in &self.basis {
            let c = dot(q, v);
            out.iter_mut().zip(q).for_each(|(o, qi)| *o -= c * qi);
        }
        Ok(out)
    }

    /// Dense `3N x 3N` projector matrix, row-major.
    pub fn matrix(&self) -> Vec<f64> {
        let n = self.dimension;
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            p[i * n + i] = 1.0;
        }
        for q in &self.basis {
            for i in 0..n {
                for j in 0..n {
                    p[i * n + j] -= q[i] * q[j];
                }
            }
        }
        p
    }
}

/// Rigid-motion basis: three translations plus the rotation generators
/// `e_α × (r_i − r̄)`, orthonormalized. Generators shorter than
/// `1e-8·‖coords‖` (collinear or single-atom geometries) are dropped.
pub fn rigid_basis(conf: &Conformation) -> RigidProjector {
    let n = conf.len();
    let dim = 3 * n;
    let scale = norm(&conf.flat_coords()).max(norm(&flatten(&centered(&conf.coords))));
    let threshold = 1e-8 * scale;

    let mut candidates: Vec<Vec<f64>> = Vec::with_capacity(6);
    for a in 0..3 {
        let mut t = vec![0.0; dim];
        for i in 0..n {
            t[3 * i + a] = 1.0;
        }
        candidates.push(t);
    }
    let rel = centered(&conf.coords);
    for a in 0..3 {
        let mut e = [0.0; 3];
        e[a] = 1.0;
        let g = flatten(&rel.iter().map(|r| cross(&e, r)).collect::<Vec<_>>());
        if norm(&g) > threshold && norm(&g) > 0.0 {
            candidates.push(g);
        }
    }

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(6);
    for mut c in candidates {
        let original = norm(&c);
        // Two passes of modified Gram–Schmidt keep orthonormality near 1e-15.
        for _ in 0..2 {
            for q in &basis {
                let proj = dot(q, &c);
                c.iter_mut().zip(q).for_each(|(x, qi)| *x -= proj * qi);
            }
        }
        let residual = norm(&c);
        if residual > 1e-8 * original {
            basis.push(c.into_iter().map(|x| x / residual).collect());
        }
    }
    RigidProjector { basis, dimension: dim }
}

/// `P v` for the projector built at `proj`'s reference geometry.
pub fn project_nonrigid(proj: &RigidProjector, v: &[f64]) -> Result<Vec<f64>, GeometryError> {
    proj.project(v)
}

/// Clean, noised and reconstruction coordinates sharing one noise draw.
///
/// `noised − clean == epsilon` and `rec − clean == lambda·epsilon` hold
/// bitwise, element by element.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseTriple {
    pub clean: Vec<Vec3>,
    pub noised: Vec<Vec3>,
    pub rec: Vec<Vec3>,
    pub epsilon: Vec<Vec3>,
    pub sigma: f64,
    pub lambda: f64,
}

/// One coordinate of the triple. The Gaussian draw is nudged by a relative
/// `k·2⁻⁴⁰` (first `k` that works) until both identities are exact in
/// floating point; the nudge is far below any statistical resolution.
fn exact_component(clean: f64, draw: f64, lambda: f64) -> (f64, f64, f64) {
    for k in 0..4096 {
        let t = draw * (1.0 + k as f64 * 2f64.powi(-40));
        let noised = clean + t;
        let eps = noised - clean;
        if clean + eps != noised {
            continue;
        }
        let scaled = lambda * eps;
        let rec = clean + scaled;
        if rec - clean == scaled {
            return (noised, rec, eps);
        }
    }
    // Zero noise satisfies both identities trivially.
    (clean, clean, 0.0)
}

pub fn sample_noise_triple(conf: &Conformation, sigma: f64, lambda: f64, seed: u64) -> Result<NoiseTriple, GeometryError> {
    if !(sigma > 0.0 && lambda > 0.0 && sigma.is_finite() && lambda.is_finite()) {
        return Err(GeometryError::InvalidNoise { sigma, lambda });
    }
    let mut rng = Rng::new(seed);
    let n = conf.len();
    let (mut noised, mut rec, mut epsilon) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for r in &conf.coords {
        let mut nr = [0.0; 3];
        let mut rr = [0.0; 3];
        let mut er = [0.0; 3];
        for a in 0..3 {
            let (x, y, e) = exact_component(r[a], sigma * rng.gaussian(), lambda);
            nr[a] = x;
            rr[a] = y;
            er[a] = e;
        }
        noised.push(nr);
        rec.push(rr);
        epsilon.push(er);
    }
    Ok(NoiseTriple { clean: conf.coords.clone(), noised, rec, epsilon, sigma, lambda })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conf(coords: Vec<Vec3>) -> Conformation {
        let z = vec![6; coords.len()];
        Conformation::new(z, coords).unwrap()
    }

    fn random_coords(rng: &mut Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| [rng.gaussian(), rng.gaussian(), rng.gaussian()]).collect()
    }

    fn det(m: &Mat3) -> f64 {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    #[test]
    fn validates_input() {
        assert_eq!(Conformation::new(vec![], vec![]), Err(GeometryError::Empty));
        assert_eq!(
            Conformation::new(vec![1, 0], vec![[0.0; 3]; 2]),
            Err(GeometryError::InvalidAtomicNumber { index: 1 })
        );
        assert_eq!(Conformation::new(vec![1], vec![[f64::NAN, 0.0, 0.0]]), Err(GeometryError::NonFinite));
    }

    #[test]
    fn centering_examples() {
        let c = center(&conf(vec![[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]));
        assert_eq!(c.coords(), &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let again = center(&c);
        assert_eq!(again.coords(), c.coords());
        assert_eq!(center(&conf(vec![[5.0, 5.0, 5.0]])).coords(), &[[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn kabsch_recovers_exact_rigid_match() {
        let mut rng = Rng::new(1);
        for _ in 0..20 {
            let x = random_coords(&mut rng, 7);
            let rot = random_rotation(&mut rng);
            let t = [rng.gaussian(), rng.gaussian(), rng.gaussian()];
            let y = apply_rigid(&x, &rot, &t);
            let a = kabsch_align(&x, &y).unwrap();
            assert!(a.distance <= 1e-8, "{}", a.distance);
            assert!((det(&a.rotation) - 1.0).abs() < 1e-10);
            let back = apply_rigid(&y, &a.rotation, &a.translation);
            for (p, q) in back.iter().zip(&x) {
                for k in 0..3 {
                    assert!((p[k] - q[k]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn kabsch_stretched_diatomic() {
        // After centering both bonds lie on one axis; residual 0.5 per atom.
        let x = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let y = [[0.0, 0.0, 0.0], [0.0, 2.0, 0.0]];
        let d = kabsch_align(&x, &y).unwrap().distance;
        assert!((d - 0.5f64.sqrt()).abs() < 1e-12, "{d}");
    }

    #[test]
    fn kabsch_rejects_reflections() {
        let x = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]];
        let y: Vec<Vec3> = x.iter().map(|r| [-r[0], r[1], r[2]]).collect();
        let a = kabsch_align(&x, &y).unwrap();
        assert!((det(&a.rotation) - 1.0).abs() < 1e-10);
        assert!(a.distance > 0.1);
    }

    #[test]
    fn rigid_basis_column_counts() {
        let tri = conf(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.2, 0.3]]);
        let p = rigid_basis(&tri);
        assert_eq!(p.basis().len(), 6);
        assert_eq!(p.rank(), 3);
        let dimer = conf(vec![[0.0, 0.0, 0.0], [1.1, 0.0, 0.0]]);
        assert_eq!(rigid_basis(&dimer).basis().len(), 5);
        let atom = conf(vec![[5.0, 5.0, 5.0]]);
        assert_eq!(rigid_basis(&atom).basis().len(), 3);
        assert_eq!(rigid_basis(&atom).rank(), 0);
    }

    #[test]
    fn projector_annihilates_rigid_motions() {
        let mut rng = Rng::new(5);
        let c = conf(random_coords(&mut rng, 5));
        let p = rigid_basis(&c);
        let mut tx = vec![0.0; 15];
        for i in 0..5 {
            tx[3 * i] = 1.0;
        }
        assert!(norm(&p.project(&tx).unwrap()) < 1e-10);
        let rel = centered(c.coords());
        let spin = flatten(&rel.iter().map(|r| cross(&[0.3, -0.2, 0.9], r)).collect::<Vec<_>>());
        assert!(norm(&p.project(&spin).unwrap()) < 1e-10);
        assert!(p.project(&[0.0; 3]).is_err());
    }

    #[test]
    fn noise_triple_identities_are_bitwise() {
        let mut rng = Rng::new(11);
        let c = conf(random_coords(&mut rng, 9));
        for &lambda in &[1.0, 1.5, 0.7] {
            let t = sample_noise_triple(&c, 0.04, lambda, 3).unwrap();
            for i in 0..c.len() {
                for a in 0..3 {
                    assert_eq!(t.noised[i][a] - t.clean[i][a], t.epsilon[i][a]);
                    assert_eq!(t.rec[i][a] - t.clean[i][a], lambda * t.epsilon[i][a]);
                }
            }
            if lambda == 1.0 {
                assert_eq!(t.rec, t.noised);
            }
        }
    }

    #[test]
    fn noise_variance_matches_sigma() {
        let c = conf(vec![[0.1, 0.2, 0.3]; 33_334]);
        let t = sample_noise_triple(&c, 0.04, 1.0, 17).unwrap();
        let e = flatten(&t.epsilon);
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        let var = e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (e.len() - 1) as f64;
        assert!((var / 0.0016 - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn noise_parameters_must_be_positive() {
        let c = conf(vec![[0.0; 3]]);
        assert!(sample_noise_triple(&c, 0.0, 1.0, 0).is_err());
        assert!(sample_noise_triple(&c, 0.1, -1.0, 0).is_err());
    }
}
