//! Symbol-level geometry: the Hamiltonian `h(x, p) = Σ ⟨X_j(x), p⟩²`, the
//! matrix `A(x)`, membership in the characteristic set, and a pointwise test
//! of whether `σ = Σ dp_k ∧ dx_k` restricted to `Char` is nondegenerate.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::LevelSetDomain;
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::poly::VectorFieldSystem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn new(x: Vec<f64>, p: Vec<f64>) -> Self {
        PhasePoint { x, p }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymplecticReport {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    /// Numerical rank of `{d(X_j(x,p))}_j`.
    pub codim: usize,
    pub tangent_dim: usize,
    pub omega_rank: usize,
    pub symplectic: bool,
    /// The `N` differentials are dependent, so `Char` is not cleanly cut out
    /// by them at this point.
    pub degenerate_cut: bool,
}

pub fn hamiltonian(sys: &VectorFieldSystem, x: &[f64], p: &[f64]) -> f64 {
    sys.pairings(x, p).iter().map(|v| v * v).sum()
}

/// `A(x) = Σ_j X_j(x) X_j(x)ᵀ`.
pub fn a_matrix(sys: &VectorFieldSystem, x: &[f64]) -> DMatrix<f64> {
    let m = sys.eval_matrix(x);
    &m * m.transpose()
}

/// Scale-invariant membership residual `h(x, p/|p|)`.
pub fn char_residual(sys: &VectorFieldSystem, rho: &PhasePoint) -> Result<f64> {
    check_dim(sys.dim(), rho.x.len())?;
    check_dim(sys.dim(), rho.p.len())?;
    let pn = linalg::norm(&rho.p);
    if pn == 0.0 {
        return Err(Error::Precondition("covector p must be nonzero".into()));
    }
    let unit: Vec<f64> = rho.p.iter().map(|v| v / pn).collect();
    Ok(hamiltonian(sys, &rho.x, &unit))
}

/// Rank of `σ` on the null space of the differentials `d(X_j(x,p))`.
pub fn symplectic_test(
    sys: &VectorFieldSystem,
    rho: &PhasePoint,
    char_tol: f64,
    rank_tol: f64,
) -> Result<SymplecticReport> {
    let res = char_residual(sys, rho)?;
    if res > char_tol {
        return Err(Error::NotCharacteristic(res));
    }
    let n = sys.dim();
    let nf = sys.len();
    let mut grads = DMatrix::zeros(nf, 2 * n);
    let mut buf = vec![0.0; n];
    for j in 0..nf {
        sys.jacobian_t_dot_into(j, &rho.x, &rho.p, &mut buf);
        let xj = sys.eval_field(j, &rho.x);
        for k in 0..n {
            grads[(j, k)] = buf[k];
            grads[(j, n + k)] = xj[k];
        }
    }
    let codim = linalg::rank(&grads, rank_tol);
    let basis = linalg::null_space(&grads, rank_tol);
    let tangent_dim = basis.ncols();
    let mut sigma = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        sigma[(k, n + k)] = -1.0;
        sigma[(n + k, k)] = 1.0;
    }
    let gram = basis.transpose() * sigma * &basis;
    // the basis is orthonormal, so an absolute cutoff is scale-free here
    let omega_rank = gram.singular_values().iter().filter(|&&s| s > rank_tol).count();
    Ok(SymplecticReport {
        x: rho.x.clone(),
        p: rho.p.clone(),
        codim,
        tangent_dim,
        omega_rank,
        symplectic: omega_rank == tangent_dim,
        degenerate_cut: codim < nf,
    })
}

/// Random points of `Char` over `Ω`: `x` uniform in `Ω`, `p` a random unit
/// vector of the annihilator of `span{X_j(x)}`. Points where the fields span
/// `ℝ^n` have no characteristic covector and are skipped.
pub fn sample_char_points<R: Rng>(
    sys: &VectorFieldSystem,
    dom: &LevelSetDomain,
    count: usize,
    rank_tol: f64,
    rng: &mut R,
) -> Vec<PhasePoint> {
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 200 * count.max(1) {
        attempts += 1;
        let x: Vec<f64> = dom.bbox().iter().map(|[lo, hi]| rng.random_range(*lo..*hi)).collect();
        if dom.phi(&x) >= 0.0 {
            continue;
        }
        let xt = sys.eval_matrix(&x).transpose();
        let ann = linalg::null_space(&xt, rank_tol);
        if ann.ncols() == 0 {
            continue;
        }
        let coef: Vec<f64> = (0..ann.ncols()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut p = vec![0.0; sys.dim()];
        for (c, col) in coef.iter().zip(ann.column_iter()) {
            for (pi, v) in p.iter_mut().zip(col.iter()) {
                *pi += c * v;
            }
        }
        let pn = linalg::norm(&p);
        if pn < 1e-6 {
            continue;
        }
        p.iter_mut().for_each(|v| *v /= pn);
        out.push(PhasePoint { x, p });
    }
    out
}

/// `σ` ranks at consecutive samples of a curve in `Char`. A constant
/// profile suggests the curve stays in one stratum; it certifies nothing.
pub fn omega_rank_profile(
    sys: &VectorFieldSystem,
    curve: &[PhasePoint],
    char_tol: f64,
    rank_tol: f64,
) -> Result<Vec<usize>> {
    curve
        .par_iter()
        .map(|rho| symplectic_test(sys, rho, char_tol, rank_tol).map(|r| r.omega_rank))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::fields;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hamiltonian_examples() {
        let h = fields::heisenberg();
        assert_eq!(hamiltonian(&h, &[1.0, 0.0, 0.0], &[0.0, -1.0, 1.0]), 0.0);
        let m = fields::martinet();
        assert_eq!(hamiltonian(&m, &[0.0, 0.4, -0.3], &[0.0, 0.0, 1.0]), 0.0);
        assert_eq!(hamiltonian(&m, &[0.3, 0.4, -0.3], &[0.0; 3]), 0.0);
    }

    #[test]
    fn a_matrix_examples() {
        let a = a_matrix(&fields::heisenberg(), &[0.0; 3]);
        let expect = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(a, expect);
        let r = VectorFieldSystem::riemannian(4).unwrap();
        assert_eq!(a_matrix(&r, &[0.1, 0.2, 0.3, 0.4]), DMatrix::identity(4, 4));
    }

    #[test]
    fn char_residual_examples() {
        let h = fields::heisenberg();
        let (x1, p3) = (0.7, -2.5);
        let rho = PhasePoint::new(vec![x1, 0.2, -0.4], vec![0.0, -x1 * p3, p3]);
        assert!(char_residual(&h, &rho).unwrap() < 1e-14);
        let odd = fields::oddpower(1);
        let rho = PhasePoint::new(vec![0.0, 0.0, 0.3], vec![0.0, 0.0, 1.0]);
        assert_eq!(char_residual(&odd, &rho).unwrap(), 0.0);
        // noncharacteristic: (1,0,0) on the unit sphere with ν = (1,0,0)
        let rho = PhasePoint::new(vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]);
        assert!(char_residual(&h, &rho).unwrap() > 0.5);
        let zero = PhasePoint::new(vec![0.0; 3], vec![0.0; 3]);
        assert!(char_residual(&h, &zero).is_err());
    }

    #[test]
    fn heisenberg_is_symplectic() {
        let h = fields::heisenberg();
        let rep =
            symplectic_test(&h, &PhasePoint::new(vec![0.0; 3], vec![0.0, 0.0, 1.0]), 1e-8, 1e-9).unwrap();
        assert_eq!((rep.codim, rep.tangent_dim, rep.omega_rank), (2, 4, 4));
        assert!(rep.symplectic && !rep.degenerate_cut);
    }

    #[test]
    fn martinet_planes_strata() {
        let m = fields::martinet();
        let v2 = symplectic_test(&m, &PhasePoint::new(vec![2.0, 0.0, 0.0], vec![0.0, 4.0, 1.0]), 1e-8, 1e-9)
            .unwrap();
        assert!(!v2.symplectic);
        assert_eq!(v2.omega_rank, 2);
        let v3 = symplectic_test(&m, &PhasePoint::new(vec![0.0, 0.3, 0.1], vec![0.0, 0.0, 1.0]), 1e-8, 1e-9)
            .unwrap();
        assert!(!v3.symplectic);
        let v1 = symplectic_test(&m, &PhasePoint::new(vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]), 1e-8, 1e-9)
            .unwrap();
        assert!(v1.symplectic);
    }

    #[test]
    fn oddpower_generic_point_is_symplectic() {
        let odd = fields::oddpower(1);
        let (x1, x2, p3): (f64, f64, f64) = (0.5, 0.3, 1.0);
        let rho = PhasePoint::new(vec![x1, x2, 0.2], vec![x2.powi(3) * p3, -x1.powi(3) * p3, p3]);
        assert!(symplectic_test(&odd, &rho, 1e-8, 1e-9).unwrap().symplectic);
    }

    #[test]
    fn rank_profiles_along_curves() {
        let odd = fields::oddpower(1);
        let axis: Vec<PhasePoint> = (0..=20)
            .map(|k| PhasePoint::new(vec![0.0, 0.0, -1.0 + 0.1 * k as f64], vec![0.0, 0.0, 1.0]))
            .collect();
        let ranks = omega_rank_profile(&odd, &axis, 1e-8, 1e-9).unwrap();
        assert!(ranks.windows(2).all(|w| w[0] == w[1]) && ranks[0] % 2 == 0, "{ranks:?}");

        // crossing x1 = 0 drops the Martinet rank from 4 to 2
        let m = fields::martinet();
        let across: Vec<PhasePoint> = (-2..=2)
            .map(|k| {
                let s = 0.25 * k as f64;
                PhasePoint::new(vec![s, 0.2, 0.1], vec![0.0, s * s, s - 1.0])
            })
            .collect();
        assert_eq!(omega_rank_profile(&m, &across, 1e-8, 1e-9).unwrap(), vec![4, 4, 2, 4, 4]);
    }

    #[test]
    fn off_char_is_rejected() {
        let h = fields::heisenberg();
        let rho = PhasePoint::new(vec![0.0; 3], vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            symplectic_test(&h, &rho, 1e-8, 1e-9),
            Err(Error::NotCharacteristic(_))
        ));
    }

    #[test]
    fn sampled_points_are_characteristic() {
        let h = fields::heisenberg();
        let dom = crate::scenario::domains::ball(&[0.0; 3], 1.0, 1.2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = sample_char_points(&h, &dom, 20, 1e-9, &mut rng);
        assert_eq!(pts.len(), 20);
        for rho in &pts {
            assert!(char_residual(&h, rho).unwrap() < 1e-20);
            assert!(dom.phi(&rho.x) < 0.0);
        }
    }
}
