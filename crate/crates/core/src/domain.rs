//! `Ω = {Φ < 0}` for a polynomial level-set function `Φ` inside a bounding box.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::poly::{CompiledPoly, Poly, TermLiteral, VectorFieldSystem};
use crate::tolerances::Tolerances;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeClass {
    Interior,
    BoundaryBand,
    Exterior,
}

impl NodeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeClass::Interior => "interior",
            NodeClass::BoundaryBand => "boundary_band",
            NodeClass::Exterior => "exterior",
        }
    }
}

/// A point of Γ with its outward unit normal and characteristic residual
/// `max_j |⟨X_j(x), ν(x)⟩|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub x: Vec<f64>,
    pub normal: Vec<f64>,
    pub char_residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DomainConfig {
    pub phi: Vec<TermLiteral>,
    pub bbox: Vec<[f64; 2]>,
}

#[derive(Clone, Debug)]
pub struct LevelSetDomain {
    phi: Poly,
    phi_c: CompiledPoly,
    grad_c: Vec<CompiledPoly>,
    bbox: Vec<[f64; 2]>,
}

impl LevelSetDomain {
    /// Builds the domain and checks, on a validation grid, that `∇Φ` does not
    /// vanish near `{Φ = 0}`, that `Ω` is non-empty, and that `Φ > 0` on the
    /// faces of the box.
    pub fn new(phi: Poly, bbox: Vec<[f64; 2]>, grad_floor: f64) -> Result<Self> {
        check_dim(phi.dim(), bbox.len())?;
        if bbox.iter().any(|[lo, hi]| !(hi > lo)) {
            return Err(Error::InvalidDomain(format!("degenerate bounding box {bbox:?}")));
        }
        let grad_c = phi.gradient().iter().map(Poly::compile).collect();
        let dom = LevelSetDomain {
            phi_c: phi.compile(),
            phi,
            grad_c,
            bbox,
        };
        dom.validate(grad_floor)?;
        Ok(dom)
    }

    pub fn from_config(cfg: &DomainConfig, grad_floor: f64) -> Result<Self> {
        let dim = cfg.bbox.len();
        LevelSetDomain::new(Poly::from_literal(dim, &cfg.phi)?, cfg.bbox.clone(), grad_floor)
    }

    pub fn to_config(&self) -> DomainConfig {
        DomainConfig {
            phi: self.phi.to_literal(),
            bbox: self.bbox.clone(),
        }
    }

    fn validate(&self, grad_floor: f64) -> Result<()> {
        let n = self.dim();
        let m: usize = match n {
            1 => 401,
            2 => 81,
            3 => 33,
            _ => 9,
        };
        let h: Vec<f64> = self.bbox.iter().map(|[lo, hi]| (hi - lo) / (m - 1) as f64).collect();
        let cell = linalg::norm(&h);
        let total = m.pow(n as u32);
        let mut any_inside = false;
        let mut idx = vec![0usize; n];
        let mut x = vec![0.0; n];
        for lin in 0..total {
            let mut r = lin;
            for k in 0..n {
                idx[k] = r % m;
                r /= m;
                x[k] = self.bbox[k][0] + idx[k] as f64 * h[k];
            }
            let v = self.phi(&x);
            if v < 0.0 {
                any_inside = true;
                if idx.iter().any(|&i| i == 0 || i == m - 1) {
                    return Err(Error::InvalidDomain(format!(
                        "Ω reaches the bounding box face at {x:?}"
                    )));
                }
            }
            let g = self.grad(&x);
            let gn = linalg::norm(&g);
            if v.abs() <= cell * gn.max(grad_floor) && gn <= grad_floor {
                return Err(Error::InvalidDomain(format!(
                    "|∇Φ| = {gn:e} below grad_floor near the boundary at {x:?}"
                )));
            }
        }
        if !any_inside {
            return Err(Error::InvalidDomain("Ω = {Φ < 0} is empty on the validation grid".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.bbox.len()
    }

    pub fn phi_poly(&self) -> &Poly {
        &self.phi
    }

    pub fn bbox(&self) -> &[[f64; 2]] {
        &self.bbox
    }

    pub fn diameter(&self) -> f64 {
        self.bbox
            .iter()
            .map(|[lo, hi]| (hi - lo) * (hi - lo))
            .sum::<f64>()
            .sqrt()
    }

    pub fn in_bbox(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.bbox).all(|(v, [lo, hi])| *v >= *lo && *v <= *hi)
    }

    #[inline]
    pub fn phi(&self, x: &[f64]) -> f64 {
        self.phi_c.eval(x)
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.grad_c.iter().map(|g| g.eval(x)).collect()
    }

    /// `Ω̄` membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.phi(x) <= 0.0
    }

    /// First-order signed distance `Φ / |∇Φ|`.
    pub fn signed_distance_estimate(&self, x: &[f64]) -> f64 {
        let g = linalg::norm(&self.grad(x));
        self.phi(x) / g
    }

    pub fn normal(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = self.grad(x);
        let gn = linalg::norm(&g);
        if gn == 0.0 {
            return Err(Error::Precondition(format!("∇Φ vanishes at {x:?}")));
        }
        Ok(g.into_iter().map(|v| v / gn).collect())
    }

    /// Sign of `Φ`, with a band `|Φ| ≤ band_tol · |∇Φ|` around Γ.
    pub fn inside(&self, x: &[f64], band_tol: f64) -> NodeClass {
        let v = self.phi(x);
        let g = linalg::norm(&self.grad(x));
        if v.abs() <= band_tol * g {
            NodeClass::BoundaryBand
        } else if v < 0.0 {
            NodeClass::Interior
        } else {
            NodeClass::Exterior
        }
    }

    /// Newton iteration along `∇Φ` until `|Φ| ≤ tol.proj_tol`.
    pub fn project_to_boundary(&self, x: &[f64], tol: &Tolerances) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let max_step = 0.25 * self.diameter();
        let mut y = x.to_vec();
        for _ in 0..=tol.max_newton {
            let v = self.phi(&y);
            if v.abs() <= tol.proj_tol {
                return Ok(y);
            }
            let g = self.grad(&y);
            let g2: f64 = g.iter().map(|a| a * a).sum();
            if g2.sqrt() <= tol.grad_floor {
                return Err(Error::Precondition(format!(
                    "|∇Φ| = {:e} too small to project from {y:?}",
                    g2.sqrt()
                )));
            }
            let mut scale = v / g2;
            let len = scale.abs() * g2.sqrt();
            if len > max_step {
                scale *= max_step / len;
            }
            for (yi, gi) in y.iter_mut().zip(&g) {
                *yi -= scale * gi;
            }
        }
        Err(Error::NonConvergence {
            what: "boundary projection",
            iterations: tol.max_newton,
            residual: self.phi(&y).abs(),
        })
    }

    /// Normal and characteristic residual at a point of Γ.
    pub fn boundary_point(&self, sys: &VectorFieldSystem, z: &[f64]) -> Result<BoundaryPoint> {
        check_dim(sys.dim(), z.len())?;
        let normal = self.normal(z)?;
        let char_residual = sys
            .pairings(z, &normal)
            .into_iter()
            .fold(0.0, |m, v| f64::max(m, v.abs()));
        Ok(BoundaryPoint {
            x: z.to_vec(),
            normal,
            char_residual,
        })
    }

    /// Seeds `seeds` quasi-random boundary samples and runs damped
    /// Gauss–Newton on `{Φ = 0, X_j Φ = 0 ∀j}` from each, keeping the
    /// converged, deduplicated solutions.
    pub fn characteristic_points(
        &self,
        sys: &VectorFieldSystem,
        seeds: usize,
        tol: &Tolerances,
    ) -> Result<Vec<BoundaryPoint>> {
        check_dim(self.dim(), sys.dim())?;
        if seeds == 0 {
            return Err(Error::Precondition("seeds must be at least 1".into()));
        }
        let n = self.dim();
        // F = (Φ, X_1Φ, …, X_NΦ) and its Jacobian, all exact polynomials
        let mut eqs = vec![self.phi.clone()];
        for f in sys.fields() {
            eqs.push(f.apply(&self.phi)?);
        }
        let eqs_c: Vec<CompiledPoly> = eqs.iter().map(Poly::compile).collect();
        let jac_c: Vec<Vec<CompiledPoly>> = eqs
            .iter()
            .map(|e| e.gradient().iter().map(Poly::compile).collect())
            .collect();
        let eval_f = |x: &[f64]| DVector::from_iterator(eqs_c.len(), eqs_c.iter().map(|e| e.eval(x)));
        let eval_j = |x: &[f64]| DMatrix::from_fn(eqs_c.len(), n, |r, c| jac_c[r][c].eval(x));

        let candidates: Vec<BoundaryPoint> = (0..seeds)
            .into_par_iter()
            .filter_map(|s| {
                let seed = halton_point(s + 17, &self.bbox);
                let mut x = self.project_to_boundary(&seed, tol).ok()?;
                let mut f = eval_f(&x);
                // roots of E can be highly degenerate (flat Φ), so tiny
                // singular values are kept and Newton is allowed to crawl
                for _ in 0..400 {
                    let j = eval_j(&x);
                    let svd = j.svd(true, true);
                    let smax = svd.singular_values.max();
                    let step = svd.solve(&f, 1e-30 * smax).ok()?;
                    let f0 = f.norm_squared();
                    let mut lambda = 1.0;
                    let mut accepted = false;
                    for _ in 0..30 {
                        let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a - lambda * d).collect();
                        let ft = eval_f(&trial);
                        if ft.norm_squared() < f0 || ft.norm_squared() == 0.0 {
                            x = trial;
                            f = ft;
                            accepted = true;
                            break;
                        }
                        lambda *= 0.5;
                    }
                    if !accepted || step.norm() * lambda < 1e-15 {
                        break;
                    }
                }
                let z = self.project_to_boundary(&x, tol).ok()?;
                if !self.in_bbox(&z) {
                    return None;
                }
                let bp = self.boundary_point(sys, &z).ok()?;
                (bp.char_residual <= tol.char_tol).then_some(bp)
            })
            .collect();

        let mut out: Vec<BoundaryPoint> = Vec::new();
        for c in candidates {
            if out.iter().all(|o| linalg::dist(&o.x, &c.x) > tol.dedup_radius) {
                out.push(c);
            }
        }
        Ok(out)
    }
}

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [usize; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

/// Halton point `i` scaled into the box.
pub fn halton_point(i: usize, bbox: &[[f64; 2]]) -> Vec<f64> {
    bbox.iter()
        .enumerate()
        .map(|(k, [lo, hi])| lo + (hi - lo) * radical_inverse(i, PRIMES[k % PRIMES.len()]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{domains, fields};

    fn unit_ball() -> LevelSetDomain {
        domains::ball(&[0.0, 0.0, 0.0], 1.0, 1.2)
    }

    #[test]
    fn inside_examples() {
        let d = unit_ball();
        assert_eq!(d.inside(&[0.0, 0.0, 0.0], 0.01), NodeClass::Interior);
        assert_eq!(d.inside(&[1.0, 0.0, 0.0], 0.01), NodeClass::BoundaryBand);
        assert_eq!(d.inside(&[2.0, 0.0, 0.0], 0.01), NodeClass::Exterior);
    }

    #[test]
    fn projection_examples() {
        let d = unit_ball();
        let tol = Tolerances::default();
        let p = d.project_to_boundary(&[0.9, 0.0, 0.0], &tol).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-10 && p[1] == 0.0 && p[2] == 0.0);
        assert!((d.normal(&p).unwrap()[0] - 1.0).abs() < 1e-12);
        let q = d.project_to_boundary(&[0.0, 0.0, -0.95], &tol).unwrap();
        assert!((q[2] + 1.0).abs() < 1e-10);
        assert!((d.normal(&q).unwrap()[2] + 1.0).abs() < 1e-12);
        // ∇Φ vanishes at the center
        assert!(d.project_to_boundary(&[0.0, 0.0, 0.0], &tol).is_err());
        // idempotent
        let again = d.project_to_boundary(&p, &tol).unwrap();
        assert!(linalg::dist(&again, &p) < tol.proj_tol);
    }

    #[test]
    fn rejects_bad_domains() {
        let x = Poly::var(2, 0);
        let y = Poly::var(2, 1);
        let phi = &(&(&x * &x) + &(&y * &y)) - &Poly::from_int(2, 1);
        // box too small to contain the disc
        assert!(LevelSetDomain::new(phi.clone(), vec![[-0.5, 0.5], [-2.0, 2.0]], 1e-6).is_err());
        // empty domain
        let empty = &(&(&x * &x) + &(&y * &y)) + &Poly::from_int(2, 1);
        assert!(LevelSetDomain::new(empty, vec![[-1.0, 1.0], [-1.0, 1.0]], 1e-6).is_err());
        assert!(LevelSetDomain::new(phi, vec![[-2.0, 2.0], [-2.0, 2.0]], 1e-6).is_ok());
    }

    #[test]
    fn heisenberg_ball_poles() {
        let d = unit_ball();
        let sys = fields::heisenberg();
        let tol = Tolerances::default();
        let mut pts = d.characteristic_points(&sys, 400, &tol).unwrap();
        pts.sort_by(|a, b| a.x[2].partial_cmp(&b.x[2]).unwrap());
        assert_eq!(pts.len(), 2, "{pts:?}");
        for (p, z) in pts.iter().zip([-1.0, 1.0]) {
            assert!(p.x[0].abs() < 1e-7 && p.x[1].abs() < 1e-7);
            assert!((p.x[2] - z).abs() < 1e-7);
            assert!(d.phi(&p.x).abs() <= tol.proj_tol);
            assert!(p.char_residual <= tol.char_tol);
            assert!((linalg::norm(&p.normal) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn martinet_patch_characteristic_point() {
        let d = domains::martinet_trap(0.5);
        let sys = fields::martinet();
        let pts = d.characteristic_points(&sys, 400, &Tolerances::default()).unwrap();
        // near (0, a, 0) the boundary is flat in x_1 to high order, so E is
        // numerically the curve x_2 = a − x_1² / (2(1 − x_1)) through it
        let near: Vec<_> = pts.iter().filter(|p| linalg::dist(&p.x, &[0.0, 0.5, 0.0]) < 0.05).collect();
        assert!(near.iter().any(|p| linalg::dist(&p.x, &[0.0, 0.5, 0.0]) < 1e-2), "{pts:?}");
        for p in near {
            let x1 = p.x[0];
            assert!((p.x[1] - (0.5 - x1 * x1 / (2.0 * (1.0 - x1)))).abs() < 1e-6, "{p:?}");
        }
        // the remaining points of E lie in the plane x_1 = 0
        let top = pts.iter().find(|p| p.x[2] > 0.5).unwrap();
        assert!(top.x[0].abs() < 1e-9 && (top.x[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn full_rank_system_has_no_characteristic_points() {
        let d = unit_ball();
        let sys = VectorFieldSystem::riemannian(3).unwrap();
        assert!(d.characteristic_points(&sys, 200, &Tolerances::default()).unwrap().is_empty());
    }
}
