//! Lie hull layers, the pointwise commutator step `k(x)`, `r_Ω`, and the
//! bracket-generating checks.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::poly::{lie_bracket, CompiledField, PolyVectorField, VectorFieldSystem};

/// Bracket layers of a system: `layers[0]` are the generators and
/// `layers[k]` holds the nonzero brackets `[B, X_j]` with `B ∈ layers[k-1]`.
#[derive(Clone, Debug)]
pub struct LieHull {
    system: VectorFieldSystem,
    layers: Vec<Vec<PolyVectorField>>,
    compiled: Vec<Vec<CompiledField>>,
    max_depth: usize,
    rank_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub point: Vec<f64>,
    pub ranks_by_layer: Vec<usize>,
    /// `None` when the fields do not span `ℝ^n` within the depth cap.
    pub step: Option<usize>,
}

impl StepReport {
    pub fn generated(&self) -> bool {
        self.step.is_some()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HormanderReport {
    pub holds: bool,
    /// Largest step over the sample, or the first failing point.
    pub worst: StepReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SbgcReport {
    pub holds: bool,
    pub tested: usize,
    /// `(point, v)` pairs where the weighted brackets failed to complete the span.
    pub failures: Vec<(Vec<f64>, Vec<f64>)>,
}

impl LieHull {
    pub fn build(system: &VectorFieldSystem, max_depth: usize) -> Result<Self> {
        if max_depth == 0 {
            return Err(Error::Precondition("max_depth must be at least 1".into()));
        }
        let mut layers: Vec<Vec<PolyVectorField>> = vec![system.fields().to_vec()];
        while layers.len() < max_depth {
            let prev = layers.last().expect("non-empty");
            let mut next: Vec<PolyVectorField> = Vec::new();
            for b in prev {
                for g in system.fields() {
                    let br = lie_bracket(b, g)?;
                    if !br.is_zero() && !next.contains(&br) {
                        next.push(br);
                    }
                }
            }
            let done = next.is_empty();
            layers.push(next);
            if done {
                // every deeper layer is empty as well
                while layers.len() < max_depth {
                    layers.push(Vec::new());
                }
            }
        }
        let compiled = layers
            .iter()
            .map(|l| l.iter().map(PolyVectorField::compile).collect())
            .collect();
        Ok(LieHull {
            system: system.clone(),
            layers,
            compiled,
            max_depth,
            rank_tol: 1e-9,
        })
    }

    pub fn with_rank_tol(mut self, rank_tol: f64) -> Self {
        self.rank_tol = rank_tol;
        self
    }

    pub fn system(&self) -> &VectorFieldSystem {
        &self.system
    }

    pub fn layers(&self) -> &[Vec<PolyVectorField>] {
        &self.layers
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    /// Ranks of the cumulative evaluated spans, stopping at the first layer
    /// that reaches `ℝ^n`.
    pub fn step_at(&self, x: &[f64]) -> Result<StepReport> {
        let n = self.system.dim();
        check_dim(n, x.len())?;
        let mut cols: Vec<f64> = Vec::new();
        let mut ranks = Vec::new();
        let mut step = None;
        for (k, layer) in self.compiled.iter().enumerate() {
            for f in layer {
                cols.extend(f.eval(x));
            }
            let m = DMatrix::from_column_slice(n, cols.len() / n, &cols);
            let r = linalg::rank(&m, self.rank_tol);
            ranks.push(r);
            if r == n {
                step = Some(k + 1);
                break;
            }
        }
        Ok(StepReport {
            point: x.to_vec(),
            ranks_by_layer: ranks,
            step,
        })
    }

    pub fn steps(&self, sample: &[Vec<f64>]) -> Result<Vec<StepReport>> {
        sample.par_iter().map(|x| self.step_at(x)).collect()
    }

    /// Bracket-generating check on a finite sample.
    pub fn hormander_check(&self, sample: &[Vec<f64>]) -> Result<HormanderReport> {
        if sample.is_empty() {
            return Err(Error::Precondition("empty sample".into()));
        }
        let reports = self.steps(sample)?;
        if let Some(fail) = reports.iter().find(|r| !r.generated()) {
            return Ok(HormanderReport {
                holds: false,
                worst: fail.clone(),
            });
        }
        let worst = reports
            .into_iter()
            .max_by_key(|r| r.step)
            .expect("non-empty sample");
        Ok(HormanderReport { holds: true, worst })
    }

    /// `r_Ω` estimated as the largest step over the sample.
    pub fn r_omega(&self, sample: &[Vec<f64>]) -> Result<usize> {
        let rep = self.hormander_check(sample)?;
        if !rep.holds {
            return Err(Error::Precondition(format!(
                "bracket generating condition fails at {:?}",
                rep.worst.point
            )));
        }
        Ok(rep.worst.step.expect("generated"))
    }

    /// `sqrt det(A Aᵀ)` for the evaluated fields `A` of the first `depth` layers.
    fn gram_root(&self, x: &[f64], depth: usize) -> f64 {
        let n = self.system.dim();
        let cols: Vec<f64> = self.compiled[..depth].iter().flatten().flat_map(|f| f.eval(x)).collect();
        let a = DMatrix::from_column_slice(n, cols.len() / n, &cols);
        (&a * a.transpose()).determinant().max(0.0).sqrt()
    }

    /// Newton iteration from `x` onto the set where the first `depth` layers
    /// stop spanning `ℝ^n`. `None` if it stalls away from that set.
    pub fn rank_drop_point(&self, x: &[f64], depth: usize) -> Result<Option<Vec<f64>>> {
        check_dim(self.system.dim(), x.len())?;
        let depth = depth.clamp(1, self.compiled.len());
        let scale = 1.0 + linalg::norm(x);
        let mut y = x.to_vec();
        for _ in 0..60 {
            let g = self.gram_root(&y, depth);
            if g <= 1e-14 * scale {
                return Ok(Some(y));
            }
            let eps = scale * (1e-7 * g.min(1.0)).max(1e-13);
            let grad: Vec<f64> = (0..y.len())
                .map(|i| {
                    let (mut a, mut b) = (y.clone(), y.clone());
                    a[i] += eps;
                    b[i] -= eps;
                    (self.gram_root(&a, depth) - self.gram_root(&b, depth)) / (2.0 * eps)
                })
                .collect();
            let g2 = linalg::dot(&grad, &grad);
            if !(g2 > 0.0) {
                return Ok(None);
            }
            for (yi, gi) in y.iter_mut().zip(&grad) {
                *yi -= g * gi / g2;
            }
            if !y.iter().all(|v| v.is_finite()) {
                return Ok(None);
            }
        }
        Ok(None)
    }

    /// `r_Ω` over the sample together with the sample pushed onto the
    /// rank-drop loci of the generic step; `keep` selects the points of Ω.
    /// Those loci have measure zero, so a plain sample never sees them.
    pub fn r_omega_refined(&self, sample: &[Vec<f64>], keep: impl Fn(&[f64]) -> bool + Sync) -> Result<usize> {
        let generic = self.r_omega(sample)?;
        let reports = self.steps(sample)?;
        let base = reports.iter().filter_map(|r| r.step).min().unwrap_or(generic);
        if base <= 1 {
            return Ok(generic);
        }
        let extra: Vec<usize> = sample
            .par_iter()
            .map(|x| -> Result<Option<usize>> {
                match self.rank_drop_point(x, base)? {
                    Some(y) if keep(&y) => Ok(self.step_at(&y)?.step),
                    _ => Ok(None),
                }
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        Ok(extra.into_iter().fold(generic, usize::max))
    }
}

/// Strong bracket generation at a single `(x, v)`:
/// `span{X_i(x)} + span{Σ_j v_j [X_j, X_i](x)}_i = ℝ^n`.
pub fn sbgc_at(sys: &VectorFieldSystem, x: &[f64], v: &[f64], rank_tol: f64) -> Result<bool> {
    let brackets = bracket_table(sys)?;
    sbgc_with_table(sys, &brackets, x, v, rank_tol)
}

fn bracket_table(sys: &VectorFieldSystem) -> Result<Vec<Vec<CompiledField>>> {
    // table[j][i] = [X_j, X_i]
    sys.fields()
        .iter()
        .map(|xj| {
            sys.fields()
                .iter()
                .map(|xi| Ok(lie_bracket(xj, xi)?.compile()))
                .collect()
        })
        .collect()
}

fn sbgc_with_table(
    sys: &VectorFieldSystem,
    table: &[Vec<CompiledField>],
    x: &[f64],
    v: &[f64],
    rank_tol: f64,
) -> Result<bool> {
    let n = sys.dim();
    let nf = sys.len();
    check_dim(n, x.len())?;
    check_dim(nf, v.len())?;
    let mut cols: Vec<f64> = Vec::with_capacity(2 * n * nf);
    for i in 0..nf {
        cols.extend(sys.eval_field(i, x));
    }
    for i in 0..nf {
        let mut w = vec![0.0; n];
        for (j, vj) in v.iter().enumerate() {
            for (wk, bk) in w.iter_mut().zip(table[j][i].eval(x)) {
                *wk += vj * bk;
            }
        }
        cols.extend(w);
    }
    let m = DMatrix::from_column_slice(n, 2 * nf, &cols);
    Ok(linalg::rank(&m, rank_tol) == n)
}

/// Strong bracket generation tested with `trials` random unit `v` per point.
pub fn sbgc_check<R: Rng>(
    sys: &VectorFieldSystem,
    sample: &[Vec<f64>],
    trials: usize,
    rank_tol: f64,
    rng: &mut R,
) -> Result<SbgcReport> {
    if trials == 0 {
        return Err(Error::Precondition("trials must be at least 1".into()));
    }
    let table = bracket_table(sys)?;
    let mut failures = Vec::new();
    let mut tested = 0;
    for x in sample {
        for _ in 0..trials {
            let v = random_unit(sys.len(), rng);
            tested += 1;
            if !sbgc_with_table(sys, &table, x, &v, rank_tol)? {
                failures.push((x.clone(), v));
            }
        }
    }
    Ok(SbgcReport {
        holds: failures.is_empty(),
        tested,
        failures,
    })
}

pub(crate) fn random_unit<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = linalg::norm(&v);
        if n > 1e-3 && n <= 1.0 {
            return v.into_iter().map(|a| a / n).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::fields;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn heisenberg_layers() {
        let sys = fields::heisenberg();
        let hull = LieHull::build(&sys, 2).unwrap();
        assert_eq!(hull.layers().len(), 2);
        let d3 = PolyVectorField::coordinate(3, 2);
        assert!(hull.layers()[1].contains(&d3));
        let one = LieHull::build(&sys, 1).unwrap();
        assert_eq!(one.layers().len(), 1);
        assert_eq!(one.layers()[0], sys.fields());
        assert!(LieHull::build(&sys, 0).is_err());
    }

    #[test]
    fn martinet_third_layer_has_2_d3() {
        let sys = fields::martinet();
        let hull = LieHull::build(&sys, 3).unwrap();
        let two_d3 = PolyVectorField::coordinate(3, 2).scale(&crate::poly::parse_rational("2").unwrap());
        assert!(hull.layers()[2].contains(&two_d3));
    }

    #[test]
    fn step_examples() {
        let h = LieHull::build(&fields::heisenberg(), 6).unwrap();
        let r = h.step_at(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(r.ranks_by_layer, vec![2, 3]);
        assert_eq!(r.step, Some(2));

        let m = LieHull::build(&fields::martinet(), 6).unwrap();
        assert_eq!(m.step_at(&[0.5, 0.0, 0.0]).unwrap().step, Some(2));
        assert_eq!(m.step_at(&[0.0, 0.0, 0.0]).unwrap().step, Some(3));
        assert_eq!(m.step_at(&[2.0, 0.0, 0.0]).unwrap().step, Some(3));
    }

    #[test]
    fn hormander_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sample: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let h = LieHull::build(&fields::heisenberg(), 6).unwrap();
        let rep = h.hormander_check(&sample).unwrap();
        assert!(rep.holds);
        assert_eq!(rep.worst.step, Some(2));
        assert_eq!(h.r_omega(&sample).unwrap(), 2);

        let m = LieHull::build(&fields::martinet(), 6).unwrap();
        let mut s2 = sample.clone();
        s2.push(vec![0.0, 0.0, 0.0]);
        let rep = m.hormander_check(&s2).unwrap();
        assert!(rep.holds);
        assert_eq!(rep.worst.step, Some(3));
        assert_eq!(m.r_omega(&s2).unwrap(), 3);
        let away: Vec<Vec<f64>> = sample
            .iter()
            .filter(|x| x[0].abs() > 1e-3 && (x[0] - 2.0).abs() > 1e-3)
            .cloned()
            .collect();
        assert_eq!(m.r_omega(&away).unwrap(), 2);

        // {∂1, ∂1} in the plane only spans one direction
        let d1 = PolyVectorField::coordinate(2, 0);
        let abelian = VectorFieldSystem::new(vec![d1.clone(), d1]).unwrap();
        let a = LieHull::build(&abelian, 6).unwrap();
        let rep = a.hormander_check(&[vec![0.1, 0.2]]).unwrap();
        assert!(!rep.holds);
        assert_eq!(rep.worst.step, None);
        assert!(a.r_omega(&[vec![0.1, 0.2]]).is_err());
        assert!(a.hormander_check(&[]).is_err());
    }

    #[test]
    fn refined_r_omega_finds_martinet_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sample: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..3).map(|_| rng.random_range(-0.9..2.9)).collect())
            .collect();
        let m = LieHull::build(&fields::martinet(), 6).unwrap();
        assert_eq!(m.r_omega(&sample).unwrap(), 2);
        assert_eq!(m.r_omega_refined(&sample, |_| true).unwrap(), 3);
        // both planes lie outside this slab
        assert_eq!(m.r_omega_refined(&sample, |x| x[0] > 0.5 && x[0] < 1.5).unwrap(), 2);

        let y = m.rank_drop_point(&[0.3, 0.1, -0.4], 2).unwrap().unwrap();
        assert!(y[0].abs() < 1e-10, "{y:?}");
        let h = LieHull::build(&fields::heisenberg(), 6).unwrap();
        assert_eq!(h.r_omega_refined(&sample, |_| true).unwrap(), 2);
    }

    #[test]
    fn sbgc_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sample: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let h = fields::heisenberg();
        assert!(sbgc_check(&h, &sample, 8, 1e-9, &mut rng).unwrap().holds);

        let m = fields::martinet();
        assert!(!sbgc_at(&m, &[0.0, 0.3, -0.2], &[0.0, 1.0], 1e-9).unwrap());
        assert!(!sbgc_check(&m, &[vec![0.0, 0.3, -0.2]], 4, 1e-9, &mut rng).unwrap().holds);

        let r = VectorFieldSystem::riemannian(3).unwrap();
        assert!(sbgc_at(&r, &[1.0, 2.0, 3.0], &[0.0, 0.0, 1.0], 1e-9).unwrap());
    }
}
