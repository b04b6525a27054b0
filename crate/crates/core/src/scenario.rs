//! Built-in scenarios and the JSON scenario config.

use num::{BigInt, One};
use serde::{Deserialize, Serialize};

use crate::domain::{DomainConfig, LevelSetDomain};
use crate::error::{Error, Result};
use crate::poly::{Poly, PolyVectorField, Rational, TermLiteral, VectorFieldSystem};
use crate::tolerances::Tolerances;

/// Vector field systems used by the built-in scenarios.
pub mod fields {
    use super::*;

    /// `X_1 = ∂_1`, `X_2 = ∂_2 + x_1 ∂_3`.
    pub fn heisenberg() -> VectorFieldSystem {
        let x1 = Poly::var(3, 0);
        let x2 = PolyVectorField::new(vec![Poly::zero(3), Poly::from_int(3, 1), x1]).expect("dim 3");
        VectorFieldSystem::new(vec![PolyVectorField::coordinate(3, 0), x2]).expect("two fields")
    }

    /// `X_1 = ∂_1`, `X_2 = (1 − x_1) ∂_2 + x_1² ∂_3`.
    pub fn martinet() -> VectorFieldSystem {
        let x1 = Poly::var(3, 0);
        let x2 = PolyVectorField::new(vec![
            Poly::zero(3),
            &Poly::from_int(3, 1) - &x1,
            &x1 * &x1,
        ])
        .expect("dim 3");
        VectorFieldSystem::new(vec![PolyVectorField::coordinate(3, 0), x2]).expect("two fields")
    }

    /// `X_1 = ∂_1 − x_2^{2k+1} ∂_3`, `X_2 = ∂_2 + x_1^{2k+1} ∂_3`.
    pub fn oddpower(k: u32) -> VectorFieldSystem {
        let x1 = Poly::var(3, 0);
        let x2 = Poly::var(3, 1);
        let e = 2 * k + 1;
        let f1 = PolyVectorField::new(vec![Poly::from_int(3, 1), Poly::zero(3), -x2.pow(e)]).expect("dim 3");
        let f2 = PolyVectorField::new(vec![Poly::zero(3), Poly::from_int(3, 1), x1.pow(e)]).expect("dim 3");
        VectorFieldSystem::new(vec![f1, f2]).expect("two fields")
    }

    pub fn riemannian(dim: usize) -> VectorFieldSystem {
        VectorFieldSystem::riemannian(dim).expect("dim ≥ 2")
    }
}

/// Level-set domains used by the built-in scenarios.
pub mod domains {
    use super::*;

    pub(crate) fn r(v: f64) -> Rational {
        Rational::from_float(v).expect("finite")
    }

    fn shifted(dim: usize, axis: usize, c: f64) -> Poly {
        &Poly::var(dim, axis) - &Poly::constant(dim, r(c))
    }

    /// `Σ ((x_i − c_i)/r_i)² − 1`.
    pub fn ellipsoid_phi(center: &[f64], radii: &[f64]) -> Poly {
        let dim = center.len();
        let mut phi = Poly::from_int(dim, -1);
        for (i, (&c, &rad)) in center.iter().zip(radii).enumerate() {
            let s = shifted(dim, i, c);
            let w = Rational::one() / (r(rad) * r(rad));
            phi = &phi + &(&s * &s).scale(&w);
        }
        phi
    }

    /// Ball `|x − c| < radius` in a box of half-width `margin · radius`.
    pub fn ball(center: &[f64], radius: f64, margin: f64) -> LevelSetDomain {
        let radii = vec![radius; center.len()];
        ellipsoid(center, &radii, margin)
    }

    pub fn ellipsoid(center: &[f64], radii: &[f64], margin: f64) -> LevelSetDomain {
        let bbox = center
            .iter()
            .zip(radii)
            .map(|(c, rad)| [c - margin * rad, c + margin * rad])
            .collect();
        LevelSetDomain::new(ellipsoid_phi(center, radii), bbox, 1e-6).expect("valid ellipsoid")
    }

    /// Smooth bounded domain whose boundary near `(0, a, 0)` is the surface
    /// `x_3 = −(x_2 − a)²` up to eighth-order terms:
    ///
    /// `Φ = −x_3 − (x_2 − a)² + λ |x − (0, a, 0)|⁸`, `λ = 1 / (4 a⁶)`.
    ///
    /// `Ω` lies above the surface, so `(0, t, 0)` for `t < a` is interior and
    /// reaches Γ tangentially at the characteristic point `(0, a, 0)`.
    pub fn martinet_trap_phi(a: f64) -> Poly {
        let ar = r(a);
        let s1 = Poly::var(3, 0);
        let s2 = &Poly::var(3, 1) - &Poly::constant(3, ar.clone());
        let s3 = Poly::var(3, 2);
        let r2 = &(&(&s1 * &s1) + &(&s2 * &s2)) + &(&s3 * &s3);
        let a6 = (0..6).fold(Rational::one(), |acc, _| acc * &ar);
        let lambda = Rational::one() / (Rational::from_integer(BigInt::from(4)) * a6);
        let quad = &(-&s3) - &(&s2 * &s2);
        &quad + &r2.pow(4).scale(&lambda)
    }

    pub fn martinet_trap(a: f64) -> LevelSetDomain {
        // chosen so that the segment (0, t, 0) runs along grid nodes
        let bbox = vec![[-1.6 * a, 1.6 * a], [-0.6 * a, 2.6 * a], [-0.8 * a, 1.6 * a]];
        LevelSetDomain::new(martinet_trap_phi(a), bbox, 1e-6).expect("valid trap domain")
    }
}

/// A checkable claim about a scenario's run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expectation {
    HormanderHolds { value: bool },
    ROmega { value: usize },
    CharacteristicPoints { min: usize, max: Option<usize> },
    /// Every sampled point of `Char` passes (or fails) the symplectic test.
    SymplecticAll { value: bool },
    /// The symplectic verdict at one phase point.
    SymplecticAt { x: Vec<f64>, p: Vec<f64>, value: bool },
    SingularArcs { min: usize, max: Option<usize> },
    SingMapEmpty,
    /// Flagged nodes lie within `cells` grid cells of `{x_axis ∈ values}`.
    SingMapNearPlanes { axis: usize, values: Vec<f64>, cells: f64 },
    /// The sing map is nonempty and its nodes lie within `cells` fine-grid
    /// cells of some singular arc.
    SingMapNearArcs { cells: f64 },
    /// `|T_grid(point) − value| ≤ tol_cells · h + tol_abs`.
    TValue { point: Vec<f64>, value: f64, tol_cells: f64, tol_abs: f64 },
    /// `T = radius − |x − center|` on Ω̄ nodes within `tol_cells · h`.
    SphereDistance { center: Vec<f64>, radius: f64, tol_cells: f64 },
    /// `T_grid ≤ upper_bound_oracle + tol_cells · h` at random interior nodes.
    OracleSandwich { points: usize, tol_cells: f64 },
    Converged,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub system: VectorFieldSystem,
    pub domain: LevelSetDomain,
    pub grid: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
    pub expected: Vec<Expectation>,
}

/// On-disk scenario description.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// `system[j][i]` is component `i` of field `X_{j+1}`.
    pub system: Vec<Vec<Vec<TermLiteral>>>,
    pub domain: DomainConfig,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub expected: Vec<Expectation>,
}

fn default_name() -> String {
    "custom".into()
}

fn default_grid() -> usize {
    33
}

impl Scenario {
    pub fn from_config(cfg: ScenarioConfig) -> Result<Self> {
        let dim = cfg.domain.bbox.len();
        if dim == 0 {
            return Err(Error::Config("domain.bbox is empty".into()));
        }
        let system = VectorFieldSystem::from_literal(dim, &cfg.system)?;
        let domain = LevelSetDomain::from_config(&cfg.domain, cfg.tolerances.grad_floor)?;
        if cfg.grid < 8 {
            return Err(Error::Config(format!("grid resolution {} below 8", cfg.grid)));
        }
        Ok(Scenario {
            name: cfg.name,
            description: cfg.description,
            system,
            domain,
            grid: cfg.grid,
            seed: cfg.seed,
            tolerances: cfg.tolerances,
            expected: cfg.expected,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Scenario::from_config(cfg)
    }

    pub fn to_config(&self) -> ScenarioConfig {
        ScenarioConfig {
            name: self.name.clone(),
            description: self.description.clone(),
            system: self.system.to_literal(),
            domain: self.domain.to_config(),
            grid: self.grid,
            seed: self.seed,
            tolerances: self.tolerances.clone(),
            expected: self.expected.clone(),
        }
    }
}

pub const MARTINET_A: f64 = 0.5;

pub fn builtin_scenarios() -> Vec<Scenario> {
    let tol = Tolerances::default();
    let a = MARTINET_A;
    vec![
        Scenario {
            name: "riemann-disc".into(),
            description: "X_i = ∂_i on the unit disc; T is the distance to the circle".into(),
            system: fields::riemannian(2),
            domain: domains::ball(&[0.0, 0.0], 1.0, 1.15),
            grid: 129,
            seed: 1,
            tolerances: tol.clone(),
            expected: vec![
                Expectation::HormanderHolds { value: true },
                Expectation::ROmega { value: 1 },
                Expectation::CharacteristicPoints { min: 0, max: Some(0) },
                Expectation::SingularArcs { min: 0, max: Some(0) },
                Expectation::SphereDistance {
                    center: vec![0.0, 0.0],
                    radius: 1.0,
                    tol_cells: 3.0,
                },
                Expectation::OracleSandwich { points: 50, tol_cells: 3.0 },
                Expectation::SingMapEmpty,
                Expectation::Converged,
            ],
        },
        Scenario {
            name: "heisenberg-ball".into(),
            description: "Heisenberg fields ∂_1, ∂_2 + x_1 ∂_3 on the unit ball".into(),
            system: fields::heisenberg(),
            domain: domains::ball(&[0.0, 0.0, 0.0], 1.0, 1.15),
            grid: 49,
            seed: 2,
            tolerances: tol.clone(),
            expected: vec![
                Expectation::HormanderHolds { value: true },
                Expectation::ROmega { value: 2 },
                Expectation::CharacteristicPoints { min: 2, max: Some(2) },
                Expectation::SymplecticAll { value: true },
                Expectation::SingularArcs { min: 0, max: Some(0) },
                Expectation::SingMapEmpty,
                Expectation::OracleSandwich { points: 50, tol_cells: 3.0 },
                Expectation::Converged,
            ],
        },
        Scenario {
            name: "martinet-trap".into(),
            description: "Martinet-type fields with a boundary patch x_3 = -(x_2 - 1/2)^2 around (0, 1/2, 0)"
                .into(),
            system: fields::martinet(),
            domain: domains::martinet_trap(a),
            grid: 49,
            seed: 3,
            tolerances: tol.clone(),
            expected: vec![
                Expectation::HormanderHolds { value: true },
                Expectation::ROmega { value: 3 },
                Expectation::SingularArcs { min: 1, max: None },
                Expectation::TValue {
                    point: vec![0.0, 0.3, 0.0],
                    value: a - 0.3,
                    tol_cells: 5.0,
                    tol_abs: 0.02,
                },
                Expectation::TValue {
                    point: vec![0.0, 0.4, 0.0],
                    value: a - 0.4,
                    tol_cells: 5.0,
                    tol_abs: 0.02,
                },
                Expectation::SingMapNearArcs { cells: 3.0 },
                Expectation::OracleSandwich { points: 50, tol_cells: 3.0 },
                Expectation::Converged,
            ],
        },
        Scenario {
            name: "martinet-convex".into(),
            description: "Martinet-type fields on a convex ellipsoid".into(),
            system: fields::martinet(),
            domain: domains::ellipsoid(&[0.0, 0.5, 0.0], &[0.6, 0.7, 0.5], 1.15),
            grid: 49,
            seed: 4,
            tolerances: tol.clone(),
            expected: vec![
                Expectation::HormanderHolds { value: true },
                Expectation::ROmega { value: 3 },
                Expectation::CharacteristicPoints { min: 1, max: None },
                Expectation::SingularArcs { min: 0, max: Some(0) },
                Expectation::SingMapEmpty,
                Expectation::OracleSandwich { points: 50, tol_cells: 3.0 },
                Expectation::Converged,
            ],
        },
        Scenario {
            name: "oddpower-k1".into(),
            description: "X_1 = ∂_1 - x_2^3 ∂_3, X_2 = ∂_2 + x_1^3 ∂_3 on a ball centered off the x_3-axis".into(),
            system: fields::oddpower(1),
            domain: domains::ball(&[0.5, 0.0, 0.0], 1.0, 1.15),
            grid: 49,
            seed: 5,
            tolerances: tol.clone(),
            expected: vec![
                Expectation::HormanderHolds { value: true },
                Expectation::CharacteristicPoints { min: 1, max: None },
                Expectation::SingularArcs { min: 0, max: Some(0) },
                Expectation::OracleSandwich { points: 50, tol_cells: 3.0 },
                Expectation::Converged,
            ],
        },
        Scenario {
            name: "martinet-planes".into(),
            description: "Martinet-type fields on a ball crossing the planes x_1 = 0 and x_1 = 2".into(),
            system: fields::martinet(),
            domain: domains::ball(&[1.0, 0.0, 0.0], 1.5, 1.15),
            grid: 49,
            seed: 6,
            tolerances: tol,
            expected: vec![
                Expectation::HormanderHolds { value: true },
                Expectation::ROmega { value: 3 },
                Expectation::SymplecticAt {
                    x: vec![0.5, 0.2, 0.1],
                    p: vec![0.0, -0.5, 1.0],
                    value: true,
                },
                Expectation::SymplecticAt {
                    x: vec![2.0, 0.3, -0.2],
                    p: vec![0.0, 4.0, 1.0],
                    value: false,
                },
                Expectation::SymplecticAt {
                    x: vec![0.0, 0.3, 0.1],
                    p: vec![0.0, 0.0, 1.0],
                    value: false,
                },
                Expectation::SingMapNearPlanes {
                    axis: 0,
                    values: vec![0.0, 2.0],
                    cells: 3.0,
                },
                Expectation::OracleSandwich { points: 50, tol_cells: 3.0 },
                Expectation::Converged,
            ],
        },
    ]
}

pub fn lookup(name: &str) -> Result<Scenario> {
    builtin_scenarios()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::UnknownScenario(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookups() {
        let h = lookup("heisenberg-ball").unwrap();
        assert_eq!(h.system.fields(), fields::heisenberg().fields());
        assert_eq!(h.system.fields()[1].to_string(), "(1)∂2 + (x1)∂3");
        let m = lookup("martinet-trap").unwrap();
        assert_eq!(m.system.fields()[0], PolyVectorField::coordinate(3, 0));
        assert_eq!(m.system.fields()[1].to_string(), "(-x1 + 1)∂2 + (x1^2)∂3");
        assert!(matches!(lookup("unknown"), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn names_are_unique() {
        let all = builtin_scenarios();
        for (i, a) in all.iter().enumerate() {
            assert!(all[i + 1..].iter().all(|b| b.name != a.name));
        }
        for want in [
            "riemann-disc",
            "heisenberg-ball",
            "martinet-trap",
            "martinet-convex",
            "oddpower-k1",
            "martinet-planes",
        ] {
            assert!(all.iter().any(|s| s.name == want));
        }
    }

    #[test]
    fn trap_geometry() {
        let d = domains::martinet_trap(0.5);
        assert!(d.phi_poly().degree() <= 8);
        assert_eq!(d.phi(&[0.0, 0.5, 0.0]), 0.0);
        let nu = d.normal(&[0.0, 0.5, 0.0]).unwrap();
        assert!(nu[0].abs() < 1e-14 && nu[1].abs() < 1e-14 && (nu[2] + 1.0).abs() < 1e-14);
        for b in [0.3, 0.35, 0.4, 0.45] {
            assert!(d.phi(&[0.0, b, 0.0]) < 0.0);
        }
        // the patch agrees with x_3 = -(x_2 - a)^2 to high order
        for s in [-0.1f64, -0.05, 0.05, 0.1] {
            let v = d.phi(&[0.0, 0.5 + s, -s * s]);
            assert!(v.abs() < 20.0 * s.powi(8), "{s}: {v}");
        }
    }

    #[test]
    fn config_round_trip() {
        let s = lookup("martinet-convex").unwrap();
        let text = serde_json::to_string(&s.to_config()).unwrap();
        let back = Scenario::from_json(&text).unwrap();
        assert_eq!(back.system.fields(), s.system.fields());
        assert_eq!(back.domain.phi_poly(), s.domain.phi_poly());
        assert_eq!(back.expected, s.expected);
        assert!(Scenario::from_json("{\"system\": []}").is_err());
    }
}
