//! Reference values that are checked against an independent computation
//! rather than against the solver itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subeik::diagnostics::{default_radii, holder_fit};
use subeik::eikonal::{solve, Grid};
use subeik::extremal::singular_search;
use subeik::lie::LieHull;
use subeik::poly::{lie_bracket, CompiledField};
use subeik::scenario::{domains, fields, lookup};
use subeik::tolerances::Tolerances;

fn flow(f: &CompiledField, x: &[f64], t: f64) -> Vec<f64> {
    let steps = 16;
    let dt = t / steps as f64;
    let mut y = x.to_vec();
    let shift = |y: &[f64], k: &[f64], s: f64| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    for _ in 0..steps {
        let k1 = f.eval(&y);
        let k2 = f.eval(&shift(&y, &k1, dt / 2.0));
        let k3 = f.eval(&shift(&y, &k2, dt / 2.0));
        let k4 = f.eval(&shift(&y, &k3, dt));
        for i in 0..y.len() {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

// (φ^Y_ε ∘ φ^X_ε − φ^X_ε ∘ φ^Y_ε)(x) / ε², averaged over ±ε to drop the O(ε) term
fn flow_commutator(x: &CompiledField, y: &CompiledField, at: &[f64], eps: f64) -> Vec<f64> {
    let one = |e: f64| -> Vec<f64> {
        let a = flow(y, &flow(x, at, e), e);
        let b = flow(x, &flow(y, at, e), e);
        a.iter().zip(&b).map(|(u, v)| (u - v) / (e * e)).collect()
    };
    let (p, m) = (one(eps), one(-eps));
    p.iter().zip(&m).map(|(u, v)| 0.5 * (u + v)).collect()
}

#[test]
fn martinet_bracket_matches_flow_commutator() {
    let sys = fields::martinet();
    let (x1, x2) = (&sys.fields()[0], &sys.fields()[1]);
    let br = lie_bracket(x1, x2).unwrap();
    let (c1, c2) = (x1.compile(), x2.compile());
    let mut rng = ChaCha8Rng::seed_from_u64(86);
    for _ in 0..20 {
        let at: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
        let fd = flow_commutator(&c1, &c2, &at, 1e-3);
        // −∂₂ + 2x₁∂₃
        let want = [0.0, -1.0, 2.0 * at[0]];
        let sym = br.eval(&at).unwrap();
        for i in 0..3 {
            assert!((fd[i] - want[i]).abs() < 1e-4, "{at:?}: {fd:?}");
            assert_eq!(sym[i], want[i]);
        }
    }
}

#[test]
fn heisenberg_axis_is_slower_than_euclidean() {
    let tol = Tolerances::default();
    let ball = domains::ball(&[0.0; 3], 1.0, 1.15);
    let g = Grid::covering(&ball, 49).unwrap();
    let f = solve(&ball, &g, &fields::heisenberg(), &tol).unwrap();
    for s in [0.3, 0.5, 0.7, 0.9] {
        let t = f.value_at(&[0.0, 0.0, s]).unwrap();
        assert!(t > 1.0 - s + 0.1, "T(0,0,{s}) = {t}");
    }
}

#[test]
fn martinet_surrogate_point_is_below_lipschitz() {
    let tol = Tolerances::default();
    let trap = domains::martinet_trap(0.5);
    let hull = LieHull::build(&fields::martinet(), 6).unwrap();
    assert_eq!(hull.step_at(&[0.0, 0.5, 0.0]).unwrap().step, Some(3));
    let g = Grid::covering(&trap, 97).unwrap();
    let f = solve(&trap, &g, &fields::martinet(), &tol).unwrap();
    let fit = holder_fit(&f, &trap, &[0.0, 0.5, 0.0], &default_radii(&g)).unwrap();
    assert!(fit.exponent <= 0.75, "{fit:?}");
}

#[test]
fn oddpower_has_no_singular_arcs() {
    let sc = lookup("oddpower-k1").unwrap();
    let tol = &sc.tolerances;
    let e = sc.domain.characteristic_points(&sc.system, tol.char_seeds, tol).unwrap();
    assert!(!e.is_empty());
    // the characteristic set misses the x₃-axis
    assert!(e.iter().all(|z| z.x[0].abs() + z.x[1].abs() > 1e-3), "{e:?}");
    let diam = sc.domain.diameter();
    let arcs = singular_search(&sc.system, &sc.domain, &e, diam, tol.dt_rel * diam, tol).unwrap();
    assert!(arcs.is_empty());
}
