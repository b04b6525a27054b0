//! Symplectic test on `Char`: the Heisenberg characteristic set is
//! symplectic everywhere, the Martinet one degenerates over `x1 ∈ {0, 2}`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use subeik::charset::{sample_char_points, symplectic_test, PhasePoint};
use subeik::scenario::{domains, fields};
use subeik::tolerances::Tolerances;

fn main() -> subeik::Result<()> {
    let tol = Tolerances::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let h = fields::heisenberg();
    let ball = domains::ball(&[0.0; 3], 1.0, 1.15);
    let pts = sample_char_points(&h, &ball, 50, tol.rank_tol, &mut rng);
    let ok = pts
        .iter()
        .filter(|rho| symplectic_test(&h, rho, tol.char_tol, tol.rank_tol).is_ok_and(|r| r.symplectic))
        .count();
    println!("heisenberg: {ok}/{} sampled points symplectic", pts.len());

    let m = fields::martinet();
    for x1 in [0.0, 0.5, 1.0, 2.0] {
        // p annihilates X1 = ∂1 and X2 = (1 − x1)∂2 + x1²∂3
        let rho = PhasePoint::new(vec![x1, 0.2, 0.1], vec![0.0, x1 * x1, x1 - 1.0]);
        let r = symplectic_test(&m, &rho, tol.char_tol, tol.rank_tol)?;
        println!(
            "martinet x1 = {x1}: codim {}, tangent {}, σ rank {} -> {}",
            r.codim, r.tangent_dim, r.omega_rank, r.symplectic
        );
    }
    Ok(())
}
