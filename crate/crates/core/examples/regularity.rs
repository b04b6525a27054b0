//! Regularity probes on two nested Heisenberg solutions: Hölder exponents at
//! a pole and at a noncharacteristic point, the semiconcavity constant near
//! the centre, and the sing map.

use subeik::diagnostics::{default_radii, holder_fit, semiconcavity_test, sing_map};
use subeik::eikonal::{solve, Grid};
use subeik::scenario::{domains, fields};
use subeik::tolerances::Tolerances;

fn main() -> subeik::Result<()> {
    let tol = Tolerances::default();
    let ball = domains::ball(&[0.0; 3], 1.0, 1.15);
    let sys = fields::heisenberg();
    let coarse = solve(&ball, &Grid::covering(&ball, 33)?, &sys, &tol)?;
    let fine = solve(&ball, &Grid::covering(&ball, 65)?, &sys, &tol)?;

    let radii = default_radii(fine.grid());
    for x0 in [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]] {
        let fit = holder_fit(&fine, &ball, &x0, &radii)?;
        println!("Hölder exponent at {x0:?}: {:.3} (r² {:.3})", fit.exponent, fit.r2);
    }
    let step = 2.0 * fine.grid().max_spacing();
    let c = semiconcavity_test(&fine, &ball, &[[-0.4, 0.4]; 3], step)?;
    println!("semiconcavity constant on [-0.4, 0.4]^3: {c:.3}");

    let margin = tol.sing_margin_cells * coarse.grid().max_spacing();
    let sm = sing_map(&coarse, &fine, &ball, tol.growth_factor, margin)?;
    println!("sing map: {} flagged nodes", sm.count());
    Ok(())
}
