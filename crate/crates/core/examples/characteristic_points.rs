//! Characteristic boundary points `E` of a few domains.

use subeik::scenario::{builtin_scenarios, domains, fields};
use subeik::tolerances::Tolerances;

fn main() -> subeik::Result<()> {
    let tol = Tolerances::default();
    let ball = domains::ball(&[0.0; 3], 1.0, 1.15);
    let poles = ball.characteristic_points(&fields::heisenberg(), 128, &tol)?;
    println!("heisenberg on the unit ball:");
    for z in &poles {
        println!("  {:?}  residual {:.1e}", z.x, z.char_residual);
    }

    for sc in builtin_scenarios() {
        let e = sc.domain.characteristic_points(&sc.system, tol.char_seeds, &tol)?;
        println!("{:<16} |E| = {}", sc.name, e.len());
    }
    Ok(())
}
