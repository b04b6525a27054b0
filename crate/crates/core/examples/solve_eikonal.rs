//! Solves `T` for the Heisenberg fields on the unit ball and prints a few
//! values along the vertical axis. Pass a grid size to change the
//! resolution (default 49).

use subeik::eikonal::{solve, Grid};
use subeik::scenario::{domains, fields};
use subeik::tolerances::Tolerances;

fn main() -> subeik::Result<()> {
    let m: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(49);
    let tol = Tolerances::default();
    let ball = domains::ball(&[0.0; 3], 1.0, 1.15);
    let grid = Grid::covering(&ball, m)?;
    let f = solve(&ball, &grid, &fields::heisenberg(), &tol)?;
    let s = f.stats();
    println!("{m}^3 grid, h = {:.4}: {} sweeps, converged {}", grid.max_spacing(), s.sweeps, s.converged);
    for z in [0.0, 0.25, 0.5, 0.75, 0.95] {
        println!("T(0, 0, {z:.2}) = {:.4}", f.value_at(&[0.0, 0.0, z]).unwrap_or(f64::NAN));
    }
    Ok(())
}
