//! Upper bounds on `T` from simulated controls, compared with the grid.

use subeik::eikonal::{solve, Grid};
use subeik::extremal::{transfer_time, upper_bound_oracle, Control};
use subeik::scenario::{domains, fields, MARTINET_A};
use subeik::tolerances::Tolerances;

fn main() -> subeik::Result<()> {
    let tol = Tolerances::default();
    let sys = fields::martinet();
    let trap = domains::martinet_trap(MARTINET_A);

    // pushing along X2 from (0, b, 0) reaches Γ at (0, a, 0) after a − b
    let push = Control::constant(vec![0.0, 1.0], 1.0)?;
    let t = transfer_time(&sys, &trap, &[0.0, 0.3, 0.0], &push, 1e-3, &tol)?;
    println!("constant control: {t:.4} (a − b = {})", MARTINET_A - 0.3);

    let f = solve(&trap, &Grid::covering(&trap, 49)?, &sys, &tol)?;
    for b in [0.1, 0.2, 0.3, 0.4] {
        let x = [0.0, b, 0.0];
        let ub = upper_bound_oracle(&sys, &trap, &x, 32, 2.0, 1e-3, 1, &tol)?;
        println!("b = {b}: grid {:.4}, oracle {ub:.4}", f.value_at(&x).unwrap_or(f64::NAN));
    }
    Ok(())
}
