//! Singular arcs of the Martinet trap: search from `E`, then check the exact
//! arc `(0, t, 0)` by hand.

use subeik::extremal::{singular_search, verify_singular};
use subeik::scenario::{domains, fields, MARTINET_A};
use subeik::tolerances::Tolerances;

fn main() -> subeik::Result<()> {
    let tol = Tolerances::default();
    let sys = fields::martinet();
    let trap = domains::martinet_trap(MARTINET_A);
    let e = trap.characteristic_points(&sys, tol.char_seeds, &tol)?;
    println!("|E| = {}", e.len());

    let arcs = singular_search(&sys, &trap, &e, 1.0, 1e-3, &tol)?;
    for arc in &arcs {
        let rep = verify_singular(&sys, &trap, arc, &tol)?;
        println!(
            "arc {:?} -> {:?}, duration {:.4}: {}",
            arc.y[0],
            arc.y[arc.len() - 1],
            arc.duration(),
            rep.verdict
        );
    }
    Ok(())
}
