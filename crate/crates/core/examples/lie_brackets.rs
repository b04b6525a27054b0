//! Brackets, Lie hull layers and the pointwise step of the Martinet fields.
//!
//! Run with `cargo run --example lie_brackets`.

use subeik::lie::LieHull;
use subeik::poly::lie_bracket;
use subeik::scenario::fields;

fn main() -> subeik::Result<()> {
    let sys = fields::martinet();
    for (j, f) in sys.fields().iter().enumerate() {
        println!("X{} = {f}", j + 1);
    }
    let b = lie_bracket(&sys.fields()[0], &sys.fields()[1])?;
    println!("[X1, X2] = {b}");

    let hull = LieHull::build(&sys, 4)?;
    for (k, layer) in hull.layers().iter().enumerate() {
        println!("layer {}: {} fields", k + 1, layer.len());
    }
    for x in [[0.5, 0.0, 0.0], [0.0, 0.3, -0.1], [2.0, 1.0, 1.0]] {
        let r = hull.step_at(&x)?;
        println!("step at {x:?}: {:?} (ranks {:?})", r.step, r.ranks_by_layer);
    }
    Ok(())
}
