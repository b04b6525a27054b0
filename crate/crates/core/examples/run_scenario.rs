// Runs a built-in scenario end to end and writes its artifacts.
//
//   cargo run --release --example run_scenario -- martinet-trap /tmp/out

use std::path::PathBuf;

use subeik::pipeline::{run, RunOptions};
use subeik::scenario::lookup;

fn main() -> subeik::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "heisenberg-ball".into());
    let out = args.next().map(PathBuf::from);
    let sc = lookup(&name)?;
    let a = run(&sc, &RunOptions { out: out.clone(), ..Default::default() });
    print!("{}", a.report.summary());
    if let Some(dir) = out {
        println!("artifacts in {}", dir.join(&sc.name).display());
    }
    std::process::exit(a.report.exit_code());
}
