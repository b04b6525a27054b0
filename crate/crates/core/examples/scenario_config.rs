//! Writes a built-in scenario as a JSON config, edits it, and loads it back
//! the way `subeik check` does.

use subeik::pipeline::check_config;
use subeik::scenario::lookup;

fn main() -> subeik::Result<()> {
    let mut cfg = lookup("martinet-convex")?.to_config();
    cfg.name = "martinet-convex-coarse".into();
    cfg.grid = 25;
    let text = serde_json::to_string_pretty(&cfg)?;
    let path = std::env::temp_dir().join("martinet-convex-coarse.json");
    std::fs::write(&path, &text)?;
    let sc = check_config(&path)?;
    println!("{} ({} bytes): grid {}, {} expectations", sc.name, text.len(), sc.grid, sc.expected.len());
    Ok(())
}
