//! Trains all four variants on shared seeds and prints the final-window
//! summary table plus the per-episode conflict grid.
//!
//! cargo run --release --example compare_variants -- [episodes] [seeds]

use slicing_marl::orchestrator::compare;
use slicing_marl::{Scenario, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let episodes: usize = args.next().map_or(Ok(150), |s| s.parse())?;
    let n_seeds: u64 = args.next().map_or(Ok(2), |s| s.parse())?;
    let sc = Scenario::desk();
    let seeds: Vec<u64> = (1..=n_seeds).collect();

    let cmp = compare(&sc, &Variant::ALL, &seeds, episodes, sc.run.steps, |o| {
        eprintln!("done {} seed {}", o.config.variant, o.config.seed);
    })?;
    println!("{}", cmp.summary_table());

    let path = std::env::temp_dir().join("slicing-compare-grid.csv");
    cmp.write_grid(std::fs::File::create(&path)?)?;
    println!("conflict grid written to {}", path.display());
    Ok(())
}
