//! Trains one variant on the desk preset and prints learning progress.
//!
//! cargo run --release --example train_variant -- [variant] [episodes] [seed]

use slicing_marl::orchestrator::{train, RunConfig};
use slicing_marl::{Scenario, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "ma-ib".into());
    let variant = Variant::parse(&name)?;
    let episodes: usize = args.next().map_or(Ok(200), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(1), |s| s.parse())?;

    let sc = Scenario::desk();
    let run = RunConfig::new(variant, seed, episodes, sc.run.steps);
    println!("{:>7} {:>7} {:>9} {:>8} {:>8} {:>9}", "episode", "eps", "conflict", "util", "reward", "latency");
    let out = train(&sc, &run, |r| {
        let s = r.summary();
        if s.episode % 20 == 0 || s.episode + 1 == episodes as u64 {
            println!(
                "{:>7} {:>7.3} {:>9.4} {:>8.4} {:>8.4} {:>9.5}",
                s.episode, s.epsilon, s.conflict_rate, s.mean_utilization, s.mean_reward, s.mean_latency
            );
        }
        Ok(())
    })?;
    let w = sc.metrics.final_window.min(episodes);
    println!(
        "final {w} episodes: conflict {:.4}, utilization {:.4}",
        out.final_mean(w, |s| s.conflict_rate),
        out.final_mean(w, |s| s.mean_utilization)
    );
    Ok(())
}
