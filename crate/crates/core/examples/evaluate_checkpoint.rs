//! Trains briefly, saves one checkpoint per agent, reloads them and runs
//! greedy evaluation episodes. Prints the latency distribution.
//!
//! cargo run --release --example evaluate_checkpoint

use slicing_marl::agent::checkpoint::Checkpoint;
use slicing_marl::metrics::{cdf, quantile_below};
use slicing_marl::orchestrator::{evaluate, train, RunConfig};
use slicing_marl::{Result, Scenario, Variant};

fn main() -> Result<()> {
    let sc = Scenario::desk();
    let run = RunConfig::new(Variant::MaIb, 3, 120, sc.run.steps);
    let out = train(&sc, &run, |_| Ok(()))?;

    let dir = std::env::temp_dir().join("slicing-checkpoints");
    std::fs::create_dir_all(&dir)?;
    let mut paths = Vec::new();
    for ck in out.checkpoints() {
        let p = dir.join(format!("agent-{}.ckpt", ck.agent));
        ck.save(&p)?;
        paths.push(p);
    }
    println!("saved {} checkpoints under {}", paths.len(), dir.display());

    let loaded = paths.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>>>()?;
    let greedy = RunConfig::new(run.variant, run.seed, sc.run.eval_episodes, sc.run.steps);
    let records = evaluate(&sc, &greedy, &loaded)?;
    let latencies: Vec<f64> = records.iter().flat_map(|r| r.latencies()).collect();
    let c = cdf(&latencies)?;
    for th in [0.01, 0.05, 0.1, sc.metrics.latency_threshold] {
        println!("P(latency <= {th:>5} s) = {:.4}", quantile_below(&c, th));
    }
    let conflicts: usize = records.iter().map(|r| r.conflicts.iter().filter(|c| **c).count()).sum();
    println!("{} greedy episodes, {conflicts} conflicting steps", records.len());
    Ok(())
}
