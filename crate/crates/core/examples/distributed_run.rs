//! Runs training with the bus served over TCP: the server and each agent
//! hold their own socket connection, and results match an in-process run.
//!
//! cargo run --release --example distributed_run

use slicing_marl::orchestrator::distributed::run_distributed;
use slicing_marl::orchestrator::{train, RunConfig};
use slicing_marl::{Result, Scenario, Variant};

fn main() -> Result<()> {
    let sc = Scenario::desk();
    let run = RunConfig::new(Variant::MaApplied, 11, 5, 100);

    let t = std::time::Instant::now();
    let remote = run_distributed(&sc, &run, "127.0.0.1:0", true)?;
    println!("socket run: {} episodes in {:.2?}", remote.records.len(), t.elapsed());
    for topic in remote.bus.topics() {
        println!("  {topic:<16} {} envelopes", remote.bus.high_water(&topic).unwrap_or(0));
    }

    let mut local = Vec::new();
    train(&sc, &run, |r| {
        local.push(r.clone());
        Ok(())
    })?;
    println!("records identical to in-process run: {}", local == remote.records);
    Ok(())
}
