//! Steps the three-slice environment with static isolation shares, then with
//! an over-subscribed request, and prints queue and latency trajectories.
//!
//! cargo run --release --example queue_simulation

use slicing_marl::env::SlicingEnv;
use slicing_marl::{Result, Scenario};

fn main() -> Result<()> {
    let sc = Scenario::desk();
    let mut env = SlicingEnv::new(&sc, 42)?;
    env.reset(0);
    let shares = sc.f_th();
    println!("isolation shares {shares:?} Gcycle/s, f_max {}", sc.edge.f_max);
    println!("{:>4} {:>8} {:>12} {:>12} {:>10} {:>6}", "step", "slice", "q_edge", "q_ran", "latency", "util");
    for step in 0..200 {
        let out = env.step(&shares)?;
        if step % 40 == 0 {
            for (k, (s, o)) in out.states.iter().zip(&out.outcomes).enumerate() {
                println!(
                    "{step:>4} {:>8} {:>12.0} {:>12.0} {:>10.5} {:>6.3}",
                    sc.slices[k].name, s.q_edge, s.q_ran, o.latency_total, o.utilization
                );
            }
        }
    }

    let greedy: Vec<f64> = shares.iter().map(|s| s * 1.5).collect();
    let out = env.step(&greedy)?;
    println!(
        "\nrequest {greedy:?}: conflict {}, violators {:?}, effective {:?}",
        out.conflict.conflict, out.conflict.violators, out.effective
    );
    Ok(())
}
