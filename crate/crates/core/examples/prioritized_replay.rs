//! Fills a prioritized replay buffer, assigns priorities and compares the
//! empirical sampling frequencies and importance weights with theory.
//!
//! cargo run --release --example prioritized_replay

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slicing_marl::agent::replay::PrioritizedBuffer;
use slicing_marl::agent::{Observation, Transition};
use slicing_marl::Result;

fn main() -> Result<()> {
    let obs = Observation { norm_traffic: 0.5, cpu_gap: 0.0 };
    let mut buf = PrioritizedBuffer::new(8, 0.6, 1e-6);
    let priorities = [3.0, 1.0, 1.0, 1.0, 0.5, 2.0];
    for (i, p) in priorities.iter().enumerate() {
        buf.push(Transition {
            obs,
            recv: vec![0, 0],
            action: i,
            message: 0,
            reward: 0.0,
            next_obs: obs,
            next_recv: vec![0, 0],
            terminal: false,
        });
        buf.set_priority(i, *p);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws = 50_000;
    let batch = buf.sample(draws, 1.0, &mut rng)?;
    let mut counts = vec![0usize; priorities.len()];
    for &i in &batch.indices {
        counts[i] += 1;
    }
    println!("{:>5} {:>8} {:>10} {:>10}", "index", "priority", "expected", "observed");
    for i in 0..priorities.len() {
        println!(
            "{i:>5} {:>8} {:>10.4} {:>10.4}",
            priorities[i],
            buf.probability(i),
            counts[i] as f64 / draws as f64
        );
    }
    let max_w = batch.weights.iter().cloned().fold(0.0, f64::max);
    println!("importance weights are normalized: max {max_w:.3}");
    Ok(())
}
