//! Trains the information-bottleneck message encoder on received-message
//! vectors and shows reconstructions before and after.
//!
//! cargo run --release --example ib_encoder

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slicing_marl::agent::ib::{all_combinations, IbEncoder};
use slicing_marl::Result;

fn accuracy(ib: &IbEncoder, inputs: &[Vec<u8>]) -> Result<f64> {
    let mut hits = 0;
    for x in inputs {
        hits += (ib.reconstruct(x)? == *x) as usize;
    }
    Ok(hits as f64 / inputs.len() as f64)
}

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (peers, messages) = (2, 3);
    let mut ib = IbEncoder::new(peers, messages, 2, 16, 1e-3, &mut rng);
    let inputs = all_combinations(peers, messages);
    println!("{} distinct inputs, reconstruction accuracy {:.2}", inputs.len(), accuracy(&ib, &inputs)?);

    for epoch in 0..=3000 {
        let batch: Vec<Vec<u8>> = (0..32).map(|_| inputs[rng.random_range(0..inputs.len())].clone()).collect();
        let loss = ib.train_step(&batch, 5e-3, &mut rng)?;
        if epoch % 500 == 0 {
            println!("step {epoch:>5}: loss {:.4}", loss.total);
        }
    }
    println!("reconstruction accuracy after training {:.2}", accuracy(&ib, &inputs)?);
    for x in inputs.iter().take(4) {
        println!("  {x:?} -> latent {:?}", ib.latent_mean(x)?.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
    }
    Ok(())
}
