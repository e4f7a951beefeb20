//! Samples stochastic arrivals for each slice profile, writes them as a
//! trace file and replays the trace through the environment.
//!
//! cargo run --release --example traffic_trace

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slicing_marl::env::SlicingEnv;
use slicing_marl::traffic::{load_trace, sample_arrivals, TraceSchema};
use slicing_marl::{Result, Scenario};

fn main() -> Result<()> {
    let sc = Scenario::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let steps = 100;

    let mut csv = String::from("step,slice,bits\n");
    for step in 0..steps {
        for (k, slice) in sc.slices.iter().enumerate() {
            let a = sample_arrivals(&slice.traffic, sc.edge.tau, &mut rng);
            writeln!(csv, "{step},{k},{}", a.bits).unwrap();
        }
    }
    for slice in &sc.slices {
        println!(
            "{:>6}: mean {:.0} bits per step",
            slice.name,
            slice.traffic.mean_bits(sc.edge.tau)
        );
    }

    let dir = std::env::temp_dir().join("slicing-trace-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("trace.csv");
    std::fs::write(&path, csv)?;
    let trace = load_trace(&path, TraceSchema { granularity: sc.edge.tau })?;
    println!("wrote {} rows to {}", trace.len(), path.display());

    let replay = sc.with_source(|f| f.traffic.trace_path = Some(path.clone()))?;
    let mut a = SlicingEnv::new(&replay, 1)?;
    let mut b = SlicingEnv::new(&replay, 2)?;
    a.reset(0);
    b.reset(0);
    let shares = sc.f_th();
    for _ in 0..steps {
        let (x, y) = (a.step(&shares)?, b.step(&shares)?);
        assert_eq!(x.arrivals, y.arrivals, "trace replay ignores the seed");
    }
    println!("replayed {steps} steps; arrivals identical across seeds");
    Ok(())
}
