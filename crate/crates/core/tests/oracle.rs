mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slicing_marl::env::SlicingEnv;
use slicing_marl::queueing::RanMode;
use slicing_marl::Scenario;

use common::{ref_conflict, ref_step, RefParams, RefQueues};

fn check_trajectory(sc: &Scenario, seed: u64, steps: u64) {
    let mut env = SlicingEnv::new(sc, seed).unwrap();
    env.reset(0);
    let p = RefParams {
        u: sc.edge.cycles_to_bits,
        tau: sc.edge.tau,
        delta_t: sc.edge.delta_t,
        literal_ran: sc.ran_mode == RanMode::Literal,
    };
    let shares = sc.f_th();
    let mut refs = vec![RefQueues::default(); shares.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for step in 0..steps {
        let actions: Vec<f64> = shares.iter().map(|s| s * rng.random_range(0.0..2.0)).collect();
        let got = env.step(&actions).unwrap();
        let (conflict, eff) = ref_conflict(&actions, &shares, sc.edge.f_max);
        assert_eq!(conflict, got.conflict.conflict, "step {step}");
        for k in 0..shares.len() {
            let r = ref_step(&mut refs[k], got.arrivals[k].bits as f64, eff[k], sc.slices[k].channel.at(step), &p);
            let s = &got.states[k];
            let o = &got.outcomes[k];
            assert!((s.q_edge - refs[k].q_edge).abs() <= 1e-9, "q_edge step {step} slice {k}");
            assert!((s.q_ran - refs[k].q_ran).abs() <= 1e-9, "q_ran step {step} slice {k}");
            assert!((o.processed_edge - r.processed).abs() <= 1e-9);
            assert!((o.transmitted - r.transmitted).abs() <= 1e-9);
            assert!((o.latency_total - r.latency).abs() <= 1e-9, "latency step {step} slice {k}");
        }
    }
}

#[test]
fn desk_trajectory_matches_reference() {
    check_trajectory(&Scenario::desk(), 3, 600);
}

#[test]
fn paper_trajectory_matches_reference() {
    check_trajectory(&Scenario::paper(), 4, 600);
}

#[test]
fn literal_ran_trajectory_matches_reference() {
    let sc = Scenario::desk().with_source(|f| f.edge.ran_mode = RanMode::Literal).unwrap();
    check_trajectory(&sc, 5, 600);
}
