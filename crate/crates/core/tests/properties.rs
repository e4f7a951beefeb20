use proptest::prelude::*;

use slicing_marl::agent::Observation;
use slicing_marl::bus::wire::{decode_wire, encode_wire};
use slicing_marl::bus::{Envelope, Payload};
use slicing_marl::env::SlicingEnv;
use slicing_marl::queueing::{detect_conflict, step_edge_queue, step_ran_queue, EdgeConfig, EdgeStep, QueueState, RanMode};
use slicing_marl::Scenario;

fn cfg() -> EdgeConfig {
    EdgeConfig {
        f_max: 40.0,
        cycles_to_bits: 1e-4,
        tau: 0.01,
        delta_t: 0.01,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn queues_stay_non_negative(
        q_edge in 0.0..1e6f64,
        q_ran in 0.0..1e6f64,
        arrival in 0.0..1e5f64,
        f in 0.0..40.0f64,
        channel in 0.0..1e8f64,
        literal in any::<bool>(),
    ) {
        let c = cfg();
        let s = QueueState { q_edge, q_ran, ..QueueState::default() };
        let (mid, processed) = step_edge_queue(&s, arrival, f, &c).unwrap();
        let mode = if literal { RanMode::Literal } else { RanMode::Corrected };
        let edge = EdgeStep { processed, capacity: c.edge_capacity_bits(f) };
        let (next, sent) = step_ran_queue(&mid, edge, channel, &c, mode);
        prop_assert!(next.q_edge >= 0.0 && next.q_ran >= 0.0);
        prop_assert!(processed >= 0.0 && processed <= q_edge);
        prop_assert!(sent >= 0.0 && sent <= q_ran);
    }

    #[test]
    fn effective_allocations_fit_the_server(
        factors in proptest::collection::vec(0.0..3.0f64, 3),
        seed in 0u64..1000,
    ) {
        let sc = Scenario::desk();
        let mut env = SlicingEnv::new(&sc, seed).unwrap();
        env.reset(0);
        let requested: Vec<f64> = sc.f_th().iter().zip(&factors).map(|(s, x)| s * x).collect();
        let out = env.step(&requested).unwrap();
        let total: f64 = out.effective.iter().sum();
        prop_assert!(total <= sc.edge.f_max * (1.0 + 1e-12), "{:?}", out.effective);
        let info = detect_conflict(&requested, &sc.f_th(), sc.edge.f_max).unwrap();
        prop_assert_eq!(info.conflict, requested.iter().sum::<f64>() > sc.edge.f_max * (1.0 + 1e-12));
    }

    #[test]
    fn observation_envelopes_round_trip(
        topic in "[a-z./]{1,16}",
        sender in "\\PC{0,12}",
        step in any::<u64>(),
        seq in any::<u64>(),
        slice in 0usize..16,
        traffic in proptest::num::f64::NORMAL | proptest::num::f64::ZERO,
        gap in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL,
    ) {
        let mut env = Envelope::new(topic, sender, step, Payload::Observation {
            slice,
            obs: Observation { norm_traffic: traffic, cpu_gap: gap },
        });
        env.seq = seq;
        prop_assert_eq!(decode_wire(&encode_wire(&env)).unwrap(), env);
    }
}
