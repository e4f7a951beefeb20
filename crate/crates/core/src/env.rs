//! The multi-slice edge environment.
//!
//! A step takes one requested allocation per slice, evaluates the conflict
//! predicate on the joint request, clamps violators to their isolation
//! share, and then for every slice in index order: samples arrivals, steps
//! the edge queue, steps the RAN queue, updates the running sums and reads
//! off latency and utilization.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::Observation;
use crate::config::Scenario;
use crate::error::{Error, Result};
use crate::queueing::{
    detect_conflict, latency, step_edge_queue, step_ran_queue, utilization_slice, ConflictInfo, EdgeStep,
    QueueState, StepOutcome, GIGA,
};
use crate::traffic::{load_trace, sample_arrivals, ArrivalSample, TraceReplay, TraceSchema};

/// Everything produced by one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    /// Step index within the episode.
    pub step: u64,
    pub requested: Vec<f64>,
    /// Allocations after clamping violators, Gcycle/s.
    pub effective: Vec<f64>,
    pub conflict: ConflictInfo,
    pub arrivals: Vec<ArrivalSample>,
    pub outcomes: Vec<StepOutcome>,
    /// Queue states after the step.
    pub states: Vec<QueueState>,
    /// `sum(phi) / (U * sum(a_eff))`.
    pub system_utilization: f64,
}

#[derive(Debug, Clone)]
pub struct SlicingEnv {
    scenario: Scenario,
    seed: u64,
    episode: u64,
    step: u64,
    rng: ChaCha8Rng,
    trace: Option<TraceReplay>,
    states: Vec<QueueState>,
    last_bits: Vec<u64>,
    last_effective: Vec<f64>,
}

impl SlicingEnv {
    pub fn new(scenario: &Scenario, seed: u64) -> Result<Self> {
        let trace = match &scenario.trace_path {
            Some(p) => Some(TraceReplay::new(&load_trace(
                p,
                TraceSchema {
                    granularity: scenario.edge.tau,
                },
            )?)),
            None => None,
        };
        let k = scenario.num_slices();
        let mut env = Self {
            scenario: scenario.clone(),
            seed,
            episode: 0,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            trace,
            states: vec![QueueState::default(); k],
            last_bits: vec![0; k],
            last_effective: scenario.f_th(),
        };
        env.reset(0);
        Ok(env)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn num_slices(&self) -> usize {
        self.states.len()
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn states(&self) -> &[QueueState] {
        &self.states
    }

    /// Empties the queues and reseeds the traffic stream for `episode`.
    /// The stream depends only on `(seed, episode)`, so every variant sees
    /// the same traffic.
    pub fn reset(&mut self, episode: u64) {
        self.episode = episode;
        self.step = 0;
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.rng.set_stream(episode + 1);
        self.states.iter_mut().for_each(|s| *s = QueueState::default());
        self.last_bits.iter_mut().for_each(|b| *b = 0);
        self.last_effective = self.scenario.f_th();
    }

    /// Per-slice observations from the previous step's arrivals and
    /// effective allocations.
    pub fn observations(&self) -> Vec<Observation> {
        let tau = self.scenario.edge.tau;
        self.scenario
            .slices
            .iter()
            .enumerate()
            .map(|(k, s)| Observation {
                norm_traffic: self.last_bits[k] as f64 / tau / s.norm_max,
                cpu_gap: s.f_th - self.last_effective[k],
            })
            .collect()
    }

    fn arrivals(&mut self) -> Vec<ArrivalSample> {
        let tau = self.scenario.edge.tau;
        let global = self.episode * self.scenario.run.steps as u64 + self.step;
        let mut out = Vec::with_capacity(self.num_slices());
        for (k, s) in self.scenario.slices.iter().enumerate() {
            out.push(match &self.trace {
                Some(t) => t.sample(global, k, s.traffic.packet_size, tau),
                None => sample_arrivals(&s.traffic, tau, &mut self.rng),
            });
        }
        out
    }

    pub fn step(&mut self, requested: &[f64]) -> Result<EnvStep> {
        let k = self.num_slices();
        if requested.len() != k {
            return Err(Error::Shape {
                expected: k,
                got: requested.len(),
            });
        }
        let sc = &self.scenario;
        let f_th = sc.f_th();
        let conflict = detect_conflict(requested, &f_th, sc.edge.f_max)?;
        let effective: Vec<f64> = requested
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                if sc.clamp_violators && conflict.is_violator(i) {
                    f_th[i]
                } else {
                    a
                }
            })
            .collect();

        let arrivals = self.arrivals();
        let sc = &self.scenario;
        let cfg = sc.edge;
        let mut outcomes = Vec::with_capacity(k);
        for i in 0..k {
            let bits = arrivals[i].bits as f64;
            let (after_edge, processed) = step_edge_queue(&self.states[i], bits, effective[i], &cfg)?;
            let edge = EdgeStep {
                processed,
                capacity: cfg.edge_capacity_bits(effective[i]),
            };
            let channel = sc.slices[i].channel.at(self.step);
            let (mut next, transmitted) = step_ran_queue(&after_edge, edge, channel, &cfg, sc.ran_mode);
            next.accumulate(bits);
            let (le, lr, l) = latency(&next, &cfg, sc.latency_mode)?;
            let phi = bits / cfg.tau;
            let utilization = slice_utilization(phi, effective[i], cfg.cycles_to_bits)?;
            outcomes.push(StepOutcome {
                processed_edge: processed,
                transmitted,
                latency_edge: le,
                latency_ran: lr,
                latency_total: l,
                utilization,
            });
            self.states[i] = next;
        }
        let total_phi: f64 = arrivals.iter().map(|a| a.bits as f64 / cfg.tau).sum();
        let total_alloc: f64 = effective.iter().sum();
        let system_utilization = slice_utilization(total_phi, total_alloc, cfg.cycles_to_bits)?;

        let out = EnvStep {
            step: self.step,
            requested: requested.to_vec(),
            effective: effective.clone(),
            conflict,
            arrivals: arrivals.clone(),
            outcomes,
            states: self.states.clone(),
            system_utilization,
        };
        self.last_bits = arrivals.iter().map(|a| a.bits).collect();
        self.last_effective = effective;
        self.step += 1;
        Ok(out)
    }
}

/// Per-slice utilization `phi / (U * a)` with `a` in Gcycle/s; a zero allocation with no
/// traffic counts as idle, with traffic as unbounded.
pub fn slice_utilization(phi: f64, a: f64, cycles_to_bits: f64) -> Result<f64> {
    if a == 0.0 {
        return Ok(if phi == 0.0 { 0.0 } else { f64::INFINITY });
    }
    utilization_slice(phi, a * GIGA, cycles_to_bits)
}

pub const STATE_DUMP_HEADER: &str =
    "step,slice,requested,effective,arrival_bits,processed,transmitted,q_edge,q_ran,cum_q_edge,cum_q_ran,cum_arrival_bits,latency";

/// Writes per-step, per-slice queue states as CSV.
pub fn write_state_dump<W: Write>(mut w: W, steps: &[EnvStep]) -> Result<()> {
    writeln!(w, "{STATE_DUMP_HEADER}")?;
    for s in steps {
        for (k, st) in s.states.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.step,
                k,
                s.requested[k],
                s.effective[k],
                s.arrivals[k].bits,
                s.outcomes[k].processed_edge,
                s.outcomes[k].transmitted,
                st.q_edge,
                st.q_ran,
                st.cum_q_edge,
                st.cum_q_ran,
                st.cum_arrival_bits,
                s.outcomes[k].latency_total
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queueing::RanMode;

    fn desk() -> Scenario {
        Scenario::desk()
    }

    #[test]
    fn zero_traffic_stays_empty() {
        let sc = desk()
            .with_source(|f| {
                f.traffic.mu = vec![0.0; 3];
                f.traffic.sigma = vec![0.0; 3];
            })
            .unwrap();
        let mut env = SlicingEnv::new(&sc, 1).unwrap();
        for t in 0..50 {
            let s = env.step(&[3.0 + t as f64 * 0.1, 20.0, 0.5]).unwrap();
            for o in &s.outcomes {
                assert_eq!(o.latency_total, 0.0);
            }
            for st in &s.states {
                assert_eq!((st.q_edge, st.q_ran), (0.0, 0.0));
            }
        }
    }

    #[test]
    fn action_count_mismatch_is_error() {
        let mut env = SlicingEnv::new(&desk(), 1).unwrap();
        assert!(matches!(env.step(&[1.0, 2.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn single_step_matches_hand_composition() {
        let sc = desk();
        let mut env = SlicingEnv::new(&sc, 9).unwrap();
        let warm = env.step(&[15.0, 15.0, 10.0]).unwrap();
        let before = env.states().to_vec();
        let s = env.step(&[5.0, 12.0, 4.0]).unwrap();
        let cfg = sc.edge;
        for k in 0..3 {
            let bits = s.arrivals[k].bits as f64;
            let cap = cfg.tau * s.effective[k] * GIGA * cfg.cycles_to_bits;
            let processed = before[k].q_edge.min(cap);
            let q_edge = (before[k].q_edge - cap).max(0.0) + bits;
            let radio = cfg.delta_t * sc.slices[k].channel.at(1);
            let q_ran = (before[k].q_ran - radio).max(0.0) + processed;
            assert_eq!(s.states[k].q_edge, q_edge);
            assert_eq!(s.states[k].q_ran, q_ran);
            assert_eq!(s.states[k].cum_q_edge, warm.states[k].q_edge + q_edge);
            assert_eq!(s.states[k].steps, 2);
        }
    }

    #[test]
    fn violators_are_clamped() {
        let mut env = SlicingEnv::new(&desk(), 2).unwrap();
        let s = env.step(&[22.5, 15.0, 10.0]).unwrap();
        assert!(s.conflict.conflict);
        assert_eq!(s.conflict.violators, vec![0]);
        assert_eq!(s.effective, vec![15.0, 15.0, 10.0]);
        let obs = env.observations();
        assert_eq!(obs[0].cpu_gap, 0.0);
    }

    #[test]
    fn clamped_sum_fits_when_shares_fit() {
        use rand::Rng;
        let sc = desk();
        let mut env = SlicingEnv::new(&sc, 3).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let a: Vec<f64> = (0..3).map(|_| r.random_range(0.0..30.0)).collect();
            let s = env.step(&a).unwrap();
            if s.conflict.conflict {
                // non-violators are at or under their share
                assert!(s.effective.iter().sum::<f64>() <= sc.edge.f_max + 1e-9);
            }
        }
    }

    #[test]
    fn episodes_are_reproducible_and_share_traffic() {
        let sc = desk();
        let mut a = SlicingEnv::new(&sc, 4).unwrap();
        let mut b = SlicingEnv::new(&sc, 4).unwrap();
        a.reset(7);
        b.reset(7);
        for _ in 0..100 {
            let x = a.step(&[15.0, 15.0, 10.0]).unwrap();
            let y = b.step(&[5.0, 20.0, 3.0]).unwrap();
            assert_eq!(x.arrivals, y.arrivals);
        }
        a.reset(8);
        b.reset(7);
        let x = a.step(&[15.0, 15.0, 10.0]).unwrap();
        let y = b.step(&[15.0, 15.0, 10.0]).unwrap();
        assert_ne!(x.arrivals, y.arrivals);
    }

    #[test]
    fn first_observation_has_zero_gap() {
        let env = SlicingEnv::new(&desk(), 1).unwrap();
        for o in env.observations() {
            assert_eq!(o, Observation { norm_traffic: 0.0, cpu_gap: 0.0 });
        }
    }

    #[test]
    fn literal_mode_is_selectable() {
        let sc = desk()
            .with_source(|f| f.edge.ran_mode = RanMode::Literal)
            .unwrap();
        let mut env = SlicingEnv::new(&sc, 1).unwrap();
        // the literal inflow min(q_ran, U_edge) starts from an empty RAN queue
        // and never fills it
        for _ in 0..20 {
            let s = env.step(&[15.0, 15.0, 10.0]).unwrap();
            assert!(s.states.iter().all(|st| st.q_ran == 0.0));
        }
    }

    #[test]
    fn trace_replay_drives_arrivals() {
        let dir = tempfile::tempdir().unwrap();
        let trace = dir.path().join("t.csv");
        std::fs::write(&trace, "step,slice,bits\n0,0,3000\n1,0,1500\n0,2,400\n").unwrap();
        let sc = desk()
            .with_source(|f| f.traffic.trace_path = Some(trace.clone()))
            .unwrap();
        let mut env = SlicingEnv::new(&sc, 1).unwrap();
        let s0 = env.step(&[15.0, 15.0, 10.0]).unwrap();
        assert_eq!(s0.arrivals.iter().map(|a| a.bits).collect::<Vec<_>>(), vec![3000, 0, 400]);
        let s1 = env.step(&[15.0, 15.0, 10.0]).unwrap();
        assert_eq!(s1.arrivals[0].bits, 1500);
        let s2 = env.step(&[15.0, 15.0, 10.0]).unwrap();
        assert_eq!(s2.arrivals[0].bits, 3000);
    }

    #[test]
    fn state_dump_has_row_per_slice() {
        let mut env = SlicingEnv::new(&desk(), 1).unwrap();
        let steps: Vec<EnvStep> = (0..4).map(|_| env.step(&[15.0, 15.0, 10.0]).unwrap()).collect();
        let mut buf = Vec::new();
        write_state_dump(&mut buf, &steps).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 * 3);
        assert!(text.starts_with(STATE_DUMP_HEADER));
    }
}
