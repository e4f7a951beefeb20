//! Two-stage Edge UPF / RAN CU queue arithmetic, latency, utilization,
//! conflict detection and rewards.
//!
//! CPU frequencies are expressed in Gcycle/s throughout; [`GIGA`] converts to
//! cycles/s when multiplying by the bits-per-cycle factor `U`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GIGA: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeConfig {
    /// Total CPU in Gcycle/s.
    pub f_max: f64,
    /// Bits processed per CPU cycle.
    pub cycles_to_bits: f64,
    /// Step length in seconds.
    pub tau: f64,
    /// Radio interval in seconds.
    pub delta_t: f64,
}

impl EdgeConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("edge.f_max", self.f_max),
            ("edge.cycles_to_bits", self.cycles_to_bits),
            ("edge.tau", self.tau),
            ("edge.delta_t", self.delta_t),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(key, format!("must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Bits the edge can process in one step at `f_alloc` Gcycle/s.
    pub fn edge_capacity_bits(&self, f_alloc: f64) -> f64 {
        self.tau * f_alloc * GIGA * self.cycles_to_bits
    }

    /// Bits the radio interface can send in one step at `capacity` bits/s.
    pub fn ran_capacity_bits(&self, capacity: f64) -> f64 {
        self.delta_t * capacity
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    pub q_edge: f64,
    pub q_ran: f64,
    pub cum_q_edge: f64,
    pub cum_q_ran: f64,
    pub cum_arrival_bits: f64,
    pub steps: u64,
}

impl QueueState {
    /// Folds the current backlogs and this step's arrivals into the running sums.
    pub fn accumulate(&mut self, arrival_bits: f64) {
        self.cum_q_edge += self.q_edge;
        self.cum_q_ran += self.q_ran;
        self.cum_arrival_bits += arrival_bits;
        self.steps += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RanMode {
    /// The RAN queue receives exactly the bits processed at the edge.
    #[default]
    Corrected,
    /// Inflow term `min(Q_ran, U_edge)` as printed.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatencyMode {
    /// Average queue divided by the average arrival rate (seconds).
    #[default]
    LittleConsistent,
    /// Average queue multiplied by the average arrival rate.
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepOutcome {
    pub processed_edge: f64,
    pub transmitted: f64,
    pub latency_edge: f64,
    pub latency_ran: f64,
    pub latency_total: f64,
    pub utilization: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub theta: f64,
    pub alpha: f64,
    /// Reference latency (s) dividing `L` inside the exponential.
    pub latency_scale: f64,
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0) {
            return Err(Error::config("reward.theta", "must be > 0"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config("reward.alpha", "must be > 0"));
        }
        if !(self.latency_scale > 0.0) {
            return Err(Error::config("reward.latency_scale", "must be > 0"));
        }
        Ok(())
    }
}

/// Drains the edge computation queue with `f_alloc` Gcycle/s, then adds the
/// step's arrivals. Returns the next state and the processed bits.
pub fn step_edge_queue(
    state: &QueueState,
    arrival_bits: f64,
    f_alloc: f64,
    cfg: &EdgeConfig,
) -> Result<(QueueState, f64)> {
    if !(f_alloc >= 0.0) {
        return Err(Error::Contract(format!(
            "CPU allocation must be non-negative, got {f_alloc}"
        )));
    }
    let capacity = cfg.edge_capacity_bits(f_alloc);
    let processed = state.q_edge.min(capacity);
    let mut next = *state;
    next.q_edge = (state.q_edge - capacity).max(0.0) + arrival_bits;
    Ok((next, processed))
}

/// What the edge stage produced this step, as seen by the RAN queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeStep {
    /// `min(Q_edge, U_edge)`
    pub processed: f64,
    /// `U_edge = tau * f * U`
    pub capacity: f64,
}

/// Drains the RAN queue over one radio interval at `capacity` bits/s and adds
/// the edge output. Returns the next state and the transmitted bits.
pub fn step_ran_queue(
    state: &QueueState,
    edge: EdgeStep,
    capacity: f64,
    cfg: &EdgeConfig,
    mode: RanMode,
) -> (QueueState, f64) {
    let radio = cfg.ran_capacity_bits(capacity);
    let transmitted = state.q_ran.min(radio);
    let inflow = match mode {
        RanMode::Corrected => edge.processed,
        RanMode::Literal => state.q_ran.min(edge.capacity),
    };
    let mut next = *state;
    next.q_ran = (state.q_ran - radio).max(0.0) + inflow;
    (next, transmitted)
}

pub fn total_queue(state: &QueueState) -> f64 {
    state.q_edge + state.q_ran
}

/// Little's-law latency from the running sums: `(L_edge, L_ran, L)`.
pub fn latency(state: &QueueState, cfg: &EdgeConfig, mode: LatencyMode) -> Result<(f64, f64, f64)> {
    if state.steps == 0 {
        return Err(Error::UndefinedLatency);
    }
    let steps = state.steps as f64;
    let mean_rate = state.cum_arrival_bits / (steps * cfg.tau);
    let avg_edge = state.cum_q_edge / steps;
    let avg_ran = state.cum_q_ran / steps;
    let (le, lr) = match mode {
        LatencyMode::PaperLiteral => (mean_rate * avg_edge, mean_rate * avg_ran),
        LatencyMode::LittleConsistent => {
            if mean_rate == 0.0 {
                (0.0, 0.0)
            } else {
                (avg_edge / mean_rate, avg_ran / mean_rate)
            }
        }
    };
    Ok((le, lr, le + lr))
}

/// `Z = phi / (U * a)` with `phi` in bits/s and `a` in cycles/s.
pub fn utilization_slice(traffic_bits_per_s: f64, a: f64, cycles_to_bits: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!(
            "utilization undefined for allocation {a}"
        )));
    }
    Ok(traffic_bits_per_s / (cycles_to_bits * a))
}

/// Utilization of the whole edge under static shares: `sum(phi) / (U * f_max)`.
pub fn utilization_total(traffics: &[f64], cfg: &EdgeConfig) -> f64 {
    traffics.iter().sum::<f64>() / (cfg.cycles_to_bits * cfg.f_max * GIGA)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConflictInfo {
    pub conflict: bool,
    /// Slices above their isolation share during a conflict, ascending.
    pub violators: Vec<usize>,
}

impl ConflictInfo {
    pub fn is_violator(&self, k: usize) -> bool {
        self.violators.binary_search(&k).is_ok()
    }
}

/// A conflict is a joint allocation above `f_max`; the slices exceeding their
/// isolation share are the violators.
pub fn detect_conflict(actions: &[f64], f_th: &[f64], f_max: f64) -> Result<ConflictInfo> {
    if actions.len() != f_th.len() {
        return Err(Error::Shape {
            expected: f_th.len(),
            got: actions.len(),
        });
    }
    if let Some(a) = actions.iter().find(|a| !(**a >= 0.0)) {
        return Err(Error::Contract(format!(
            "CPU allocation must be non-negative, got {a}"
        )));
    }
    let total: f64 = actions.iter().sum();
    if total <= f_max * (1.0 + 1e-12) {
        return Ok(ConflictInfo::default());
    }
    let violators = actions
        .iter()
        .zip(f_th)
        .enumerate()
        .filter(|(_, (a, th))| a > th)
        .map(|(k, _)| k)
        .collect();
    Ok(ConflictInfo {
        conflict: true,
        violators,
    })
}

pub fn compute_reward(k: usize, info: &ConflictInfo, latency: f64, params: &RewardParams) -> f64 {
    if info.conflict && info.is_violator(k) {
        -params.theta
    } else {
        params.alpha * (-latency / params.latency_scale).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // tau * f * U = 50 bits per step with f = 50 Gcycle/s
    fn cfg() -> EdgeConfig {
        EdgeConfig {
            f_max: 40.0,
            cycles_to_bits: 1e-7,
            tau: 0.01,
            delta_t: 0.01,
        }
    }

    fn q(edge: f64, ran: f64) -> QueueState {
        QueueState {
            q_edge: edge,
            q_ran: ran,
            ..Default::default()
        }
    }

    #[test]
    fn edge_empty_queue_only_gains_arrivals() {
        let (next, processed) = step_edge_queue(&q(0.0, 0.0), 100.0, 50.0, &cfg()).unwrap();
        assert_eq!(next.q_edge, 100.0);
        assert_eq!(processed, 0.0);
    }

    #[test]
    fn edge_backlog_drains_capacity() {
        let (next, processed) = step_edge_queue(&q(200.0, 0.0), 30.0, 50.0, &cfg()).unwrap();
        assert!((next.q_edge - 180.0).abs() < 1e-9);
        assert!((processed - 50.0).abs() < 1e-9);
    }

    #[test]
    fn edge_drain_exceeding_backlog_empties() {
        let (next, processed) = step_edge_queue(&q(40.0, 0.0), 0.0, 50.0, &cfg()).unwrap();
        assert_eq!(next.q_edge, 0.0);
        assert_eq!(processed, 40.0);
    }

    #[test]
    fn negative_allocation_is_contract_violation() {
        assert!(matches!(
            step_edge_queue(&q(1.0, 0.0), 0.0, -1.0, &cfg()),
            Err(Error::Contract(_))
        ));
    }

    fn ran_cfg() -> EdgeConfig {
        // delta_t * C = 100 bits with C = 10_000 bits/s
        cfg()
    }

    #[test]
    fn ran_empty_queue_corrected() {
        let edge = EdgeStep { processed: 50.0, capacity: 50.0 };
        let (next, sent) = step_ran_queue(&q(0.0, 0.0), edge, 10_000.0, &ran_cfg(), RanMode::Corrected);
        assert_eq!(next.q_ran, 50.0);
        assert_eq!(sent, 0.0);
    }

    #[test]
    fn ran_backlog_corrected() {
        let edge = EdgeStep { processed: 20.0, capacity: 50.0 };
        let (next, sent) = step_ran_queue(&q(0.0, 300.0), edge, 10_000.0, &ran_cfg(), RanMode::Corrected);
        assert_eq!(next.q_ran, 220.0);
        assert_eq!(sent, 100.0);
    }

    #[test]
    fn ran_literal_and_corrected_modes() {
        let edge = EdgeStep { processed: 50.0, capacity: 50.0 };
        let (lit, _) = step_ran_queue(&q(0.0, 300.0), edge, 10_000.0, &ran_cfg(), RanMode::Literal);
        let (cor, _) = step_ran_queue(&q(0.0, 300.0), edge, 10_000.0, &ran_cfg(), RanMode::Corrected);
        assert_eq!(lit.q_ran, 250.0);
        assert_eq!(cor.q_ran, 250.0);

        let (lit, _) = step_ran_queue(&q(0.0, 10.0), edge, 10_000.0, &ran_cfg(), RanMode::Literal);
        let (cor, _) = step_ran_queue(&q(0.0, 10.0), edge, 10_000.0, &ran_cfg(), RanMode::Corrected);
        assert_eq!(lit.q_ran, 10.0);
        assert_eq!(cor.q_ran, 50.0);
    }

    #[test]
    fn total_queue_sums() {
        assert_eq!(total_queue(&q(0.0, 0.0)), 0.0);
        assert_eq!(total_queue(&q(180.0, 220.0)), 400.0);
    }

    #[test]
    fn latency_requires_a_step() {
        assert!(matches!(
            latency(&QueueState::default(), &cfg(), LatencyMode::LittleConsistent),
            Err(Error::UndefinedLatency)
        ));
    }

    #[test]
    fn zero_queues_zero_latency() {
        let mut s = QueueState::default();
        for _ in 0..5 {
            s.accumulate(100.0);
        }
        for mode in [LatencyMode::LittleConsistent, LatencyMode::PaperLiteral] {
            assert_eq!(latency(&s, &cfg(), mode).unwrap().2, 0.0);
        }
    }

    #[test]
    fn little_law_constant_queue() {
        // constant backlog 500 bits, 20 bits arriving per 10 ms step => 2000 bits/s
        let mut s = q(500.0, 0.0);
        for _ in 0..10 {
            s.accumulate(20.0);
        }
        let (le, lr, l) = latency(&s, &cfg(), LatencyMode::LittleConsistent).unwrap();
        assert!((le - 500.0 / 2000.0).abs() < 1e-12);
        assert_eq!(lr, 0.0);
        assert_eq!(l, le);
    }

    #[test]
    fn latency_uses_average_queue() {
        let mut s = q(100.0, 0.0);
        s.accumulate(10.0);
        s.q_edge = 200.0;
        s.accumulate(10.0);
        // mean rate 10 bits / 0.01 s = 1000 bits/s, average queue 150
        let (le, ..) = latency(&s, &cfg(), LatencyMode::LittleConsistent).unwrap();
        assert!((le - 0.15).abs() < 1e-12);
        let (le, ..) = latency(&s, &cfg(), LatencyMode::PaperLiteral).unwrap();
        assert!((le - 150_000.0).abs() < 1e-6);
    }

    #[test]
    fn utilization_values() {
        assert_eq!(utilization_slice(12.0, 4.0, 3.0).unwrap(), 1.0);
        assert_eq!(utilization_slice(0.0, 4.0, 3.0).unwrap(), 0.0);
        assert_eq!(utilization_slice(2.0, 4.0, 1.0).unwrap(), 0.5);
        assert!(matches!(utilization_slice(1.0, 0.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn utilization_total_values() {
        let c = cfg();
        let full = c.cycles_to_bits * c.f_max * GIGA;
        assert_eq!(utilization_total(&[0.0, 0.0, 0.0], &c), 0.0);
        assert!((utilization_total(&[full], &c) - 1.0).abs() < 1e-12);
        // 4000 bits/s of capacity in total
        assert!((utilization_total(&[1000.0, 500.0, 500.0], &c) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn conflict_examples() {
        let th = [15.0, 15.0, 10.0];
        assert_eq!(detect_conflict(&[15.0, 15.0, 10.0], &th, 40.0).unwrap(), ConflictInfo::default());
        let c = detect_conflict(&[20.0, 15.0, 10.0], &th, 40.0).unwrap();
        assert!(c.conflict);
        assert_eq!(c.violators, vec![0]);
        assert_eq!(detect_conflict(&[0.0, 0.0, 0.0], &th, 40.0).unwrap(), ConflictInfo::default());
        assert!(detect_conflict(&[1.0, 2.0], &th, 40.0).is_err());
    }

    #[test]
    fn reward_branches() {
        let p = RewardParams { theta: 2.0, alpha: 1.0, latency_scale: 0.1 };
        let c = ConflictInfo { conflict: true, violators: vec![0] };
        assert_eq!(compute_reward(0, &c, 0.0, &p), -2.0);
        assert_eq!(compute_reward(1, &c, 0.0, &p), 1.0);
        assert!((compute_reward(1, &c, 0.1, &p) - (-1.0f64).exp()).abs() < 1e-12);
        assert!((compute_reward(1, &c, 0.1, &p) - 0.3679).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn larger_allocation_never_grows_edge_queue(
            backlog in 0.0..1e5f64, arrival in 0.0..1e4f64, f1 in 0.0..60.0f64, df in 0.0..30.0f64,
        ) {
            let c = EdgeConfig { f_max: 40.0, cycles_to_bits: 1e-6, tau: 0.01, delta_t: 0.01 };
            let (a, _) = step_edge_queue(&q(backlog, 0.0), arrival, f1, &c).unwrap();
            let (b, _) = step_edge_queue(&q(backlog, 0.0), arrival, f1 + df, &c).unwrap();
            prop_assert!(b.q_edge <= a.q_edge);
        }

        #[test]
        fn conflict_is_scale_consistent(
            a in proptest::collection::vec(0.0..30.0f64, 3), scale in 0.1..10.0f64,
        ) {
            let th = [15.0, 15.0, 10.0];
            let base = detect_conflict(&a, &th, 40.0).unwrap();
            let sa: Vec<f64> = a.iter().map(|x| x * scale).collect();
            let sth: Vec<f64> = th.iter().map(|x| x * scale).collect();
            let scaled = detect_conflict(&sa, &sth, 40.0 * scale).unwrap();
            prop_assert_eq!(base, scaled);
        }

        #[test]
        fn reward_in_bounds(lat in 0.0..10.0f64, viol in proptest::bool::ANY) {
            let p = RewardParams { theta: 3.0, alpha: 0.5, latency_scale: 0.2 };
            let c = ConflictInfo { conflict: true, violators: if viol { vec![0] } else { vec![] } };
            let r = compute_reward(0, &c, lat, &p);
            prop_assert!(r == -3.0 || (r > 0.0 && r <= 0.5));
        }
    }
}
