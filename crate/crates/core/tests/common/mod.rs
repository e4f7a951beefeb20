//! Reference implementations kept apart from the library: the queue
//! recursions and conflict rule written out directly from their definitions.
#![allow(dead_code)]

pub const GIGA: f64 = 1e9;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RefQueues {
    pub q_edge: f64,
    pub q_ran: f64,
    pub sum_q_edge: f64,
    pub sum_q_ran: f64,
    pub sum_arrivals: f64,
    pub t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefStep {
    pub processed: f64,
    pub transmitted: f64,
    pub latency: f64,
}

pub struct RefParams {
    pub u: f64,
    pub tau: f64,
    pub delta_t: f64,
    pub literal_ran: bool,
}

/// Edge drain, RAN drain with edge output as inflow, running sums and
/// Little's-law latency (average queue over mean arrival rate).
pub fn ref_step(s: &mut RefQueues, arrival: f64, f: f64, channel: f64, p: &RefParams) -> RefStep {
    let u_edge = p.tau * f * GIGA * p.u;
    let processed = if s.q_edge < u_edge { s.q_edge } else { u_edge };
    let q_edge = if s.q_edge - u_edge > 0.0 { s.q_edge - u_edge } else { 0.0 } + arrival;

    let u_ran = p.delta_t * channel;
    let transmitted = if s.q_ran < u_ran { s.q_ran } else { u_ran };
    let inflow = if p.literal_ran {
        if s.q_ran < u_edge { s.q_ran } else { u_edge }
    } else {
        processed
    };
    let q_ran = if s.q_ran - u_ran > 0.0 { s.q_ran - u_ran } else { 0.0 } + inflow;

    s.q_edge = q_edge;
    s.q_ran = q_ran;
    s.sum_q_edge += q_edge;
    s.sum_q_ran += q_ran;
    s.sum_arrivals += arrival;
    s.t += 1;

    let n = s.t as f64;
    let rate = s.sum_arrivals / (n * p.tau);
    let latency = if rate == 0.0 {
        0.0
    } else {
        (s.sum_q_edge / n) / rate + (s.sum_q_ran / n) / rate
    };
    RefStep {
        processed,
        transmitted,
        latency,
    }
}

/// `(conflict, effective allocations)` with violators cut back to their share.
pub fn ref_conflict(actions: &[f64], shares: &[f64], f_max: f64) -> (bool, Vec<f64>) {
    let mut total = 0.0;
    for a in actions {
        total += a;
    }
    let conflict = total > f_max * (1.0 + 1e-12);
    let eff = actions
        .iter()
        .zip(shares)
        .map(|(&a, &s)| if conflict && a > s { s } else { a })
        .collect();
    (conflict, eff)
}
