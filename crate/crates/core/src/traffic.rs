//! Per-slice arrival generation.
//!
//! Each step the arrival rate of a slice is drawn from a normal distribution
//! truncated at zero, then the packet count for the interval is Poisson with
//! mean `rate * tau`. Recorded traces can be replayed instead.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Above this mean the Poisson draw switches from inversion to a rounded
/// normal approximation.
pub const POISSON_INVERSION_LIMIT: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficProfile {
    /// Mean arrival rate in packets/s.
    pub mu: f64,
    /// Standard deviation of the arrival rate in packets/s.
    pub sigma: f64,
    /// Bits per packet.
    pub packet_size: u64,
}

impl TrafficProfile {
    pub fn new(mu: f64, sigma: f64, packet_size: u64) -> Result<Self> {
        let profile = Self {
            mu,
            sigma,
            packet_size,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Contract(format!(
                "traffic sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        if !self.mu.is_finite() {
            return Err(Error::Contract("traffic mu must be finite".into()));
        }
        if self.packet_size == 0 {
            return Err(Error::Contract("packet size must be > 0".into()));
        }
        Ok(())
    }

    /// Expected arrival bits per interval of length `tau` (truncated-normal rate).
    pub fn mean_bits(&self, tau: f64) -> f64 {
        truncated_normal_mean(self.mu, self.sigma) * tau * self.packet_size as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalSample {
    /// Arrival rate in packets/s.
    pub rate: f64,
    pub count: u64,
    pub bits: u64,
}

/// Draws `max(N(mu, sigma), 0)`.
pub fn sample_rate<R: Rng + ?Sized>(profile: &TrafficProfile, rng: &mut R) -> f64 {
    if profile.sigma == 0.0 {
        return profile.mu.max(0.0);
    }
    let z: f64 = rng.sample(StandardNormal);
    (profile.mu + profile.sigma * z).max(0.0)
}

/// Draws a Poisson variate with the given mean.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean > POISSON_INVERSION_LIMIT {
        let z: f64 = rng.sample(StandardNormal);
        return (mean + mean.sqrt() * z).round().max(0.0) as u64;
    }
    // sequential inversion
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-mean).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
        if p < f64::MIN_POSITIVE && k as f64 > mean {
            break;
        }
    }
    k
}

pub fn sample_arrivals<R: Rng + ?Sized>(
    profile: &TrafficProfile,
    tau: f64,
    rng: &mut R,
) -> ArrivalSample {
    debug_assert!(tau > 0.0);
    let rate = sample_rate(profile, rng);
    let count = sample_poisson(rate * tau, rng);
    ArrivalSample {
        rate,
        count,
        bits: count * profile.packet_size,
    }
}

/// `E[max(X, 0)]` for `X ~ N(mu, sigma)`.
pub fn truncated_normal_mean(mu: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return mu.max(0.0);
    }
    let z = mu / sigma;
    mu * normal_cdf(z) + sigma * normal_pdf(z)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

// Numerical Recipes erfc, fractional error < 1.2e-7.
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398
                                + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRow {
    pub step: u64,
    pub slice: usize,
    pub bits: u64,
}

/// Expected layout of a trace file. The header is always `step,slice,bits`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSchema {
    /// Seconds per trace step.
    pub granularity: f64,
}

impl Default for TraceSchema {
    fn default() -> Self {
        Self { granularity: 0.01 }
    }
}

pub const TRACE_HEADER: [&str; 3] = ["step", "slice", "bits"];

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSource {
    pub rows: Vec<TraceRow>,
    pub granularity: f64,
}

impl TraceSource {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn load_trace(path: impl AsRef<Path>, schema: TraceSchema) -> Result<TraceSource> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    parse_trace(file, path, schema)
}

pub fn parse_trace<R: std::io::Read>(
    reader: R,
    path: &Path,
    schema: TraceSchema,
) -> Result<TraceSource> {
    let err = |line: usize, message: String| Error::Trace {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != TRACE_HEADER {
        return Err(err(
            1,
            format!("expected header `step,slice,bits`, found `{}`", header.iter().collect::<Vec<_>>().join(",")),
        ));
    }

    let mut rows = Vec::new();
    let mut last_step: HashMap<usize, u64> = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| err(line, e.to_string()))?;
        if record.len() != 3 {
            return Err(err(line, format!("expected 3 fields, found {}", record.len())));
        }
        let step: u64 = record[0]
            .parse()
            .map_err(|_| err(line, format!("invalid step `{}`", &record[0])))?;
        let slice: usize = record[1]
            .parse()
            .map_err(|_| err(line, format!("invalid slice `{}`", &record[1])))?;
        let bits: i64 = record[2]
            .parse()
            .map_err(|_| err(line, format!("invalid bits `{}`", &record[2])))?;
        if bits < 0 {
            return Err(err(line, format!("negative arrival bits {bits}")));
        }
        if let Some(&prev) = last_step.get(&slice) {
            if step <= prev {
                return Err(err(
                    line,
                    format!("step {step} for slice {slice} does not increase (previous {prev})"),
                ));
            }
        }
        last_step.insert(slice, step);
        rows.push(TraceRow {
            step,
            slice,
            bits: bits as u64,
        });
    }
    Ok(TraceSource {
        rows,
        granularity: schema.granularity,
    })
}

/// Step-indexed lookup over a loaded trace; steps without a row carry zero bits.
/// Lookups past the final step wrap around.
#[derive(Debug, Clone)]
pub struct TraceReplay {
    table: HashMap<(u64, usize), u64>,
    period: u64,
}

impl TraceReplay {
    pub fn new(source: &TraceSource) -> Self {
        let period = source.rows.iter().map(|r| r.step + 1).max().unwrap_or(1);
        let table = source
            .rows
            .iter()
            .map(|r| ((r.step, r.slice), r.bits))
            .collect();
        Self { table, period }
    }

    pub fn bits(&self, step: u64, slice: usize) -> u64 {
        self.table
            .get(&(step % self.period, slice))
            .copied()
            .unwrap_or(0)
    }

    pub fn sample(&self, step: u64, slice: usize, packet_size: u64, tau: f64) -> ArrivalSample {
        let bits = self.bits(step, slice);
        let count = bits / packet_size.max(1);
        ArrivalSample {
            rate: count as f64 / tau,
            count,
            bits,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_variance_rate_is_mu() {
        let p = TrafficProfile::new(100.0, 0.0, 1500).unwrap();
        assert_eq!(sample_rate(&p, &mut rng(0)), 100.0);
    }

    #[test]
    fn negative_mu_truncates_to_zero() {
        let p = TrafficProfile::new(-5.0, 0.0, 1500).unwrap();
        assert_eq!(sample_rate(&p, &mut rng(0)), 0.0);
    }

    #[test]
    fn truncated_rate_mean_matches_closed_form() {
        // E[max(X,0)], X ~ N(50, 20): 50 * Phi(2.5) + 20 * phi(2.5)
        let expected = 50.0 * 0.993_790_334_674_224 + 20.0 * 0.017_528_300_493_568_5;
        assert!((truncated_normal_mean(50.0, 20.0) - expected).abs() < 1e-5);

        let p = TrafficProfile::new(50.0, 20.0, 1).unwrap();
        let mut r = rng(42);
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_rate(&p, &mut r)).sum::<f64>() / n as f64;
        assert!((mean - expected).abs() / expected < 0.005, "mean {mean}");
    }

    #[test]
    fn zero_rate_gives_no_arrivals() {
        let p = TrafficProfile::new(0.0, 0.0, 32).unwrap();
        let s = sample_arrivals(&p, 0.01, &mut rng(1));
        assert_eq!((s.count, s.bits), (0, 0));
    }

    #[test]
    fn mean_bits_match_rate_tau_packet() {
        let p = TrafficProfile::new(1000.0, 0.0, 1500).unwrap();
        let mut r = rng(7);
        let n = 1_000_000;
        let total: u64 = (0..n).map(|_| sample_arrivals(&p, 0.01, &mut r).bits).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 15_000.0).abs() / 15_000.0 < 0.01, "mean {mean}");
    }

    #[test]
    fn bits_are_count_times_packet() {
        let p = TrafficProfile::new(700.0, 100.0, 32).unwrap();
        let mut r = rng(3);
        for _ in 0..1000 {
            let s = sample_arrivals(&p, 0.01, &mut r);
            assert_eq!(s.bits, s.count * 32);
            assert!(s.rate >= 0.0);
        }
    }

    #[test]
    fn poisson_moments_within_three_sigma() {
        for &lambda in &[0.5, 7.0, 120.0, 2_000.0] {
            let mut r = rng(11);
            let n = 100_000usize;
            let draws: Vec<f64> = (0..n).map(|_| sample_poisson(lambda, &mut r) as f64).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se_mean = (lambda / n as f64).sqrt();
            assert!((mean - lambda).abs() < 3.0 * se_mean, "lambda {lambda} mean {mean}");
            // var of sample variance ~ (mu4 - sigma^4)/n = (lambda + 2 lambda^2)/n
            let se_var = ((lambda + 2.0 * lambda * lambda) / n as f64).sqrt();
            assert!((var - lambda).abs() < 3.0 * se_var, "lambda {lambda} var {var}");
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let p = TrafficProfile::new(800.0, 300.0, 1500).unwrap();
        let a: Vec<_> = {
            let mut r = rng(5);
            (0..500).map(|_| sample_arrivals(&p, 0.01, &mut r)).collect()
        };
        let b: Vec<_> = {
            let mut r = rng(5);
            (0..500).map(|_| sample_arrivals(&p, 0.01, &mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_profiles_rejected() {
        assert!(TrafficProfile::new(1.0, -1.0, 10).is_err());
        assert!(TrafficProfile::new(1.0, 1.0, 0).is_err());
    }

    fn parse(text: &str) -> Result<TraceSource> {
        parse_trace(text.as_bytes(), Path::new("trace.csv"), TraceSchema::default())
    }

    #[test]
    fn trace_parses_rows() {
        let t = parse("step,slice,bits\n0,0,1500\n0,1,64\n1,0,3000\n").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.rows[2], TraceRow { step: 1, slice: 0, bits: 3000 });
    }

    #[test]
    fn trace_empty_with_header() {
        assert!(parse("step,slice,bits\n").unwrap().is_empty());
    }

    #[test]
    fn trace_negative_bits_names_line() {
        let e = parse("step,slice,bits\n0,0,10\n1,0,-4\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("negative"), "{msg}");
    }

    #[test]
    fn trace_rejects_non_monotone_steps() {
        let e = parse("step,slice,bits\n2,0,10\n2,0,4\n").unwrap_err();
        assert!(e.to_string().contains("line 3"));
    }

    #[test]
    fn trace_rejects_bad_header_and_garbage() {
        assert!(parse("t,s,b\n0,0,1\n").is_err());
        let e = parse("step,slice,bits\n0,x,1\n").unwrap_err();
        assert!(e.to_string().contains("line 2"));
    }

    #[test]
    fn replay_wraps_and_fills_gaps() {
        let t = parse("step,slice,bits\n0,0,100\n2,0,300\n").unwrap();
        let r = TraceReplay::new(&t);
        assert_eq!(r.bits(0, 0), 100);
        assert_eq!(r.bits(1, 0), 0);
        assert_eq!(r.bits(5, 0), 300);
        assert_eq!(r.bits(0, 1), 0);
    }
}
