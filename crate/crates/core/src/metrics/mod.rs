//! Gauges, text exposition, empirical CDFs and smoothing.

pub mod http;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Mutex;

use crate::error::{Error, Result};

pub type Labels = BTreeMap<String, String>;

/// One observation of a named series.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSample {
    pub name: String,
    pub labels: Labels,
    pub value: f64,
    /// Episode or step index.
    pub index: u64,
}

impl MetricSample {
    pub fn new(name: impl Into<String>, value: f64, index: u64) -> Self {
        Self {
            name: name.into(),
            labels: Labels::new(),
            value,
            index,
        }
    }

    pub fn label(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.labels.insert(key.into(), value.to_string());
        self
    }
}

/// `[a-zA-Z_:][a-zA-Z0-9_:]*`
pub fn valid_metric_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' || c == ':' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == ':')
}

/// `[a-zA-Z_][a-zA-Z0-9_]*`
pub fn valid_label_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Current value of every gauge, keyed by name and label set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    gauges: BTreeMap<String, BTreeMap<Labels, f64>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: &str, labels: Labels, value: f64) -> Result<()> {
        if !valid_metric_name(name) {
            return Err(Error::Metrics(format!("invalid metric name `{name}`")));
        }
        if let Some(bad) = labels.keys().find(|k| !valid_label_name(k)) {
            return Err(Error::Metrics(format!("invalid label name `{bad}` on `{name}`")));
        }
        if !value.is_finite() {
            return Err(Error::Metrics(format!("non-finite value for `{name}`")));
        }
        self.gauges.entry(name.to_string()).or_default().insert(labels, value);
        Ok(())
    }

    pub fn record(&mut self, sample: &MetricSample) -> Result<()> {
        self.set(&sample.name, sample.labels.clone(), sample.value)
    }

    pub fn get(&self, name: &str, labels: &Labels) -> Option<f64> {
        self.gauges.get(name).and_then(|m| m.get(labels)).copied()
    }

    pub fn len(&self) -> usize {
        self.gauges.values().map(|m| m.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.gauges.keys().map(|s| s.as_str())
    }
}

/// A registry that many threads may append to; readers take snapshots.
#[derive(Debug, Default)]
pub struct SharedRegistry {
    inner: Mutex<Registry>,
    history: Mutex<Vec<MetricSample>>,
}

impl SharedRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&self, sample: MetricSample) -> Result<()> {
        let mut reg = self.inner.lock().unwrap();
        reg.record(&sample)?;
        self.history.lock().unwrap().push(sample);
        Ok(())
    }

    pub fn snapshot(&self) -> Registry {
        self.inner.lock().unwrap().clone()
    }

    /// Every appended sample, in append order.
    pub fn history(&self) -> Vec<MetricSample> {
        self.history.lock().unwrap().clone()
    }

    /// Values of one series ordered by index.
    pub fn series(&self, name: &str, labels: &Labels) -> Vec<(u64, f64)> {
        let mut v: Vec<(u64, f64)> = self
            .history
            .lock()
            .unwrap()
            .iter()
            .filter(|s| s.name == name && &s.labels == labels)
            .map(|s| (s.index, s.value))
            .collect();
        v.sort_by_key(|p| p.0);
        v
    }
}

/// Shortest round-trip rendering; exponent form outside `[1e-5, 1e16)`.
pub fn format_value(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn escape_label(v: &str) -> String {
    v.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n")
}

/// Renders the registry in the text exposition format, metrics and labels
/// sorted, with an optional millisecond timestamp on every sample.
pub fn export_text(registry: &Registry, timestamp: Option<i64>) -> Result<String> {
    if registry.is_empty() {
        return Err(Error::Metrics("cannot export an empty registry".into()));
    }
    let mut out = String::new();
    for (name, series) in &registry.gauges {
        if !valid_metric_name(name) {
            return Err(Error::Metrics(format!("invalid metric name `{name}`")));
        }
        let _ = writeln!(out, "# TYPE {name} gauge");
        for (labels, value) in series {
            out.push_str(name);
            if !labels.is_empty() {
                let body: Vec<String> = labels
                    .iter()
                    .map(|(k, v)| format!("{k}=\"{}\"", escape_label(v)))
                    .collect();
                let _ = write!(out, "{{{}}}", body.join(","));
            }
            let _ = write!(out, " {}", format_value(*value));
            if let Some(ts) = timestamp {
                let _ = write!(out, " {ts}");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Parses a document produced by [`export_text`]. Returns the registry and
/// the timestamp of the last sample line, if any.
pub fn parse_text(text: &str) -> Result<(Registry, Option<i64>)> {
    let mut reg = Registry::new();
    let mut ts = None;
    for (no, line) in text.lines().enumerate() {
        let err = |m: &str| Error::Metrics(format!("line {}: {m}", no + 1));
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.first() == Some(&"TYPE") && (parts.len() != 3 || parts[2] != "gauge") {
                return Err(err("only gauge metrics are supported"));
            }
            continue;
        }
        let name_end = line
            .find(|c: char| c == '{' || c == ' ')
            .ok_or_else(|| err("missing value"))?;
        let name = &line[..name_end];
        let mut labels = Labels::new();
        let mut rest = &line[name_end..];
        if rest.starts_with('{') {
            let (parsed, after) = parse_labels(&rest[1..]).map_err(|m| err(&m))?;
            labels = parsed;
            rest = after;
        }
        let mut fields = rest.split_whitespace();
        let value: f64 = fields
            .next()
            .ok_or_else(|| err("missing value"))?
            .parse()
            .map_err(|_| err("invalid value"))?;
        if let Some(t) = fields.next() {
            ts = Some(t.parse().map_err(|_| err("invalid timestamp"))?);
        }
        if fields.next().is_some() {
            return Err(err("trailing fields"));
        }
        reg.set(name, labels, value).map_err(|e| err(&e.to_string()))?;
    }
    Ok((reg, ts))
}

fn parse_labels(s: &str) -> std::result::Result<(Labels, &str), String> {
    let mut labels = Labels::new();
    let mut rest = s;
    loop {
        if let Some(after) = rest.strip_prefix('}') {
            return Ok((labels, after));
        }
        let eq = rest.find('=').ok_or("label without `=`")?;
        let key = rest[..eq].to_string();
        rest = rest[eq + 1..].strip_prefix('"').ok_or("label value must be quoted")?;
        let mut value = String::new();
        let mut chars = rest.char_indices();
        let end = loop {
            match chars.next() {
                Some((i, '"')) => break i,
                Some((_, '\\')) => match chars.next() {
                    Some((_, 'n')) => value.push('\n'),
                    Some((_, c)) => value.push(c),
                    None => return Err("dangling escape".into()),
                },
                Some((_, c)) => value.push(c),
                None => return Err("unterminated label value".into()),
            }
        };
        labels.insert(key, value);
        rest = &rest[end + 1..];
        rest = rest.strip_prefix(',').unwrap_or(rest);
    }
}

/// Empirical CDF with a step of `1/n` at each sorted sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfSeries {
    pub values: Vec<f64>,
    pub fractions: Vec<f64>,
}

pub fn cdf(samples: &[f64]) -> Result<CdfSeries> {
    if samples.is_empty() {
        return Err(Error::Metrics("CDF of an empty sample".into()));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::Metrics("CDF input contains NaN".into()));
    }
    let mut values = samples.to_vec();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len() as f64;
    let fractions = (1..=values.len()).map(|i| i as f64 / n).collect();
    Ok(CdfSeries { values, fractions })
}

/// `F(threshold)`: the fraction of samples `<= threshold`.
pub fn quantile_below(series: &CdfSeries, threshold: f64) -> f64 {
    let k = series.values.partition_point(|v| *v <= threshold);
    if k == 0 {
        0.0
    } else {
        series.fractions[k - 1]
    }
}

/// Trailing mean; the first `window - 1` points average what is available.
pub fn rolling_mean(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Metrics("rolling window must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for i in 0..series.len() {
        sum += series[i];
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(pairs: &[(&str, &str)]) -> Labels {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn minimal_document() {
        let mut r = Registry::new();
        r.set("reward", Labels::new(), 1.5).unwrap();
        assert_eq!(export_text(&r, None).unwrap(), "# TYPE reward gauge\nreward 1.5\n");
    }

    #[test]
    fn labels_sorted_and_escaped() {
        let mut r = Registry::new();
        r.set("lat", labels(&[("variant", "ma-ib"), ("slice", "a\"b\\c\nd")]), 0.25).unwrap();
        let text = export_text(&r, Some(1700)).unwrap();
        assert_eq!(
            text,
            "# TYPE lat gauge\nlat{slice=\"a\\\"b\\\\c\\nd\",variant=\"ma-ib\"} 0.25 1700\n"
        );
        let (back, ts) = parse_text(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(ts, Some(1700));
    }

    #[test]
    fn invalid_names_and_empty_registry_fail() {
        let mut r = Registry::new();
        assert!(r.set("9lives", Labels::new(), 1.0).is_err());
        assert!(r.set("ok", labels(&[("bad-key", "v")]), 1.0).is_err());
        assert!(r.set("ok", Labels::new(), f64::NAN).is_err());
        assert!(export_text(&r, None).is_err());
        assert!(valid_metric_name("a:b_c9"));
        assert!(!valid_metric_name(""));
    }

    #[test]
    fn value_formatting_round_trips() {
        for v in [0.0, 1.0, -3.25, 1e-7, 6.02e23, f64::MAX, f64::MIN_POSITIVE, 0.1 + 0.2] {
            assert_eq!(format_value(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(format_value(3.0), "3");
        assert_eq!(format_value(1e-7), "1e-7");
    }

    #[test]
    fn cdf_examples() {
        let c = cdf(&[5.0]).unwrap();
        assert_eq!(quantile_below(&c, 5.0), 1.0);
        let c = cdf(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(quantile_below(&c, 2.0), 0.5);
        assert_eq!(quantile_below(&c, 0.5), 0.0);
        assert_eq!(quantile_below(&c, 9.0), 1.0);
        assert_eq!(*c.fractions.last().unwrap(), 1.0);
        assert!(cdf(&[]).is_err());
    }

    #[test]
    fn uniform_cdf_within_ks_bound() {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..10_000).map(|_| r.random::<f64>()).collect();
        let c = cdf(&xs).unwrap();
        let n = xs.len() as f64;
        let d = c
            .values
            .iter()
            .zip(&c.fractions)
            .map(|(x, f)| (f - x).abs().max((f - 1.0 / n - x).abs()))
            .fold(0.0, f64::max);
        // 99% Kolmogorov critical value 1.628 / sqrt(n)
        assert!(d < 1.628 / n.sqrt(), "D = {d}");
    }

    #[test]
    fn rolling_mean_examples() {
        let s = [1.0, 5.0, 2.0, 8.0];
        assert_eq!(rolling_mean(&s, 1).unwrap(), s.to_vec());
        assert_eq!(rolling_mean(&[2.0; 6], 3).unwrap(), vec![2.0; 6]);
        assert_eq!(rolling_mean(&s, 2).unwrap(), vec![1.0, 3.0, 3.5, 5.0]);
        assert!(rolling_mean(&s, 0).is_err());
    }

    #[test]
    fn shared_registry_keeps_history() {
        let reg = std::sync::Arc::new(SharedRegistry::new());
        let hs: Vec<_> = (0..4)
            .map(|t| {
                let reg = std::sync::Arc::clone(&reg);
                std::thread::spawn(move || {
                    for i in 0..50 {
                        reg.append(MetricSample::new("x", i as f64, i).label("t", t)).unwrap();
                    }
                })
            })
            .collect();
        for h in hs {
            h.join().unwrap();
        }
        assert_eq!(reg.history().len(), 200);
        assert_eq!(reg.snapshot().len(), 4);
        let s = reg.series("x", &labels(&[("t", "2")]));
        assert_eq!(s.len(), 50);
        assert_eq!(s[49], (49, 49.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn quantile_is_monotone_and_matches_count(
            xs in prop::collection::vec(-100.0f64..100.0, 1..60),
            a in -120.0f64..120.0,
            b in -120.0f64..120.0,
        ) {
            let c = cdf(&xs).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantile_below(&c, lo) <= quantile_below(&c, hi));
            let count = xs.iter().filter(|x| **x <= lo).count() as f64 / xs.len() as f64;
            prop_assert!((quantile_below(&c, lo) - count).abs() < 1e-12);
            prop_assert!(c.fractions.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn rolling_matches_brute_force(xs in prop::collection::vec(-10.0f64..10.0, 0..50), w in 1usize..8) {
            let got = rolling_mean(&xs, w).unwrap();
            for i in 0..xs.len() {
                let lo = (i + 1).saturating_sub(w);
                let slice = &xs[lo..=i];
                let m = slice.iter().sum::<f64>() / slice.len() as f64;
                prop_assert!((got[i] - m).abs() < 1e-9);
            }
        }
    }
}
