//! Scenario configuration.
//!
//! Scenarios are TOML documents. Every section except `[edge]`, `[slices]`
//! and `[traffic]` may be omitted and falls back to the defaults below.
//!
//! ```toml
//! [edge]
//! f_max = 40.0            # Gcycle/s
//! cycles_to_bits = 1e-4   # bits per CPU cycle
//! tau = 0.01              # s per step
//! # delta_t = 0.01        # radio interval, defaults to tau
//! ran_mode = "corrected"  # or "literal"
//! latency_mode = "little-consistent"  # or "paper-literal"
//!
//! [slices]
//! names = ["embb", "urllc", "mmtc"]
//! f_th = [15.0, 15.0, 10.0]             # Gcycle/s
//! channel_capacity = [3e6, 3e6, 2e6]    # bits/s
//! # channel_series = [[...], [...], [...]]  # optional per-step capacities
//!
//! [traffic]
//! mu = [800.0, 21000.0, 8750.0]   # packets/s
//! sigma = [400.0, 9000.0, 4000.0]
//! packet_bits = [1500, 32, 40]
//! # trace_path = "trace.csv"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::queueing::{EdgeConfig, LatencyMode, RanMode, RewardParams};
use crate::traffic::TrafficProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSection {
    pub f_max: f64,
    pub cycles_to_bits: f64,
    pub tau: f64,
    #[serde(default)]
    pub delta_t: Option<f64>,
    #[serde(default)]
    pub ran_mode: RanMode,
    #[serde(default)]
    pub latency_mode: LatencyMode,
    /// Clamp violators to their isolation share during conflicts.
    #[serde(default = "default_true")]
    pub clamp_violators: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSection {
    #[serde(default)]
    pub names: Vec<String>,
    pub f_th: Vec<f64>,
    pub channel_capacity: Vec<f64>,
    #[serde(default)]
    pub channel_series: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSection {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub packet_bits: Vec<u64>,
    #[serde(default)]
    pub trace_path: Option<PathBuf>,
    /// Traffic normalizer per slice in bits/s; defaults to `U * max level`.
    #[serde(default)]
    pub norm_max: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    /// Size of the message alphabet `M`.
    pub messages: usize,
    pub action_levels: usize,
    pub level_min_frac: f64,
    pub level_max_frac: f64,
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub lr: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the episodes over which epsilon decays linearly.
    pub eps_decay_frac: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Learner steps between target network copies.
    pub target_sync: usize,
    /// Environment steps between learner updates.
    pub train_every: usize,
    /// Transitions required before learning starts.
    pub learn_start: usize,
    pub per_alpha: f64,
    pub per_beta_start: f64,
    pub per_beta_end: f64,
    pub per_eps: f64,
    pub latent_dim: usize,
    pub ib_beta: f64,
    pub ib_hidden: usize,
    pub ib_lr: f64,
    pub grad_clip: f64,
}

impl Default for AgentSection {
    fn default() -> Self {
        Self {
            messages: 3,
            action_levels: 8,
            level_min_frac: 0.25,
            level_max_frac: 1.5,
            hidden: vec![64, 64],
            gamma: 0.95,
            lr: 1e-3,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_frac: 0.6,
            batch_size: 64,
            buffer_capacity: 50_000,
            target_sync: 200,
            train_every: 1,
            learn_start: 500,
            per_alpha: 0.6,
            per_beta_start: 0.4,
            per_beta_end: 1.0,
            per_eps: 1e-3,
            latent_dim: 2,
            ib_beta: 1e-3,
            ib_hidden: 16,
            ib_lr: 1e-2,
            grad_clip: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub episodes: usize,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub variant: String,
    /// Greedy episodes used by `evaluate`.
    pub eval_episodes: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            episodes: 500,
            steps: 200,
            seeds: vec![1, 2, 3, 4, 5],
            variant: "ma-ib".into(),
            eval_episodes: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusMode {
    #[default]
    Inproc,
    Socket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BusSection {
    pub mode: BusMode,
    pub listen_addr: String,
    /// Envelopes retained per topic.
    pub retention: usize,
    /// Largest accepted encoded record in bytes.
    pub max_payload: usize,
    /// Step barrier timeout in socket mode, milliseconds.
    pub step_timeout_ms: u64,
}

impl Default for BusSection {
    fn default() -> Self {
        Self {
            mode: BusMode::Inproc,
            listen_addr: "127.0.0.1:7464".into(),
            retention: 4096,
            max_payload: 64 * 1024,
            step_timeout_ms: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    /// Latency threshold in seconds for CDF summaries.
    pub latency_threshold: f64,
    pub http_path: String,
    /// Episodes in the trailing window used for summaries.
    pub final_window: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            latency_threshold: 0.2,
            http_path: "/metrics".into(),
            final_window: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSection {
    pub theta: f64,
    pub alpha: f64,
    pub latency_scale: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        Self {
            theta: 1.0,
            alpha: 1.0,
            latency_scale: 0.1,
        }
    }
}

/// The raw on-disk document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub edge: EdgeSection,
    pub slices: SliceSection,
    pub traffic: TrafficSection,
    #[serde(default)]
    pub reward: RewardSection,
    #[serde(default)]
    pub agent: AgentSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub bus: BusSection,
    #[serde(default)]
    pub metrics: MetricsSection,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelCapacity {
    Constant(f64),
    Series(Vec<f64>),
}

impl ChannelCapacity {
    pub fn at(&self, step: u64) -> f64 {
        match self {
            ChannelCapacity::Constant(c) => *c,
            ChannelCapacity::Series(s) => s[(step % s.len() as u64) as usize],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceConfig {
    pub id: usize,
    pub name: String,
    /// Isolation share in Gcycle/s.
    pub f_th: f64,
    pub channel: ChannelCapacity,
    pub traffic: TrafficProfile,
    /// Traffic normalizer in bits/s for observations.
    pub norm_max: f64,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub edge: EdgeConfig,
    pub ran_mode: RanMode,
    pub latency_mode: LatencyMode,
    pub clamp_violators: bool,
    pub slices: Vec<SliceConfig>,
    pub trace_path: Option<PathBuf>,
    pub reward: RewardParams,
    pub agent: AgentSection,
    pub run: RunSection,
    pub bus: BusSection,
    pub metrics: MetricsSection,
    /// The document this scenario was built from.
    pub source: ScenarioFile,
}

/// Scenario shipped with the crate: the original-scale setup with `U = 1e-10`.
pub const PAPER_PRESET: &str = include_str!("../presets/paper.cfg");
/// Desk-scale scenario with a usable `U`.
pub const DESK_PRESET: &str = include_str!("../presets/desk.cfg");

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| {
            let key = e
                .span()
                .map(|s| key_at(text, s.start))
                .unwrap_or_else(|| "<document>".into());
            Error::config(key, e.message().to_string())
        })?;
        Self::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::artifact(path, format!("cannot read config: {e}")))?;
        let mut scenario = Self::from_toml_str(&text)?;
        // relative trace paths resolve against the config file
        if let Some(trace) = &scenario.trace_path {
            if trace.is_relative() {
                if let Some(dir) = path.parent() {
                    scenario.trace_path = Some(dir.join(trace));
                }
            }
        }
        Ok(scenario)
    }

    pub fn paper() -> Self {
        Self::from_toml_str(PAPER_PRESET).expect("paper preset is valid")
    }

    pub fn desk() -> Self {
        Self::from_toml_str(DESK_PRESET).expect("desk preset is valid")
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self> {
        let e = &file.edge;
        let edge = EdgeConfig {
            f_max: e.f_max,
            cycles_to_bits: e.cycles_to_bits,
            tau: e.tau,
            delta_t: e.delta_t.unwrap_or(e.tau),
        };
        edge.validate()?;

        let k = file.slices.f_th.len();
        if k == 0 {
            return Err(Error::config("slices.f_th", "at least one slice is required"));
        }
        let check_len = |key: &str, n: usize| {
            if n != k {
                Err(Error::config(key, format!("expected {k} entries, found {n}")))
            } else {
                Ok(())
            }
        };
        check_len("slices.channel_capacity", file.slices.channel_capacity.len())?;
        check_len("traffic.mu", file.traffic.mu.len())?;
        check_len("traffic.sigma", file.traffic.sigma.len())?;
        check_len("traffic.packet_bits", file.traffic.packet_bits.len())?;
        if !file.slices.names.is_empty() {
            check_len("slices.names", file.slices.names.len())?;
        }
        if let Some(series) = &file.slices.channel_series {
            check_len("slices.channel_series", series.len())?;
            for (i, s) in series.iter().enumerate() {
                if s.is_empty() || s.iter().any(|c| !(*c >= 0.0)) {
                    return Err(Error::config(
                        format!("slices.channel_series[{i}]"),
                        "must be a nonempty list of non-negative capacities",
                    ));
                }
            }
        }
        if let Some(norm) = &file.traffic.norm_max {
            check_len("traffic.norm_max", norm.len())?;
        }

        let a = &file.agent;
        validate_agent(a)?;

        let mut slices = Vec::with_capacity(k);
        for i in 0..k {
            let f_th = file.slices.f_th[i];
            if !(f_th > 0.0) {
                return Err(Error::config(format!("slices.f_th[{i}]"), format!("must be > 0, got {f_th}")));
            }
            let cap = file.slices.channel_capacity[i];
            if !(cap >= 0.0) {
                return Err(Error::config(
                    format!("slices.channel_capacity[{i}]"),
                    format!("must be >= 0, got {cap}"),
                ));
            }
            let traffic = TrafficProfile {
                mu: file.traffic.mu[i],
                sigma: file.traffic.sigma[i],
                packet_size: file.traffic.packet_bits[i],
            };
            if !(traffic.sigma >= 0.0) {
                return Err(Error::config(format!("traffic.sigma[{i}]"), "must be >= 0"));
            }
            if traffic.packet_size == 0 {
                return Err(Error::config(format!("traffic.packet_bits[{i}]"), "must be > 0"));
            }
            let channel = match &file.slices.channel_series {
                Some(series) => ChannelCapacity::Series(series[i].clone()),
                None => ChannelCapacity::Constant(cap),
            };
            let norm_max = match &file.traffic.norm_max {
                Some(n) => {
                    if !(n[i] > 0.0) {
                        return Err(Error::config(format!("traffic.norm_max[{i}]"), "must be > 0"));
                    }
                    n[i]
                }
                None => edge.cycles_to_bits * crate::queueing::GIGA * f_th * a.level_max_frac,
            };
            slices.push(SliceConfig {
                id: i,
                name: file
                    .slices
                    .names
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| format!("slice{i}")),
                f_th,
                channel,
                traffic,
                norm_max,
            });
        }

        let reward = RewardParams {
            theta: file.reward.theta,
            alpha: file.reward.alpha,
            latency_scale: file.reward.latency_scale,
        };
        reward.validate()?;

        let r = &file.run;
        if r.episodes == 0 {
            return Err(Error::config("run.episodes", "must be >= 1"));
        }
        if r.steps == 0 {
            return Err(Error::config("run.steps", "must be >= 1"));
        }
        if r.seeds.is_empty() {
            return Err(Error::config("run.seeds", "at least one seed is required"));
        }
        crate::orchestrator::Variant::parse(&r.variant)
            .map_err(|_| Error::config("run.variant", format!("unknown variant `{}`", r.variant)))?;
        if !(file.metrics.latency_threshold > 0.0) {
            return Err(Error::config("metrics.latency_threshold", "must be > 0"));
        }
        if file.metrics.final_window == 0 {
            return Err(Error::config("metrics.final_window", "must be >= 1"));
        }
        if file.bus.retention == 0 {
            return Err(Error::config("bus.retention", "must be >= 1"));
        }

        Ok(Self {
            edge,
            ran_mode: e.ran_mode,
            latency_mode: e.latency_mode,
            clamp_violators: e.clamp_violators,
            slices,
            trace_path: file.traffic.trace_path.clone(),
            reward,
            agent: file.agent.clone(),
            run: file.run.clone(),
            bus: file.bus.clone(),
            metrics: file.metrics.clone(),
            source: file,
        })
    }

    pub fn num_slices(&self) -> usize {
        self.slices.len()
    }

    pub fn f_th(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.f_th).collect()
    }

    /// True when the isolation shares fit in the edge; scenarios where they
    /// do not are allowed but worth a warning.
    pub fn shares_fit(&self) -> bool {
        self.slices.iter().map(|s| s.f_th).sum::<f64>() <= self.edge.f_max
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.source).expect("scenario serializes")
    }

    /// Hex SHA-256 of the canonical serialized scenario.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    /// Rebuilds the scenario after editing the underlying document.
    pub fn with_source(&self, edit: impl FnOnce(&mut ScenarioFile)) -> Result<Self> {
        let mut file = self.source.clone();
        edit(&mut file);
        let unchanged = file.traffic.trace_path == self.source.traffic.trace_path;
        let mut s = Self::from_file(file)?;
        // keep a path that was resolved against the original config file
        if unchanged {
            s.trace_path = self.trace_path.clone();
        }
        Ok(s)
    }
}

fn validate_agent(a: &AgentSection) -> Result<()> {
    let positive = |key: &str, ok: bool| {
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("agent.{key}"), "out of range"))
        }
    };
    positive("messages", a.messages >= 1)?;
    positive("action_levels", a.action_levels >= 1)?;
    positive("level_min_frac", a.level_min_frac >= 0.0)?;
    positive("level_max_frac", a.level_max_frac >= a.level_min_frac)?;
    positive("hidden", a.hidden.iter().all(|h| *h > 0))?;
    positive("gamma", (0.0..=1.0).contains(&a.gamma))?;
    positive("lr", a.lr > 0.0)?;
    positive("eps_start", (0.0..=1.0).contains(&a.eps_start))?;
    positive("eps_end", (0.0..=1.0).contains(&a.eps_end))?;
    positive("eps_decay_frac", a.eps_decay_frac > 0.0)?;
    positive("batch_size", a.batch_size >= 1)?;
    positive("buffer_capacity", a.buffer_capacity >= a.batch_size)?;
    positive("target_sync", a.target_sync >= 1)?;
    positive("train_every", a.train_every >= 1)?;
    positive("per_alpha", a.per_alpha >= 0.0)?;
    positive("per_beta_start", a.per_beta_start >= 0.0)?;
    positive("per_beta_end", a.per_beta_end >= 0.0)?;
    positive("per_eps", a.per_eps > 0.0)?;
    positive("latent_dim", a.latent_dim >= 1)?;
    positive("ib_beta", a.ib_beta >= 0.0)?;
    positive("ib_hidden", a.ib_hidden >= 1)?;
    positive("ib_lr", a.ib_lr > 0.0)?;
    positive("grad_clip", a.grad_clip > 0.0)?;
    Ok(())
}

/// Best-effort dotted key for the TOML line containing `offset`.
fn key_at(text: &str, offset: usize) -> String {
    let mut section = String::new();
    let mut key = String::new();
    let mut pos = 0;
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            section = trimmed.trim_matches(|c| c == '[' || c == ']').to_string();
            key.clear();
        } else if let Some((k, _)) = trimmed.split_once('=') {
            key = k.trim().to_string();
        }
        pos += line.len() + 1;
        if pos > offset {
            break;
        }
    }
    match (section.is_empty(), key.is_empty()) {
        (true, _) => key,
        (false, true) => section,
        (false, false) => format!("{section}.{key}"),
    }
}
