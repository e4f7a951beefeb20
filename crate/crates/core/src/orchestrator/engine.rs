//! In-process episode engine: one server, one node per slice, all talking
//! through a shared bus under a deterministic single-threaded schedule.

use std::sync::Arc;

use crate::agent::checkpoint::Checkpoint;
use crate::agent::Agent;
use crate::bus::{subscribe, Bus, BusClient, Envelope, Payload, Subscription, TopicLayout};
use crate::config::Scenario;
use crate::error::{Error, Result};
use crate::metrics::{MetricSample, SharedRegistry};

use super::node::{AgentNode, Wait};
use super::record::{EpisodeRecord, EpisodeSummary, StepRow};
use super::server::{Server, StepResult, SERVER};
use super::Variant;

/// Greedy evaluation episodes are drawn from this episode index upwards so
/// they never reuse a training episode's traffic.
pub const EVAL_EPISODE_BASE: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub seed: u64,
    pub episodes: usize,
    pub steps: usize,
}

impl RunConfig {
    /// Variant and first seed taken from the scenario's `[run]` table.
    pub fn from_scenario(scenario: &Scenario) -> Result<Self> {
        let seed = *scenario
            .run
            .seeds
            .first()
            .ok_or_else(|| Error::config("run.seeds", "at least one seed is required"))?;
        Ok(Self {
            variant: Variant::parse(&scenario.run.variant)?,
            seed,
            episodes: scenario.run.episodes,
            steps: scenario.run.steps,
        })
    }

    pub fn new(variant: Variant, seed: u64, episodes: usize, steps: usize) -> Self {
        Self {
            variant,
            seed,
            episodes,
            steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::config("run.episodes", "must be at least 1"));
        }
        if self.steps == 0 {
            return Err(Error::config("run.steps", "must be at least 1"));
        }
        Ok(())
    }
}

/// Seed of agent `k`'s private generator.
pub fn agent_seed(seed: u64, k: usize) -> u64 {
    let mut z = seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Linear decay from `eps_start` to `eps_end` over `eps_decay_frac` of the run.
pub fn epsilon_at(scenario: &Scenario, episode: usize, episodes: usize) -> f64 {
    let a = &scenario.agent;
    let span = (a.eps_decay_frac * episodes as f64).max(1.0);
    let t = (episode as f64 / span).min(1.0);
    a.eps_start + (a.eps_end - a.eps_start) * t
}

/// Importance-sampling exponent, annealed linearly over the whole run.
pub fn per_beta_at(scenario: &Scenario, episode: usize, episodes: usize) -> f64 {
    let a = &scenario.agent;
    let t = if episodes <= 1 {
        1.0
    } else {
        episode as f64 / (episodes - 1) as f64
    };
    a.per_beta_start + (a.per_beta_end - a.per_beta_start) * t
}

/// Fresh agents for a variant; `None` per slice for the static baseline.
pub fn build_agents(scenario: &Scenario, variant: Variant, seed: u64) -> Result<Vec<Option<Agent>>> {
    let k = scenario.num_slices();
    scenario
        .slices
        .iter()
        .map(|s| {
            if variant.learns() {
                Agent::new(s.id, variant, s.f_th, k - 1, &scenario.agent, agent_seed(seed, s.id)).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect()
}

/// Agents rebuilt from checkpoints, one per slice in slice order.
pub fn agents_from_checkpoints(
    scenario: &Scenario,
    variant: Variant,
    seed: u64,
    checkpoints: &[Checkpoint],
) -> Result<Vec<Option<Agent>>> {
    let mut agents = build_agents(scenario, variant, seed)?;
    if !variant.learns() {
        return Ok(agents);
    }
    if checkpoints.len() != agents.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} checkpoints, got {}",
            agents.len(),
            checkpoints.len()
        )));
    }
    for (agent, ckpt) in agents.iter_mut().zip(checkpoints) {
        let agent = agent.as_mut().expect("learned variants have agents");
        if ckpt.agent != agent.id {
            return Err(Error::Checkpoint(format!(
                "checkpoint for agent {} supplied for slice {}",
                ckpt.agent, agent.id
            )));
        }
        ckpt.apply(agent)?;
    }
    Ok(agents)
}

pub struct Session {
    scenario: Scenario,
    pub variant: Variant,
    pub seed: u64,
    bus: Arc<Bus>,
    layout: TopicLayout,
    pub server: Server,
    pub nodes: Vec<AgentNode>,
    metrics_sub: Subscription,
    metrics_backlog: Vec<Envelope>,
    pub metrics: Arc<SharedRegistry>,
}

impl Session {
    pub fn new(scenario: &Scenario, variant: Variant, seed: u64) -> Result<Self> {
        let agents = build_agents(scenario, variant, seed)?;
        Self::with_agents(scenario, variant, seed, agents)
    }

    pub fn with_agents(scenario: &Scenario, variant: Variant, seed: u64, agents: Vec<Option<Agent>>) -> Result<Self> {
        let k = scenario.num_slices();
        if agents.len() != k {
            return Err(Error::Shape {
                expected: k,
                got: agents.len(),
            });
        }
        let layout = TopicLayout::new(k);
        let bus = Arc::new(Bus::with_layout(
            scenario.bus.retention,
            scenario.bus.max_payload,
            &layout,
        ));
        let server = Server::new(scenario, seed, bus.as_ref(), &layout)?;
        let nodes = agents
            .into_iter()
            .enumerate()
            .map(|(i, a)| AgentNode::new(i, k, variant, scenario.slices[i].f_th, a, bus.as_ref(), &layout))
            .collect::<Result<Vec<_>>>()?;
        let metrics_sub = subscribe(bus.as_ref(), "metrics-exporter", layout.metrics(), 0)?;
        Ok(Self {
            scenario: scenario.clone(),
            variant,
            seed,
            bus,
            layout,
            server,
            nodes,
            metrics_sub,
            metrics_backlog: Vec::new(),
            metrics: Arc::new(SharedRegistry::new()),
        })
    }

    pub fn bus(&self) -> &Arc<Bus> {
        &self.bus
    }

    pub fn layout(&self) -> &TopicLayout {
        &self.layout
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn agents(&self) -> impl Iterator<Item = &Agent> {
        self.nodes.iter().filter_map(|n| n.agent.as_ref())
    }

    pub fn into_agents(self) -> Vec<Option<Agent>> {
        self.nodes.into_iter().map(|n| n.agent).collect()
    }

    pub fn checkpoints(&self) -> Vec<Checkpoint> {
        self.agents().map(Checkpoint::from_agent).collect()
    }

    /// One two-phase step: observations out, symbols broadcast, actions
    /// gathered, environment stepped, rewards returned.
    pub fn run_step(&mut self, step: u64) -> Result<StepResult> {
        let bus = self.bus.as_ref();
        self.server.publish_observations(bus, step)?;
        for n in &mut self.nodes {
            n.phase_message(bus, &self.layout, step, Wait::NOW)?;
        }
        for n in &mut self.nodes {
            n.phase_act(bus, &self.layout, step, Wait::NOW)?;
        }
        let actions = self.server.collect_actions(bus, step, Wait::NOW)?;
        let result = self.server.apply(bus, actions)?;
        for n in &mut self.nodes {
            n.phase_reward(bus, step, Wait::NOW)?;
        }
        Ok(result)
    }

    /// Runs `steps` steps of `episode` and returns its record. Learner
    /// errors are reported with the episode index.
    pub fn run_episode(
        &mut self,
        episode: u64,
        steps: usize,
        epsilon: f64,
        per_beta: f64,
        learning: bool,
    ) -> Result<EpisodeRecord> {
        self.server.begin_episode(episode);
        for n in &mut self.nodes {
            n.begin_episode(epsilon, per_beta, learning);
        }
        let mut record = EpisodeRecord::new(episode, epsilon);
        let tag = |e: Error| match e {
            Error::Divergence { message, .. } => Error::Divergence {
                episode: Some(episode as usize),
                message,
            },
            other => other,
        };
        for step in 0..steps as u64 {
            let r = self.run_step(step).map_err(tag)?;
            push_rows(&mut record, episode, &r);
        }
        let bus = self.bus.as_ref();
        self.server.publish_episode_end(bus, steps as u64)?;
        for n in &mut self.nodes {
            n.end_episode(bus, steps as u64, Wait::NOW)?;
        }
        self.publish_summary(&record.summary())?;
        Ok(record)
    }

    fn publish_summary(&mut self, s: &EpisodeSummary) -> Result<()> {
        let bus = self.bus.as_ref();
        for sample in summary_samples(s, self.variant, self.seed) {
            bus.publish(Envelope::new(
                self.layout.metrics(),
                SERVER,
                s.episode,
                Payload::Metric(sample),
            ))?;
        }
        self.metrics_backlog.extend(self.metrics_sub.poll(bus)?);
        for e in self.metrics_backlog.drain(..) {
            if let Payload::Metric(m) = e.payload {
                self.metrics.append(m)?;
            }
        }
        Ok(())
    }
}

fn push_rows(record: &mut EpisodeRecord, episode: u64, r: &StepResult) {
    for (k, o) in r.env.outcomes.iter().enumerate() {
        record.rows.push(StepRow {
            episode,
            step: r.env.step,
            slice: k,
            action: r.env.requested[k],
            message: r.actions[k].message,
            reward: r.rewards[k],
            conflict: r.env.conflict.conflict as u8,
            latency: o.latency_total,
            utilization: o.utilization,
        });
    }
    record.conflicts.push(r.env.conflict.conflict);
    record.system_utilization.push(r.env.system_utilization);
}

/// Per-episode gauges published on the metrics topic.
pub fn summary_samples(s: &EpisodeSummary, variant: Variant, seed: u64) -> Vec<MetricSample> {
    [
        ("episode_reward", s.mean_reward),
        ("conflict_rate", s.conflict_rate),
        ("utilization", s.mean_utilization),
        ("latency_seconds", s.mean_latency),
        ("epsilon", s.epsilon),
    ]
    .into_iter()
    .map(|(name, v)| {
        MetricSample::new(name, v, s.episode)
            .label("variant", variant)
            .label("seed", seed)
    })
    .collect()
}

/// Result of a training run.
pub struct TrainOutput {
    pub config: RunConfig,
    pub summaries: Vec<EpisodeSummary>,
    pub agents: Vec<Option<Agent>>,
    pub metrics: Arc<SharedRegistry>,
}

impl TrainOutput {
    pub fn checkpoints(&self) -> Vec<Checkpoint> {
        self.agents.iter().flatten().map(Checkpoint::from_agent).collect()
    }

    /// Mean of `f` over the last `window` episodes.
    pub fn final_mean(&self, window: usize, f: impl Fn(&EpisodeSummary) -> f64) -> f64 {
        let n = window.min(self.summaries.len()).max(1);
        let tail = &self.summaries[self.summaries.len().saturating_sub(n)..];
        tail.iter().map(f).sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Trains one variant on one seed. `on_episode` sees every record as it is
/// produced, which is how callers stream CSV rows without keeping them.
pub fn train(
    scenario: &Scenario,
    run: &RunConfig,
    mut on_episode: impl FnMut(&EpisodeRecord) -> Result<()>,
) -> Result<TrainOutput> {
    run.validate()?;
    let mut session = Session::new(scenario, run.variant, run.seed)?;
    let mut summaries = Vec::with_capacity(run.episodes);
    for e in 0..run.episodes {
        let eps = if run.variant.learns() {
            epsilon_at(scenario, e, run.episodes)
        } else {
            0.0
        };
        let beta = per_beta_at(scenario, e, run.episodes);
        let record = session.run_episode(e as u64, run.steps, eps, beta, run.variant.learns())?;
        on_episode(&record)?;
        summaries.push(record.summary());
    }
    let metrics = Arc::clone(&session.metrics);
    Ok(TrainOutput {
        config: run.clone(),
        summaries,
        agents: session.into_agents(),
        metrics,
    })
}

/// Greedy rollouts of fixed agents. Nothing is learned and the agents
/// passed in are not modified.
pub fn evaluate_agents(
    scenario: &Scenario,
    variant: Variant,
    seed: u64,
    agents: &[Option<Agent>],
    episodes: usize,
    steps: usize,
) -> Result<Vec<EpisodeRecord>> {
    RunConfig::new(variant, seed, episodes, steps).validate()?;
    let mut session = Session::with_agents(scenario, variant, seed, agents.to_vec())?;
    (0..episodes as u64)
        .map(|e| session.run_episode(EVAL_EPISODE_BASE + e, steps, 0.0, 1.0, false))
        .collect()
}

/// Greedy rollouts from saved checkpoints.
pub fn evaluate(
    scenario: &Scenario,
    run: &RunConfig,
    checkpoints: &[Checkpoint],
) -> Result<Vec<EpisodeRecord>> {
    let agents = agents_from_checkpoints(scenario, run.variant, run.seed, checkpoints)?;
    evaluate_agents(scenario, run.variant, run.seed, &agents, run.episodes, run.steps)
}

/// Per-episode conflict rates of several variants on shared seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub final_window: usize,
    /// `conflict[v][e]`: seed-averaged conflict rate.
    pub conflict: Vec<Vec<f64>>,
    pub utilization: Vec<Vec<f64>>,
    pub reward: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: Variant,
    pub final_conflict: f64,
    pub final_utilization: f64,
    pub final_reward: f64,
    /// Final conflict rate minus that of the first variant.
    pub conflict_delta: f64,
}

fn tail_mean(xs: &[f64], window: usize) -> f64 {
    let n = window.min(xs.len()).max(1);
    let tail = &xs[xs.len().saturating_sub(n)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

impl Comparison {
    pub fn summary(&self) -> Vec<SummaryRow> {
        let base = self.conflict.first().map(|c| tail_mean(c, self.final_window));
        self.variants
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let c = tail_mean(&self.conflict[i], self.final_window);
                SummaryRow {
                    variant: *v,
                    final_conflict: c,
                    final_utilization: tail_mean(&self.utilization[i], self.final_window),
                    final_reward: tail_mean(&self.reward[i], self.final_window),
                    conflict_delta: c - base.unwrap_or(c),
                }
            })
            .collect()
    }

    /// Heat-map grid: one row per variant, one column per episode.
    pub fn write_grid<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let mut header = vec!["variant".to_string()];
        header.extend((0..self.episodes).map(|e| e.to_string()));
        w.write_record(&header)?;
        for (v, row) in self.variants.iter().zip(&self.conflict) {
            let mut rec = vec![v.to_string()];
            rec.extend(row.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Human-readable table of the final-window means.
    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:>10} {:>12} {:>10} {:>10}\n",
            "variant", "conflict", "utilization", "reward", "delta"
        );
        for r in self.summary() {
            out.push_str(&format!(
                "{:<16} {:>10.4} {:>12.4} {:>10.4} {:>+10.4}\n",
                r.variant.as_str(),
                r.final_conflict,
                r.final_utilization,
                r.final_reward,
                r.conflict_delta
            ));
        }
        out
    }
}

/// Parses a grid written by [`Comparison::write_grid`] back into
/// `(variant, per-episode conflict rates)` rows.
pub fn read_grid<R: std::io::Read>(r: R, path: &std::path::Path) -> Result<Vec<(Variant, Vec<f64>)>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let variant = Variant::parse(rec.get(0).unwrap_or(""))?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|x| x.parse::<f64>().map_err(|e| Error::artifact(path, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        out.push((variant, vals));
    }
    Ok(out)
}

/// Trains every variant on every seed. `progress` is called after each run.
pub fn compare(
    scenario: &Scenario,
    variants: &[Variant],
    seeds: &[u64],
    episodes: usize,
    steps: usize,
    mut progress: impl FnMut(&TrainOutput),
) -> Result<Comparison> {
    if seeds.is_empty() {
        return Err(Error::config("run.seeds", "at least one seed is required"));
    }
    let mut conflict = Vec::new();
    let mut utilization = Vec::new();
    let mut reward = Vec::new();
    for &v in variants {
        let mut c = vec![0.0; episodes];
        let mut u = vec![0.0; episodes];
        let mut r = vec![0.0; episodes];
        for &seed in seeds {
            let out = train(scenario, &RunConfig::new(v, seed, episodes, steps), |_| Ok(()))?;
            for (e, s) in out.summaries.iter().enumerate() {
                c[e] += s.conflict_rate / seeds.len() as f64;
                u[e] += s.mean_utilization / seeds.len() as f64;
                r[e] += s.mean_reward / seeds.len() as f64;
            }
            progress(&out);
        }
        conflict.push(c);
        utilization.push(u);
        reward.push(r);
    }
    Ok(Comparison {
        variants: variants.to_vec(),
        seeds: seeds.to_vec(),
        episodes,
        final_window: scenario.metrics.final_window,
        conflict,
        utilization,
        reward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Scenario {
        Scenario::desk()
            .with_source(|f| {
                f.agent.hidden = vec![8];
                f.agent.batch_size = 8;
                f.agent.learn_start = 16;
                f.agent.buffer_capacity = 256;
            })
            .unwrap()
    }

    #[test]
    fn static_baseline_requests_isolation_shares() {
        let sc = Scenario::paper();
        let out = train(&sc, &RunConfig::new(Variant::StaticBaseline, 3, 3, 20), |r| {
            assert!(r.rows.iter().all(|row| row.action == sc.slices[row.slice].f_th));
            assert!(r.rows.iter().all(|row| row.message == 0));
            Ok(())
        })
        .unwrap();
        assert!(out.summaries.iter().all(|s| s.conflict_rate == 0.0));
        assert!(out.checkpoints().is_empty());
    }

    #[test]
    fn records_and_metrics_line_up() {
        let sc = small();
        let out = train(&sc, &RunConfig::new(Variant::MaIb, 1, 4, 30), |r| {
            assert_eq!(r.rows.len(), 90);
            assert!(r.rows.iter().all(|row| (1..=3).contains(&row.message)));
            Ok(())
        })
        .unwrap();
        assert_eq!(out.summaries.len(), 4);
        let labels = [("seed", "1"), ("variant", "ma-ib")]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let series = out.metrics.series("conflict_rate", &labels);
        assert_eq!(series.len(), 4);
        for (s, (i, v)) in out.summaries.iter().zip(series) {
            assert_eq!(s.episode, i);
            assert_eq!(s.conflict_rate, v);
        }
        assert_eq!(out.checkpoints().len(), 3);
    }

    #[test]
    fn same_seed_same_records() {
        let sc = small();
        let run = RunConfig::new(Variant::MaApplied, 9, 3, 25);
        let mut a = Vec::new();
        let mut b = Vec::new();
        train(&sc, &run, |r| {
            a.push(r.clone());
            Ok(())
        })
        .unwrap();
        train(&sc, &run, |r| {
            b.push(r.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_theta_never_negative() {
        let mut sc = small();
        sc.reward.theta = 0.0;
        train(&sc, &RunConfig::new(Variant::MaVanilla, 2, 2, 40), |r| {
            assert!(r.rows.iter().all(|row| row.reward >= 0.0));
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn evaluation_is_deterministic_and_leaves_checkpoints_alone() {
        let sc = small();
        let agents = build_agents(&sc, Variant::MaIb, 4).unwrap();
        let before: Vec<String> = agents.iter().flatten().map(|a| Checkpoint::from_agent(a).to_text()).collect();
        let a = evaluate_agents(&sc, Variant::MaIb, 4, &agents, 2, 20).unwrap();
        let b = evaluate_agents(&sc, Variant::MaIb, 4, &agents, 2, 20).unwrap();
        assert_eq!(a, b);
        let after: Vec<String> = agents.iter().flatten().map(|a| Checkpoint::from_agent(a).to_text()).collect();
        assert_eq!(before, after);
        assert!(a.iter().all(|r| r.episode >= EVAL_EPISODE_BASE));
    }

    #[test]
    fn checkpoints_must_match_slices() {
        let sc = small();
        let agents = build_agents(&sc, Variant::MaVanilla, 1).unwrap();
        let mut cks: Vec<Checkpoint> = agents.iter().flatten().map(Checkpoint::from_agent).collect();
        let run = RunConfig::new(Variant::MaVanilla, 1, 1, 5);
        assert!(evaluate(&sc, &run, &cks).is_ok());
        cks.swap(0, 1);
        assert!(matches!(evaluate(&sc, &run, &cks), Err(Error::Checkpoint(_))));
        assert!(matches!(evaluate(&sc, &run, &cks[..2]), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn comparison_grid_shape_and_self_delta() {
        let sc = small();
        let cmp = compare(&sc, &[Variant::MaVanilla, Variant::MaVanilla], &[1], 3, 10, |_| {}).unwrap();
        assert_eq!(cmp.conflict.len(), 2);
        assert!(cmp.conflict.iter().all(|r| r.len() == 3));
        let rows = cmp.summary();
        assert_eq!(rows[1].conflict_delta, 0.0);
        let mut buf = Vec::new();
        cmp.write_grid(&mut buf).unwrap();
        let back = read_grid(buf.as_slice(), std::path::Path::new("g.csv")).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].1, cmp.conflict[0]);
    }

    #[test]
    fn schedules_are_monotone() {
        let sc = small();
        let eps: Vec<f64> = (0..100).map(|e| epsilon_at(&sc, e, 100)).collect();
        assert_eq!(eps[0], sc.agent.eps_start);
        assert!(eps.windows(2).all(|w| w[1] <= w[0]));
        assert!((eps[99] - sc.agent.eps_end).abs() < 1e-12);
        assert_eq!(per_beta_at(&sc, 99, 100), sc.agent.per_beta_end);
        assert!(RunConfig::new(Variant::MaIb, 1, 0, 5).validate().is_err());
    }
}
