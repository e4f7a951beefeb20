//! Socket mode: the bus is served over TCP, every agent runs on its own
//! thread with its own connection, and the server waits at a step barrier.

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crate::agent::Agent;
use crate::bus::socket::{BusServer, RemoteBus};
use crate::bus::{subscribe, Bus, BusClient, Envelope, Payload, TopicLayout};
use crate::config::Scenario;
use crate::error::{Error, Result};
use crate::metrics::SharedRegistry;

use super::engine::{build_agents, epsilon_at, per_beta_at, summary_samples, RunConfig};
use super::node::{AgentNode, Wait};
use super::record::{EpisodeRecord, StepRow};
use super::server::{Server, SERVER};

pub struct DistributedOutput {
    pub records: Vec<EpisodeRecord>,
    pub agents: Vec<Option<Agent>>,
    pub metrics: Arc<SharedRegistry>,
    pub bus: Arc<Bus>,
}

/// Runs `run` with every participant connected through a TCP bus bound to
/// `addr`. With `learning` off the agents act greedily.
pub fn run_distributed(scenario: &Scenario, run: &RunConfig, addr: &str, learning: bool) -> Result<DistributedOutput> {
    run.validate()?;
    let k = scenario.num_slices();
    let layout = TopicLayout::new(k);
    let bus = Arc::new(Bus::with_layout(scenario.bus.retention, scenario.bus.max_payload, &layout));
    let listener = BusServer::start(Arc::clone(&bus), addr)?;
    let bound = listener.addr();
    let wait = Wait(Some(Duration::from_millis(scenario.bus.step_timeout_ms)));
    let learning = learning && run.variant.learns();

    let schedule: Vec<(f64, f64)> = (0..run.episodes)
        .map(|e| {
            let eps = if learning { epsilon_at(scenario, e, run.episodes) } else { 0.0 };
            (eps, per_beta_at(scenario, e, run.episodes))
        })
        .collect();

    // The server must subscribe before any agent can publish.
    let server_conn = RemoteBus::connect(bound)?;
    let mut server = Server::new(scenario, run.seed, &server_conn, &layout)?;

    let mut handles = Vec::with_capacity(k);
    for (i, agent) in build_agents(scenario, run.variant, run.seed)?.into_iter().enumerate() {
        let layout = layout.clone();
        let schedule = schedule.clone();
        let f_th = scenario.slices[i].f_th;
        let (variant, steps) = (run.variant, run.steps as u64);
        handles.push(thread::spawn(move || -> Result<Option<Agent>> {
            let conn = RemoteBus::connect(bound)?;
            let mut node = AgentNode::new(i, k, variant, f_th, agent, &conn, &layout)?;
            for &(eps, beta) in &schedule {
                node.begin_episode(eps, beta, learning);
                for step in 0..steps {
                    node.phase_message(&conn, &layout, step, wait)?;
                    node.phase_act(&conn, &layout, step, wait)?;
                    node.phase_reward(&conn, step, wait)?;
                }
                node.end_episode(&conn, steps, wait)?;
            }
            Ok(node.agent)
        }));
    }

    let metrics = Arc::new(SharedRegistry::new());
    let served = drive_server(&mut server, &server_conn, &layout, run, &schedule, wait, &metrics);
    let mut agents = Vec::with_capacity(k);
    let mut agent_err = None;
    for h in handles {
        match h.join() {
            Ok(Ok(a)) => agents.push(a),
            Ok(Err(e)) => {
                agent_err.get_or_insert(e);
            }
            Err(_) => {
                agent_err.get_or_insert(Error::Orchestration("agent thread panicked".into()));
            }
        }
    }
    listener.shutdown();
    let records = served?;
    if let Some(e) = agent_err {
        return Err(e);
    }
    Ok(DistributedOutput {
        records,
        agents,
        metrics,
        bus,
    })
}

fn drive_server(
    server: &mut Server,
    conn: &dyn BusClient,
    layout: &TopicLayout,
    run: &RunConfig,
    schedule: &[(f64, f64)],
    wait: Wait,
    metrics: &SharedRegistry,
) -> Result<Vec<EpisodeRecord>> {
    let mut metrics_sub = subscribe(conn, "metrics-exporter", layout.metrics(), 0)?;
    let mut records = Vec::with_capacity(run.episodes);
    for (e, &(eps, _)) in schedule.iter().enumerate() {
        let episode = e as u64;
        server.begin_episode(episode);
        let mut record = EpisodeRecord::new(episode, eps);
        for step in 0..run.steps as u64 {
            server.publish_observations(conn, step)?;
            let actions = server.collect_actions(conn, step, wait)?;
            let r = server.apply(conn, actions)?;
            for (k, o) in r.env.outcomes.iter().enumerate() {
                record.rows.push(StepRow {
                    episode,
                    step,
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
        server.publish_episode_end(conn, run.steps as u64)?;
        for sample in summary_samples(&record.summary(), run.variant, run.seed) {
            conn.publish(Envelope::new(layout.metrics(), SERVER, episode, Payload::Metric(sample)))?;
        }
        for env in metrics_sub.poll(conn)? {
            if let Payload::Metric(m) = env.payload {
                metrics.append(m)?;
            }
        }
        records.push(record);
    }
    Ok(records)
}
