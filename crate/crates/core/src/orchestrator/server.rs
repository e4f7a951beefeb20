//! The central hub: owns the environment, gathers actions, detects
//! conflicts and publishes rewards.

use crate::bus::{subscribe, BusClient, Envelope, Payload, Subscription, Tick, TopicLayout};
use crate::config::Scenario;
use crate::env::{EnvStep, SlicingEnv};
use crate::error::{Error, Result};
use crate::queueing::{compute_reward, RewardParams};

use super::node::Wait;

pub const SERVER: &str = "server";

/// A slice's report for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionReport {
    pub action: usize,
    pub allocation: f64,
    pub message: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub env: EnvStep,
    pub actions: Vec<ActionReport>,
    pub rewards: Vec<f64>,
}

pub struct Server {
    pub env: SlicingEnv,
    layout: TopicLayout,
    reward: RewardParams,
    action_subs: Vec<Subscription>,
    backlogs: Vec<Vec<Envelope>>,
}

impl Server {
    pub fn new(scenario: &Scenario, seed: u64, bus: &dyn BusClient, layout: &TopicLayout) -> Result<Self> {
        let env = SlicingEnv::new(scenario, seed)?;
        let action_subs = (0..layout.slices)
            .map(|k| subscribe(bus, SERVER, &layout.action(k), 0))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            env,
            layout: layout.clone(),
            reward: scenario.reward,
            backlogs: vec![Vec::new(); layout.slices],
            action_subs,
        })
    }

    pub fn begin_episode(&mut self, episode: u64) {
        self.env.reset(episode);
    }

    /// Sends each slice its own observation for `step`.
    pub fn publish_observations(&self, bus: &dyn BusClient, step: u64) -> Result<()> {
        bus.publish(Envelope::new(self.layout.control(), SERVER, step, Payload::Tick(Tick::Step)))?;
        for (k, obs) in self.env.observations().into_iter().enumerate() {
            bus.publish(Envelope::new(
                self.layout.obs(k),
                SERVER,
                step,
                Payload::Observation { slice: k, obs },
            ))?;
        }
        Ok(())
    }

    pub fn publish_episode_end(&self, bus: &dyn BusClient, steps: u64) -> Result<()> {
        for (k, obs) in self.env.observations().into_iter().enumerate() {
            bus.publish(Envelope::new(
                self.layout.obs(k),
                SERVER,
                steps,
                Payload::Observation { slice: k, obs },
            ))?;
        }
        bus.publish(Envelope::new(
            self.layout.control(),
            SERVER,
            steps,
            Payload::Tick(Tick::EpisodeEnd),
        ))?;
        Ok(())
    }

    /// Step barrier: one action report per slice for `step`.
    pub fn collect_actions(&mut self, bus: &dyn BusClient, step: u64, wait: Wait) -> Result<Vec<ActionReport>> {
        let mut out = Vec::with_capacity(self.layout.slices);
        for k in 0..self.layout.slices {
            let what = format!("action of slice {k} at step {step}");
            let got = wait.poll(&what, bus, &mut self.action_subs[k], &mut self.backlogs[k], |got| {
                let i = got.iter().position(|e| {
                    e.step == step && matches!(e.payload, Payload::ActionReport { slice, .. } if slice == k)
                })?;
                let e = got.drain(..=i).last()?;
                match e.payload {
                    Payload::ActionReport {
                        action,
                        allocation,
                        message,
                        ..
                    } => Some(ActionReport {
                        action,
                        allocation,
                        message,
                    }),
                    _ => None,
                }
            });
            match got {
                Ok(a) => out.push(a),
                Err(Error::Orchestration(m)) => {
                    return Err(Error::Orchestration(format!("missing agent action: {m}")))
                }
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    /// Steps the environment on the gathered actions and publishes rewards.
    pub fn apply(&mut self, bus: &dyn BusClient, actions: Vec<ActionReport>) -> Result<StepResult> {
        let requested: Vec<f64> = actions.iter().map(|a| a.allocation).collect();
        let env = self.env.step(&requested)?;
        let mut rewards = Vec::with_capacity(actions.len());
        for (k, o) in env.outcomes.iter().enumerate() {
            let r = compute_reward(k, &env.conflict, o.latency_total, &self.reward);
            rewards.push(r);
            bus.publish(Envelope::new(
                self.layout.reward(k),
                SERVER,
                env.step,
                Payload::RewardNotice {
                    slice: k,
                    reward: r,
                    conflict: env.conflict.conflict,
                    latency: o.latency_total,
                    utilization: o.utilization,
                },
            ))?;
        }
        Ok(StepResult { env, actions, rewards })
    }
}
