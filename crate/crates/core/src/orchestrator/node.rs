//! The agent side of the step protocol.
//!
//! A node reads only its own observation topic, the message broadcast topic
//! (peer symbols) and its own reward topic. It never sees another slice's
//! observation.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use crate::agent::{Agent, Observation, Transition, NULL_SYMBOL};
use crate::bus::{subscribe, BusClient, Envelope, Payload, Subscription, TopicLayout};
use crate::error::{Error, Result};

use super::Variant;

/// How long a node may wait for a missing envelope. `None` means the
/// envelope must already be there (single-threaded scheduling).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wait(pub Option<Duration>);

impl Wait {
    pub const NOW: Wait = Wait(None);

    /// Polls `sub` into `backlog` until `take` finds what it needs; `take`
    /// removes whatever it consumes.
    pub fn poll<T>(
        &self,
        what: &str,
        bus: &dyn BusClient,
        sub: &mut Subscription,
        backlog: &mut Vec<Envelope>,
        mut take: impl FnMut(&mut Vec<Envelope>) -> Option<T>,
    ) -> Result<T> {
        let start = Instant::now();
        loop {
            backlog.extend(sub.poll(bus)?);
            if let Some(v) = take(backlog) {
                return Ok(v);
            }
            match self.0 {
                Some(limit) if start.elapsed() < limit => std::thread::sleep(Duration::from_micros(200)),
                _ => return Err(Error::Orchestration(format!("timed out waiting for {what}"))),
            }
        }
    }
}

/// Finds the first envelope `f` accepts and drops it together with
/// everything before it.
fn take_first<T>(got: &mut Vec<Envelope>, f: impl Fn(&Envelope) -> Option<T>) -> Option<T> {
    let (i, v) = got.iter().enumerate().find_map(|(i, e)| f(e).map(|v| (i, v)))?;
    got.drain(..=i);
    Some(v)
}

#[derive(Debug, Clone)]
struct Pending {
    obs: Observation,
    recv: Vec<u8>,
    action: usize,
    message: usize,
    reward: f64,
}

/// One slice's participant.
pub struct AgentNode {
    pub slice: usize,
    pub name: String,
    pub variant: Variant,
    pub f_th: f64,
    pub agent: Option<Agent>,
    peers: Vec<usize>,
    obs_sub: Subscription,
    msg_sub: Subscription,
    reward_sub: Subscription,
    obs_backlog: Vec<Envelope>,
    msg_backlog: Vec<Envelope>,
    reward_backlog: Vec<Envelope>,
    inbox: BTreeMap<u64, Vec<(usize, u8)>>,
    obs: Option<Observation>,
    prev_recv: Vec<u8>,
    recv: Vec<u8>,
    sent: Option<usize>,
    action: usize,
    pending: Option<Pending>,
    pub epsilon: f64,
    pub learning: bool,
    pub per_beta: f64,
    env_steps: u64,
}

impl AgentNode {
    pub fn new(
        slice: usize,
        slices: usize,
        variant: Variant,
        f_th: f64,
        agent: Option<Agent>,
        bus: &dyn BusClient,
        layout: &TopicLayout,
    ) -> Result<Self> {
        let name = format!("agent-{slice}");
        let peers: Vec<usize> = (0..slices).filter(|&p| p != slice).collect();
        let start = |topic: &str| subscribe(bus, &name, topic, 0);
        Ok(Self {
            slice,
            variant,
            f_th,
            agent,
            obs_sub: start(&layout.obs(slice))?,
            msg_sub: start(layout.msg_broadcast())?,
            reward_sub: start(&layout.reward(slice))?,
            name,
            obs_backlog: Vec::new(),
            msg_backlog: Vec::new(),
            reward_backlog: Vec::new(),
            inbox: BTreeMap::new(),
            obs: None,
            prev_recv: vec![NULL_SYMBOL; peers.len()],
            recv: vec![NULL_SYMBOL; peers.len()],
            peers,
            sent: None,
            action: 0,
            pending: None,
            epsilon: 0.0,
            learning: false,
            per_beta: 1.0,
            env_steps: 0,
        })
    }

    pub fn begin_episode(&mut self, epsilon: f64, per_beta: f64, learning: bool) {
        self.epsilon = epsilon;
        self.per_beta = per_beta;
        self.learning = learning;
        self.prev_recv = vec![NULL_SYMBOL; self.peers.len()];
        self.recv = self.prev_recv.clone();
        self.pending = None;
        self.obs = None;
        self.inbox.clear();
    }

    fn read_obs(&mut self, bus: &dyn BusClient, step: u64, wait: Wait) -> Result<Observation> {
        let slice = self.slice;
        let what = format!("observation {step} on {}", self.name);
        wait.poll(&what, bus, &mut self.obs_sub, &mut self.obs_backlog, |got| {
            take_first(got, |e| match &e.payload {
                Payload::Observation { slice: s, obs } if *s == slice && e.step == step => Some(*obs),
                _ => None,
            })
        })
    }

    /// Phase one: read `o_t` and, for communicating variants, broadcast a
    /// symbol chosen from `(o_t, m_{t-1})`.
    pub fn phase_message(&mut self, bus: &dyn BusClient, layout: &TopicLayout, step: u64, wait: Wait) -> Result<()> {
        let obs = self.read_obs(bus, step, wait)?;
        self.obs = Some(obs);
        self.sent = None;
        if !self.variant.communicates() {
            return Ok(());
        }
        let agent = self.agent.as_mut().expect("communicating variants have agents");
        let m = agent.choose_message(&obs, &self.prev_recv, self.epsilon)?;
        self.sent = Some(m);
        bus.publish(Envelope::new(
            layout.msg_broadcast(),
            self.name.clone(),
            step,
            Payload::AgentMessage {
                slice: self.slice,
                symbol: m as u8 + 1,
            },
        ))?;
        Ok(())
    }

    fn collect_messages(&mut self, bus: &dyn BusClient, step: u64, wait: Wait) -> Result<Vec<u8>> {
        let peers = self.peers.clone();
        let inbox = &mut self.inbox;
        let what = format!("peer messages for step {step} on {}", self.name);
        wait.poll(&what, bus, &mut self.msg_sub, &mut self.msg_backlog, |got| {
            for e in got.drain(..) {
                if let Payload::AgentMessage { slice, symbol } = e.payload {
                    let entry = inbox.entry(e.step).or_default();
                    if !entry.contains(&(slice, symbol)) {
                        entry.push((slice, symbol));
                    }
                }
            }
            let have = inbox.get(&step)?;
            peers
                .iter()
                .map(|p| have.iter().find(|(s, _)| s == p).map(|(_, sym)| *sym))
                .collect::<Option<Vec<u8>>>()
        })
    }

    /// Phase two: read the peers' symbols for this step, store the previous
    /// transition and report an allocation.
    pub fn phase_act(&mut self, bus: &dyn BusClient, layout: &TopicLayout, step: u64, wait: Wait) -> Result<()> {
        let obs = self
            .obs
            .ok_or_else(|| Error::Orchestration(format!("{} acted before observing", self.name)))?;
        if self.variant.communicates() {
            self.recv = self.collect_messages(bus, step, wait)?;
            self.inbox.retain(|s, _| *s > step);
        }
        self.flush_pending(obs);

        let (action, message, allocation) = match self.agent.as_mut() {
            None => (0, 0u8, self.f_th),
            Some(agent) => {
                let (a, m) = match self.sent {
                    Some(m) => (agent.choose_action(&obs, &self.recv, m, self.epsilon)?, m),
                    None => agent.choose_joint(&obs, &self.recv, self.epsilon)?,
                };
                self.sent = Some(m);
                let symbol = if self.variant.communicates() { m as u8 + 1 } else { 0 };
                (a, symbol, agent.allocation(a))
            }
        };
        self.action = action;
        bus.publish(Envelope::new(
            layout.action(self.slice),
            self.name.clone(),
            step,
            Payload::ActionReport {
                slice: self.slice,
                action,
                allocation,
                message,
            },
        ))?;
        Ok(())
    }

    /// Phase three: read the reward, remember the step and learn.
    pub fn phase_reward(&mut self, bus: &dyn BusClient, step: u64, wait: Wait) -> Result<f64> {
        let slice = self.slice;
        let what = format!("reward {step} on {}", self.name);
        let reward = wait.poll(&what, bus, &mut self.reward_sub, &mut self.reward_backlog, |got| {
            take_first(got, |e| match e.payload {
                Payload::RewardNotice { slice: s, reward, .. } if s == slice && e.step == step => Some(reward),
                _ => None,
            })
        })?;
        if let (Some(_), Some(obs), Some(m)) = (self.agent.as_ref(), self.obs, self.sent) {
            self.pending = Some(Pending {
                obs,
                recv: self.recv.clone(),
                action: self.action,
                message: m,
                reward,
            });
        }
        self.prev_recv = self.recv.clone();
        self.env_steps += 1;
        if self.learning {
            if let Some(agent) = self.agent.as_mut() {
                if self.env_steps % agent.params.train_every.max(1) as u64 == 0 {
                    agent.learn(self.per_beta)?;
                }
            }
        }
        Ok(reward)
    }

    /// Reads the observation that follows the last step and stores the final
    /// transition of the episode.
    pub fn end_episode(&mut self, bus: &dyn BusClient, steps: u64, wait: Wait) -> Result<()> {
        let obs = self.read_obs(bus, steps, wait)?;
        self.flush_pending(obs);
        Ok(())
    }

    fn flush_pending(&mut self, next_obs: Observation) {
        if let (Some(p), Some(agent)) = (self.pending.take(), self.agent.as_mut()) {
            if self.learning {
                agent.remember(Transition {
                    obs: p.obs,
                    recv: p.recv,
                    action: p.action,
                    message: p.message,
                    reward: p.reward,
                    next_obs,
                    next_recv: self.recv.clone(),
                    terminal: false,
                });
            }
        }
    }
}
