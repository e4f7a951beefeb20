//! Ordered topic-based publish/subscribe.
//!
//! Every topic is an append-only log with its own sequence counter. Readers
//! keep their own offsets, so each subscriber sees every retained envelope
//! exactly once and in order. [`Bus`] is the in-process implementation;
//! [`socket`] serves the same interface over TCP.

pub mod socket;
pub mod wire;

use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;

use crate::agent::Observation;
use crate::error::{Error, Result};
use crate::metrics::MetricSample;

pub use wire::{decode_stream, decode_wire, encode_wire};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tick {
    Step,
    EpisodeEnd,
    Shutdown,
}

impl Tick {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tick::Step => "step",
            Tick::EpisodeEnd => "episode-end",
            Tick::Shutdown => "shutdown",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "step" => Some(Tick::Step),
            "episode-end" => Some(Tick::EpisodeEnd),
            "shutdown" => Some(Tick::Shutdown),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Tick(Tick),
    Observation {
        slice: usize,
        obs: Observation,
    },
    /// A symbol in `1..=M`.
    AgentMessage {
        slice: usize,
        symbol: u8,
    },
    ActionReport {
        slice: usize,
        action: usize,
        /// Requested allocation in Gcycle/s.
        allocation: f64,
        /// Symbol sent this step, 0 if none.
        message: u8,
    },
    RewardNotice {
        slice: usize,
        reward: f64,
        conflict: bool,
        latency: f64,
        utilization: f64,
    },
    Metric(MetricSample),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Tick(_) => "tick",
            Payload::Observation { .. } => "obs",
            Payload::AgentMessage { .. } => "msg",
            Payload::ActionReport { .. } => "action",
            Payload::RewardNotice { .. } => "reward",
            Payload::Metric(_) => "metric",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub topic: String,
    /// Assigned by the bus on publish.
    pub seq: u64,
    pub sender: String,
    pub step: u64,
    pub payload: Payload,
}

impl Envelope {
    pub fn new(topic: impl Into<String>, sender: impl Into<String>, step: u64, payload: Payload) -> Self {
        Self {
            topic: topic.into(),
            seq: 0,
            sender: sender.into(),
            step,
            payload,
        }
    }
}

/// Topic names used by the orchestrator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicLayout {
    pub slices: usize,
}

impl TopicLayout {
    pub fn new(slices: usize) -> Self {
        Self { slices }
    }

    pub fn obs(&self, k: usize) -> String {
        format!("obs.{k}")
    }

    pub fn msg_broadcast(&self) -> &'static str {
        "msg.broadcast"
    }

    pub fn action(&self, k: usize) -> String {
        format!("action.{k}")
    }

    pub fn reward(&self, k: usize) -> String {
        format!("reward.{k}")
    }

    pub fn metrics(&self) -> &'static str {
        "metrics"
    }

    pub fn control(&self) -> &'static str {
        "control"
    }

    pub fn all(&self) -> Vec<String> {
        let mut v = vec![
            self.control().to_string(),
            self.msg_broadcast().to_string(),
            self.metrics().to_string(),
        ];
        for k in 0..self.slices {
            v.push(self.obs(k));
            v.push(self.action(k));
            v.push(self.reward(k));
        }
        v
    }
}

/// The operations shared by the in-process bus and remote clients.
pub trait BusClient: Send + Sync {
    fn create_topic(&self, topic: &str) -> Result<()>;
    /// Appends an envelope; the bus assigns and returns its sequence number.
    fn publish(&self, envelope: Envelope) -> Result<u64>;
    /// Up to `max` envelopes with `seq >= from_seq`, in order. `consumer`
    /// names the reader for the delivery audit.
    fn fetch(&self, consumer: &str, topic: &str, from_seq: u64, max: usize) -> Result<Vec<Envelope>>;
}

/// A reader position on one topic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    pub consumer: String,
    pub topic: String,
    pub next: u64,
}

impl Subscription {
    /// All new envelopes since the last poll.
    pub fn poll(&mut self, bus: &dyn BusClient) -> Result<Vec<Envelope>> {
        let got = bus.fetch(&self.consumer, &self.topic, self.next, usize::MAX)?;
        if let Some(last) = got.last() {
            self.next = last.seq + 1;
        }
        Ok(got)
    }
}

pub fn subscribe(bus: &dyn BusClient, consumer: &str, topic: &str, from_seq: u64) -> Result<Subscription> {
    // probe so an unknown topic fails at subscribe time
    bus.fetch(consumer, topic, u64::MAX, 0)?;
    Ok(Subscription {
        consumer: consumer.to_string(),
        topic: topic.to_string(),
        next: from_seq,
    })
}

/// One delivered envelope as seen by the audit log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub consumer: String,
    pub topic: String,
    pub sender: String,
    pub kind: &'static str,
}

#[derive(Debug, Default)]
struct TopicLog {
    next_seq: u64,
    entries: VecDeque<Envelope>,
}

#[derive(Debug)]
struct Inner {
    topics: BTreeMap<String, TopicLog>,
    audit: Option<Vec<Delivery>>,
}

/// In-process bus.
#[derive(Debug)]
pub struct Bus {
    inner: Mutex<Inner>,
    retention: usize,
    max_payload: usize,
}

impl Bus {
    pub fn new(retention: usize, max_payload: usize) -> Self {
        Self {
            inner: Mutex::new(Inner {
                topics: BTreeMap::new(),
                audit: None,
            }),
            retention: retention.max(1),
            max_payload,
        }
    }

    pub fn with_layout(retention: usize, max_payload: usize, layout: &TopicLayout) -> Self {
        let bus = Self::new(retention, max_payload);
        for t in layout.all() {
            bus.create_topic(&t).expect("fresh bus accepts topics");
        }
        bus
    }

    /// Starts recording every delivery.
    pub fn enable_audit(&self) {
        self.inner.lock().unwrap().audit.get_or_insert_with(Vec::new);
    }

    pub fn audit(&self) -> Vec<Delivery> {
        self.inner.lock().unwrap().audit.clone().unwrap_or_default()
    }

    pub fn topics(&self) -> Vec<String> {
        self.inner.lock().unwrap().topics.keys().cloned().collect()
    }

    /// Next sequence number per topic.
    pub fn high_water(&self, topic: &str) -> Option<u64> {
        self.inner.lock().unwrap().topics.get(topic).map(|t| t.next_seq)
    }

    /// The retained logs of every topic, encoded in topic order.
    pub fn dump(&self) -> Vec<u8> {
        let inner = self.inner.lock().unwrap();
        let mut out = Vec::new();
        for log in inner.topics.values() {
            for e in &log.entries {
                out.extend(encode_wire(e));
            }
        }
        out
    }
}

impl BusClient for Bus {
    fn create_topic(&self, topic: &str) -> Result<()> {
        if topic.is_empty() {
            return Err(Error::Bus("topic name is empty".into()));
        }
        self.inner.lock().unwrap().topics.entry(topic.to_string()).or_default();
        Ok(())
    }

    fn publish(&self, mut envelope: Envelope) -> Result<u64> {
        if envelope.topic.is_empty() {
            return Err(Error::Bus("topic name is empty".into()));
        }
        if let Payload::Metric(_) = envelope.payload {
            let size = encode_wire(&envelope).len();
            if size > self.max_payload {
                return Err(Error::Bus(format!(
                    "record of {size} bytes exceeds the {} byte limit",
                    self.max_payload
                )));
            }
        }
        let mut inner = self.inner.lock().unwrap();
        let log = inner.topics.entry(envelope.topic.clone()).or_default();
        let seq = log.next_seq;
        envelope.seq = seq;
        log.next_seq += 1;
        log.entries.push_back(envelope);
        while log.entries.len() > self.retention {
            log.entries.pop_front();
        }
        Ok(seq)
    }

    fn fetch(&self, consumer: &str, topic: &str, from_seq: u64, max: usize) -> Result<Vec<Envelope>> {
        let mut inner = self.inner.lock().unwrap();
        let log = inner
            .topics
            .get(topic)
            .ok_or_else(|| Error::Bus(format!("unknown topic `{topic}`")))?;
        let first = log.entries.front().map(|e| e.seq).unwrap_or(log.next_seq);
        if from_seq < first && max > 0 {
            return Err(Error::Bus(format!(
                "offset {from_seq} on `{topic}` is no longer retained (oldest is {first})"
            )));
        }
        let skip = from_seq.saturating_sub(first) as usize;
        let got: Vec<Envelope> = log.entries.iter().skip(skip).take(max).cloned().collect();
        if let Some(audit) = inner.audit.as_mut() {
            audit.extend(got.iter().map(|e| Delivery {
                consumer: consumer.to_string(),
                topic: e.topic.clone(),
                sender: e.sender.clone(),
                kind: e.payload.kind(),
            }));
        }
        Ok(got)
    }
}
