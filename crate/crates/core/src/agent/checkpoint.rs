//! Plain-text agent checkpoints.
//!
//! ```text
//! slicing-marl-checkpoint 1
//! variant ma-ib
//! agent 0
//! peers 2
//! messages 3
//! f_th 15
//! levels 3.75 6.42857 ...
//! qnet_sizes 4 64 64 24
//! qnet_params <n>
//! <n values, whitespace separated>
//! adam <t> <n>
//! <n first moments>
//! <n second moments>
//! ib_sizes <enc sizes> ; <dec sizes>      (ma-ib only)
//! ib_beta <beta>
//! ib_params <n>
//! <n values>
//! end
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load cycle is exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Optimizer;
use crate::orchestrator::Variant;

use super::Agent;

const MAGIC: &str = "slicing-marl-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct IbState {
    pub enc_sizes: Vec<usize>,
    pub dec_sizes: Vec<usize>,
    pub beta: f64,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub variant: Variant,
    pub agent: usize,
    pub peers: usize,
    pub messages: usize,
    pub f_th: f64,
    pub levels: Vec<f64>,
    pub qnet_sizes: Vec<usize>,
    pub qnet_params: Vec<f64>,
    pub adam: Option<AdamState>,
    pub ib: Option<IbState>,
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn from_agent(agent: &Agent) -> Self {
        let adam = match &agent.optimizer {
            Optimizer::Adam(a) => Some(AdamState {
                t: a.t,
                m: a.m.to_flat(),
                v: a.v.to_flat(),
            }),
            Optimizer::Sgd => None,
        };
        Self {
            variant: agent.variant,
            agent: agent.id,
            peers: agent.peers,
            messages: agent.messages(),
            f_th: agent.f_th,
            levels: agent.space.levels.clone(),
            qnet_sizes: agent.online.mlp.sizes(),
            qnet_params: agent.online.mlp.to_flat(),
            adam,
            ib: agent.ib.as_ref().map(|ib| IbState {
                enc_sizes: ib.enc.sizes(),
                dec_sizes: ib.dec.sizes(),
                beta: ib.beta,
                params: ib.to_flat(),
            }),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "variant {}", self.variant);
        let _ = writeln!(s, "agent {}", self.agent);
        let _ = writeln!(s, "peers {}", self.peers);
        let _ = writeln!(s, "messages {}", self.messages);
        let _ = writeln!(s, "f_th {}", self.f_th);
        let _ = writeln!(s, "levels {}", join(&self.levels));
        let _ = writeln!(s, "qnet_sizes {}", join(&self.qnet_sizes));
        let _ = writeln!(s, "qnet_params {}", self.qnet_params.len());
        let _ = writeln!(s, "{}", join(&self.qnet_params));
        if let Some(a) = &self.adam {
            let _ = writeln!(s, "adam {} {}", a.t, a.m.len());
            let _ = writeln!(s, "{}", join(&a.m));
            let _ = writeln!(s, "{}", join(&a.v));
        }
        if let Some(ib) = &self.ib {
            let _ = writeln!(s, "ib_sizes {} ; {}", join(&ib.enc_sizes), join(&ib.dec_sizes));
            let _ = writeln!(s, "ib_beta {}", ib.beta);
            let _ = writeln!(s, "ib_params {}", ib.params.len());
            let _ = writeln!(s, "{}", join(&ib.params));
        }
        s.push_str("end\n");
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("truncated before {what}")));
        if next("header")? != MAGIC {
            return Err(bad("missing checkpoint header"));
        }
        let variant = Variant::parse(field(next("variant")?, "variant")?)?;
        let agent = num(field(next("agent")?, "agent")?)?;
        let peers = num(field(next("peers")?, "peers")?)?;
        let messages = num(field(next("messages")?, "messages")?)?;
        let f_th = num(field(next("f_th")?, "f_th")?)?;
        let levels = nums(field(next("levels")?, "levels")?)?;
        let qnet_sizes = nums(field(next("qnet_sizes")?, "qnet_sizes")?)?;
        let n: usize = num(field(next("qnet_params")?, "qnet_params")?)?;
        let qnet_params = counted(next("qnet values")?, n)?;

        let mut line = next("end")?;
        let mut adam = None;
        if let Some(rest) = line.strip_prefix("adam ") {
            let head: Vec<u64> = nums(rest)?;
            if head.len() != 2 {
                return Err(bad("adam line needs `t n`"));
            }
            let n = head[1] as usize;
            let m = counted(next("adam m")?, n)?;
            let v = counted(next("adam v")?, n)?;
            adam = Some(AdamState { t: head[0], m, v });
            line = next("end")?;
        }
        let mut ib = None;
        if let Some(rest) = line.strip_prefix("ib_sizes ") {
            let (e, d) = rest.split_once(';').ok_or_else(|| bad("ib_sizes needs `enc ; dec`"))?;
            let enc_sizes = nums(e)?;
            let dec_sizes = nums(d)?;
            let beta = num(field(next("ib_beta")?, "ib_beta")?)?;
            let n: usize = num(field(next("ib_params")?, "ib_params")?)?;
            let params = counted(next("ib values")?, n)?;
            ib = Some(IbState {
                enc_sizes,
                dec_sizes,
                beta,
                params,
            });
            line = next("end")?;
        }
        if line != "end" {
            return Err(bad(format!("unexpected line `{line}`")));
        }
        let expected_params: usize = qnet_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if qnet_params.len() != expected_params {
            return Err(bad(format!(
                "q-network sizes {qnet_sizes:?} need {expected_params} parameters, found {}",
                qnet_params.len()
            )));
        }
        Ok(Self {
            variant,
            agent,
            peers,
            messages,
            f_th,
            levels,
            qnet_sizes,
            qnet_params,
            adam,
            ib,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::artifact(path, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::artifact(path, e.to_string()))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Loads the stored weights into `agent`, which must have the same shape.
    pub fn apply(&self, agent: &mut Agent) -> Result<()> {
        if self.variant != agent.variant {
            return Err(bad(format!(
                "checkpoint is for variant {}, agent is {}",
                self.variant, agent.variant
            )));
        }
        if self.peers != agent.peers || self.messages != agent.messages() {
            return Err(bad(format!(
                "checkpoint has {} peers / {} messages, agent has {} / {}",
                self.peers,
                self.messages,
                agent.peers,
                agent.messages()
            )));
        }
        if self.qnet_sizes != agent.online.mlp.sizes() {
            return Err(bad(format!(
                "incompatible q-network shape: checkpoint {:?}, agent {:?}",
                self.qnet_sizes,
                agent.online.mlp.sizes()
            )));
        }
        if self.levels.len() != agent.space.len() {
            return Err(bad("incompatible action space"));
        }
        match (&self.ib, agent.ib.as_mut()) {
            (Some(s), Some(ib)) => {
                if s.enc_sizes != ib.enc.sizes() || s.dec_sizes != ib.dec.sizes() {
                    return Err(bad("incompatible bottleneck encoder shape"));
                }
                ib.set_flat(&s.params)?;
                ib.beta = s.beta;
            }
            (None, None) => {}
            _ => return Err(bad("bottleneck encoder presence differs")),
        }
        agent.online.mlp.set_flat(&self.qnet_params)?;
        agent.sync_target();
        agent.space.levels = self.levels.clone();
        agent.f_th = self.f_th;
        if let (Some(s), Optimizer::Adam(a)) = (&self.adam, &mut agent.optimizer) {
            a.t = s.t;
            a.m.set_flat(&s.m)?;
            a.v.set_flat(&s.v)?;
        }
        Ok(())
    }
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' ').or(if r.is_empty() { Some("") } else { None }))
        .ok_or_else(|| bad(format!("expected `{key}` line, found `{line}`")))
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| bad(format!("invalid number `{s}`")))
}

fn nums<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    s.split_whitespace().map(num).collect()
}

fn counted(line: &str, n: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = nums(line)?;
    if v.len() != n {
        return Err(bad(format!("expected {n} values, found {}", v.len())));
    }
    Ok(v)
}
