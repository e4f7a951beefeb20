//! Per-slice learning agent.
//!
//! An agent sees its own [`Observation`] and the symbols its peers sent, and
//! picks a joint `(allocation level, message)` pair from a single Q-network
//! head. Symbols are `1..=M`; [`NULL_SYMBOL`] marks "nothing received yet".

pub mod checkpoint;
pub mod ib;
pub mod qnet;
pub mod replay;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::AgentSection;
use crate::error::{Error, Result};
use crate::nn::Optimizer;
use crate::orchestrator::Variant;

pub use ib::{IbEncoder, IbLoss, IbOutput};
pub use qnet::{select_joint, td_update, QNetwork, TdBatch};
pub use replay::{PerBatch, PrioritizedBuffer, Replay, SumTree, UniformBuffer};

pub const NULL_SYMBOL: u8 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Last step's arrival rate over the slice's traffic normalizer.
    pub norm_traffic: f64,
    /// `f_th - a` for the previous effective allocation, Gcycle/s.
    pub cpu_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentMessage {
    pub symbol: u8,
}

impl AgentMessage {
    pub fn new(symbol: u8, messages: usize) -> Result<Self> {
        if symbol == NULL_SYMBOL || symbol as usize > messages {
            return Err(Error::Contract(format!(
                "message symbol {symbol} outside 1..={messages}"
            )));
        }
        Ok(Self { symbol })
    }

    pub fn from_index(index: usize) -> Self {
        Self {
            symbol: index as u8 + 1,
        }
    }

    pub fn index(&self) -> usize {
        self.symbol as usize - 1
    }
}

/// Discrete CPU allocation levels in Gcycle/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub levels: Vec<f64>,
}

impl ActionSpace {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Contract("action space needs at least one level".into()));
        }
        if levels.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Contract("allocation levels must be non-negative".into()));
        }
        Ok(Self { levels })
    }

    /// `n` evenly spaced levels from `lo * f_th` to `hi * f_th`.
    pub fn linear(f_th: f64, n: usize, lo: f64, hi: f64) -> Result<Self> {
        let levels = if n == 1 {
            vec![hi * f_th]
        } else {
            (0..n)
                .map(|i| f_th * (lo + (hi - lo) * i as f64 / (n - 1) as f64))
                .collect()
        };
        Self::new(levels)
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.levels.iter().cloned().fold(f64::MIN, f64::max)
    }
}

/// One replay record. `recv` / `next_recv` hold the peers' symbols in
/// ascending peer order; `message` is the 0-based index of the sent symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub recv: Vec<u8>,
    pub action: usize,
    pub message: usize,
    pub reward: f64,
    pub next_obs: Observation,
    pub next_recv: Vec<u8>,
    pub terminal: bool,
}

/// Concatenated one-hot vectors; a null symbol encodes as all zeros.
pub fn one_hot_messages(recv: &[u8], messages: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; recv.len() * messages];
    for (p, &s) in recv.iter().enumerate() {
        if s as usize > messages {
            return Err(Error::Contract(format!("message symbol {s} outside 1..={messages}")));
        }
        if s != NULL_SYMBOL {
            out[p * messages + s as usize - 1] = 1.0;
        }
    }
    Ok(out)
}

/// How received messages enter the Q-network input.
#[derive(Debug, Clone, Copy)]
pub enum Encoding<'a> {
    /// Observation only.
    ObsOnly,
    OneHot { messages: usize },
    /// Latent mean of the bottleneck encoder.
    Latent(&'a IbEncoder),
}

/// Feature vector `[traffic, gap / f_th, message features..]`.
pub fn encode_inputs(obs: &Observation, f_th: f64, recv: &[u8], encoding: Encoding<'_>) -> Result<Vec<f64>> {
    let mut f = vec![obs.norm_traffic, obs.cpu_gap / f_th];
    match encoding {
        Encoding::ObsOnly => {}
        Encoding::OneHot { messages } => f.extend(one_hot_messages(recv, messages)?),
        Encoding::Latent(ib) => f.extend(ib.latent_mean(recv)?),
    }
    Ok(f)
}

pub fn input_dim(variant: Variant, peers: usize, messages: usize, latent_dim: usize) -> usize {
    match variant {
        Variant::StaticBaseline | Variant::MaVanilla => 2,
        Variant::MaApplied => 2 + peers * messages,
        Variant::MaIb => 2 + latent_dim,
    }
}

/// A learning agent for one slice.
#[derive(Debug, Clone)]
pub struct Agent {
    pub id: usize,
    pub variant: Variant,
    pub f_th: f64,
    pub peers: usize,
    pub space: ActionSpace,
    pub params: AgentSection,
    pub online: QNetwork,
    pub target: QNetwork,
    pub(crate) optimizer: Optimizer,
    pub replay: Replay,
    pub ib: Option<IbEncoder>,
    rng: ChaCha8Rng,
    pub learner_steps: u64,
    pub last_ib_loss: Option<IbLoss>,
}

impl Agent {
    pub fn new(id: usize, variant: Variant, f_th: f64, peers: usize, params: &AgentSection, seed: u64) -> Result<Self> {
        if variant == Variant::StaticBaseline {
            return Err(Error::Contract("the static baseline has no learning agent".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = ActionSpace::linear(f_th, params.action_levels, params.level_min_frac, params.level_max_frac)?;
        let m = params.messages;
        let inputs = input_dim(variant, peers, m, params.latent_dim);
        let online = QNetwork::new(inputs, &params.hidden, space.len(), m, &mut rng);
        let target = online.sync_target();
        let optimizer = Optimizer::adam(&online.mlp);
        let replay = if variant == Variant::MaIb {
            Replay::Prioritized(PrioritizedBuffer::new(params.buffer_capacity, params.per_alpha, params.per_eps))
        } else {
            Replay::Uniform(UniformBuffer::new(params.buffer_capacity))
        };
        let ib = (variant == Variant::MaIb)
            .then(|| IbEncoder::new(peers, m, params.latent_dim, params.ib_hidden, params.ib_beta, &mut rng));
        Ok(Self {
            id,
            variant,
            f_th,
            peers,
            space,
            params: params.clone(),
            online,
            target,
            optimizer,
            replay,
            ib,
            rng,
            learner_steps: 0,
            last_ib_loss: None,
        })
    }

    pub fn messages(&self) -> usize {
        self.params.messages
    }

    fn encoding(&self) -> Encoding<'_> {
        match (self.variant, &self.ib) {
            (Variant::MaIb, Some(ib)) => Encoding::Latent(ib),
            (Variant::MaApplied, _) => Encoding::OneHot {
                messages: self.messages(),
            },
            _ => Encoding::ObsOnly,
        }
    }

    pub fn features(&self, obs: &Observation, recv: &[u8]) -> Result<Vec<f64>> {
        if recv.len() != self.peers {
            return Err(Error::Shape {
                expected: self.peers,
                got: recv.len(),
            });
        }
        encode_inputs(obs, self.f_th, recv, self.encoding())
    }

    /// Phase one: the symbol to broadcast, chosen from the joint argmax given
    /// the observation and the previous step's received symbols.
    pub fn choose_message(&mut self, obs: &Observation, prev_recv: &[u8], epsilon: f64) -> Result<usize> {
        Ok(self.choose_joint(obs, prev_recv, epsilon)?.1)
    }

    /// Epsilon-greedy `(action, message)` over the joint head.
    pub fn choose_joint(&mut self, obs: &Observation, recv: &[u8], epsilon: f64) -> Result<(usize, usize)> {
        let f = self.features(obs, recv)?;
        self.online.select(&f, epsilon, &mut self.rng)
    }

    /// Phase two: the allocation level given this step's received symbols and
    /// the message already sent.
    pub fn choose_action(&mut self, obs: &Observation, recv: &[u8], message: usize, epsilon: f64) -> Result<usize> {
        let f = self.features(obs, recv)?;
        self.online.select_action(&f, message, epsilon, &mut self.rng)
    }

    pub fn allocation(&self, action: usize) -> f64 {
        self.space.levels[action]
    }

    pub fn remember(&mut self, t: Transition) {
        self.replay.push(t);
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.sync_target();
    }

    fn feature_matrix(&self, rows: &[(&Observation, &[u8])]) -> Result<Array2<f64>> {
        let d = self.online.mlp.input_dim();
        let mut x = Array2::zeros((rows.len(), d));
        for (i, (obs, recv)) in rows.iter().enumerate() {
            let f = encode_inputs(obs, self.f_th, recv, self.encoding())?;
            x.row_mut(i).assign(&ndarray::ArrayView1::from(&f));
        }
        Ok(x)
    }

    /// One learner step if enough experience is stored. Returns the mean
    /// absolute TD error of the batch.
    pub fn learn(&mut self, per_beta: f64) -> Result<Option<f64>> {
        let batch_size = self.params.batch_size;
        if self.replay.len() < batch_size.max(self.params.learn_start) {
            return Ok(None);
        }
        let sampled = self.replay.sample(batch_size, per_beta, &mut self.rng)?;

        if let Some(ib) = self.ib.as_mut() {
            let msgs: Vec<Vec<u8>> = sampled
                .indices
                .iter()
                .map(|&i| self.replay.get(i).recv.clone())
                .collect();
            self.last_ib_loss = Some(ib.train_step(&msgs, self.params.ib_lr, &mut self.rng)?);
        }

        let transitions: Vec<&Transition> = sampled.indices.iter().map(|&i| self.replay.get(i)).collect();
        let now: Vec<(&Observation, &[u8])> = transitions.iter().map(|t| (&t.obs, t.recv.as_slice())).collect();
        let next: Vec<(&Observation, &[u8])> = transitions
            .iter()
            .map(|t| (&t.next_obs, t.next_recv.as_slice()))
            .collect();
        let batch = TdBatch {
            features: self.feature_matrix(&now)?,
            joint: transitions
                .iter()
                .map(|t| self.online.joint_index(t.action, t.message))
                .collect(),
            rewards: transitions.iter().map(|t| t.reward).collect(),
            next_features: self.feature_matrix(&next)?,
            terminal: transitions.iter().map(|t| t.terminal).collect(),
            weights: sampled.weights.clone(),
        };
        let errors = td_update(
            &mut self.online,
            &self.target,
            &batch,
            self.params.gamma,
            self.params.lr,
            &mut self.optimizer,
            Some(self.params.grad_clip),
        )?;
        self.replay.update_priorities(&sampled.indices, &errors);
        self.learner_steps += 1;
        if self.learner_steps % self.params.target_sync as u64 == 0 {
            self.sync_target();
        }
        Ok(Some(errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs() -> Observation {
        Observation {
            norm_traffic: 0.4,
            cpu_gap: 3.0,
        }
    }

    #[test]
    fn feature_lengths_per_variant() {
        let p = AgentSection::default();
        let vanilla = Agent::new(0, Variant::MaVanilla, 15.0, 2, &p, 1).unwrap();
        assert_eq!(vanilla.features(&obs(), &[1, 2]).unwrap().len(), 2);
        let applied = Agent::new(0, Variant::MaApplied, 15.0, 2, &p, 1).unwrap();
        assert_eq!(applied.features(&obs(), &[1, 2]).unwrap().len(), 8);
        let ib = Agent::new(0, Variant::MaIb, 15.0, 2, &p, 1).unwrap();
        assert_eq!(ib.features(&obs(), &[1, 2]).unwrap().len(), 4);
    }

    #[test]
    fn one_hot_layout_and_null() {
        assert_eq!(
            one_hot_messages(&[1, 3], 3).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]
        );
        assert_eq!(one_hot_messages(&[NULL_SYMBOL, 2], 3).unwrap(), vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(one_hot_messages(&[4], 3).is_err());
        let e = encode_inputs(&obs(), 15.0, &[5, 1], Encoding::OneHot { messages: 3 });
        assert!(e.is_err());
    }

    #[test]
    fn message_symbol_bounds() {
        assert!(AgentMessage::new(0, 3).is_err());
        assert!(AgentMessage::new(4, 3).is_err());
        assert_eq!(AgentMessage::new(3, 3).unwrap().index(), 2);
        assert_eq!(AgentMessage::from_index(0).symbol, 1);
    }

    #[test]
    fn linear_levels_span_shares() {
        let s = ActionSpace::linear(15.0, 8, 0.25, 1.5).unwrap();
        assert_eq!(s.len(), 8);
        assert!((s.levels[0] - 3.75).abs() < 1e-12);
        assert!((s.levels[7] - 22.5).abs() < 1e-12);
        assert!(ActionSpace::new(vec![]).is_err());
        assert!(ActionSpace::new(vec![-1.0]).is_err());
    }

    #[test]
    fn static_variant_has_no_agent() {
        assert!(Agent::new(0, Variant::StaticBaseline, 15.0, 2, &AgentSection::default(), 0).is_err());
    }

    #[test]
    fn learner_waits_for_warmup_then_syncs_target() {
        let p = AgentSection {
            hidden: vec![8],
            batch_size: 4,
            learn_start: 10,
            target_sync: 3,
            ..AgentSection::default()
        };
        let mut a = Agent::new(0, Variant::MaApplied, 15.0, 2, &p, 3).unwrap();
        let t = Transition {
            obs: obs(),
            recv: vec![1, 2],
            action: 1,
            message: 2,
            reward: 0.5,
            next_obs: obs(),
            next_recv: vec![2, 2],
            terminal: false,
        };
        for _ in 0..9 {
            a.remember(t.clone());
            assert_eq!(a.learn(0.4).unwrap(), None);
        }
        a.remember(t);
        let mut syncs = 0;
        for step in 1..=9 {
            let before = a.target.clone();
            assert!(a.learn(0.4).unwrap().is_some());
            if a.target != before {
                syncs += 1;
                assert_eq!(step % 3, 0);
                assert_eq!(a.target, a.online);
            }
        }
        assert_eq!(syncs, 3);
    }
}
