//! Variational information-bottleneck autoencoder over received messages.
//!
//! The concatenated one-hot messages of the peers are encoded into a Gaussian
//! latent `q(z | m) = N(mean, exp(logvar))`; a decoder reconstructs every
//! peer's symbol from a reparameterized sample. Training minimizes the
//! per-peer cross-entropy plus `beta * KL(q(z|m) || N(0, I))`.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{Adam, Grads, Mlp};

use super::{one_hot_messages, NULL_SYMBOL};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct IbEncoder {
    /// one-hot messages -> [mean, raw logvar]
    pub enc: Mlp,
    /// latent -> reconstruction logits
    pub dec: Mlp,
    pub peers: usize,
    pub messages: usize,
    pub latent_dim: usize,
    pub beta: f64,
    opt_enc: Adam,
    opt_dec: Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IbOutput {
    pub z: Vec<f64>,
    pub mean: Vec<f64>,
    pub logvar: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbLoss {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// `KL(N(mean, exp(logvar)) || N(0, I))`.
pub fn gaussian_kl(mean: &[f64], logvar: &[f64]) -> f64 {
    mean.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
        .sum()
}

impl IbEncoder {
    pub fn new<R: Rng + ?Sized>(
        peers: usize,
        messages: usize,
        latent_dim: usize,
        hidden: usize,
        beta: f64,
        rng: &mut R,
    ) -> Self {
        let input = peers * messages;
        let enc = Mlp::new(&[input, hidden, 2 * latent_dim], rng);
        let dec = Mlp::new(&[latent_dim, hidden, input], rng);
        let opt_enc = Adam::new(&enc);
        let opt_dec = Adam::new(&dec);
        Self {
            enc,
            dec,
            peers,
            messages,
            latent_dim,
            beta,
            opt_enc,
            opt_dec,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.peers * self.messages
    }

    fn encode_batch(&self, batch: &[Vec<u8>]) -> Result<Array2<f64>> {
        let d = self.input_dim();
        let mut x = Array2::zeros((batch.len(), d));
        for (i, recv) in batch.iter().enumerate() {
            if recv.len() != self.peers {
                return Err(Error::Shape {
                    expected: self.peers,
                    got: recv.len(),
                });
            }
            let row = one_hot_messages(recv, self.messages)?;
            x.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
        }
        Ok(x)
    }

    fn split(&self, stats: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let d = self.latent_dim;
        let mean = stats.slice(ndarray::s![.., ..d]).to_owned();
        let logvar = stats
            .slice(ndarray::s![.., d..])
            .mapv(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX));
        (mean, logvar)
    }

    /// Latent mean for one received-message vector; this is what the Q-network sees.
    pub fn latent_mean(&self, recv: &[u8]) -> Result<Vec<f64>> {
        let x = self.encode_batch(std::slice::from_ref(&recv.to_vec()))?;
        let stats = self.enc.forward(x.view())?;
        Ok(stats.row(0).iter().take(self.latent_dim).cloned().collect())
    }

    pub fn forward_with_noise(&self, recv: &[u8], noise: &[f64]) -> Result<IbOutput> {
        let x = self.encode_batch(std::slice::from_ref(&recv.to_vec()))?;
        let stats = self.enc.forward(x.view())?;
        let (mean, logvar) = self.split(stats.view());
        let mean = mean.row(0).to_vec();
        let logvar = logvar.row(0).to_vec();
        let z: Vec<f64> = mean
            .iter()
            .zip(&logvar)
            .zip(noise)
            .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
            .collect();
        let logits = self.dec.forward_one(&z)?;
        Ok(IbOutput { z, mean, logvar, logits })
    }

    /// Reparameterized forward pass `z = mean + exp(logvar / 2) * n`.
    pub fn forward<R: Rng + ?Sized>(&self, recv: &[u8], rng: &mut R) -> Result<IbOutput> {
        let noise: Vec<f64> = (0..self.latent_dim).map(|_| rng.sample(StandardNormal)).collect();
        self.forward_with_noise(recv, &noise)
    }

    /// Batch-mean loss and its exact gradients for fixed noise `(batch, latent_dim)`.
    pub fn loss_and_grads(&self, batch: &[Vec<u8>], noise: ArrayView2<f64>) -> Result<(IbLoss, Grads, Grads)> {
        let b = batch.len();
        if b == 0 {
            return Err(Error::Contract("IB batch is empty".into()));
        }
        let x = self.encode_batch(batch)?;
        let enc_cache = self.enc.forward_cached(x.view())?;
        let stats = enc_cache.output();
        let d = self.latent_dim;
        let (mean, logvar) = self.split(stats.view());
        let std = logvar.mapv(|lv| (0.5 * lv).exp());
        let z = &mean + &(&std * &noise);
        let dec_cache = self.dec.forward_cached(z.view())?;
        let logits = dec_cache.output();

        let scale = 1.0 / b as f64;
        let m = self.messages;
        let mut recon = 0.0;
        let mut dlogits = Array2::zeros(logits.raw_dim());
        for (i, recv) in batch.iter().enumerate() {
            for (p, &sym) in recv.iter().enumerate() {
                if sym == NULL_SYMBOL {
                    continue;
                }
                let target = sym as usize - 1;
                let group: Vec<f64> = (0..m).map(|j| logits[[i, p * m + j]]).collect();
                let max = group.iter().cloned().fold(f64::MIN, f64::max);
                let lse = max + group.iter().map(|g| (g - max).exp()).sum::<f64>().ln();
                recon += lse - group[target];
                for j in 0..m {
                    let soft = (group[j] - lse).exp();
                    let onehot = if j == target { 1.0 } else { 0.0 };
                    dlogits[[i, p * m + j]] = (soft - onehot) * scale;
                }
            }
        }
        recon *= scale;

        let mut kl = 0.0;
        for i in 0..b {
            kl += gaussian_kl(
                mean.row(i).as_slice().expect("contiguous"),
                logvar.row(i).as_slice().expect("contiguous"),
            );
        }
        kl *= scale;

        let (dec_grads, dz) = self.dec.backward(&dec_cache, dlogits.view());
        let mut dstats = Array2::zeros(stats.raw_dim());
        for i in 0..b {
            for j in 0..d {
                let lv = logvar[[i, j]];
                let dmean = dz[[i, j]] + self.beta * scale * mean[[i, j]];
                let dlv = dz[[i, j]] * noise[[i, j]] * 0.5 * std[[i, j]]
                    + self.beta * scale * 0.5 * (lv.exp() - 1.0);
                let raw = stats[[i, d + j]];
                let inside = raw > LOGVAR_MIN && raw < LOGVAR_MAX;
                dstats[[i, j]] = dmean;
                dstats[[i, d + j]] = if inside { dlv } else { 0.0 };
            }
        }
        let (enc_grads, _) = self.enc.backward(&enc_cache, dstats.view());
        let loss = IbLoss {
            total: recon + self.beta * kl,
            recon,
            kl,
        };
        Ok((loss, enc_grads, dec_grads))
    }

    /// One Adam step on a batch of received-message vectors.
    pub fn train_step<R: Rng + ?Sized>(&mut self, batch: &[Vec<u8>], lr: f64, rng: &mut R) -> Result<IbLoss> {
        let noise = Array2::from_shape_fn((batch.len(), self.latent_dim), |_| rng.sample(StandardNormal));
        let (loss, ge, gd) = self.loss_and_grads(batch, noise.view())?;
        if !loss.total.is_finite() || !ge.is_finite() || !gd.is_finite() {
            return Err(Error::Divergence {
                episode: None,
                message: "information-bottleneck loss is not finite".into(),
            });
        }
        self.opt_enc.step(&mut self.enc, &ge, lr);
        self.opt_dec.step(&mut self.dec, &gd, lr);
        Ok(loss)
    }

    /// Argmax reconstruction of every peer symbol, decoded from the latent mean.
    pub fn reconstruct(&self, recv: &[u8]) -> Result<Vec<u8>> {
        let mean = self.latent_mean(recv)?;
        let logits = self.dec.forward_one(&mean)?;
        Ok((0..self.peers)
            .map(|p| {
                let group = &logits[p * self.messages..(p + 1) * self.messages];
                let best = group
                    .iter()
                    .enumerate()
                    .fold((0, f64::MIN), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc })
                    .0;
                best as u8 + 1
            })
            .collect())
    }

    /// Parameters of the encoder then decoder, flattened.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.enc.to_flat();
        v.extend(self.dec.to_flat());
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.enc.num_params();
        if flat.len() != n + self.dec.num_params() {
            return Err(Error::Shape {
                expected: n + self.dec.num_params(),
                got: flat.len(),
            });
        }
        self.enc.set_flat(&flat[..n])?;
        self.dec.set_flat(&flat[n..])
    }
}

/// All `messages^peers` received-message combinations without null symbols.
pub fn all_combinations(peers: usize, messages: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    for _ in 0..peers {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (1..=messages as u8).map(move |s| {
                    let mut v = prefix.clone();
                    v.push(s);
                    v
                })
            })
            .collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(seed: u64, beta: f64) -> IbEncoder {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        IbEncoder::new(2, 3, 2, 16, beta, &mut rng)
    }

    #[test]
    fn nine_combinations() {
        let c = all_combinations(2, 3);
        assert_eq!(c.len(), 9);
        assert_eq!(c[0], vec![1, 1]);
        assert_eq!(c[8], vec![3, 3]);
    }

    #[test]
    fn clamped_logvar_gives_deterministic_latent() {
        let mut ib = encoder(1, 1e-3);
        // push the raw logvar far below the clamp
        let last = ib.enc.layers.len() - 1;
        ib.enc.layers[last].b[2] = -500.0;
        ib.enc.layers[last].b[3] = -500.0;
        let out = ib.forward_with_noise(&[1, 2], &[3.0, -3.0]).unwrap();
        assert_eq!(out.logvar, vec![LOGVAR_MIN; 2]);
        for (z, m) in out.z.iter().zip(&out.mean) {
            assert!((z - m).abs() < 3.0 * (-5.0f64).exp() + 1e-12);
        }
        // KL of the clamped encoder equals the closed form at logvar = -10
        let analytic: f64 = out
            .mean
            .iter()
            .map(|m| 0.5 * ((-10.0f64).exp() + m * m - 1.0 + 10.0))
            .sum();
        assert!((gaussian_kl(&out.mean, &out.logvar) - analytic).abs() < 1e-12);
        assert!(analytic >= 2.0 * 0.5 * (9.0 + (-10.0f64).exp()) - 1e-12);
    }

    #[test]
    fn standard_normal_kl_is_zero() {
        assert_eq!(gaussian_kl(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn zero_beta_loss_is_reconstruction() {
        let ib = encoder(2, 0.0);
        let batch = all_combinations(2, 3);
        let noise = Array2::zeros((batch.len(), 2));
        let (loss, ..) = ib.loss_and_grads(&batch, noise.view()).unwrap();
        assert_eq!(loss.total, loss.recon);
        assert!(loss.kl > 0.0);
    }

    #[test]
    fn null_symbols_encode_to_zero_and_skip_reconstruction() {
        let ib = encoder(3, 0.0);
        let batch = vec![vec![NULL_SYMBOL, NULL_SYMBOL]];
        let noise = Array2::zeros((1, 2));
        let (loss, ..) = ib.loss_and_grads(&batch, noise.view()).unwrap();
        assert_eq!(loss.recon, 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..20 {
            let ib = encoder(100 + trial, 0.3);
            let batch: Vec<Vec<u8>> = (0..5)
                .map(|_| vec![rng.random_range(1..=3), rng.random_range(1..=3)])
                .collect();
            let noise = Array2::from_shape_fn((5, 2), |_| rng.sample::<f64, _>(StandardNormal));
            let (_, ge, gd) = ib.loss_and_grads(&batch, noise.view()).unwrap();
            let mut analytic = ge.to_flat();
            analytic.extend(gd.to_flat());
            let base = ib.to_flat();
            let h = 1e-6;
            let loss_at = |p: &[f64]| {
                let mut other = ib.clone();
                other.set_flat(p).unwrap();
                other.loss_and_grads(&batch, noise.view()).unwrap().0.total
            };
            for i in 0..base.len() {
                let mut p = base.clone();
                p[i] += h;
                let up = loss_at(&p);
                p[i] -= 2.0 * h;
                let down = loss_at(&p);
                let fd = (up - down) / (2.0 * h);
                let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
                assert!(err < 1e-4, "trial {trial} param {i}: fd {fd} analytic {}", analytic[i]);
            }
        }
    }

    #[test]
    fn learns_to_reconstruct_all_combinations() {
        let mut ib = encoder(5, 1e-3);
        let data = all_combinations(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let first = ib.train_step(&data, 1e-2, &mut rng).unwrap().total;
        let mut last = first;
        for _ in 0..2000 {
            last = ib.train_step(&data, 1e-2, &mut rng).unwrap().total;
        }
        assert!(last < first);
        let correct: usize = data
            .iter()
            .map(|m| {
                let r = ib.reconstruct(m).unwrap();
                r.iter().zip(m).filter(|(a, b)| a == b).count()
            })
            .sum();
        assert!(correct as f64 / 18.0 >= 0.99, "correct {correct}/18");
    }
}
