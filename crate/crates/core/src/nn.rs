//! Small dense networks with exact backpropagation.
//!
//! Batches are stored `(examples, features)`. Hidden layers use `tanh`, the
//! output layer is linear.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(inputs, outputs)`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
        }
    }

    /// Glorot-uniform weights, zero biases.
    fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = Array2::from_shape_fn((inputs, outputs), |_| rng.random_range(-limit..limit));
        Self {
            w,
            b: Array1::zeros(outputs),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations kept from a forward pass; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    acts: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("cache has an input")
    }
}

/// Parameter-shaped gradients (or optimizer moments).
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<Dense>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.w.nrows(), l.w.ncols()))
                .collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.w.iter().map(|x| x * x).sum::<f64>() + l.b.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.w *= k;
            l.b *= k;
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n: usize = self.layers.iter().map(|l| l.w.len() + l.b.len()).sum();
        if flat.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: flat.len(),
            });
        }
        unflatten(&mut self.layers, flat);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|x| x.is_finite()))
    }
}

fn flatten(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.w.iter());
        out.extend(l.b.iter());
    }
    out
}

fn unflatten(layers: &mut [Dense], flat: &[f64]) {
    let mut i = 0;
    for l in layers {
        for x in l.w.iter_mut() {
            *x = flat[i];
            i += 1;
        }
        for x in l.b.iter_mut() {
            *x = flat[i];
            i += 1;
        }
    }
}

impl Mlp {
    /// `sizes = [inputs, hidden.., outputs]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        Self {
            layers: sizes.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect(),
        }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].w.nrows()];
        s.extend(self.layers.iter().map(|l| l.w.ncols()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.w.ncols()).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        unflatten(&mut self.layers, flat);
        Ok(())
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.w) + &l.b;
            if i < last {
                h.mapv_inplace(f64::tanh);
            }
        }
        Ok(h)
    }

    /// Single-example forward pass.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for (i, l) in self.layers.iter().enumerate() {
            let mut h = acts[i].dot(&l.w) + &l.b;
            if i < last {
                h.mapv_inplace(f64::tanh);
            }
            acts.push(h);
        }
        Ok(ForwardCache { acts })
    }

    /// Backpropagates `grad_out = dL/d(output)` and returns the parameter
    /// gradients together with `dL/d(input)`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<f64>) -> (Grads, Array2<f64>) {
        let n = self.layers.len();
        let mut grads = Vec::with_capacity(n);
        let mut delta = grad_out.to_owned();
        for i in (0..n).rev() {
            let l = &self.layers[i];
            let input = &cache.acts[i];
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            grads.push(Dense { w: gw, b: gb });
            let mut prev = delta.dot(&l.w.t());
            if i > 0 {
                // tanh' = 1 - tanh^2, applied on the stored activation
                prev.zip_mut_with(input, |d, a| *d *= 1.0 - a * a);
            }
            delta = prev;
        }
        grads.reverse();
        (Grads { layers: grads }, delta)
    }

    pub fn apply_sgd(&mut self, grads: &Grads, lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            l.w.scaled_add(-lr, &g.w);
            l.b.scaled_add(-lr, &g.b);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Grads,
    pub v: Grads,
}

impl Adam {
    pub fn new(net: &Mlp) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Grads::zeros_like(net),
            v: Grads::zeros_like(net),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Grads, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let step = lr * c2.sqrt() / c1;
        let eps = self.eps;
        for ((p, g), (m, v)) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.m.layers.iter_mut().zip(self.v.layers.iter_mut()))
        {
            ndarray::Zip::from(&mut p.w)
                .and(&g.w)
                .and(&mut m.w)
                .and(&mut v.w)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= step * *m / (v.sqrt() + eps);
                });
            ndarray::Zip::from(&mut p.b)
                .and(&g.b)
                .and(&mut m.b)
                .and(&mut v.b)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= step * *m / (v.sqrt() + eps);
                });
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam(Adam),
}

impl Optimizer {
    pub fn adam(net: &Mlp) -> Self {
        Optimizer::Adam(Adam::new(net))
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Grads, lr: f64) {
        match self {
            Optimizer::Sgd => net.apply_sgd(grads, lr),
            Optimizer::Adam(a) => a.step(net, grads, lr),
        }
    }
}

/// Rescales `grads` so their global norm does not exceed `max_norm`.
pub fn clip_grad_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_output() {
        let net = Mlp::zeros(&[3, 5, 4]);
        let y = net.forward_one(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(y, vec![0.0; 4]);
    }

    #[test]
    fn single_layer_is_affine_map() {
        let mut net = Mlp::zeros(&[2, 3]);
        net.layers[0].w = array![[1.0, 0.0, 2.0], [0.0, 1.0, -1.0]];
        net.layers[0].b = array![0.5, 0.0, 1.0];
        let y = net.forward_one(&[3.0, 4.0]).unwrap();
        // [3*1 + 4*0 + .5, 3*0 + 4*1, 3*2 - 4 + 1]
        assert_eq!(y, vec![3.5, 4.0, 3.0]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = Mlp::zeros(&[2, 3]);
        assert!(matches!(net.forward_one(&[1.0]), Err(Error::Shape { expected: 2, got: 1 })));
    }

    #[test]
    fn flat_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[3, 4, 2], &mut rng);
        let flat = net.to_flat();
        let mut other = Mlp::zeros(&[3, 4, 2]);
        other.set_flat(&flat).unwrap();
        assert_eq!(net, other);
        assert_eq!(flat.len(), net.num_params());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::new(&[3, 6, 5, 2], &mut rng);
        let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let target = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
        let loss = |n: &Mlp| {
            let y = n.forward(x.view()).unwrap();
            (&y - &target).mapv(|d| d * d).sum()
        };
        let cache = net.forward_cached(x.view()).unwrap();
        let grad_out = (cache.output() - &target) * 2.0;
        let (grads, _) = net.backward(&cache, grad_out.view());
        let analytic = grads.to_flat();
        let base = net.to_flat();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            let mut plus = net.clone();
            plus.set_flat(&p).unwrap();
            p[i] -= 2.0 * h;
            let mut minus = net.clone();
            minus.set_flat(&p).unwrap();
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-8);
            assert!((fd - analytic[i]).abs() / denom < 1e-5, "param {i}: fd {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn clip_limits_norm() {
        let mut g = Grads::zeros_like(&Mlp::zeros(&[1, 1]));
        g.layers[0].w[[0, 0]] = 3.0;
        g.layers[0].b[0] = 4.0;
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g.norm() - 1.0).abs() < 1e-12);
    }
}
