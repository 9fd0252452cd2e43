//! Fully-connected networks for the agents: dense and factorized-noisy
//! layers with manual backprop, Adam, and Polyak averaging. All `f64`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation's output.
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Linear => 1.0,
        }
    }
}

/// Factorized Gaussian noise parameters of a noisy linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    pub sigma_w: Array2<f64>,
    pub sigma_b: Array1<f64>,
    eps_in: Array1<f64>,
    eps_out: Array1<f64>,
}

fn scaled_noise(x: f64) -> f64 {
    x.signum() * x.abs().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(out, in)`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub activation: Activation,
    pub noise: Option<Noise>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let u = Uniform::new_inclusive(-bound, bound).unwrap();
        Dense {
            w: Array2::from_shape_fn((outputs, inputs), |_| u.sample(rng)),
            b: Array1::from_shape_fn(outputs, |_| u.sample(rng)),
            activation,
            noise: None,
        }
    }

    /// Noisy linear layer with initial noise scale `sigma0 / sqrt(in)`.
    pub fn noisy(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        sigma0: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut d = Dense::new(inputs, outputs, activation, rng);
        let s = sigma0 / (inputs as f64).sqrt();
        d.noise = Some(Noise {
            sigma_w: Array2::from_elem((outputs, inputs), s),
            sigma_b: Array1::from_elem(outputs, s),
            eps_in: Array1::zeros(inputs),
            eps_out: Array1::zeros(outputs),
        });
        d
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn resample_noise(&mut self, rng: &mut impl Rng) {
        if let Some(n) = &mut self.noise {
            n.eps_in.mapv_inplace(|_| scaled_noise(StandardNormal.sample(rng)));
            n.eps_out.mapv_inplace(|_| scaled_noise(StandardNormal.sample(rng)));
        }
    }

    /// Scales the learnable noise magnitudes, e.g. to 0 for a plain layer.
    pub fn scale_noise(&mut self, factor: f64) {
        if let Some(n) = &mut self.noise {
            n.sigma_w.mapv_inplace(|v| v * factor);
            n.sigma_b.mapv_inplace(|v| v * factor);
        }
    }

    fn effective(&self) -> (Array2<f64>, Array1<f64>) {
        match &self.noise {
            None => (self.w.clone(), self.b.clone()),
            Some(n) => {
                let outer = n
                    .eps_out
                    .view()
                    .insert_axis(Axis(1))
                    .dot(&n.eps_in.view().insert_axis(Axis(0)));
                (&self.w + &(&n.sigma_w * &outer), &self.b + &(&n.sigma_b * &n.eps_out))
            }
        }
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![
            self.w.as_slice_mut().unwrap(),
            self.b.as_slice_mut().unwrap(),
        ];
        if let Some(n) = &mut self.noise {
            v.push(n.sigma_w.as_slice_mut().unwrap());
            v.push(n.sigma_b.as_slice_mut().unwrap());
        }
        v
    }

    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = vec![self.w.as_slice().unwrap(), self.b.as_slice().unwrap()];
        if let Some(n) = &self.noise {
            v.push(n.sigma_w.as_slice().unwrap());
            v.push(n.sigma_b.as_slice().unwrap());
        }
        v
    }
}

/// Values kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `inputs[i]` is what layer `i` consumed; `outputs[i]` its activation.
    pub inputs: Vec<Array2<f64>>,
    pub outputs: Vec<Array2<f64>>,
    effective_w: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().unwrap()
    }

    /// Activation of the last hidden layer.
    pub fn last_hidden(&self) -> &Array2<f64> {
        let n = self.outputs.len();
        &self.outputs[n.saturating_sub(2)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`; hidden layers use `hidden`, the last
    /// layer `head`.
    pub fn new(sizes: &[usize], hidden: Activation, head: Activation, rng: &mut impl Rng) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { head } else { hidden };
                Dense::new(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Self {
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    /// Forward pass over a `(batch, in)` matrix.
    pub fn forward(&self, x: ArrayView2<f64>) -> MlpCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut effective_w = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_owned();
        for layer in &self.layers {
            let (w, b) = layer.effective();
            let mut z = cur.dot(&w.t());
            z += &b;
            z.mapv_inplace(|v| layer.activation.apply(v));
            inputs.push(cur);
            effective_w.push(w);
            cur = z.clone();
            outputs.push(z);
        }
        MlpCache {
            inputs,
            outputs,
            effective_w,
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward(x).outputs.pop().unwrap()
    }

    /// Backpropagates `d_out` (gradient w.r.t. the network output). Returns
    /// parameter gradients in [`Mlp::params`] order and the input gradient.
    pub fn backward(&self, cache: &MlpCache, d_out: ArrayView2<f64>) -> (Vec<Vec<f64>>, Array2<f64>) {
        let mut grads: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.layers.len());
        let mut g = d_out.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.outputs[i];
            let act = layer.activation;
            g.zip_mut_with(out, |gv, &a| *gv *= act.grad_from_output(a));
            let dw = g.t().dot(&cache.inputs[i]);
            let db = g.sum_axis(Axis(0));
            let mut lg = Vec::with_capacity(4);
            if let Some(n) = &layer.noise {
                let outer = n
                    .eps_out
                    .view()
                    .insert_axis(Axis(1))
                    .dot(&n.eps_in.view().insert_axis(Axis(0)));
                let dsw = &dw * &outer;
                let dsb = &db * &n.eps_out;
                lg.push(dw.into_raw_vec_and_offset().0);
                lg.push(db.into_raw_vec_and_offset().0);
                lg.push(dsw.into_raw_vec_and_offset().0);
                lg.push(dsb.into_raw_vec_and_offset().0);
            } else {
                lg.push(dw.into_raw_vec_and_offset().0);
                lg.push(db.into_raw_vec_and_offset().0);
            }
            grads.push(lg);
            g = g.dot(&cache.effective_w[i]);
        }
        grads.reverse();
        (grads.into_iter().flatten().collect(), g)
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.param_slices()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.param_slices_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().concat()
    }

    pub fn resample_noise(&mut self, rng: &mut impl Rng) {
        for l in &mut self.layers {
            l.resample_noise(rng);
        }
    }
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn polyak_update(online: &Mlp, target: &mut Mlp, tau: f64) -> Result<()> {
    let src = online.params();
    let dst = target.params_mut();
    if src.len() != dst.len() || src.iter().zip(&dst).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::Shape("polyak update between differently shaped networks".into()));
    }
    for (s, d) in src.into_iter().zip(dst) {
        for (sv, dv) in s.iter().zip(d.iter_mut()) {
            *dv = tau * sv + (1.0 - tau) * *dv;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam::with_eps(lr, 1e-8)
    }

    pub fn with_eps(lr: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[Vec<f64>]) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_mse_gradient_is_analytic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[2, 1], Activation::Relu, Activation::Linear, &mut rng);
        let x = array![[1.0, 2.0]];
        let cache = net.forward(x.view());
        let y = cache.output()[[0, 0]];
        let target = 0.5;
        // loss = (y - t)^2 / 2  => dL/dw = (y - t) x, dL/db = (y - t)
        let d = array![[y - target]];
        let (g, _) = net.backward(&cache, d.view());
        assert!((g[0][0] - (y - target) * 1.0).abs() < 1e-12);
        assert!((g[0][1] - (y - target) * 2.0).abs() < 1e-12);
        assert!((g[1][0] - (y - target)).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_scale_matches_plain_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut noisy = Dense::noisy(4, 3, Activation::Linear, 0.5, &mut rng);
        noisy.resample_noise(&mut rng);
        noisy.scale_noise(0.0);
        let plain = Dense {
            noise: None,
            ..noisy.clone()
        };
        let x = Array2::from_shape_fn((2, 4), |(i, j)| (i as f64) - 0.3 * j as f64);
        let a = Mlp::from_layers(vec![noisy]).predict(x.view());
        let b = Mlp::from_layers(vec![plain]).predict(x.view());
        assert_eq!(a, b);
    }

    #[test]
    fn polyak_endpoints_and_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let online = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Linear, &mut rng);
        let mut t = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Linear, &mut rng);
        let before = t.clone();
        polyak_update(&online, &mut t, 0.0).unwrap();
        assert_eq!(t, before);
        polyak_update(&online, &mut t, 1.0).unwrap();
        assert_eq!(t.flat_params(), online.flat_params());

        let mut a = Mlp::from_layers(vec![Dense {
            w: array![[2.0]],
            b: array![2.0],
            activation: Activation::Linear,
            noise: None,
        }]);
        let mut z = a.clone();
        z.params_mut().into_iter().for_each(|p| p.fill(0.0));
        polyak_update(&a, &mut z, 0.5).unwrap();
        assert_eq!(z.flat_params(), vec![1.0, 1.0]);
        a.layers.push(a.layers[0].clone());
        assert!(polyak_update(&a, &mut z, 0.5).is_err());
    }
}
