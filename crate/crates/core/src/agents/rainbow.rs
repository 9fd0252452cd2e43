//! Distributional dueling agent with noisy heads for the discrete
//! technique choice. It reads the policy network's last hidden features and
//! never sends gradients back into it.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::replay::PrioritizedReplay;
use super::state::STATE_DIM;
use crate::compress::Technique;
use crate::error::Result;
use crate::nn::{polyak_update, Activation, Adam, Dense, Mlp};

pub const NUM_ACTIONS: usize = Technique::ALL.len();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RainbowConfig {
    pub atoms: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub hidden: usize,
    pub sigma0: f64,
    pub n_step: usize,
    pub gamma: f64,
    pub lr: f64,
    pub adam_eps: f64,
    pub tau: f64,
    pub batch: usize,
    pub buffer: usize,
    pub alpha: f64,
    pub priority_eps: f64,
}

impl Default for RainbowConfig {
    fn default() -> Self {
        RainbowConfig {
            atoms: 51,
            v_min: -1.0,
            v_max: 1.0,
            hidden: 128,
            sigma0: 0.5,
            n_step: 3,
            gamma: 1.0,
            lr: 6.25e-5,
            adam_eps: 1.5e-4,
            tau: 0.01,
            batch: 64,
            buffer: 1000,
            alpha: 0.6,
            priority_eps: 1e-6,
        }
    }
}

/// n-step transition over raw states; features are recomputed at update
/// time from the current policy network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RainbowTransition {
    pub state: [f64; STATE_DIM],
    pub action: usize,
    /// Discounted sum of the next `n` rewards.
    pub reward: f64,
    pub next_state: [f64; STATE_DIM],
    pub done: bool,
    /// Discount applied to the bootstrap value, `gamma^n`.
    pub discount: f64,
}

/// Categorical projection of `reward + gamma * z` (or just `reward` when
/// `done`) onto the fixed `support`.
pub fn distributional_projection(reward: f64, done: bool, next_dist: &[f64], support: &[f64], gamma: f64) -> Vec<f64> {
    let n = support.len();
    let (v_min, v_max) = (support[0], support[n - 1]);
    let dz = (v_max - v_min) / (n - 1) as f64;
    let mut m = vec![0.0; n];
    let mut place = |tz: f64, p: f64| {
        let tz = tz.clamp(v_min, v_max);
        let b = (tz - v_min) / dz;
        let l = b.floor();
        let u = b.ceil();
        let (li, ui) = ((l as usize).min(n - 1), (u as usize).min(n - 1));
        if li == ui {
            m[li] += p;
        } else {
            m[li] += p * (u - b);
            m[ui] += p * (b - l);
        }
    };
    if done {
        place(reward, 1.0);
    } else {
        for (z, p) in support.iter().zip(next_dist) {
            place(reward + gamma * z, *p);
        }
    }
    m
}

/// Per-action atom distributions for a batch: `[batch][action][atom]`.
pub type Distributions = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone)]
pub struct DuelingNet {
    pub value: Mlp,
    pub advantage: Mlp,
}

struct DuelingCache {
    value: crate::nn::MlpCache,
    advantage: crate::nn::MlpCache,
    probs: Distributions,
}

impl DuelingNet {
    fn new(inputs: usize, cfg: &RainbowConfig, rng: &mut impl Rng) -> Self {
        let head = |outputs: usize, rng: &mut _| {
            Mlp::from_layers(vec![
                Dense::new(inputs, cfg.hidden, Activation::Relu, rng),
                Dense::noisy(cfg.hidden, outputs, Activation::Linear, cfg.sigma0, rng),
            ])
        };
        let value = head(cfg.atoms, rng);
        let advantage = head(NUM_ACTIONS * cfg.atoms, rng);
        DuelingNet { value, advantage }
    }

    fn forward(&self, x: ArrayView2<f64>, atoms: usize) -> DuelingCache {
        let value = self.value.forward(x);
        let advantage = self.advantage.forward(x);
        let (v, a) = (value.output(), advantage.output());
        let probs = (0..x.nrows())
            .map(|b| {
                (0..NUM_ACTIONS)
                    .map(|act| {
                        let logits: Vec<f64> = (0..atoms)
                            .map(|j| {
                                let mean_a = (0..NUM_ACTIONS).map(|k| a[[b, k * atoms + j]]).sum::<f64>()
                                    / NUM_ACTIONS as f64;
                                v[[b, j]] + a[[b, act * atoms + j]] - mean_a
                            })
                            .collect();
                        softmax(&logits)
                    })
                    .collect()
            })
            .collect();
        DuelingCache {
            value,
            advantage,
            probs,
        }
    }

    fn params(&self) -> Vec<&[f64]> {
        let mut p = self.value.params();
        p.extend(self.advantage.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.value.params_mut();
        p.extend(self.advantage.params_mut());
        p
    }

    fn resample_noise(&mut self, rng: &mut impl Rng) {
        self.value.resample_noise(rng);
        self.advantage.resample_noise(rng);
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone)]
pub struct RainbowAgent {
    pub cfg: RainbowConfig,
    pub support: Vec<f64>,
    pub online: DuelingNet,
    pub target: DuelingNet,
    opt: Adam,
    pub replay: PrioritizedReplay<RainbowTransition>,
}

impl RainbowAgent {
    pub fn new(feature_dim: usize, cfg: RainbowConfig, rng: &mut impl Rng) -> Self {
        let online = DuelingNet::new(feature_dim, &cfg, rng);
        let dz = (cfg.v_max - cfg.v_min) / (cfg.atoms - 1) as f64;
        let support = (0..cfg.atoms).map(|i| cfg.v_min + i as f64 * dz).collect();
        RainbowAgent {
            target: online.clone(),
            online,
            support,
            opt: Adam::with_eps(cfg.lr, cfg.adam_eps),
            replay: PrioritizedReplay::new(cfg.buffer, cfg.alpha, cfg.priority_eps),
            cfg,
        }
    }

    /// Atom distributions of the online network for a feature batch.
    pub fn distributions(&self, features: ArrayView2<f64>) -> Distributions {
        self.online.forward(features, self.cfg.atoms).probs
    }

    pub fn expected_values(&self, dist: &[Vec<f64>]) -> Vec<f64> {
        dist.iter()
            .map(|p| p.iter().zip(&self.support).map(|(p, z)| p * z).sum())
            .collect()
    }

    fn greedy(&self, dist: &[Vec<f64>]) -> usize {
        let q = self.expected_values(dist);
        let mut best = 0;
        for (i, &v) in q.iter().enumerate() {
            if v > q[best] {
                best = i;
            }
        }
        best
    }

    /// Technique id: uniform while `frozen`, otherwise the greedy action
    /// under freshly drawn noise.
    pub fn act(&mut self, features: &[f64], frozen: bool, rng: &mut impl Rng) -> usize {
        if frozen {
            return rng.random_range(0..NUM_ACTIONS);
        }
        self.online.resample_noise(rng);
        let x = Array2::from_shape_vec((1, features.len()), features.to_vec()).expect("feature row");
        let dist = self.distributions(x.view());
        self.greedy(&dist[0])
    }

    /// Action with the current noise sample left untouched.
    pub fn act_greedy(&self, features: &[f64]) -> usize {
        let x = Array2::from_shape_vec((1, features.len()), features.to_vec()).expect("feature row");
        self.greedy(&self.distributions(x.view())[0])
    }

    pub fn remember(&mut self, t: RainbowTransition) {
        self.replay.push(t);
    }

    /// Projected double-Q targets for a batch.
    fn targets(&self, batch: &[RainbowTransition], next_features: ArrayView2<f64>) -> Vec<Vec<f64>> {
        let online_next = self.online.forward(next_features, self.cfg.atoms).probs;
        let target_next = self.target.forward(next_features, self.cfg.atoms).probs;
        batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let a_star = self.greedy(&online_next[i]);
                distributional_projection(t.reward, t.done, &target_next[i][a_star], &self.support, t.discount)
            })
            .collect()
    }

    /// Cross-entropy step towards `targets` on the chosen actions. Returns
    /// the weighted loss and per-sample losses.
    pub fn train_on(
        &mut self,
        features: ArrayView2<f64>,
        actions: &[usize],
        targets: &[Vec<f64>],
        weights: &[f64],
    ) -> (f64, Vec<f64>) {
        let atoms = self.cfg.atoms;
        let n = actions.len();
        let nf = n as f64;
        let cache = self.online.forward(features, atoms);
        let mut dv = Array2::<f64>::zeros((n, atoms));
        let mut da = Array2::<f64>::zeros((n, NUM_ACTIONS * atoms));
        let mut per = Vec::with_capacity(n);
        let mut loss = 0.0;
        for b in 0..n {
            let p = &cache.probs[b][actions[b]];
            let m = &targets[b];
            let ce: f64 = -m.iter().zip(p).map(|(mi, pi)| mi * pi.max(1e-300).ln()).sum::<f64>();
            per.push(ce);
            loss += weights[b] * ce / nf;
            for j in 0..atoms {
                let g = weights[b] * (p[j] - m[j]) / nf;
                dv[[b, j]] = g;
                for k in 0..NUM_ACTIONS {
                    let own = if k == actions[b] { 1.0 } else { 0.0 };
                    da[[b, k * atoms + j]] = g * (own - 1.0 / NUM_ACTIONS as f64);
                }
            }
        }
        let (gv, _) = self.online.value.backward(&cache.value, dv.view());
        let (ga, _) = self.online.advantage.backward(&cache.advantage, da.view());
        let grads: Vec<Vec<f64>> = gv.into_iter().chain(ga).collect();
        self.opt.step(self.online.params_mut(), &grads);
        (loss, per)
    }

    /// Replay update. `features` maps raw states to the policy network's
    /// hidden features; it is only read.
    pub fn update(
        &mut self,
        features: impl Fn(&Array2<f64>) -> Array2<f64>,
        beta: f64,
        rng: &mut impl Rng,
    ) -> Result<f64> {
        let sample = self.replay.sample(self.cfg.batch, beta, rng)?;
        let batch = &sample.items;
        let rows = |f: fn(&RainbowTransition) -> [f64; STATE_DIM]| {
            Array2::from_shape_fn((batch.len(), STATE_DIM), |(i, j)| f(&batch[i])[j])
        };
        let x = features(&rows(|t| t.state));
        let x_next = features(&rows(|t| t.next_state));
        self.online.resample_noise(rng);
        self.target.resample_noise(rng);
        let targets = self.targets(batch, x_next.view());
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let (loss, per) = self.train_on(x.view(), &actions, &targets, &sample.weights);
        self.replay.update_priorities(&sample.indices, &per);
        let online = self.online.clone();
        polyak_update(&online.value, &mut self.target.value, self.cfg.tau)?;
        polyak_update(&online.advantage, &mut self.target.advantage, self.cfg.tau)?;
        Ok(loss)
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.online.params().concat()
    }

    pub fn set_noise_scale(&mut self, factor: f64) {
        for net in [&mut self.online, &mut self.target] {
            for l in net.value.layers.iter_mut().chain(net.advantage.layers.iter_mut()) {
                l.scale_noise(factor);
            }
        }
    }
}

/// Builds n-step transitions for one finished episode. `rewards[t]` is the
/// reward of step `t`; the last step is terminal.
pub fn n_step_transitions(
    states: &[[f64; STATE_DIM]],
    actions: &[usize],
    rewards: &[f64],
    n: usize,
    gamma: f64,
) -> Vec<RainbowTransition> {
    let len = states.len();
    (0..len)
        .map(|t| {
            let end = (t + n).min(len);
            let reward = (t..end).map(|k| gamma.powi((k - t) as i32) * rewards[k]).sum();
            let done = t + n >= len;
            RainbowTransition {
                state: states[t],
                action: actions[t],
                reward,
                next_state: if done { states[len - 1] } else { states[t + n] },
                done,
                discount: gamma.powi(n as i32),
            }
        })
        .collect()
}

impl DuelingNet {
    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.value.layers.iter().chain(self.advantage.layers.iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projection_hand_cases() {
        let z = [-1.0, 0.0, 1.0];
        assert_eq!(distributional_projection(0.0, false, &[0.0, 1.0, 0.0], &z, 1.0), vec![0.0, 1.0, 0.0]);
        assert_eq!(distributional_projection(1.0, true, &[0.3, 0.3, 0.4], &z, 1.0), vec![0.0, 0.0, 1.0]);
        assert_eq!(distributional_projection(0.5, true, &[1.0, 0.0, 0.0], &z, 1.0), vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn frozen_draws_cover_all_techniques() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut r = RainbowAgent::new(8, RainbowConfig { hidden: 8, ..RainbowConfig::default() }, &mut rng);
        let before = r.flat_params();
        let mut counts = [0usize; NUM_ACTIONS];
        for _ in 0..7000 {
            counts[r.act(&[0.1; 8], true, &mut rng)] += 1;
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0).sum();
        assert!(chi2 < 12.59, "chi2 {chi2}");
        assert_eq!(r.flat_params(), before);
    }

    #[test]
    fn zero_noise_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut r = RainbowAgent::new(8, RainbowConfig { hidden: 8, ..RainbowConfig::default() }, &mut rng);
        r.set_noise_scale(0.0);
        let f = [0.3, 0.1, 0.0, 0.9, 0.5, 0.2, 0.7, 0.4];
        let first = r.act(&f, false, &mut rng);
        assert!((0..20).all(|_| r.act(&f, false, &mut rng) == first));
    }

    #[test]
    fn distributions_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = RainbowAgent::new(5, RainbowConfig { hidden: 8, ..RainbowConfig::default() }, &mut rng);
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i as f64 - j as f64) * 0.7);
        for per_action in r.distributions(x.view()) {
            for p in per_action {
                assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn overfits_single_transition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = RainbowConfig {
            hidden: 32,
            lr: 1e-2,
            atoms: 11,
            ..RainbowConfig::default()
        };
        let mut r = RainbowAgent::new(6, cfg, &mut rng);
        r.set_noise_scale(0.0);
        let x = Array2::from_shape_fn((1, 6), |(_, j)| j as f64 / 6.0);
        let target = distributional_projection(0.4, true, &[], &r.support, 1.0);
        let entropy: f64 = -target.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
        let mut loss = f64::MAX;
        for _ in 0..1000 {
            loss = r.train_on(x.view(), &[2], std::slice::from_ref(&target), &[1.0]).0;
        }
        assert!(loss - entropy < 1e-3, "excess loss {}", loss - entropy);
    }

    #[test]
    fn n_step_terminal_reward_reaches_earlier_steps() {
        let states: Vec<[f64; STATE_DIM]> = (0..5).map(|i| [i as f64; STATE_DIM]).collect();
        let rewards = [0.0, 0.0, 0.0, 0.0, 0.8];
        let ts = n_step_transitions(&states, &[0; 5], &rewards, 3, 1.0);
        assert_eq!(ts.len(), 5);
        assert!(!ts[0].done && ts[0].next_state == states[3] && ts[0].reward == 0.0);
        assert!(ts[2].done && ts[2].reward == 0.8);
        assert!(ts[4].done && ts[4].reward == 0.8);
    }
}
