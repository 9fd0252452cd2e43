//! Deterministic policy-gradient agent for the continuous (sparsity,
//! precision) action, with target networks and truncated-normal exploration.

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::replay::PrioritizedReplay;
use super::state::STATE_DIM;
use crate::error::Result;
use crate::nn::{polyak_update, Activation, Adam, Mlp};

pub const ACTION_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpgConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: f64,
    pub gamma: f64,
    pub sigma_init: f64,
    pub sigma_decay: f64,
    pub batch: usize,
    pub buffer: usize,
    pub alpha: f64,
    pub beta_start: f64,
    pub priority_eps: f64,
    /// Output layers start uniform in `[-head_init, head_init]`.
    pub head_init: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            hidden: 300,
            hidden_layers: 3,
            actor_lr: 1e-3,
            critic_lr: 1e-4,
            tau: 0.01,
            gamma: 1.0,
            sigma_init: 0.6,
            sigma_decay: 0.99,
            batch: 64,
            buffer: 1000,
            alpha: 0.6,
            beta_start: 0.4,
            priority_eps: 1e-6,
            head_init: 3e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdpgTransition {
    pub state: [f64; STATE_DIM],
    pub action: [f64; ACTION_DIM],
    pub reward: f64,
    pub next_state: [f64; STATE_DIM],
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DdpgLosses {
    pub critic: f64,
    pub actor: f64,
}

/// Draws from `N(mean, sigma)` truncated to `[0, 1]` by rejection, falling
/// back to clamping after a bounded number of tries.
pub fn truncated_normal(mean: f64, sigma: f64, rng: &mut impl Rng) -> f64 {
    if sigma <= 0.0 {
        return mean.clamp(0.0, 1.0);
    }
    let n = Normal::new(mean, sigma).expect("positive sigma");
    for _ in 0..64 {
        let x = n.sample(rng);
        if (0.0..=1.0).contains(&x) {
            return x;
        }
    }
    n.sample(rng).clamp(0.0, 1.0)
}

#[derive(Debug, Clone)]
pub struct DdpgAgent {
    pub cfg: DdpgConfig,
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    pub sigma: f64,
    pub replay: PrioritizedReplay<DdpgTransition>,
}

fn stack<const N: usize>(rows: impl Iterator<Item = [f64; N]>) -> Array2<f64> {
    let v: Vec<[f64; N]> = rows.collect();
    Array2::from_shape_fn((v.len(), N), |(i, j)| v[i][j])
}

impl DdpgAgent {
    pub fn new(cfg: DdpgConfig, rng: &mut impl Rng) -> Self {
        let mut actor_sizes = vec![STATE_DIM];
        actor_sizes.extend(std::iter::repeat_n(cfg.hidden, cfg.hidden_layers));
        let mut critic_sizes = actor_sizes.clone();
        critic_sizes[0] = STATE_DIM + ACTION_DIM;
        actor_sizes.push(ACTION_DIM);
        critic_sizes.push(1);
        let mut actor = Mlp::new(&actor_sizes, Activation::Relu, Activation::Sigmoid, rng);
        let mut critic = Mlp::new(&critic_sizes, Activation::Relu, Activation::Linear, rng);
        for net in [&mut actor, &mut critic] {
            let head = net.layers.last_mut().expect("non-empty network");
            let u = Uniform::new_inclusive(-cfg.head_init, cfg.head_init).expect("finite bound");
            head.w.mapv_inplace(|_| u.sample(rng));
            head.b.mapv_inplace(|_| u.sample(rng));
        }
        DdpgAgent {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            actor_opt: Adam::new(cfg.actor_lr),
            critic_opt: Adam::new(cfg.critic_lr),
            sigma: cfg.sigma_init,
            replay: PrioritizedReplay::new(cfg.buffer, cfg.alpha, cfg.priority_eps),
            cfg,
        }
    }

    /// Deterministic policy output and the actor's last hidden features.
    pub fn policy(&self, state: &[f64; STATE_DIM]) -> ([f64; ACTION_DIM], Vec<f64>) {
        let x = stack(std::iter::once(*state));
        let cache = self.actor.forward(x.view());
        let out = cache.output();
        (
            [out[[0, 0]], out[[0, 1]]],
            cache.last_hidden().row(0).to_vec(),
        )
    }

    /// Last hidden features of the actor for a batch of states.
    pub fn features(&self, states: &Array2<f64>) -> Array2<f64> {
        self.actor.forward(states.view()).last_hidden().clone()
    }

    /// Policy action, with truncated-normal exploration noise when
    /// `explore` is set.
    pub fn act(&self, state: &[f64; STATE_DIM], explore: bool, rng: &mut impl Rng) -> [f64; ACTION_DIM] {
        let (mu, _) = self.policy(state);
        if !explore {
            return mu;
        }
        [
            truncated_normal(mu[0], self.sigma, rng),
            truncated_normal(mu[1], self.sigma, rng),
        ]
    }

    pub fn decay_sigma(&mut self) {
        self.sigma *= self.cfg.sigma_decay;
    }

    pub fn remember(&mut self, t: DdpgTransition) {
        self.replay.push(t);
    }

    /// One gradient step on a batch with importance weights. Returns the
    /// losses and per-sample TD errors.
    pub fn update_batch(&mut self, batch: &[DdpgTransition], weights: &[f64]) -> Result<(DdpgLosses, Vec<f64>)> {
        let n = batch.len();
        let nf = n as f64;
        let states = stack(batch.iter().map(|t| t.state));
        let next = stack(batch.iter().map(|t| t.next_state));
        let actions = stack(batch.iter().map(|t| t.action));

        let next_actions = self.actor_target.predict(next.view());
        let next_q = self
            .critic_target
            .predict(ndarray::concatenate![Axis(1), next, next_actions].view());
        let targets: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let boot = if t.done { 0.0 } else { self.cfg.gamma * next_q[[i, 0]] };
                t.reward + boot
            })
            .collect();

        let sa = ndarray::concatenate![Axis(1), states, actions];
        let cache = self.critic.forward(sa.view());
        let q = cache.output();
        let mut d = Array2::<f64>::zeros((n, 1));
        let mut td = Vec::with_capacity(n);
        let mut critic_loss = 0.0;
        for i in 0..n {
            let e = q[[i, 0]] - targets[i];
            td.push(e);
            critic_loss += weights[i] * e * e / nf;
            d[[i, 0]] = 2.0 * weights[i] * e / nf;
        }
        let (grads, _) = self.critic.backward(&cache, d.view());
        self.critic_opt.step(self.critic.params_mut(), &grads);

        let (actor_loss, agrads) = self.actor_objective(&states);
        self.actor_opt.step(self.actor.params_mut(), &agrads);

        polyak_update(&self.actor, &mut self.actor_target, self.cfg.tau)?;
        polyak_update(&self.critic, &mut self.critic_target, self.cfg.tau)?;
        Ok((
            DdpgLosses {
                critic: critic_loss,
                actor: actor_loss,
            },
            td,
        ))
    }

    /// `-mean Q(s, mu(s))` over `states` and its gradient w.r.t. the actor
    /// parameters.
    pub fn actor_objective(&self, states: &Array2<f64>) -> (f64, Vec<Vec<f64>>) {
        let nf = states.nrows() as f64;
        let actor_cache = self.actor.forward(states.view());
        let mu = actor_cache.output().clone();
        let smu = ndarray::concatenate![Axis(1), states.view(), mu];
        let critic_cache = self.critic.forward(smu.view());
        let loss = -critic_cache.output().sum() / nf;
        let d_q = Array2::from_elem((states.nrows(), 1), -1.0 / nf);
        let (_, d_in) = self.critic.backward(&critic_cache, d_q.view());
        let d_mu = d_in.slice(s![.., STATE_DIM..]).to_owned();
        let (grads, _) = self.actor.backward(&actor_cache, d_mu.view());
        (loss, grads)
    }

    /// Samples from the replay buffer, updates, and refreshes priorities.
    pub fn update(&mut self, beta: f64, rng: &mut impl Rng) -> Result<DdpgLosses> {
        let sample = self.replay.sample(self.cfg.batch, beta, rng)?;
        let (losses, td) = self.update_batch(&sample.items, &sample.weights)?;
        self.replay.update_priorities(&sample.indices, &td);
        Ok(losses)
    }

    /// `Q(s, a)` of the online critic.
    pub fn q_value(&self, state: &[f64; STATE_DIM], action: &[f64; ACTION_DIM]) -> f64 {
        let mut x = Array2::zeros((1, STATE_DIM + ACTION_DIM));
        for (i, v) in state.iter().chain(action).enumerate() {
            x[[0, i]] = *v;
        }
        self.critic.predict(x.view())[[0, 0]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> DdpgConfig {
        DdpgConfig {
            hidden: 16,
            hidden_layers: 2,
            batch: 1,
            ..DdpgConfig::default()
        }
    }

    fn transition(reward: f64, done: bool) -> DdpgTransition {
        DdpgTransition {
            state: [0.3; STATE_DIM],
            action: [0.2, 0.7],
            reward,
            next_state: [0.6; STATE_DIM],
            done,
        }
    }

    #[test]
    fn sigma_zero_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = DdpgAgent::new(small(), &mut rng);
        a.sigma = 0.0;
        let s = [0.5; STATE_DIM];
        assert_eq!(a.act(&s, true, &mut rng), a.act(&s, false, &mut rng));
    }

    #[test]
    fn actions_stay_in_unit_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = DdpgAgent::new(small(), &mut rng);
        a.sigma = 5.0;
        for i in 0..500 {
            let s = [i as f64 / 500.0; STATE_DIM];
            let act = a.act(&s, true, &mut rng);
            assert!(act.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn terminal_target_is_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = DdpgAgent::new(small(), &mut rng);
        let t = transition(0.75, true);
        let q0 = a.q_value(&t.state, &t.action);
        let (_, td) = a.update_batch(&[t], &[1.0]).unwrap();
        assert!((td[0] - (q0 - 0.75)).abs() < 1e-12);
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = DdpgConfig { hidden: 6, hidden_layers: 2, ..DdpgConfig::default() };
        let mut a = DdpgAgent::new(cfg, &mut rng);
        let states = Array2::from_shape_fn((3, STATE_DIM), |(i, j)| ((i * 7 + j) % 5) as f64 / 5.0);
        let (_, grads) = a.actor_objective(&states);
        let h = 1e-6;
        for (k, g) in grads.iter().enumerate() {
            for idx in [0, g.len() / 2, g.len() - 1] {
                let orig = a.actor.params()[k][idx];
                a.actor.params_mut()[k][idx] = orig + h;
                let up = a.actor_objective(&states).0;
                a.actor.params_mut()[k][idx] = orig - h;
                let down = a.actor_objective(&states).0;
                a.actor.params_mut()[k][idx] = orig;
                let fd = (up - down) / (2.0 * h);
                let err = (fd - g[idx]).abs() / fd.abs().max(g[idx].abs()).max(1e-8);
                assert!(err < 1e-5 || (fd - g[idx]).abs() < 1e-9, "param {k}[{idx}]: {fd} vs {}", g[idx]);
            }
        }
    }

    #[test]
    fn critic_overfits_single_transition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cfg = small();
        cfg.critic_lr = 1e-3;
        let mut a = DdpgAgent::new(cfg, &mut rng);
        let t = transition(0.5, true);
        let mut loss = f64::MAX;
        for _ in 0..500 {
            // keep the action fixed so only the critic target matters
            loss = a.update_batch(&[t], &[1.0]).unwrap().0.critic;
        }
        assert!(loss < 1e-4, "critic loss {loss}");
    }
}
