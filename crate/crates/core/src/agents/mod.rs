//! The composite agent: a policy-gradient agent picks sparsity and
//! precision, a distributional agent picks the pruning technique from the
//! policy network's hidden features, and a reward monitor decides when the
//! latter starts learning.

mod checkpoint;
mod ddpg;
mod monitor;
mod rainbow;
mod replay;
mod state;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use ddpg::{truncated_normal, DdpgAgent, DdpgConfig, DdpgLosses, DdpgTransition, ACTION_DIM};
pub use monitor::RewardMonitor;
pub use rainbow::{
    distributional_projection, n_step_transitions, Distributions, DuelingNet, RainbowAgent, RainbowConfig,
    RainbowTransition, NUM_ACTIONS,
};
pub use replay::{PrioritizedReplay, ReplaySample};
pub use state::{map_actions, LayerState, StateEncoder, STATE_DIM};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub ddpg: DdpgConfig,
    pub rainbow: RainbowConfig,
    pub monitor_window: usize,
    pub monitor_required: usize,
    /// Gradient updates per agent at the end of each episode; 0 means one
    /// per layer.
    pub updates_per_episode: usize,
    /// Episodes of uniformly random actions before any update.
    pub warmup: usize,
    /// Episodes over which the importance-sampling exponent anneals to 1.
    pub beta_episodes: usize,
    /// When false every step is a terminal one-step transition carrying its
    /// own reward (no bootstrapping across layers).
    pub bootstrap: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            ddpg: DdpgConfig::default(),
            rainbow: RainbowConfig::default(),
            monitor_window: 20,
            monitor_required: 5,
            updates_per_episode: 0,
            warmup: 100,
            beta_episodes: 1100,
            bootstrap: true,
        }
    }
}

/// What the agent chose for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: [f64; ACTION_DIM],
    pub technique: usize,
}

/// One layer step of a finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: [f64; STATE_DIM],
    pub action: [f64; ACTION_DIM],
    pub technique: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub rainbow_loss: Option<f64>,
    pub ddpg_updates: usize,
    pub rainbow_updates: usize,
}

#[derive(Debug, Clone)]
pub struct CompositeAgent {
    pub cfg: AgentConfig,
    pub ddpg: DdpgAgent,
    pub rainbow: RainbowAgent,
    pub monitor: RewardMonitor,
    pub episode: usize,
    rng: ChaCha8Rng,
}

impl CompositeAgent {
    pub fn new(cfg: AgentConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ddpg = DdpgAgent::new(cfg.ddpg.clone(), &mut rng);
        let rainbow = RainbowAgent::new(cfg.ddpg.hidden, cfg.rainbow.clone(), &mut rng);
        let monitor = RewardMonitor::new(cfg.monitor_window, cfg.monitor_required);
        CompositeAgent {
            cfg,
            ddpg,
            rainbow,
            monitor,
            episode: 0,
            rng,
        }
    }

    pub fn in_warmup(&self) -> bool {
        self.episode < self.cfg.warmup
    }

    pub fn frozen(&self) -> bool {
        !self.monitor.is_unlocked()
    }

    /// Chooses the action for one layer.
    pub fn decide(&mut self, state: &LayerState, explore: bool) -> Decision {
        let (mu, features) = self.ddpg.policy(&state.normalized);
        let action = if explore && self.in_warmup() {
            [self.rng.random::<f64>(), self.rng.random::<f64>()]
        } else if explore {
            [
                truncated_normal(mu[0], self.ddpg.sigma, &mut self.rng),
                truncated_normal(mu[1], self.ddpg.sigma, &mut self.rng),
            ]
        } else {
            mu
        };
        let frozen = self.frozen() && explore;
        let technique = self.rainbow.act(&features, frozen, &mut self.rng);
        Decision { action, technique }
    }

    fn beta(&self) -> f64 {
        let start = self.cfg.ddpg.beta_start;
        let frac = (self.episode as f64 / self.cfg.beta_episodes.max(1) as f64).min(1.0);
        start + (1.0 - start) * frac
    }

    /// Stores the episode's transitions, runs the end-of-episode updates and
    /// advances the exploration schedule and the monitor.
    pub fn end_episode(&mut self, steps: &[Step], episode_reward: f64) -> Result<UpdateStats> {
        let n = steps.len();
        let bootstrap = self.cfg.bootstrap;
        for (t, s) in steps.iter().enumerate() {
            let done = t + 1 == n || !bootstrap;
            self.ddpg.remember(DdpgTransition {
                state: s.state,
                action: s.action,
                reward: s.reward,
                next_state: if done { s.state } else { steps[t + 1].state },
                done,
            });
        }
        let states: Vec<[f64; STATE_DIM]> = steps.iter().map(|s| s.state).collect();
        let actions: Vec<usize> = steps.iter().map(|s| s.technique).collect();
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
        if bootstrap {
            for t in n_step_transitions(&states, &actions, &rewards, self.cfg.rainbow.n_step, self.cfg.rainbow.gamma) {
                self.rainbow.remember(t);
            }
        } else {
            for t in 0..n {
                self.rainbow.remember(RainbowTransition {
                    state: states[t],
                    action: actions[t],
                    reward: rewards[t],
                    next_state: states[t],
                    done: true,
                    discount: 0.0,
                });
            }
        }

        let mut stats = UpdateStats::default();
        if !self.in_warmup() {
            let updates = if self.cfg.updates_per_episode == 0 { n } else { self.cfg.updates_per_episode };
            let beta = self.beta();
            for _ in 0..updates {
                let l = self.ddpg.update(beta, &mut self.rng)?;
                stats.critic_loss = l.critic;
                stats.actor_loss = l.actor;
                stats.ddpg_updates += 1;
            }
            if self.monitor.is_unlocked() {
                let actor = &self.ddpg;
                for _ in 0..updates {
                    let loss = self.rainbow.update(|x| actor.features(x), beta, &mut self.rng)?;
                    stats.rainbow_loss = Some(loss);
                    stats.rainbow_updates += 1;
                }
            }
            self.monitor.observe(episode_reward);
            self.ddpg.decay_sigma();
        }
        self.episode += 1;
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> AgentConfig {
        AgentConfig {
            ddpg: DdpgConfig {
                hidden: 8,
                hidden_layers: 2,
                batch: 4,
                ..DdpgConfig::default()
            },
            rainbow: RainbowConfig {
                hidden: 8,
                atoms: 5,
                batch: 4,
                ..RainbowConfig::default()
            },
            warmup: 2,
            ..AgentConfig::default()
        }
    }

    fn run_episode(agent: &mut CompositeAgent, reward: f64) -> UpdateStats {
        let steps: Vec<Step> = (0..3)
            .map(|t| {
                let st = LayerState {
                    raw: [t as f64; STATE_DIM],
                    normalized: [t as f64 / 3.0; STATE_DIM],
                };
                let d = agent.decide(&st, true);
                assert!(d.action.iter().all(|v| (0.0..=1.0).contains(v)));
                assert!(d.technique < NUM_ACTIONS);
                Step {
                    state: st.normalized,
                    action: d.action,
                    technique: d.technique,
                    reward: if t == 2 { reward } else { 0.0 },
                }
            })
            .collect();
        agent.end_episode(&steps, reward).unwrap()
    }

    #[test]
    fn warmup_then_updates() {
        let mut a = CompositeAgent::new(tiny(), 7);
        assert_eq!(run_episode(&mut a, 0.1).ddpg_updates, 0);
        assert_eq!(run_episode(&mut a, 0.1).ddpg_updates, 0);
        let s = run_episode(&mut a, 0.1);
        assert_eq!(s.ddpg_updates, 3);
        assert_eq!(s.rainbow_updates, 0);
    }

    #[test]
    fn frozen_rainbow_is_untouched_by_ddpg_updates() {
        let mut a = CompositeAgent::new(tiny(), 8);
        let before = a.rainbow.flat_params();
        for _ in 0..10 {
            run_episode(&mut a, 0.2);
        }
        assert!(a.frozen());
        assert_eq!(a.rainbow.flat_params(), before);
    }

    #[test]
    fn rainbow_update_leaves_policy_untouched() {
        let mut a = CompositeAgent::new(tiny(), 9);
        for _ in 0..4 {
            run_episode(&mut a, 0.3);
        }
        let actor = a.ddpg.actor.flat_params();
        let critic = a.ddpg.critic.flat_params();
        let policy = &a.ddpg;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        a.rainbow.update(|x| policy.features(x), 0.5, &mut rng).unwrap();
        assert_eq!(a.ddpg.actor.flat_params(), actor);
        assert_eq!(a.ddpg.critic.flat_params(), critic);
    }

    #[test]
    fn monitor_unlocks_on_rising_rewards() {
        let mut a = CompositeAgent::new(tiny(), 10);
        for i in 0..40 {
            run_episode(&mut a, i as f64 * 0.01);
        }
        assert!(!a.frozen());
        assert_eq!(a.monitor.unlocked_at(), Some(25));
        assert!(run_episode(&mut a, 0.5).rainbow_updates > 0);
    }
}
