//! Gate that keeps the technique agent frozen until episode rewards show a
//! sustained rise.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardMonitor {
    pub window: usize,
    /// Consecutive strict increases of the moving average needed to unlock.
    pub required: usize,
    rewards: Vec<f64>,
    last_average: Option<f64>,
    streak: usize,
    unlocked: bool,
    unlocked_at: Option<usize>,
}

impl Default for RewardMonitor {
    fn default() -> Self {
        RewardMonitor::new(20, 5)
    }
}

impl RewardMonitor {
    pub fn new(window: usize, required: usize) -> Self {
        RewardMonitor {
            window: window.max(1),
            required,
            rewards: Vec::new(),
            last_average: None,
            streak: 0,
            unlocked: false,
            unlocked_at: None,
        }
    }

    /// Records one episode reward and returns whether the gate is open.
    /// Once open it stays open.
    pub fn observe(&mut self, reward: f64) -> bool {
        self.rewards.push(reward);
        let n = self.rewards.len();
        if n >= self.window {
            let avg = self.rewards[n - self.window..].iter().sum::<f64>() / self.window as f64;
            if let Some(prev) = self.last_average {
                if avg > prev {
                    self.streak += 1;
                } else {
                    self.streak = 0;
                }
            }
            self.last_average = Some(avg);
        }
        if !self.unlocked && self.streak >= self.required {
            self.unlocked = true;
            self.unlocked_at = Some(n);
        }
        self.unlocked
    }

    pub fn is_unlocked(&self) -> bool {
        self.unlocked
    }

    /// Observation count (1-based) at which the gate opened.
    pub fn unlocked_at(&self) -> Option<usize> {
        self.unlocked_at
    }

    pub fn force_unlock(&mut self) {
        if !self.unlocked {
            self.unlocked = true;
            self.unlocked_at = Some(self.rewards.len());
        }
    }

    pub fn observations(&self) -> usize {
        self.rewards.len()
    }
}
