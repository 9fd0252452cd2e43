//! Agent checkpoints in the model container format: a manifest plus one
//! `f32` blob per parameter tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentConfig, CompositeAgent, RewardMonitor};
use crate::container::{read_blob, read_manifest, write_blob, write_manifest, BlobRef};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::tensor::Tensor;

const FORMAT: &str = "cforge-agent/1";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: AgentConfig,
    episode: usize,
    sigma: f64,
    monitor: RewardMonitor,
    networks: Vec<NetworkEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetworkEntry {
    name: String,
    blobs: Vec<BlobRef>,
}

fn networks(agent: &CompositeAgent) -> Vec<(&'static str, &Mlp)> {
    vec![
        ("actor", &agent.ddpg.actor),
        ("critic", &agent.ddpg.critic),
        ("actor_target", &agent.ddpg.actor_target),
        ("critic_target", &agent.ddpg.critic_target),
        ("rainbow_value", &agent.rainbow.online.value),
        ("rainbow_advantage", &agent.rainbow.online.advantage),
        ("rainbow_target_value", &agent.rainbow.target.value),
        ("rainbow_target_advantage", &agent.rainbow.target.advantage),
    ]
}

fn networks_mut(agent: &mut CompositeAgent) -> Vec<(&'static str, &mut Mlp)> {
    let d = &mut agent.ddpg;
    let r = &mut agent.rainbow;
    vec![
        ("actor", &mut d.actor),
        ("critic", &mut d.critic),
        ("actor_target", &mut d.actor_target),
        ("critic_target", &mut d.critic_target),
        ("rainbow_value", &mut r.online.value),
        ("rainbow_advantage", &mut r.online.advantage),
        ("rainbow_target_value", &mut r.target.value),
        ("rainbow_target_advantage", &mut r.target.advantage),
    ]
}

/// Writes network parameters (rounded to `f32`), exploration state and the
/// monitor. Optimizer moments and replay contents are not saved.
pub fn save_checkpoint(agent: &CompositeAgent, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (name, net) in networks(agent) {
        let mut blobs = Vec::new();
        for (k, p) in net.params().iter().enumerate() {
            let t = Tensor::new(vec![p.len()], p.iter().map(|&v| v as f32).collect())?;
            blobs.push(write_blob(dir, &format!("{name}_{k:02}.bin"), &t)?);
        }
        entries.push(NetworkEntry {
            name: name.to_string(),
            blobs,
        });
    }
    write_manifest(
        dir,
        &Manifest {
            format: FORMAT.to_string(),
            config: agent.cfg.clone(),
            episode: agent.episode,
            sigma: agent.ddpg.sigma,
            monitor: agent.monitor.clone(),
            networks: entries,
        },
    )
}

pub fn load_checkpoint(dir: impl AsRef<Path>, seed: u64) -> Result<CompositeAgent> {
    let dir = dir.as_ref();
    let m: Manifest = read_manifest(dir)?;
    if m.format != FORMAT {
        return Err(Error::format(dir, format!("unknown checkpoint format {:?}", m.format)));
    }
    let mut agent = CompositeAgent::new(m.config, seed);
    agent.episode = m.episode;
    agent.ddpg.sigma = m.sigma;
    agent.monitor = m.monitor;
    for (name, net) in networks_mut(&mut agent) {
        let entry = m
            .networks
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::format(dir, format!("missing network {name}")))?;
        let params = net.params_mut();
        if params.len() != entry.blobs.len() {
            return Err(Error::format(dir, format!("network {name}: parameter count mismatch")));
        }
        for (p, blob) in params.into_iter().zip(&entry.blobs) {
            let t = read_blob(dir, blob)?;
            if t.len() != p.len() {
                return Err(Error::format(dir, format!("network {name}: blob {} has wrong size", blob.file)));
            }
            for (d, &s) in p.iter_mut().zip(t.data()) {
                *d = s as f64;
            }
        }
    }
    Ok(agent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{DdpgConfig, RainbowConfig};

    #[test]
    fn round_trip_restores_f32_params() {
        let cfg = AgentConfig {
            ddpg: DdpgConfig { hidden: 6, hidden_layers: 2, ..DdpgConfig::default() },
            rainbow: RainbowConfig { hidden: 4, atoms: 5, ..RainbowConfig::default() },
            ..AgentConfig::default()
        };
        let a = CompositeAgent::new(cfg, 3);
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&a, dir.path()).unwrap();
        let b = load_checkpoint(dir.path(), 99).unwrap();
        let round = |v: Vec<f64>| v.into_iter().map(|x| x as f32 as f64).collect::<Vec<_>>();
        assert_eq!(round(a.ddpg.actor.flat_params()), b.ddpg.actor.flat_params());
        assert_eq!(round(a.rainbow.flat_params()), b.rainbow.flat_params());
        assert_eq!(a.ddpg.sigma, b.ddpg.sigma);
    }
}
