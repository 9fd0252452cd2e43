use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::env::Environment;
use super::{derive_seed, with_threads};
use crate::compress::{CompressionAction, CompressionPlan, Technique, MAX_BITS, MIN_BITS};
use crate::error::Result;
use crate::nsga2::fast_nondominated_sort;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STREAM_SWEEP: u64 = 10;
const STREAM_MIXED: u64 = 11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub technique: Technique,
    pub sparsity: f64,
    pub accuracy: f64,
    pub accuracy_loss: f64,
    pub energy_gain: f64,
}

/// Every technique applied uniformly to all layers at each sparsity, at
/// 8 bits.
pub fn pruning_sweep(env: &Environment, sparsities: &[f64], seed: u64, threads: usize) -> Result<Vec<SweepPoint>> {
    let grid: Vec<(Technique, f64)> = Technique::ALL
        .iter()
        .flat_map(|&t| sparsities.iter().map(move |&s| (t, s)))
        .collect();
    with_threads(threads, || {
        grid.par_iter()
            .enumerate()
            .map(|(i, &(technique, sparsity))| {
                let plan = CompressionPlan::uniform(env.num_layers(), technique, sparsity, MAX_BITS);
                let e = env.evaluate(&plan, derive_seed(seed, STREAM_SWEEP, i as u64))?;
                Ok(SweepPoint {
                    technique,
                    sparsity,
                    accuracy: e.accuracy,
                    accuracy_loss: e.accuracy_loss,
                    energy_gain: e.energy_gain,
                })
            })
            .collect()
    })
}

pub fn sweep_csv(points: &[SweepPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPoint {
    pub bits: Vec<u8>,
    pub accuracy_loss: f64,
    pub energy_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformVsMixed {
    pub uniform: Vec<PrecisionPoint>,
    pub mixed: Vec<PrecisionPoint>,
    pub uniform_front: Vec<PrecisionPoint>,
    pub mixed_front: Vec<PrecisionPoint>,
    /// Every uniform front point is matched or beaten by a mixed front point.
    pub mixed_dominates: bool,
}

fn precision_plan(bits: &[u8]) -> CompressionPlan {
    CompressionPlan::new(
        bits.iter()
            .enumerate()
            .map(|(l, &q)| CompressionAction {
                bits: q,
                ..CompressionAction::noop(l)
            })
            .collect(),
    )
}

fn measure(env: &Environment, configs: &[Vec<u8>], seed: u64) -> Result<Vec<PrecisionPoint>> {
    configs
        .par_iter()
        .enumerate()
        .map(|(i, bits)| {
            let e = env.evaluate(&precision_plan(bits), derive_seed(seed, STREAM_MIXED, i as u64))?;
            Ok(PrecisionPoint {
                bits: bits.clone(),
                accuracy_loss: e.accuracy_loss,
                energy_gain: e.energy_gain,
            })
        })
        .collect()
}

/// Non-dominated (low loss, high gain) points sorted by loss.
pub fn precision_front(points: &[PrecisionPoint]) -> Vec<PrecisionPoint> {
    let objs: Vec<Vec<f64>> = points.iter().map(|p| vec![p.accuracy_loss, -p.energy_gain]).collect();
    let mut front: Vec<PrecisionPoint> = fast_nondominated_sort(&objs)
        .into_iter()
        .next()
        .unwrap_or_default()
        .into_iter()
        .map(|i| points[i].clone())
        .collect();
    front.sort_by(|a, b| a.accuracy_loss.total_cmp(&b.accuracy_loss).then(b.energy_gain.total_cmp(&a.energy_gain)));
    front
}

/// True when each `reference` point has a `candidate` point with no more
/// loss and no less gain.
pub fn weakly_dominates(candidate: &[PrecisionPoint], reference: &[PrecisionPoint]) -> bool {
    reference.iter().all(|r| {
        candidate
            .iter()
            .any(|c| c.accuracy_loss <= r.accuracy_loss + 1e-9 && c.energy_gain >= r.energy_gain - 1e-9)
    })
}

/// Quantization-only comparison. Uniform: every layer at the same width.
/// Mixed: `samples` random per-layer widths plus a greedy descent that
/// lowers, one bit at a time, the layer with the least loss per unit gain.
pub fn uniform_vs_mixed(env: &Environment, samples: usize, seed: u64, threads: usize) -> Result<UniformVsMixed> {
    let n = env.num_layers();
    with_threads(threads, || {
        let uniform_cfgs: Vec<Vec<u8>> = (MIN_BITS..=MAX_BITS).map(|q| vec![q; n]).collect();
        let uniform = measure(env, &uniform_cfgs, seed)?;

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_MIXED, u64::MAX));
        let random_cfgs: Vec<Vec<u8>> = (0..samples)
            .map(|_| (0..n).map(|_| rng.random_range(MIN_BITS..=MAX_BITS)).collect())
            .collect();
        let mut mixed = measure(env, &random_cfgs, seed)?;

        let mut current = measure(env, &[vec![MAX_BITS; n]], seed)?.remove(0);
        mixed.push(current.clone());
        while current.bits.iter().any(|&q| q > MIN_BITS) {
            let cands: Vec<Vec<u8>> = (0..n)
                .filter(|&l| current.bits[l] > MIN_BITS)
                .map(|l| {
                    let mut b = current.bits.clone();
                    b[l] -= 1;
                    b
                })
                .collect();
            let pts = measure(env, &cands, seed)?;
            let score = |p: &PrecisionPoint| {
                let dl = (p.accuracy_loss - current.accuracy_loss).max(0.0);
                let dg = (p.energy_gain - current.energy_gain).max(1e-12);
                dl / dg
            };
            let next = pts
                .iter()
                .min_by(|a, b| score(a).total_cmp(&score(b)))
                .expect("at least one candidate")
                .clone();
            mixed.push(next.clone());
            current = next;
        }

        let uniform_front = precision_front(&uniform);
        let mixed_front = precision_front(&mixed);
        let mixed_dominates = weakly_dominates(&mixed_front, &uniform_front);
        Ok(UniformVsMixed {
            uniform,
            mixed,
            uniform_front,
            mixed_front,
            mixed_dominates,
        })
    })
}
