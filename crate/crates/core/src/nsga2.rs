//! NSGA-II over continuous genomes: three genes per layer (sparsity,
//! precision, technique), fitness = negative reward.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::map_actions;
use crate::compress::{CompressionAction, CompressionPlan, Technique};
use crate::error::{Error, Result};

pub const GENES_PER_LAYER: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Nsga2Config {
    pub population: usize,
    pub generations: usize,
    pub eta_c: f64,
    pub eta_m: f64,
    pub crossover_rate: f64,
    /// Per-gene mutation probability; `None` means `1 / genome length`.
    pub mutation_rate: Option<f64>,
}

impl Default for Nsga2Config {
    fn default() -> Self {
        Nsga2Config {
            population: 20,
            generations: 55,
            eta_c: 15.0,
            eta_m: 20.0,
            crossover_rate: 0.9,
            mutation_rate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chromosome {
    pub genes: Vec<f64>,
    /// Objectives to minimize.
    pub objectives: Vec<f64>,
    pub reward: f64,
    pub rank: usize,
    pub crowding: f64,
}

/// Genome to plan: sparsity and precision genes go through the action map,
/// the technique gene selects `floor(g * 7)`.
pub fn decode_genome(genes: &[f64], s_cap: f64) -> Result<CompressionPlan> {
    if genes.len() % GENES_PER_LAYER != 0 {
        return Err(Error::InvalidArgument(format!(
            "genome length {} is not a multiple of {GENES_PER_LAYER}",
            genes.len()
        )));
    }
    let actions = genes
        .chunks(GENES_PER_LAYER)
        .enumerate()
        .map(|(layer, g)| {
            let (sparsity, bits) = map_actions(g[0], g[1], s_cap);
            let id = ((g[2].clamp(0.0, 1.0) * Technique::ALL.len() as f64).floor() as usize).min(Technique::ALL.len() - 1);
            CompressionAction {
                layer,
                technique: Technique::ALL[id],
                sparsity,
                bits,
            }
        })
        .collect();
    Ok(CompressionPlan::new(actions))
}

fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Fronts of indices, best first. Members of a front are in index order.
pub fn fast_nondominated_sort(objectives: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = objectives.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut count = vec![0usize; n];
    let mut fronts: Vec<Vec<usize>> = vec![Vec::new()];
    for p in 0..n {
        for q in 0..n {
            if dominates(&objectives[p], &objectives[q]) {
                dominated_by[p].push(q);
            } else if dominates(&objectives[q], &objectives[p]) {
                count[p] += 1;
            }
        }
        if count[p] == 0 {
            fronts[0].push(p);
        }
    }
    let mut i = 0;
    while !fronts[i].is_empty() {
        let mut next = Vec::new();
        for &p in &fronts[i] {
            for &q in &dominated_by[p] {
                count[q] -= 1;
                if count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(next);
        i += 1;
    }
    fronts.pop();
    fronts
}

/// Crowding distance of each member of `front` (same order). Boundary
/// points per objective get infinity.
pub fn crowding_distance(objectives: &[Vec<f64>], front: &[usize]) -> Vec<f64> {
    let n = front.len();
    let mut d = vec![0.0; n];
    if n == 0 {
        return d;
    }
    let m = objectives[front[0]].len();
    for k in 0..m {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| objectives[front[a]][k].total_cmp(&objectives[front[b]][k]));
        let lo = objectives[front[order[0]]][k];
        let hi = objectives[front[order[n - 1]]][k];
        d[order[0]] = f64::INFINITY;
        d[order[n - 1]] = f64::INFINITY;
        if hi > lo {
            for w in 1..n.saturating_sub(1) {
                let gap = objectives[front[order[w + 1]]][k] - objectives[front[order[w - 1]]][k];
                d[order[w]] += gap / (hi - lo);
            }
        }
    }
    d
}

/// Binary tournament on (rank, crowding).
pub fn tournament_select<'a>(pop: &'a [Chromosome], rng: &mut impl Rng) -> &'a Chromosome {
    let a = &pop[rng.random_range(0..pop.len())];
    let b = &pop[rng.random_range(0..pop.len())];
    if a.rank != b.rank {
        if a.rank < b.rank {
            a
        } else {
            b
        }
    } else if a.crowding >= b.crowding {
        a
    } else {
        b
    }
}

/// Simulated binary crossover on `[0, 1]` genes.
pub fn sbx_crossover(p1: &[f64], p2: &[f64], eta: f64, rate: f64, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = p1.to_vec();
    let mut c2 = p2.to_vec();
    if rng.random::<f64>() >= rate {
        return (c1, c2);
    }
    for i in 0..p1.len() {
        if rng.random::<f64>() > 0.5 || (p1[i] - p2[i]).abs() < 1e-14 {
            continue;
        }
        let u: f64 = rng.random();
        let beta = if u <= 0.5 {
            (2.0 * u).powf(1.0 / (eta + 1.0))
        } else {
            (1.0 / (2.0 * (1.0 - u))).powf(1.0 / (eta + 1.0))
        };
        let (x1, x2) = (p1[i], p2[i]);
        c1[i] = (0.5 * ((1.0 + beta) * x1 + (1.0 - beta) * x2)).clamp(0.0, 1.0);
        c2[i] = (0.5 * ((1.0 - beta) * x1 + (1.0 + beta) * x2)).clamp(0.0, 1.0);
    }
    (c1, c2)
}

/// Polynomial mutation on `[0, 1]` genes.
pub fn polynomial_mutation(genes: &mut [f64], eta: f64, rate: f64, rng: &mut impl Rng) {
    for g in genes.iter_mut() {
        if rng.random::<f64>() >= rate {
            continue;
        }
        let x = *g;
        let u: f64 = rng.random();
        let delta = if u < 0.5 {
            let b = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - x).powf(eta + 1.0);
            b.powf(1.0 / (eta + 1.0)) - 1.0
        } else {
            let b = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * x.powf(eta + 1.0);
            1.0 - b.powf(1.0 / (eta + 1.0))
        };
        *g = (x + delta).clamp(0.0, 1.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_reward: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveResult {
    pub best: Chromosome,
    pub history: Vec<GenerationStats>,
    pub evaluations: usize,
    /// Every evaluated genome with its reward, in evaluation order.
    pub evaluated: Vec<(Vec<f64>, f64)>,
}

fn rank_population(pop: &mut [Chromosome]) {
    let objs: Vec<Vec<f64>> = pop.iter().map(|c| c.objectives.clone()).collect();
    for (r, front) in fast_nondominated_sort(&objs).iter().enumerate() {
        let cd = crowding_distance(&objs, front);
        for (k, &i) in front.iter().enumerate() {
            pop[i].rank = r;
            pop[i].crowding = cd[k];
        }
    }
}

fn stats(generation: usize, pop: &[Chromosome]) -> GenerationStats {
    GenerationStats {
        generation,
        best_reward: pop.iter().map(|c| c.reward).fold(f64::NEG_INFINITY, f64::max),
        mean_reward: pop.iter().map(|c| c.reward).sum::<f64>() / pop.len() as f64,
    }
}

/// Runs the evolution. `evaluate` maps a batch of genomes to rewards (it may
/// evaluate them in parallel); the initial population counts as the first
/// generation, so it is called for exactly `population * generations`
/// genomes.
pub fn evolve(
    genome_len: usize,
    cfg: &Nsga2Config,
    rng: &mut impl Rng,
    mut evaluate: impl FnMut(&[Vec<f64>]) -> Result<Vec<f64>>,
) -> Result<EvolveResult> {
    if cfg.population == 0 || cfg.generations == 0 {
        return Err(Error::InvalidArgument("population and generations must be positive".into()));
    }
    let mutation = cfg.mutation_rate.unwrap_or(1.0 / genome_len.max(1) as f64);
    let mut evaluated = Vec::new();
    let mut assess = |genomes: Vec<Vec<f64>>, evaluated: &mut Vec<(Vec<f64>, f64)>| -> Result<Vec<Chromosome>> {
        let rewards = evaluate(&genomes)?;
        if rewards.len() != genomes.len() {
            return Err(Error::InvalidArgument("evaluator returned the wrong number of rewards".into()));
        }
        Ok(genomes
            .into_iter()
            .zip(rewards)
            .map(|(genes, reward)| {
                evaluated.push((genes.clone(), reward));
                Chromosome {
                    genes,
                    objectives: vec![-reward],
                    reward,
                    rank: 0,
                    crowding: 0.0,
                }
            })
            .collect())
    };

    let init: Vec<Vec<f64>> = (0..cfg.population)
        .map(|_| (0..genome_len).map(|_| rng.random::<f64>()).collect())
        .collect();
    let mut pop = assess(init, &mut evaluated)?;
    rank_population(&mut pop);
    let mut history = vec![stats(1, &pop)];

    for generation in 2..=cfg.generations {
        let mut children = Vec::with_capacity(cfg.population);
        while children.len() < cfg.population {
            let a = tournament_select(&pop, rng).genes.clone();
            let b = tournament_select(&pop, rng).genes.clone();
            let (mut c1, mut c2) = sbx_crossover(&a, &b, cfg.eta_c, cfg.crossover_rate, rng);
            polynomial_mutation(&mut c1, cfg.eta_m, mutation, rng);
            polynomial_mutation(&mut c2, cfg.eta_m, mutation, rng);
            children.push(c1);
            if children.len() < cfg.population {
                children.push(c2);
            }
        }
        let offspring = assess(children, &mut evaluated)?;
        let mut merged: Vec<Chromosome> = pop.into_iter().chain(offspring).collect();
        rank_population(&mut merged);
        let objs: Vec<Vec<f64>> = merged.iter().map(|c| c.objectives.clone()).collect();
        let mut next = Vec::with_capacity(cfg.population);
        for front in fast_nondominated_sort(&objs) {
            if next.len() + front.len() <= cfg.population {
                next.extend(front.iter().map(|&i| merged[i].clone()));
            } else {
                let mut f = front.clone();
                f.sort_by(|&a, &b| merged[b].crowding.total_cmp(&merged[a].crowding).then(a.cmp(&b)));
                let room = cfg.population - next.len();
                next.extend(f[..room].iter().map(|&i| merged[i].clone()));
            }
            if next.len() == cfg.population {
                break;
            }
        }
        pop = next;
        rank_population(&mut pop);
        history.push(stats(generation, &pop));
    }

    let best = pop
        .iter()
        .fold(None::<&Chromosome>, |acc, c| match acc {
            Some(b) if b.reward >= c.reward => Some(b),
            _ => Some(c),
        })
        .expect("non-empty population")
        .clone();
    Ok(EvolveResult {
        best,
        history,
        evaluations: evaluated.len(),
        evaluated,
    })
}

/// History as CSV with header `generation,best_reward,mean_reward`.
pub fn history_csv(history: &[GenerationStats]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for h in history {
        w.serialize(h)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
