//! Agent, NSGA-II and uniform-random search on the bundled fixture under the
//! same evaluation budget and seeds.
//!
//! cargo run --release --example compare_searchers [-- EPISODES SEED...]

use std::path::Path;
use std::time::Instant;

use cforge::orchestrator::{run_ga_search, run_random_search, run_search, Environment, RunConfig, SearchReport};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn summary(r: &SearchReport) -> String {
    format!(
        "best reward {:.4} (loss {:.2}%, gain {:.2}%) at {}",
        r.best.reward, r.best.accuracy_loss, r.best.energy_gain, r.best.episode
    )
}

fn main() -> cforge::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/fixture.toml");
    let mut base = RunConfig::load(&fixture)?;
    if let Some(e) = args.first() {
        base.episodes = e.parse().expect("episode count");
        base.warmup = base.warmup.min(base.episodes / 4);
    }
    let seeds: Vec<u64> = if args.len() > 1 {
        args[1..].iter().map(|s| s.parse().expect("seed")).collect()
    } else {
        vec![0, 1, 2]
    };
    let mut best = [Vec::new(), Vec::new(), Vec::new()];
    for &seed in &seeds {
        let cfg = RunConfig { seed, ..base.clone() };
        let (env, _) = Environment::from_config(&cfg)?;
        let t = Instant::now();
        let (rl, _) = run_search(&cfg, &env, |_, _| Ok(()))?;
        println!("seed {seed} agent  {} [{:.0}s]", summary(&rl), t.elapsed().as_secs_f64());
        let ga = run_ga_search(&cfg, &env)?;
        println!("seed {seed} nsga2  {}", summary(&ga));
        let rnd = run_random_search(&cfg, &env)?;
        println!("seed {seed} random {}", summary(&rnd));
        for (b, r) in best.iter_mut().zip([&rl, &ga, &rnd]) {
            b.push(r.best.reward);
        }
    }
    let [rl, ga, rnd] = best;
    println!(
        "median best reward: agent {:.4}, nsga2 {:.4}, random {:.4}",
        median(rl),
        median(ga),
        median(rnd)
    );
    Ok(())
}
