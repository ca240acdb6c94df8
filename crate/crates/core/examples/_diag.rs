//! Temporary diagnostic: density-resolved outcomes and teacher stats per density.
use crossflow::dataset::{generate_dataset, ReplayBuffer};
use crossflow::env::{DensitySpec, Env, EnvConfig, TerminationReason};
use crossflow::offline_rl::{train, Algorithm, TrainConfig, TrainedPolicy};
use crossflow::seeding;

fn probe(policy: &TrainedPolicy, env_cfg: &EnvConfig, density: DensitySpec, n: u64) -> String {
    let mut c = [0usize; 3];
    let mut t_sum = 0.0;
    for rep in 0..n {
        let seed = seeding::derive(100, density.name(), rep);
        let (mut env, mut obs) = Env::reset(*env_cfg, seed, density);
        let outcome = loop {
            let out = env.step(policy.act(&obs)).unwrap();
            obs = out.observation;
            if let Some(t) = out.termination { break t; }
        };
        match outcome {
            TerminationReason::ExitedArea => {
                c[0] += 1;
                t_sum += env.in_zone_steps().unwrap() as f64 * 0.1;
            }
            TerminationReason::Collision => c[1] += 1,
            TerminationReason::Timeout => c[2] += 1,
        }
    }
    let mt = if c[0] > 0 { format!("{:.1}s", t_sum / c[0] as f64) } else { "-".into() };
    format!("{}: e{} c{} t{} mean_t {}", density.name(), c[0], c[1], c[2], mt)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let hidden: Vec<usize> = match args.get(1).map(|s| s.as_str()) {
        Some("h64") => vec![64, 64],
        Some("h128") => vec![128, 128],
        _ => vec![32, 32],
    };
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3e-4);
    let env_cfg = EnvConfig::default();
    let ds = generate_dataset(&env_cfg, 500, 0, None);
    // Teacher quality per density bucket.
    for d in [DensitySpec::Low, DensitySpec::Middle, DensitySpec::High] {
        let eps: Vec<_> = ds.episodes.iter().filter(|e| e.density == d).collect();
        let done = eps.iter().filter(|e| e.termination == TerminationReason::ExitedArea).count();
        let coll = eps.iter().filter(|e| e.termination == TerminationReason::Collision).count();
        println!("teacher {}: {} eps, exited {}, collided {}", d.name(), eps.len(), done, coll);
    }
    let buffer = ReplayBuffer::new(ds.transitions);
    let tc = TrainConfig {
        max_steps: 20000,
        eval_every: 20000,
        hidden: hidden.clone(),
        lr,
        ..TrainConfig::default()
    };
    for seed in [42u64, 1] {
        let run = train(Algorithm::Bc, &buffer, &tc, seed).unwrap();
        let policy = TrainedPolicy::new(run.checkpoint).unwrap();
        println!(
            "bc seed {seed} hidden {hidden:?} lr {lr} loss_last {:.4}",
            run.losses.last().unwrap()
        );
        for d in [DensitySpec::Empty, DensitySpec::Low, DensitySpec::High] {
            println!("    {}", probe(&policy, &env_cfg, d, 30));
        }
    }
}
