//! Temporary diagnostic: BC on a clean single-route dataset (ambiguity test).
use crossflow::dataset::{generate_clean_dataset, ReplayBuffer};
use crossflow::env::{DensitySpec, Env, EnvConfig, TerminationReason};
use crossflow::offline_rl::{train, Algorithm, TrainConfig, TrainedPolicy};
use crossflow::seeding;

fn main() {
    let env_cfg = EnvConfig::default();
    // Route 1: through movement by construction check below.
    for route in [0usize, 1, 2] {
        let ds = generate_clean_dataset(&env_cfg, 120, 9, route);
        let n = ds.transitions.len();
        let buffer = ReplayBuffer::new(ds.transitions);
        let tc = TrainConfig { max_steps: 20000, eval_every: 20000, ..TrainConfig::default() };
        let run = train(Algorithm::Bc, &buffer, &tc, 42).unwrap();
        let policy = TrainedPolicy::new(run.checkpoint).unwrap();
        let mut c = [0usize; 3];
        let mut held_mse = 0.0;
        for rep in 0..30u64 {
            let seed = seeding::derive(500, "clean", rep);
            let (mut env, mut obs) = Env::reset_on_route(env_cfg, seed, DensitySpec::Empty, route);
            let outcome = loop {
                let out = env.step(policy.act(&obs)).unwrap();
                obs = out.observation;
                if let Some(t) = out.termination { break t; }
            };
            match outcome {
                TerminationReason::ExitedArea => c[0] += 1,
                TerminationReason::Collision => c[1] += 1,
                TerminationReason::Timeout => c[2] += 1,
            }
        }
        let _ = held_mse;
        println!(
            "route {route}: {n} transitions, loss_last {:.6}, fresh-seed rollouts e{} c{} t{}",
            run.losses.last().unwrap(), c[0], c[1], c[2]
        );
    }
}
