//! Scratch probe shaped like the end-to-end gate: default dataset, one BC and
//! one TD3+BC training at defaults, reward margins over random, and the
//! High-density travel-time direction against the conservative baseline.

use crossflow::dataset::{generate_dataset, ReplayBuffer};
use crossflow::env::{DensitySpec, TerminationReason};
use crossflow::eval::{run_matrix, AgentUnderTest};
use crossflow::offline_rl::{evaluate_policy, random_policy, train, Algorithm, TrainConfig};
use crossflow::par::Parallelism;

fn main() {
    let cfg = TrainConfig::default();
    eprintln!("dataset...");
    let data = generate_dataset(&cfg.env, 500, 0, None);
    let mut stats = std::collections::BTreeMap::new();
    for ep in &data.episodes {
        let e = stats.entry(format!("{:?}", ep.density)).or_insert([0usize; 3]);
        match ep.termination {
            TerminationReason::ExitedArea => e[0] += 1,
            TerminationReason::Collision => e[1] += 1,
            TerminationReason::Timeout => e[2] += 1,
        }
    }
    for (k, v) in &stats {
        println!("teacher {k}: exited {} coll {} timeout {}", v[0], v[1], v[2]);
    }
    let buffer = ReplayBuffer::new(data.transitions.clone());
    for (algo, name) in [(Algorithm::Td3Bc, "td3+bc")] {
        eprintln!("training {name}...");
        let t0 = std::time::Instant::now();
        let run = train(algo, &buffer, &cfg, cfg.seeds[0]).expect("train");
        let final_eval = run.curve.last().unwrap().1;
        println!("{name}: final eval {final_eval:.3} ({:.0}s)", t0.elapsed().as_secs_f64());
        let agents = [
            AgentUnderTest::from_checkpoint(name, run.checkpoint.clone()).expect("agent"),
            AgentUnderTest::ConservativeBaseline,
        ];
        let rows = run_matrix(&cfg.env, &agents, &[DensitySpec::High], 20, 123, Parallelism::Sequential)
            .expect("matrix");
        for label in [name, crossflow::eval::BASELINE_LABEL] {
            for d in [DensitySpec::High] {
                let cell: Vec<_> =
                    rows.iter().filter(|r| r.agent == label && r.density == d).collect();
                let done: Vec<f64> = cell.iter().filter_map(|r| r.travel_time).collect();
                let mean = if done.is_empty() {
                    f64::NAN
                } else {
                    done.iter().sum::<f64>() / done.len() as f64
                };
                println!(
                    "  {label:22} {:7}: completed {}/{} travel mean {mean:.2}",
                    d.name(),
                    done.len(),
                    cell.len()
                );
            }
        }
    }
    let mut rnd = random_policy(7, [15.0, 15.0, 1.0]);
    let r = evaluate_policy(&mut rnd, &cfg.env, 10, 42);
    println!("random: eval {r:.3}");
}
