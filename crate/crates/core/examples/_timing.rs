use std::time::Instant;

use crossflow::dataset::{generate_dataset, ReplayBuffer};
use crossflow::env::EnvConfig;
use crossflow::offline_rl::{
    action_caps, evaluate_policy, random_policy, train, Algorithm, TrainConfig,
};

fn main() {
    let env = EnvConfig::default();

    let t = Instant::now();
    let ds = generate_dataset(&env, 500, 0, None);
    println!(
        "gen: 500 episodes, {} transitions in {:.1}s",
        ds.transitions.len(),
        t.elapsed().as_secs_f64()
    );
    let episodes = &ds.episodes;
    let exits = episodes.iter().filter(|e| e.termination.name() == "exited").count();
    let collisions = episodes.iter().filter(|e| e.termination.name() == "collision").count();
    println!(
        "  outcomes: {} exited, {} collided, {} other",
        exits,
        collisions,
        episodes.len() - exits - collisions
    );

    let buffer = ReplayBuffer::new(ds.transitions);
    let cfg = TrainConfig::default();

    let mut rand_pol = random_policy(999, action_caps(&env));
    let r_rand = evaluate_policy(&mut rand_pol, &env, 10, 999);
    println!("random policy eval: {r_rand:.4}");

    for algo in [Algorithm::Bc, Algorithm::Td3Bc, Algorithm::Td3] {
        let t = Instant::now();
        let run = train(algo, &buffer, &cfg, 42).unwrap();
        let last5: Vec<f64> = run.curve.iter().rev().take(5).map(|p| p.1).collect();
        println!(
            "{}: {:.0}s, final curve {:.4}, last5 {:?}",
            algo.name(),
            t.elapsed().as_secs_f64(),
            run.curve.last().unwrap().1,
            last5.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }
}
