//! Scratch probe: clean teacher-student check. BC on a noise-free single-route
//! dataset, held-out action MSE from a disjoint seed.

use crossflow::dataset::{encode_observation, generate_clean_dataset, ReplayBuffer};
use crossflow::offline_rl::{train, Algorithm, TrainConfig, TrainedPolicy};

fn main() {
    let cfg = TrainConfig::default();
    let train_data = generate_clean_dataset(&cfg.env, 60, 5, 0);
    let held_out = generate_clean_dataset(&cfg.env, 20, 6, 0);
    println!("train transitions {}", train_data.transitions.len());
    let buffer = ReplayBuffer::new(train_data.transitions.clone());
    let run = train(Algorithm::Bc, &buffer, &cfg, cfg.seeds[0]).expect("train");
    let policy = TrainedPolicy::new(run.checkpoint).expect("policy");
    let mut se = 0.0;
    let mut n = 0usize;
    for t in &held_out.transitions {
        let obs = crossflow::dataset::decode_observation(&t.obs).expect("obs");
        let a = policy.act(&obs);
        let lbl = t.action;
        se += (a.vx - lbl[0]).powi(2) + (a.vy - lbl[1]).powi(2) + (a.yaw_rate - lbl[2]).powi(2);
        n += 3;
    }
    println!("held-out action MSE {:.3e} over {} dims", se / n as f64, n);
    let k = run.losses.len();
    for (i, v) in run.losses.iter().enumerate().skip(k.saturating_sub(3)) {
        println!("loss[{i}]: {v:.3e}");
    }
}
