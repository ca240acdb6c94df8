//! Scratch probe: per-route Empty rollouts of a BC policy trained on the
//! default mixed dataset, with a trajectory dump for failing routes.

use crossflow::dataset::{generate_dataset, ReplayBuffer};
use crossflow::env::{DensitySpec, Env};
use crossflow::offline_rl::{train, Algorithm, TrainConfig, TrainedPolicy};
use crossflow::seeding;

fn main() {
    let cfg = TrainConfig { eval_every: 20_000, ..TrainConfig::default() };
    let data = generate_dataset(&cfg.env, 500, 0, None);
    let buffer = ReplayBuffer::new(data.transitions.clone());
    let run = train(Algorithm::Bc, &buffer, &cfg, 7).expect("train");
    let policy = TrainedPolicy::new(run.checkpoint).expect("policy");
    let kin = cfg.env.kinematics;

    for route in 0..12usize {
        let seed = seeding::derive(900, "probe", route as u64);
        let (mut env, mut obs) = Env::reset_on_route(cfg.env, seed, DensitySpec::Empty, route);
        let arm = env.route().entry_arm;
        let mv = env.route().movement;
        let mut trace = Vec::new();
        let term = loop {
            let ego = env.ego_state();
            let mid = ego.midpoint(kin.wheelbase);
            let (s, d) = env.route().project(mid);
            let a = policy.act(&obs);
            if env.time_step() % 20 == 0 {
                trace.push(format!(
                    "    t{t:3} s {s:6.2} d {d:5.2} yaw {yaw:6.3} v {v:5.2} net [{vx:6.2} {vy:6.2} {yr:6.3}]",
                    t = env.time_step(),
                    yaw = ego.yaw,
                    v = env.ego_participant().speed,
                    vx = a.vx,
                    vy = a.vy,
                    yr = a.yaw_rate,
                ));
            }
            let out = env.step(a).expect("step");
            obs = out.observation;
            if let Some(term) = out.termination {
                break term;
            }
        };
        println!("route {route:2} arm {arm} {mv:?}: {term:?} at t{}", env.time_step());
        if !matches!(term, crossflow::env::TerminationReason::ExitedArea) {
            for line in trace.iter().take(12) {
                println!("{line}");
            }
        }
    }
}
