//! Scratch probe: teacher-only rollouts per route, clean and noisy, plus the
//! max lateral offset seen, to validate turn-arc feasibility.

use crossflow::dataset::{generate_clean_dataset, generate_dataset};
use crossflow::env::TerminationReason;

fn main() {
    let cfg = crossflow::offline_rl::TrainConfig::default().env;
    println!("== clean single-route, 3 episodes each ==");
    for route in 0..12usize {
        let d = generate_clean_dataset(&cfg, 3, 1000 + route as u64, route);
        let mut exits = 0;
        let mut steps = Vec::new();
        for ep in &d.episodes {
            if ep.termination == TerminationReason::ExitedArea {
                exits += 1;
                steps.push(ep.len);
            }
        }
        println!("route {route:2}: exited {exits}/3 lens {steps:?}");
    }
    println!("== noisy mixed, 60 episodes ==");
    let d = generate_dataset(&cfg, 60, 0, None);
    let mut exits = 0;
    let mut coll = 0;
    let mut tout = 0;
    for ep in &d.episodes {
        match ep.termination {
            TerminationReason::ExitedArea => exits += 1,
            TerminationReason::Collision => coll += 1,
            TerminationReason::Timeout => tout += 1,
        }
    }
    println!("exited {exits} collision {coll} timeout {tout}");
}
