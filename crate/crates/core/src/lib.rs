//! Connected-intersection driving simulator with an offline RL toolkit.
//!
//! An infrastructure sensor at a four-arm intersection tracks every traffic
//! participant and feeds a single ego vehicle a fixed-width observation of its
//! surroundings. The crate simulates that world ([`env`]), logs it and turns the
//! logs into training transitions ([`dataset`]), trains behaviour-cloning and
//! TD3-family agents on those transitions with a small hand-rolled neural
//! network stack ([`nn`], [`offline_rl`]), and scores trained agents against a
//! conservative rule-based driver across traffic densities ([`eval`]).
//!
//! Everything is deterministic given a seed: RNG streams are ChaCha-based,
//! parallel maps use fixed chunking with ordered collection, and all float math
//! is `f64`. With the `parallel` feature (default) the heavy loops run on rayon;
//! without it they fall back to sequential code that produces bit-identical
//! results.

pub mod config;
pub mod dataset;
pub mod env;
pub mod eval;
pub mod kinematics;
pub mod nn;
pub mod offline_rl;
pub mod par;
pub mod plot;
pub mod seeding;
pub mod world;
