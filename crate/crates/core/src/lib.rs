//! Model-based agent that learns non-reinforced preferences in a volatile
//! gridworld: an RSSM world model trained by ELBO with an ensemble
//! disagreement signal, an expected-free-energy planner, and three
//! preference mechanisms (NORE selective attention, Pepper-style Hebbian
//! accumulation, and a fixed uniform baseline), with a sweep harness over
//! environment volatility levels.

pub mod env;
pub mod metrics;
pub mod numerics;
pub mod planner;
pub mod rollout;
pub mod preferences;
pub mod rng;
pub mod runner;
pub mod world_model;

pub use rng::{seeded_rng, sub_seed, SeededRng};
