//! Rough timings for the hot paths at the desk profile: planner action
//! selection, a world-model train step, and posterior encoding.
//!
//! Run with `cargo run --release -p nore-core --example timing`.

use std::time::Instant;

use rand::Rng;

use nore_core::numerics::categorical_sample_st;
use nore_core::numerics::tensor::{no_grad, Tensor};
use nore_core::planner::{select_action, uniform_preference_logp, PlannerConfig};
use nore_core::rng::seeded_rng;
use nore_core::runner::ExperimentConfig;
use nore_core::world_model::{Batch, LatentState, Rssm, Sequence};

fn main() {
    let cfg = ExperimentConfig::desk();
    let mut rng = seeded_rng(1);
    let model = Rssm::new(cfg.rssm(), &mut rng);
    let pref = uniform_preference_logp(cfg.state_categories);
    let plan_cfg = PlannerConfig::default();

    let h = Tensor::zeros(&[cfg.deter_size]);
    let mut s = vec![0.0; cfg.state_dims * cfg.state_categories];
    for d in 0..cfg.state_dims {
        s[d * cfg.state_categories] = 1.0;
    }
    let start = LatentState {
        h,
        s: Tensor::constant(&[cfg.state_dims, cfg.state_categories], s),
    };

    let t0 = Instant::now();
    let n = 20;
    for _ in 0..n {
        let _ = select_action(&model, &start, &pref, &plan_cfg, &mut rng).unwrap();
    }
    let per_action = t0.elapsed().as_secs_f64() / n as f64;
    println!("select_action:        {:8.1} ms", per_action * 1e3);
    println!("episode (100 steps):  {:8.1} s", per_action * 100.0);
    println!("cell (50 episodes):   {:8.1} s", per_action * 100.0 * 50.0);
    println!("sweep (15 cells):     {:8.1} min", per_action * 100.0 * 50.0 * 15.0 / 60.0);

    let mut model2 = Rssm::new(cfg.rssm(), &mut rng);
    let obs_len = cfg.observation_len();
    let random_bits = |rng: &mut nore_core::SeededRng| -> Vec<f64> {
        (0..obs_len)
            .map(|_| if rng.random::<f64>() < 0.5 { 0.0 } else { 1.0 })
            .collect()
    };
    let batch = Batch {
        sequences: (0..cfg.batch_size)
            .map(|_| Sequence {
                observations: (0..11).map(|_| random_bits(&mut rng)).collect(),
                actions: (0..10)
                    .map(|_| nore_core::env::ACTIONS[rng.random_range(0..4)])
                    .collect(),
            })
            .collect(),
    };
    let t1 = Instant::now();
    let m = 10;
    for k in 0..m {
        model2.train_step(&batch, k).unwrap();
    }
    println!("train_step:           {:8.1} ms", t1.elapsed().as_secs_f64() / m as f64 * 1e3);

    let t2 = Instant::now();
    let obs = vec![0.0; obs_len];
    for _ in 0..1000 {
        let _ = no_grad(|| {
            let logits = model.posterior_logits(&start.h, &obs).unwrap();
            categorical_sample_st(&logits, &mut rng).unwrap()
        });
    }
    println!(
        "posterior + sample:   {:8.3} ms",
        t2.elapsed().as_secs_f64()
    );
}
