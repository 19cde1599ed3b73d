// Scratch calibration probe (not part of the deliverable test suite).
use mol_core::data::augment_order;
use mol_core::envs::*;
use mol_core::markov::{markov_test, select_order, TestConfig};
use mol_core::regress::{Bandwidth, RegressorSpec};
use rayon::prelude::*;
use std::time::Instant;

fn env_usize(name: &str, default: usize) -> usize {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn study_config(seed: u64) -> TestConfig {
    TestConfig {
        max_gap: env_usize("PROBE_Q", 4),
        forward_features: env_usize("PROBE_J", 4),
        backward_features: env_usize("PROBE_L", 4),
        folds: env_usize("PROBE_K", 2),
        bootstrap_reps: env_usize("PROBE_B", 300),
        alpha: 0.05,
        seed,
        regressor: RegressorSpec {
            num_features: env_usize("PROBE_D", 64),
            bandwidth: Bandwidth::MedianHeuristic,
            ridge: std::env::var("PROBE_RIDGE")
                .ok()
                .and_then(|v| v.parse().ok())
                .unwrap_or(1e-3),
            seed: 0,
        },
        include_reward: env_usize("PROBE_REWARD", 1) == 1,
        corruption: None,
    }
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "size".into());
    let reps: usize = std::env::args()
        .nth(2)
        .map(|s| s.parse().unwrap())
        .unwrap_or(40);
    let t0 = Instant::now();
    match mode.as_str() {
        "size" => {
            let rej: Vec<bool> = (0..reps)
                .into_par_iter()
                .map(|r| {
                    let cfg = LinearHmdpConfig::standard(1, 2, 2, 0.4, 0.25, 0);
                    let ds =
                        linear_hmdp_simulate(&cfg, &Policy::UniformRandom, 100, 100, 1000 + r as u64)
                            .unwrap();
                    let report = markov_test(&ds, &study_config(2000 + r as u64)).unwrap();
                    report.reject
                })
                .collect();
            let p = rej.iter().filter(|r| **r).count() as f64 / reps as f64;
            println!("size: rejection rate {p:.3} over {reps} reps [{:?}]", t0.elapsed());
        }
        "power" => {
            for k in 1..=3usize {
                let rej: Vec<bool> = (0..reps)
                    .into_par_iter()
                    .map(|r| {
                        let env = TigerEnv::new(TigerConfig::default()).unwrap();
                        let ds = simulate(
                            &env,
                            &Policy::EpsilonListen { listen_prob: 0.8 },
                            100,
                            50,
                            3000 + r as u64,
                        );
                        let ds_k = augment_order(&ds, k, true).unwrap();
                        let report = markov_test(&ds_k, &study_config(4000 + r as u64)).unwrap();
                        report.reject
                    })
                    .collect();
                let p = rej.iter().filter(|r| **r).count() as f64 / reps as f64;
                println!("power tiger k={k}: rejection {p:.3} over {reps} [{:?}]", t0.elapsed());
            }
        }
        "type1" => {
            for k in 1..=3usize {
                let rej: Vec<bool> = (0..reps)
                    .into_par_iter()
                    .map(|r| {
                        let env = TigerEnv::new(TigerConfig {
                            reveal_state: true,
                            ..TigerConfig::default()
                        })
                        .unwrap();
                        let ds = simulate(
                            &env,
                            &Policy::EpsilonListen { listen_prob: 0.8 },
                            100,
                            50,
                            5000 + r as u64,
                        );
                        let ds_k = augment_order(&ds, k, true).unwrap();
                        let report = markov_test(&ds_k, &study_config(6000 + r as u64)).unwrap();
                        report.reject
                    })
                    .collect();
                let p = rej.iter().filter(|r| **r).count() as f64 / reps as f64;
                println!("type1 revealed tiger k={k}: rejection {p:.3} over {reps} [{:?}]", t0.elapsed());
            }
        }
        "order" => {
            let sel: Vec<Option<usize>> = (0..reps)
                .into_par_iter()
                .map(|r| {
                    let cfg = LinearHmdpConfig::standard(3, 2, 2, 0.35, 0.25, 0);
                    let ds =
                        linear_hmdp_simulate(&cfg, &Policy::UniformRandom, 200, 100, 7000 + r as u64)
                            .unwrap();
                    let report = select_order(&ds, 5, &study_config(8000 + r as u64)).unwrap();
                    report.selected_order
                })
                .collect();
            let mut counts = std::collections::BTreeMap::new();
            for s in &sel {
                *counts.entry(*s).or_insert(0usize) += 1;
            }
            println!("order selection over {reps}: {counts:?} [{:?}]", t0.elapsed());
        }
        other => eprintln!("unknown mode {other}"),
    }
}
