//! Desk-scale policy learning and evaluation: fitted Q-iteration, fitted
//! Q-evaluation, and exact dynamic programming on tabular MDPs.
//!
//! Both FQI and FQE run a fixed iteration budget (function-approximation
//! Bellman iterations need not converge, so the budget is explicit config).
//! Regressor seeds are derived per action but held fixed across iterations,
//! which freezes the random feature map and reduces each iteration to a new
//! ridge solve.

use crate::data::TrajectoryDataset;
use crate::envs::{state_index, Policy, TabularMdp};
use crate::regress::{self, FittedRegressor, RegressError, RegressorSpec};
use crate::seed;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("action {action} never appears in the dataset (counts: {counts:?})")]
    ActionNotCovered { action: usize, counts: Vec<usize> },
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error("discount must lie in (0,1), got {0}")]
    BadDiscount(f64),
}

/// Function class for the Q-fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FunctionClass {
    /// Random-feature ridge per action.
    RandomFeatures { spec: RegressorSpec },
    /// Exact per-(state, action) means; states read via [`state_index`].
    Tabular { num_states: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlConfig {
    pub gamma: f64,
    pub iterations: usize,
    pub function_class: FunctionClass,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            iterations: 50,
            function_class: FunctionClass::RandomFeatures {
                spec: RegressorSpec::default(),
            },
        }
    }
}

impl RlConfig {
    fn validate(&self) -> Result<(), RlError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(RlError::BadDiscount(self.gamma));
        }
        Ok(())
    }
}

/// State-action value function: one fitted regressor per action, or a
/// tabular array.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QFunction {
    Fitted { models: Vec<FittedRegressor> },
    Tabular { values: Vec<Vec<f64>> },
}

impl QFunction {
    pub fn num_actions(&self) -> usize {
        match self {
            QFunction::Fitted { models } => models.len(),
            QFunction::Tabular { values } => values.first().map_or(0, Vec::len),
        }
    }

    pub fn evaluate(&self, obs: &[f64], action: usize) -> f64 {
        match self {
            QFunction::Fitted { models } => models[action]
                .predict_one(obs)
                .expect("Q-function evaluated at matching dimension")[0],
            QFunction::Tabular { values } => values[state_index(obs)][action],
        }
    }

    /// Batch evaluation over observation rows for one action.
    pub fn evaluate_batch(&self, obs: &DMatrix<f64>, action: usize) -> Vec<f64> {
        match self {
            QFunction::Fitted { models } => models[action]
                .predict(obs)
                .expect("Q-function evaluated at matching dimension")
                .column(0)
                .iter()
                .copied()
                .collect(),
            QFunction::Tabular { values } => (0..obs.nrows())
                .map(|i| {
                    let row: Vec<f64> = obs.row(i).iter().copied().collect();
                    values[state_index(&row)][action]
                })
                .collect(),
        }
    }
}

/// Flattened transition table used by both FQI and FQE.
struct Transitions {
    obs: DMatrix<f64>,
    next_obs: DMatrix<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    /// Row indices per action.
    per_action: Vec<Vec<usize>>,
    /// One initial observation row per episode.
    initial_obs: DMatrix<f64>,
}

fn collect_transitions(ds: &TrajectoryDataset) -> Result<Transitions, RlError> {
    let m = ds.num_actions();
    let n = ds.total_transitions();
    let p = ds.obs_dim;
    let mut obs = DMatrix::zeros(n, p);
    let mut next_obs = DMatrix::zeros(n, p);
    let mut actions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    let mut per_action = vec![Vec::new(); m];
    let mut initial_obs = DMatrix::zeros(ds.episodes.len(), p);
    let mut row = 0usize;
    for (e, ep) in ds.episodes.iter().enumerate() {
        for (j, v) in ep.observations[0].iter().enumerate() {
            initial_obs[(e, j)] = *v;
        }
        for t in 0..ep.transitions() {
            for j in 0..p {
                obs[(row, j)] = ep.observations[t][j];
                next_obs[(row, j)] = ep.observations[t + 1][j];
            }
            actions.push(ep.actions[t]);
            rewards.push(ep.rewards[t]);
            per_action[ep.actions[t]].push(row);
            row += 1;
        }
    }
    let counts: Vec<usize> = per_action.iter().map(Vec::len).collect();
    if let Some(a) = counts.iter().position(|c| *c == 0) {
        return Err(RlError::ActionNotCovered { action: a, counts });
    }
    Ok(Transitions {
        obs,
        next_obs,
        actions,
        rewards,
        per_action,
        initial_obs,
    })
}

/// Fit Q on per-action regression problems (or tabular means).
fn fit_q(
    tr: &Transitions,
    targets: &[f64],
    class: &FunctionClass,
    stream_label: &str,
) -> Result<QFunction, RlError> {
    match class {
        FunctionClass::RandomFeatures { spec } => {
            let m = tr.per_action.len();
            let mut models = Vec::with_capacity(m);
            for a in 0..m {
                let rows = &tr.per_action[a];
                let inputs = tr.obs.select_rows(rows.iter());
                let ys =
                    DMatrix::from_iterator(rows.len(), 1, rows.iter().map(|r| targets[*r]));
                let a_spec = spec.with_seed(seed::derive(spec.seed, stream_label, a as u64));
                models.push(regress::fit(&a_spec, &inputs, &ys)?);
            }
            Ok(QFunction::Fitted { models })
        }
        FunctionClass::Tabular { num_states } => {
            let m = tr.per_action.len();
            let mut sums = vec![vec![0.0; m]; *num_states];
            let mut counts = vec![vec![0usize; m]; *num_states];
            for (row, a) in tr.actions.iter().enumerate() {
                let o: Vec<f64> = tr.obs.row(row).iter().copied().collect();
                let s = state_index(&o);
                sums[s][*a] += targets[row];
                counts[s][*a] += 1;
            }
            let values = sums
                .iter()
                .zip(&counts)
                .map(|(srow, crow)| {
                    srow.iter()
                        .zip(crow)
                        .map(|(s, c)| if *c > 0 { s / *c as f64 } else { 0.0 })
                        .collect()
                })
                .collect();
            Ok(QFunction::Tabular { values })
        }
    }
}

/// Fitted Q-iteration: Bellman-optimality targets
/// `r + γ·max_a' Q(o', a')`, iterated for the configured budget. Returns the
/// final Q and its greedy policy (ties broken toward the lowest index).
pub fn fqi(ds: &TrajectoryDataset, cfg: &RlConfig) -> Result<(QFunction, Policy), RlError> {
    cfg.validate()?;
    let tr = collect_transitions(ds)?;
    let m = ds.num_actions();
    let n = tr.rewards.len();
    let mut q: Option<QFunction> = None;
    for _ in 0..cfg.iterations {
        let mut targets = tr.rewards.clone();
        if let Some(prev) = &q {
            let per_action_next: Vec<Vec<f64>> =
                (0..m).map(|a| prev.evaluate_batch(&tr.next_obs, a)).collect();
            for (row, tgt) in targets.iter_mut().enumerate().take(n) {
                let mut best = f64::NEG_INFINITY;
                for pa in &per_action_next {
                    best = best.max(pa[row]);
                }
                *tgt += cfg.gamma * best;
            }
        }
        q = Some(fit_q(&tr, &targets, &cfg.function_class, "fqi-action")?);
    }
    let q = q.expect("at least one iteration");
    let policy = Policy::GreedyFromQ { q: q.clone() };
    Ok((q, policy))
}

/// Fitted Q-evaluation of a fixed policy: expectation targets
/// `r + γ·Σ_a' π(a'|o')·Q(o', a')`. Returns the final Q and the value
/// estimate `J = mean over episodes of Σ_a π(a|o₀)·Q(o₀, a)`.
pub fn fqe(
    ds: &TrajectoryDataset,
    policy: &Policy,
    cfg: &RlConfig,
) -> Result<(QFunction, f64), RlError> {
    cfg.validate()?;
    let tr = collect_transitions(ds)?;
    let m = ds.num_actions();
    let n = tr.rewards.len();
    // Policy probabilities at next observations are fixed across iterations.
    let next_probs: Vec<Vec<f64>> = (0..n)
        .map(|row| {
            let o: Vec<f64> = tr.next_obs.row(row).iter().copied().collect();
            policy.action_probs(&o, m)
        })
        .collect();
    let mut q: Option<QFunction> = None;
    for _ in 0..cfg.iterations {
        let mut targets = tr.rewards.clone();
        if let Some(prev) = &q {
            let per_action_next: Vec<Vec<f64>> =
                (0..m).map(|a| prev.evaluate_batch(&tr.next_obs, a)).collect();
            for (row, tgt) in targets.iter_mut().enumerate().take(n) {
                let mut v = 0.0;
                for (a, pa) in per_action_next.iter().enumerate() {
                    v += next_probs[row][a] * pa[row];
                }
                *tgt += cfg.gamma * v;
            }
        }
        q = Some(fit_q(&tr, &targets, &cfg.function_class, "fqe-action")?);
    }
    let q = q.expect("at least one iteration");
    let per_action_init: Vec<Vec<f64>> =
        (0..m).map(|a| q.evaluate_batch(&tr.initial_obs, a)).collect();
    let n_ep = ds.episodes.len();
    let mut j = 0.0;
    for e in 0..n_ep {
        let o: Vec<f64> = tr.initial_obs.row(e).iter().copied().collect();
        let probs = policy.action_probs(&o, m);
        for (a, pa) in per_action_init.iter().enumerate() {
            j += probs[a] * pa[e];
        }
    }
    Ok((q, j / n_ep as f64))
}

/// Exact policy values on a tabular MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpValues {
    pub state_values: Vec<f64>,
    /// Expected return under the MDP's initial distribution.
    pub j: f64,
}

/// Solve `V = R_π + γ P_π V` by fixed-point iteration to sup-norm `tol`.
pub fn dp_policy_value(
    mdp: &TabularMdp,
    policy_rows: &[Vec<f64>],
    gamma: f64,
    tol: f64,
) -> DpValues {
    assert!(gamma > 0.0 && gamma < 1.0);
    assert_eq!(policy_rows.len(), mdp.num_states);
    let mut v = vec![0.0; mdp.num_states];
    loop {
        let mut next = vec![0.0; mdp.num_states];
        for s in 0..mdp.num_states {
            for a in 0..mdp.num_actions {
                let pi = policy_rows[s][a];
                if pi == 0.0 {
                    continue;
                }
                let mut future = 0.0;
                for (sp, p) in mdp.transition[s][a].iter().enumerate() {
                    future += p * v[sp];
                }
                next[s] += pi * (mdp.reward[s][a] + gamma * future);
            }
        }
        let delta = v
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        v = next;
        if delta < tol {
            break;
        }
    }
    let j = mdp.initial.iter().zip(&v).map(|(p, val)| p * val).sum();
    DpValues { state_values: v, j }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Episode;
    use crate::envs::{
        simulate, tabular_tiger_mdp, TigerConfig, TigerEnv, TIGER_OPEN_LEFT,
        TIGER_OPEN_RIGHT, TIGER_SENTINEL,
    };
    use crate::regress::Bandwidth;
    use std::collections::BTreeMap;

    fn rf_config(gamma: f64, iterations: usize, d: usize) -> RlConfig {
        RlConfig {
            gamma,
            iterations,
            function_class: FunctionClass::RandomFeatures {
                spec: RegressorSpec {
                    num_features: d,
                    bandwidth: Bandwidth::MedianHeuristic,
                    ridge: 1e-4,
                    seed: 5,
                },
            },
        }
    }

    /// Single-state MDP: one observation value, constant reward per action.
    fn single_state_dataset(rewards_by_action: &[f64], n: usize, t: usize) -> TrajectoryDataset {
        let m = rewards_by_action.len();
        let episodes = (0..n)
            .map(|i| {
                let actions: Vec<usize> = (0..t).map(|s| (i + s) % m).collect();
                Episode {
                    id: i.to_string(),
                    observations: vec![vec![0.0]; t + 1],
                    rewards: actions.iter().map(|a| rewards_by_action[*a]).collect(),
                    actions,
                }
            })
            .collect();
        TrajectoryDataset::new(episodes, (0..m as i64).collect(), 1, BTreeMap::new()).unwrap()
    }

    #[test]
    fn fqi_with_tiny_gamma_regresses_reward() {
        let ds = single_state_dataset(&[1.0, 3.0], 4, 10);
        let (q, _) = fqi(&ds, &rf_config(1e-9, 5, 10)).unwrap();
        assert!((q.evaluate(&[0.0], 0) - 1.0).abs() < 1e-3);
        assert!((q.evaluate(&[0.0], 1) - 3.0).abs() < 1e-3);
    }

    #[test]
    fn fqi_geometric_series_limit() {
        // Constant reward 1, single action: Q -> 1/(1-γ) = 10.
        let ds = single_state_dataset(&[1.0], 2, 20);
        let (q, _) = fqi(&ds, &rf_config(0.9, 100, 10)).unwrap();
        assert!(
            (q.evaluate(&[0.0], 0) - 10.0).abs() < 1e-3,
            "Q = {}",
            q.evaluate(&[0.0], 0)
        );
    }

    #[test]
    fn fqi_errors_on_missing_action() {
        let mut ds = single_state_dataset(&[1.0, 2.0], 2, 6);
        for ep in ds.episodes.iter_mut() {
            for a in ep.actions.iter_mut() {
                *a = 0;
            }
        }
        let err = fqi(&ds, &rf_config(0.9, 3, 10)).unwrap_err();
        assert!(matches!(err, RlError::ActionNotCovered { action: 1, .. }));
    }

    #[test]
    fn fqi_learns_revealed_tiger() {
        let env = TigerEnv::new(TigerConfig {
            reveal_state: true,
            ..TigerConfig::default()
        })
        .unwrap();
        let ds = simulate(&env, &Policy::UniformRandom, 200, 50, 21);
        let (q, policy) = fqi(&ds, &rf_config(0.9, 40, 80)).unwrap();
        // Value-iteration oracle on the exact 2-state MDP.
        let mdp = tabular_tiger_mdp(&env.cfg).unwrap();
        let mut v = vec![0.0; 2];
        for _ in 0..2000 {
            v = (0..2)
                .map(|s| {
                    (0..3)
                        .map(|a| {
                            mdp.reward[s][a]
                                + 0.9
                                    * mdp.transition[s][a]
                                        .iter()
                                        .zip(&v)
                                        .map(|(p, vv)| p * vv)
                                        .sum::<f64>()
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
        }
        for s in 0..2 {
            let obs = vec![TIGER_SENTINEL, s as f64];
            let oracle_best = (0..3)
                .map(|a| {
                    mdp.reward[s][a]
                        + 0.9
                            * mdp.transition[s][a]
                                .iter()
                                .zip(&v)
                                .map(|(p, vv)| p * vv)
                                .sum::<f64>()
                })
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap()
                .0;
            let expected = if s == 0 { TIGER_OPEN_RIGHT } else { TIGER_OPEN_LEFT };
            assert_eq!(oracle_best, expected, "oracle should open the empty door");
            let probs = policy.action_probs(&obs, 3);
            assert_eq!(
                probs[expected], 1.0,
                "greedy policy at state {s}: {probs:?}, Q = {:?}",
                (0..3).map(|a| q.evaluate(&obs, a)).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn fqe_uniform_single_state_value() {
        // Uniform over two actions with rewards {0, 2}: average reward 1,
        // so J = 1/(1-γ).
        let ds = single_state_dataset(&[0.0, 2.0], 4, 20);
        let (_, j) = fqe(&ds, &Policy::UniformRandom, &rf_config(0.9, 200, 10)).unwrap();
        assert!((j - 10.0).abs() < 1e-3, "J = {j}");
    }

    #[test]
    fn fqe_tiny_gamma_is_mean_first_step_reward() {
        let ds = single_state_dataset(&[0.0, 2.0], 4, 20);
        let (_, j) = fqe(&ds, &Policy::UniformRandom, &rf_config(1e-9, 5, 10)).unwrap();
        assert!((j - 1.0).abs() < 1e-3, "J = {j}");
    }

    #[test]
    fn dp_zero_rewards_zero_value() {
        let mut mdp = tabular_tiger_mdp(&TigerConfig {
            reveal_state: true,
            ..TigerConfig::default()
        })
        .unwrap();
        mdp.reward = vec![vec![0.0; 3]; 2];
        let rows = vec![vec![1.0 / 3.0; 3]; 2];
        let dp = dp_policy_value(&mdp, &rows, 0.9, 1e-10);
        assert!(dp.state_values.iter().all(|v| v.abs() < 1e-9));
        assert!(dp.j.abs() < 1e-9);
    }

    #[test]
    fn dp_single_state_geometric() {
        let mdp = TabularMdp {
            num_states: 1,
            num_actions: 1,
            transition: vec![vec![vec![1.0]]],
            reward: vec![vec![1.0]],
            initial: vec![1.0],
        };
        let dp = dp_policy_value(&mdp, &[vec![1.0]], 0.9, 1e-12);
        assert!((dp.j - 10.0).abs() < 1e-9);
    }

    #[test]
    fn dp_matches_monte_carlo_rollout() {
        let cfg = TigerConfig {
            reveal_state: true,
            ..TigerConfig::default()
        };
        let mdp = tabular_tiger_mdp(&cfg).unwrap();
        let rows = vec![vec![1.0 / 3.0; 3]; 2];
        let dp = dp_policy_value(&mdp, &rows, 0.9, 1e-10);
        // Long-horizon discounted rollouts under the uniform policy.
        let env = TigerEnv::new(cfg).unwrap();
        let ds = simulate(&env, &Policy::UniformRandom, 3000, 120, 33);
        let returns: Vec<f64> = ds
            .episodes
            .iter()
            .map(|ep| {
                ep.rewards
                    .iter()
                    .enumerate()
                    .map(|(t, r)| 0.9f64.powi(t as i32) * r)
                    .sum()
            })
            .collect();
        let mean: f64 = returns.iter().sum::<f64>() / returns.len() as f64;
        let sd: f64 = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
            / (returns.len() - 1) as f64)
            .sqrt();
        let se = sd / (returns.len() as f64).sqrt();
        assert!(
            (mean - dp.j).abs() < 3.0 * se + 1e-6,
            "MC {mean} vs DP {} (se {se})",
            dp.j
        );
    }

    #[test]
    fn tabular_fqe_equals_dp_on_empirical_mdp() {
        let cfg = TigerConfig {
            reveal_state: true,
            ..TigerConfig::default()
        };
        let env = TigerEnv::new(cfg).unwrap();
        let ds = simulate(&env, &Policy::EpsilonListen { listen_prob: 0.6 }, 60, 30, 9);
        // Empirical MDP from the same transitions, states read off the
        // revealed coordinate.
        let mut counts = vec![vec![vec![0.0f64; 2]; 3]; 2];
        let mut rsum = vec![vec![0.0f64; 3]; 2];
        let mut rcount = vec![vec![0.0f64; 3]; 2];
        let mut init = vec![0.0f64; 2];
        for ep in &ds.episodes {
            init[state_index(&ep.observations[0])] += 1.0;
            for t in 0..ep.transitions() {
                let s = state_index(&ep.observations[t]);
                let sp = state_index(&ep.observations[t + 1]);
                let a = ep.actions[t];
                counts[s][a][sp] += 1.0;
                rsum[s][a] += ep.rewards[t];
                rcount[s][a] += 1.0;
            }
        }
        for s in 0..2 {
            for a in 0..3 {
                assert!(rcount[s][a] > 0.0, "test needs full (s,a) coverage");
            }
        }
        let transition = counts
            .iter()
            .enumerate()
            .map(|(s, by_a)| {
                by_a.iter()
                    .enumerate()
                    .map(|(a, row)| row.iter().map(|c| c / rcount[s][a]).collect())
                    .collect()
            })
            .collect();
        let reward = rsum
            .iter()
            .zip(&rcount)
            .map(|(rs, rc)| rs.iter().zip(rc).map(|(r, c)| r / c).collect())
            .collect();
        let total_init: f64 = init.iter().sum();
        let mdp = TabularMdp {
            num_states: 2,
            num_actions: 3,
            transition,
            reward,
            initial: init.iter().map(|c| c / total_init).collect(),
        };
        let policy = Policy::EpsilonListen { listen_prob: 0.6 };
        let rows: Vec<Vec<f64>> = (0..2)
            .map(|s| policy.action_probs(&[TIGER_SENTINEL, s as f64], 3))
            .collect();
        let dp = dp_policy_value(&mdp, &rows, 0.9, 1e-12);

        let cfg = RlConfig {
            gamma: 0.9,
            iterations: 300,
            function_class: FunctionClass::Tabular { num_states: 2 },
        };
        let (_, j) = fqe(&ds, &policy, &cfg).unwrap();
        assert!(
            (j - dp.j).abs() < 1e-6,
            "tabular FQE {j} vs empirical DP {}",
            dp.j
        );
    }
}
