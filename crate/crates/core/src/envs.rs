//! Ground-truth simulators and behavior policies.
//!
//! Two environments: the tiger problem (a POMDP; optionally fully observed
//! through `reveal_state`) and a configurable linear MDP of arbitrary order.
//! Environments are pure step functions over explicit state plus an RNG
//! stream; episodes are independently seeded so simulation is reproducible
//! and parallelizable.

use crate::data::{Episode, TrajectoryDataset};
use crate::rl::QFunction;
use crate::seed;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("listen_error must lie in [0, 0.5], got {0}")]
    BadListenError(f64),
    #[error("tabular tiger requires reveal_state")]
    HiddenTabular,
    #[error("unstable lag coefficients: {0} (joint norm bound must be < 1)")]
    Unstable(f64),
    #[error("bad linear config: {0}")]
    BadLinearConfig(String),
    #[error("policy probabilities must sum to 1, got {0}")]
    BadPolicy(f64),
}

// ── Tiger ─────────────────────────────────────────────────────────────

/// Door the tiger is behind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TigerSide {
    Left,
    Right,
}

/// Tiger actions in index order: 0 = open-left, 1 = open-right, 2 = listen.
pub const TIGER_OPEN_LEFT: usize = 0;
pub const TIGER_OPEN_RIGHT: usize = 1;
pub const TIGER_LISTEN: usize = 2;

/// Observation sentinel emitted after a door opening (nothing was heard).
pub const TIGER_SENTINEL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TigerConfig {
    /// Probability a listen reports the wrong door.
    pub listen_error: f64,
    pub reward_tiger: f64,
    pub reward_empty: f64,
    pub reward_listen: f64,
    pub horizon: usize,
    /// Append the true tiger location to each observation, which makes the
    /// process fully observed (an MDP).
    pub reveal_state: bool,
    pub seed: u64,
}

impl Default for TigerConfig {
    fn default() -> Self {
        Self {
            listen_error: 0.15,
            reward_tiger: -100.0,
            reward_empty: 10.0,
            reward_listen: -1.0,
            horizon: 50,
            reveal_state: false,
            seed: 0,
        }
    }
}

impl TigerConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(0.0..=0.5).contains(&self.listen_error) {
            return Err(EnvError::BadListenError(self.listen_error));
        }
        Ok(())
    }
}

fn side_code(side: TigerSide) -> f64 {
    match side {
        TigerSide::Left => 0.0,
        TigerSide::Right => 1.0,
    }
}

/// One tiger transition. Listening leaves the tiger in place and reports its
/// side with probability `1 - listen_error`; opening a door pays off, the
/// tiger is re-randomized uniformly, and the emitted observation is the
/// uninformative sentinel. With `reveal_state` the (post-transition) hidden
/// state is appended to the observation.
pub fn tiger_step(
    cfg: &TigerConfig,
    hidden: TigerSide,
    action: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, f64, TigerSide) {
    let (heard, reward, next) = match action {
        TIGER_LISTEN => {
            let flip = rng.gen_range(0.0..1.0) < cfg.listen_error;
            let report = if flip {
                match hidden {
                    TigerSide::Left => TigerSide::Right,
                    TigerSide::Right => TigerSide::Left,
                }
            } else {
                hidden
            };
            (side_code(report), cfg.reward_listen, hidden)
        }
        TIGER_OPEN_LEFT | TIGER_OPEN_RIGHT => {
            let tiger_door = matches!(
                (action, hidden),
                (TIGER_OPEN_LEFT, TigerSide::Left) | (TIGER_OPEN_RIGHT, TigerSide::Right)
            );
            let reward = if tiger_door { cfg.reward_tiger } else { cfg.reward_empty };
            let next = if rng.gen_range(0.0..1.0) < 0.5 {
                TigerSide::Left
            } else {
                TigerSide::Right
            };
            (TIGER_SENTINEL, reward, next)
        }
        other => panic!("invalid tiger action index {other}"),
    };
    let mut obs = vec![heard];
    if cfg.reveal_state {
        obs.push(side_code(next));
    }
    (obs, reward, next)
}

/// Tiger environment wrapper around [`tiger_step`].
#[derive(Debug, Clone)]
pub struct TigerEnv {
    pub cfg: TigerConfig,
}

impl TigerEnv {
    pub fn new(cfg: TigerConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        Ok(Self { cfg })
    }
}

// ── Linear high-order MDP ─────────────────────────────────────────────

/// Linear order-k generator:
///
/// `O_{t+1} = Σ_{i=0}^{k-1} C_i O_{t-i} + d_{A_t}
///            + interaction_scale · s(A_t) · O_{t-k+1}[0] · e_1 + σ ε`
///
/// with `s(a) = +1` for even action indices and `-1` for odd ones, and the
/// reward equal to the first coordinate of `O_{t+1}`. The interaction term
/// makes the reward-maximizing action depend on the oldest lag, so policies
/// fitted under the correct order are strictly better than underfitted ones.
/// The process is exactly order-k Markov in (O, A) by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearHmdpConfig {
    pub order: usize,
    pub obs_dim: usize,
    pub action_count: usize,
    /// One obs_dim×obs_dim matrix per lag (row-major), newest lag first.
    pub lag_coeffs: Vec<Vec<Vec<f64>>>,
    /// One additive effect vector per action, applied at the current step.
    pub action_effects: Vec<Vec<f64>>,
    pub interaction_scale: f64,
    pub noise_scale: f64,
    /// Warm-up steps (uniform-random actions) discarded before recording,
    /// so recorded trajectories start near the stationary regime.
    pub burn_in: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for LinearHmdpConfig {
    fn default() -> Self {
        LinearHmdpConfig::standard(1, 2, 2, 0.4, 0.25, 0)
    }
}

impl LinearHmdpConfig {
    /// A ready-made order-k configuration: moderate self-dependence on the
    /// newest lag, a strong block on the oldest lag (so order detection has
    /// signal), alternating ±0.3 action effects on the first coordinate, and
    /// an interaction on the oldest lag when `k > 1`.
    pub fn standard(
        order: usize,
        obs_dim: usize,
        action_count: usize,
        oldest_weight: f64,
        noise_scale: f64,
        seed: u64,
    ) -> Self {
        assert!(order >= 1 && obs_dim >= 1 && action_count >= 1);
        let band = |w: f64| -> Vec<Vec<f64>> {
            (0..obs_dim)
                .map(|i| {
                    (0..obs_dim)
                        .map(|j| {
                            if i == j {
                                w
                            } else if j + 1 == i {
                                0.3 * w
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect()
        };
        let mut lag_coeffs = Vec::with_capacity(order);
        for lag in 0..order {
            let w = if lag == 0 && order == 1 {
                oldest_weight
            } else if lag == 0 {
                0.2
            } else if lag == order - 1 {
                oldest_weight
            } else {
                0.05
            };
            lag_coeffs.push(band(w));
        }
        let action_effects = (0..action_count)
            .map(|a| {
                let mut v = vec![0.0; obs_dim];
                v[0] = if a % 2 == 0 { 0.3 } else { -0.3 };
                v
            })
            .collect();
        LinearHmdpConfig {
            order,
            obs_dim,
            action_count,
            lag_coeffs,
            action_effects,
            interaction_scale: if order > 1 { 0.2 } else { 0.0 },
            noise_scale,
            burn_in: 20,
            horizon: 100,
            seed,
        }
    }

    /// Joint stability bound: sum of lag spectral norms plus the interaction
    /// magnitude must stay below 1.
    pub fn stability_norm(&self) -> f64 {
        let mut total = 0.0;
        for c in &self.lag_coeffs {
            let m = nalgebra::DMatrix::from_fn(self.obs_dim, self.obs_dim, |i, j| c[i][j]);
            let svd = m.svd(false, false);
            total += svd.singular_values.max();
        }
        total + self.interaction_scale.abs()
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.lag_coeffs.len() != self.order {
            return Err(EnvError::BadLinearConfig(format!(
                "need {} lag matrices, got {}",
                self.order,
                self.lag_coeffs.len()
            )));
        }
        for (i, c) in self.lag_coeffs.iter().enumerate() {
            if c.len() != self.obs_dim || c.iter().any(|row| row.len() != self.obs_dim) {
                return Err(EnvError::BadLinearConfig(format!(
                    "lag matrix {} is not {}x{}",
                    i, self.obs_dim, self.obs_dim
                )));
            }
        }
        if self.action_effects.len() != self.action_count
            || self.action_effects.iter().any(|v| v.len() != self.obs_dim)
        {
            return Err(EnvError::BadLinearConfig(
                "action_effects must hold one obs_dim vector per action".into(),
            ));
        }
        if self.noise_scale < 0.0 {
            return Err(EnvError::BadLinearConfig("noise_scale must be >= 0".into()));
        }
        let norm = self.stability_norm();
        if norm >= 1.0 {
            return Err(EnvError::Unstable(norm));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LinearHmdpEnv {
    pub cfg: LinearHmdpConfig,
}

impl LinearHmdpEnv {
    pub fn new(cfg: LinearHmdpConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    fn next_obs(&self, lags: &[Vec<f64>], action: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let cfg = &self.cfg;
        let mut next = vec![0.0; cfg.obs_dim];
        for (lag, c) in cfg.lag_coeffs.iter().enumerate() {
            let o = &lags[lag]; // lags[0] = newest
            for i in 0..cfg.obs_dim {
                for j in 0..cfg.obs_dim {
                    next[i] += c[i][j] * o[j];
                }
            }
        }
        for (i, v) in cfg.action_effects[action].iter().enumerate() {
            next[i] += v;
        }
        if cfg.interaction_scale != 0.0 {
            let sign = if action % 2 == 0 { 1.0 } else { -1.0 };
            next[0] += cfg.interaction_scale * sign * lags[cfg.order - 1][0];
        }
        if cfg.noise_scale > 0.0 {
            for v in next.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *v += cfg.noise_scale * e;
            }
        }
        next
    }
}

// ── Policies ──────────────────────────────────────────────────────────

/// Action-selection rule mapping an observation to a probability vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Policy {
    /// Uniform over all actions.
    UniformRandom,
    /// Tiger-specific: listen with `listen_prob`, otherwise open one of the
    /// two doors uniformly. Requires the 3-action tiger layout.
    EpsilonListen { listen_prob: f64 },
    /// Deterministic argmax of a Q-function, lowest index winning ties.
    GreedyFromQ { q: QFunction },
    /// Per-state probability rows; the state is read from the observation's
    /// last coordinate (rounded), matching the tabular conventions used by
    /// the fully-observed tiger.
    Tabular { probs: Vec<Vec<f64>> },
}

impl Policy {
    /// π(·|o) as a length-`num_actions` probability vector.
    pub fn action_probs(&self, obs: &[f64], num_actions: usize) -> Vec<f64> {
        match self {
            Policy::UniformRandom => vec![1.0 / num_actions as f64; num_actions],
            Policy::EpsilonListen { listen_prob } => {
                assert_eq!(num_actions, 3, "epsilon-listen assumes the tiger layout");
                let open = (1.0 - listen_prob) / 2.0;
                vec![open, open, *listen_prob]
            }
            Policy::GreedyFromQ { q } => {
                let mut best = 0usize;
                let mut best_v = f64::NEG_INFINITY;
                for a in 0..num_actions {
                    let v = q.evaluate(obs, a);
                    if v > best_v {
                        best_v = v;
                        best = a;
                    }
                }
                let mut p = vec![0.0; num_actions];
                p[best] = 1.0;
                p
            }
            Policy::Tabular { probs } => {
                let s = state_index(obs);
                probs[s].clone()
            }
        }
    }

    pub fn validate(&self, num_actions: usize) -> Result<(), EnvError> {
        if let Policy::Tabular { probs } = self {
            for row in probs {
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-9 || row.len() != num_actions {
                    return Err(EnvError::BadPolicy(sum));
                }
            }
        }
        if let Policy::EpsilonListen { listen_prob } = self {
            if !(0.0..=1.0).contains(listen_prob) {
                return Err(EnvError::BadPolicy(*listen_prob));
            }
        }
        Ok(())
    }

    pub fn sample(&self, obs: &[f64], num_actions: usize, rng: &mut ChaCha8Rng) -> usize {
        let probs = self.action_probs(obs, num_actions);
        let u = rng.gen_range(0.0..1.0);
        let mut acc = 0.0;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        num_actions - 1
    }
}

/// Tabular state convention: the observation's last coordinate, rounded.
pub fn state_index(obs: &[f64]) -> usize {
    obs.last().map(|v| v.round().max(0.0) as usize).unwrap_or(0)
}

// ── Environment trait and simulation ──────────────────────────────────

pub trait Environment {
    type State: Clone;

    fn obs_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Initial hidden state and initial observation.
    fn reset(&self, rng: &mut ChaCha8Rng) -> (Self::State, Vec<f64>);
    fn step(
        &self,
        state: &Self::State,
        action: usize,
        rng: &mut ChaCha8Rng,
    ) -> (Vec<f64>, f64, Self::State);
    fn meta(&self) -> BTreeMap<String, String>;
}

impl Environment for TigerEnv {
    type State = TigerSide;

    fn obs_dim(&self) -> usize {
        if self.cfg.reveal_state {
            2
        } else {
            1
        }
    }

    fn num_actions(&self) -> usize {
        3
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> (TigerSide, Vec<f64>) {
        let side = if rng.gen_range(0.0..1.0) < 0.5 {
            TigerSide::Left
        } else {
            TigerSide::Right
        };
        // Before the first action nothing has been heard.
        let mut obs = vec![TIGER_SENTINEL];
        if self.cfg.reveal_state {
            obs.push(side_code(side));
        }
        (side, obs)
    }

    fn step(
        &self,
        state: &TigerSide,
        action: usize,
        rng: &mut ChaCha8Rng,
    ) -> (Vec<f64>, f64, TigerSide) {
        tiger_step(&self.cfg, *state, action, rng)
    }

    fn meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("env".into(), "tiger".into());
        m.insert("listen_error".into(), self.cfg.listen_error.to_string());
        m.insert("reveal_state".into(), self.cfg.reveal_state.to_string());
        m
    }
}

impl Environment for LinearHmdpEnv {
    /// Newest-first ring of the last k observations.
    type State = Vec<Vec<f64>>;

    fn obs_dim(&self) -> usize {
        self.cfg.obs_dim
    }

    fn num_actions(&self) -> usize {
        self.cfg.action_count
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> (Self::State, Vec<f64>) {
        let mut lags = vec![vec![0.0; self.cfg.obs_dim]; self.cfg.order];
        // Burn-in with uniform-random actions to forget the zero start.
        for _ in 0..self.cfg.burn_in {
            let a = rng.gen_range(0..self.cfg.action_count);
            let next = self.next_obs(&lags, a, rng);
            lags.rotate_right(1);
            lags[0] = next;
        }
        (lags.clone(), lags[0].clone())
    }

    fn step(
        &self,
        state: &Self::State,
        action: usize,
        rng: &mut ChaCha8Rng,
    ) -> (Vec<f64>, f64, Self::State) {
        let next = self.next_obs(state, action, rng);
        let reward = next[0];
        let mut lags = state.clone();
        lags.rotate_right(1);
        lags[0] = next.clone();
        (next, reward, lags)
    }

    fn meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("env".into(), "linear-hmdp".into());
        m.insert("order".into(), self.cfg.order.to_string());
        m
    }
}

/// Roll out `n_episodes` independent episodes of length `horizon`. Episode
/// `i` draws from the stream `(seed, "episode", i)` regardless of execution
/// order, so datasets are reproducible under any parallel schedule.
pub fn simulate<E: Environment>(
    env: &E,
    policy: &Policy,
    n_episodes: usize,
    horizon: usize,
    seed_value: u64,
) -> TrajectoryDataset {
    assert!(n_episodes >= 1 && horizon >= 1);
    let m = env.num_actions();
    let episodes: Vec<Episode> = (0..n_episodes)
        .map(|i| {
            let mut rng = seed::stream(seed_value, "episode", i as u64);
            let (mut state, mut obs) = env.reset(&mut rng);
            let mut observations = Vec::with_capacity(horizon + 1);
            let mut actions = Vec::with_capacity(horizon);
            let mut rewards = Vec::with_capacity(horizon);
            observations.push(obs.clone());
            for _ in 0..horizon {
                let a = policy.sample(&obs, m, &mut rng);
                let (next_obs, r, next_state) = env.step(&state, a, &mut rng);
                actions.push(a);
                rewards.push(r);
                observations.push(next_obs.clone());
                obs = next_obs;
                state = next_state;
            }
            Episode {
                id: i.to_string(),
                observations,
                actions,
                rewards,
            }
        })
        .collect();
    let mut meta = env.meta();
    meta.insert("episodes".into(), n_episodes.to_string());
    meta.insert("horizon".into(), horizon.to_string());
    meta.insert("seed".into(), seed_value.to_string());
    TrajectoryDataset::new(episodes, (0..m as i64).collect(), env.obs_dim(), meta)
        .expect("simulated episodes are well-formed")
}

/// Convenience wrapper mirroring the CLI's env configuration.
pub fn linear_hmdp_simulate(
    cfg: &LinearHmdpConfig,
    policy: &Policy,
    n_episodes: usize,
    horizon: usize,
    seed_value: u64,
) -> Result<TrajectoryDataset, EnvError> {
    let env = LinearHmdpEnv::new(cfg.clone())?;
    Ok(simulate(&env, policy, n_episodes, horizon, seed_value))
}

// ── Tabular tiger oracle backbone ─────────────────────────────────────

/// Exact finite MDP: transition rows, rewards, and an initial distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// transition[s][a][s'] = P(s' | s, a)
    pub transition: Vec<Vec<Vec<f64>>>,
    /// reward[s][a]
    pub reward: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
}

/// The fully-observed tiger reduces to a 2-state MDP: listening keeps the
/// state, opening any door re-randomizes it uniformly.
pub fn tabular_tiger_mdp(cfg: &TigerConfig) -> Result<TabularMdp, EnvError> {
    if !cfg.reveal_state {
        return Err(EnvError::HiddenTabular);
    }
    cfg.validate()?;
    let uniform = vec![0.5, 0.5];
    let mut transition = vec![vec![vec![0.0; 2]; 3]; 2];
    let mut reward = vec![vec![0.0; 3]; 2];
    for s in 0..2 {
        // open-left / open-right
        transition[s][TIGER_OPEN_LEFT] = uniform.clone();
        transition[s][TIGER_OPEN_RIGHT] = uniform.clone();
        reward[s][TIGER_OPEN_LEFT] = if s == 0 { cfg.reward_tiger } else { cfg.reward_empty };
        reward[s][TIGER_OPEN_RIGHT] = if s == 1 { cfg.reward_tiger } else { cfg.reward_empty };
        // listen
        transition[s][TIGER_LISTEN][s] = 1.0;
        reward[s][TIGER_LISTEN] = cfg.reward_listen;
    }
    Ok(TabularMdp {
        num_states: 2,
        num_actions: 3,
        transition,
        reward,
        initial: uniform,
    })
}
