//! Trajectory data model: episodes of observation-action-reward triplets,
//! pooled standardization, lag augmentation, and gap-q transition views.
//!
//! Conventions fixed here and relied on everywhere else:
//!
//! - An episode with `T` transitions holds `T + 1` observations, `T` actions
//!   and `T` rewards; `observations[t]` is what the agent saw before taking
//!   `actions[t]`, and `rewards[t]` is what it received after.
//! - Action labels are integers; internally actions are stored as indices
//!   into the dataset's ordered `action_set`.
//! - Time indices never straddle episode boundaries.

mod io;

pub use io::{load_csv, load_dataset, load_json, save_csv, save_dataset, save_json, Format};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset has no episodes")]
    Empty,
    #[error("episode {episode}: {details}")]
    BadEpisode { episode: String, details: String },
    #[error("episode {episode} has {transitions} transitions, needs at least {required} for order {order}")]
    TooShort {
        episode: String,
        transitions: usize,
        required: usize,
        order: usize,
    },
    #[error("parse error at {location}: {details}")]
    Parse { location: String, details: String },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One trajectory: `T+1` observations, `T` actions (as indices into the
/// dataset's action set), `T` rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl Episode {
    /// Number of transitions `T`.
    pub fn transitions(&self) -> usize {
        self.actions.len()
    }
}

/// A set of episodes with a shared observation dimension and ordered action set.
///
/// Immutable after construction; `new` checks every invariant once so the
/// rest of the crate can index freely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    pub episodes: Vec<Episode>,
    /// Ordered action labels; episode actions index into this.
    pub action_set: Vec<i64>,
    pub obs_dim: usize,
    pub meta: BTreeMap<String, String>,
}

impl TrajectoryDataset {
    pub fn new(
        episodes: Vec<Episode>,
        action_set: Vec<i64>,
        obs_dim: usize,
        meta: BTreeMap<String, String>,
    ) -> Result<Self, DataError> {
        if episodes.is_empty() {
            return Err(DataError::Empty);
        }
        for ep in &episodes {
            if ep.observations.len() != ep.actions.len() + 1
                || ep.rewards.len() != ep.actions.len()
            {
                return Err(DataError::BadEpisode {
                    episode: ep.id.clone(),
                    details: format!(
                        "lengths must satisfy |obs| = |actions|+1 = |rewards|+1, got {}/{}/{}",
                        ep.observations.len(),
                        ep.actions.len(),
                        ep.rewards.len()
                    ),
                });
            }
            if ep.actions.is_empty() {
                return Err(DataError::BadEpisode {
                    episode: ep.id.clone(),
                    details: "episode has no transitions".into(),
                });
            }
            if let Some(o) = ep.observations.iter().find(|o| o.len() != obs_dim) {
                return Err(DataError::BadEpisode {
                    episode: ep.id.clone(),
                    details: format!("observation dimension {} != obs_dim {}", o.len(), obs_dim),
                });
            }
            if let Some(a) = ep.actions.iter().find(|a| **a >= action_set.len()) {
                return Err(DataError::BadEpisode {
                    episode: ep.id.clone(),
                    details: format!("action index {} outside action set of size {}", a, action_set.len()),
                });
            }
        }
        Ok(Self {
            episodes,
            action_set,
            obs_dim,
            meta,
        })
    }

    /// Total transition count `N = Σ T_i`.
    pub fn total_transitions(&self) -> usize {
        self.episodes.iter().map(Episode::transitions).sum()
    }

    pub fn num_actions(&self) -> usize {
        self.action_set.len()
    }

    /// Longest episode length (in transitions).
    pub fn max_transitions(&self) -> usize {
        self.episodes.iter().map(Episode::transitions).max().unwrap_or(0)
    }
}

/// Per-dimension location/scale for observations. Population (divide by n)
/// convention; zero-variance dimensions keep scale 1 so the transform is
/// always invertible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Standardize every observation dimension to pooled mean 0, variance 1
/// (population divisor) over all time points of all episodes.
pub fn standardize(ds: &TrajectoryDataset) -> (TrajectoryDataset, ScalingParams) {
    let d = ds.obs_dim;
    let mut mean = vec![0.0; d];
    let mut count = 0usize;
    for ep in &ds.episodes {
        for o in &ep.observations {
            for (m, v) in mean.iter_mut().zip(o) {
                *m += v;
            }
            count += 1;
        }
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut var = vec![0.0; d];
    for ep in &ds.episodes {
        for o in &ep.observations {
            for ((v, x), m) in var.iter_mut().zip(o).zip(&mean) {
                let c = x - m;
                *v += c * c;
            }
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|v| {
            let s = (v / count as f64).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();

    let episodes = ds
        .episodes
        .iter()
        .map(|ep| Episode {
            id: ep.id.clone(),
            observations: ep
                .observations
                .iter()
                .map(|o| {
                    o.iter()
                        .zip(&mean)
                        .zip(&scale)
                        .map(|((x, m), s)| (x - m) / s)
                        .collect()
                })
                .collect(),
            actions: ep.actions.clone(),
            rewards: ep.rewards.clone(),
        })
        .collect();

    (
        TrajectoryDataset {
            episodes,
            action_set: ds.action_set.clone(),
            obs_dim: d,
            meta: ds.meta.clone(),
        },
        ScalingParams { mean, scale },
    )
}

/// Invert [`standardize`].
pub fn unstandardize(ds: &TrajectoryDataset, params: &ScalingParams) -> TrajectoryDataset {
    let episodes = ds
        .episodes
        .iter()
        .map(|ep| Episode {
            id: ep.id.clone(),
            observations: ep
                .observations
                .iter()
                .map(|o| {
                    o.iter()
                        .zip(&params.mean)
                        .zip(&params.scale)
                        .map(|((z, m), s)| z * s + m)
                        .collect()
                })
                .collect(),
            actions: ep.actions.clone(),
            rewards: ep.rewards.clone(),
        })
        .collect();
    TrajectoryDataset {
        episodes,
        action_set: ds.action_set.clone(),
        obs_dim: ds.obs_dim,
        meta: ds.meta.clone(),
    }
}

/// One-hot encoding of an action index.
pub fn one_hot(action: usize, num_actions: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_actions];
    v[action] = 1.0;
    v
}

/// Convert a k-th order process into a first-order one by merging each
/// observation with its `k-1` lagged action/observation (and optionally
/// reward) blocks.
///
/// The new observation at old time `t` (for `t ≥ k-1`) is
/// `(O_t, onehot(A_{t-1}), O_{t-1} [, R_{t-1}], …, onehot(A_{t-k+1}), O_{t-k+1} [, R_{t-k+1}])`.
/// Actions and rewards are realigned to start at old time `k-1`, so an
/// episode with `T` transitions yields `T - k + 1` transitions. `k = 1`
/// is the identity for either flag value: there are no lagged blocks to
/// carry rewards.
pub fn augment_order(
    ds: &TrajectoryDataset,
    k: usize,
    include_reward: bool,
) -> Result<TrajectoryDataset, DataError> {
    assert!(k >= 1, "order must be positive");
    if k == 1 {
        return Ok(ds.clone());
    }
    let m = ds.num_actions();
    for ep in &ds.episodes {
        if ep.transitions() < k {
            return Err(DataError::TooShort {
                episode: ep.id.clone(),
                transitions: ep.transitions(),
                required: k,
                order: k,
            });
        }
    }
    let block = m + ds.obs_dim + usize::from(include_reward);
    let new_dim = ds.obs_dim + (k - 1) * block;
    let episodes = ds
        .episodes
        .iter()
        .map(|ep| {
            let t_old = ep.transitions();
            let mut observations = Vec::with_capacity(t_old + 2 - k);
            for t in (k - 1)..=t_old {
                let mut o = Vec::with_capacity(new_dim);
                o.extend_from_slice(&ep.observations[t]);
                for lag in 1..k {
                    let s = t - lag;
                    o.extend(one_hot(ep.actions[s], m));
                    o.extend_from_slice(&ep.observations[s]);
                    if include_reward {
                        o.push(ep.rewards[s]);
                    }
                }
                observations.push(o);
            }
            Episode {
                id: ep.id.clone(),
                observations,
                actions: ep.actions[k - 1..].to_vec(),
                rewards: ep.rewards[k - 1..].to_vec(),
            }
        })
        .collect();
    let mut meta = ds.meta.clone();
    meta.insert("augmented_order".into(), k.to_string());
    TrajectoryDataset::new(episodes, ds.action_set.clone(), new_dim, meta)
}

/// A gap-`q` tuple: the observation-action pair at `t`, the backward
/// conditioning pair at `t+1`, the forward conditioning pair at `t+q-1`,
/// and the future observation at `t+q`. For `q = 2` the backward and
/// forward conditioning pairs coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct GapTuple<'a> {
    pub episode: usize,
    pub t: usize,
    pub past_obs: &'a [f64],
    pub past_action: usize,
    pub back_obs: &'a [f64],
    pub back_action: usize,
    pub fwd_obs: &'a [f64],
    pub fwd_action: usize,
    pub future_obs: &'a [f64],
}

/// Enumerate all gap-`q` tuples. Endpoint convention: `t` ranges over
/// `0..=T-q`, so an episode with `T` transitions contributes
/// `max(0, T - q + 1)` tuples; shorter episodes contribute none.
pub fn transition_view(ds: &TrajectoryDataset, q: usize) -> Vec<GapTuple<'_>> {
    assert!(q >= 2, "gap must be at least 2");
    let mut out = Vec::new();
    for (e, ep) in ds.episodes.iter().enumerate() {
        let t_max = ep.transitions();
        if t_max < q {
            continue;
        }
        for t in 0..=(t_max - q) {
            out.push(GapTuple {
                episode: e,
                t,
                past_obs: &ep.observations[t],
                past_action: ep.actions[t],
                back_obs: &ep.observations[t + 1],
                back_action: ep.actions[t + 1],
                fwd_obs: &ep.observations[t + q - 1],
                fwd_action: ep.actions[t + q - 1],
                future_obs: &ep.observations[t + q],
            });
        }
    }
    out
}

/// Tuple count at gap `q` without materializing the view.
pub fn gap_tuple_count(ds: &TrajectoryDataset, q: usize) -> usize {
    ds.episodes
        .iter()
        .map(|ep| ep.transitions().saturating_sub(q - 1))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(obs: Vec<Vec<f64>>, actions: Vec<usize>, rewards: Vec<f64>) -> TrajectoryDataset {
        let d = obs[0].len();
        TrajectoryDataset::new(
            vec![Episode {
                id: "0".into(),
                observations: obs,
                actions,
                rewards,
            }],
            vec![0, 1],
            d,
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn length_invariant_enforced() {
        let err = TrajectoryDataset::new(
            vec![Episode {
                id: "0".into(),
                observations: vec![vec![0.0], vec![1.0]],
                actions: vec![0],
                rewards: vec![1.0, 2.0],
            }],
            vec![0],
            1,
            BTreeMap::new(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn total_transitions_sums_episodes() {
        let ds = TrajectoryDataset::new(
            vec![
                Episode {
                    id: "a".into(),
                    observations: vec![vec![0.0, 0.0, 0.0]; 4],
                    actions: vec![0; 3],
                    rewards: vec![0.0; 3],
                },
                Episode {
                    id: "b".into(),
                    observations: vec![vec![0.0, 0.0, 0.0]; 3],
                    actions: vec![1; 2],
                    rewards: vec![0.0; 2],
                },
            ],
            vec![0, 1],
            3,
            BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(ds.obs_dim, 3);
        assert_eq!(ds.total_transitions(), 5);
    }

    #[test]
    fn standardize_constant_dimension() {
        let ds = toy(
            vec![vec![3.0], vec![3.0], vec![3.0]],
            vec![0, 1],
            vec![0.0, 0.0],
        );
        let (std, params) = standardize(&ds);
        for ep in &std.episodes {
            for o in &ep.observations {
                assert_eq!(o[0], 0.0);
            }
        }
        assert_eq!(params.scale[0], 1.0);
    }

    #[test]
    fn standardize_uses_population_divisor() {
        let ds = toy(vec![vec![0.0], vec![2.0]], vec![0], vec![0.0]);
        let (std, params) = standardize(&ds);
        assert!((params.mean[0] - 1.0).abs() < 1e-15);
        assert!((params.scale[0] - 1.0).abs() < 1e-15);
        assert!((std.episodes[0].observations[0][0] + 1.0).abs() < 1e-15);
        assert!((std.episodes[0].observations[1][0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn standardize_round_trip() {
        let ds = toy(
            vec![vec![1.0, -2.0], vec![4.0, 0.5], vec![-3.0, 7.0]],
            vec![0, 1],
            vec![0.3, -0.4],
        );
        let (std, params) = standardize(&ds);
        let back = unstandardize(&std, &params);
        for (a, b) in ds.episodes[0]
            .observations
            .iter()
            .zip(&back.episodes[0].observations)
        {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn augment_identity_at_order_one() {
        let ds = toy(
            vec![vec![1.0], vec![2.0], vec![3.0]],
            vec![0, 1],
            vec![0.1, 0.2],
        );
        assert_eq!(augment_order(&ds, 1, false).unwrap(), ds);
        assert_eq!(augment_order(&ds, 1, true).unwrap(), ds);
    }

    #[test]
    fn augment_order_two_unrolled() {
        // O = (o0, o1, o2), A = (a0, a1) = (0, 1), R = (r0, r1).
        let ds = toy(
            vec![vec![10.0], vec![11.0], vec![12.0]],
            vec![0, 1],
            vec![0.5, 0.7],
        );
        let aug = augment_order(&ds, 2, false).unwrap();
        let ep = &aug.episodes[0];
        assert_eq!(ep.transitions(), 1);
        assert_eq!(ep.observations[0], vec![11.0, 1.0, 0.0, 10.0]);
        assert_eq!(ep.observations[1], vec![12.0, 0.0, 1.0, 11.0]);
        assert_eq!(ep.actions, vec![1]);
        assert_eq!(ep.rewards, vec![0.7]);
        assert_eq!(aug.obs_dim, 4);

        let aug_r = augment_order(&ds, 2, true).unwrap();
        assert_eq!(aug_r.episodes[0].observations[0], vec![11.0, 1.0, 0.0, 10.0, 0.5]);
        assert_eq!(aug_r.episodes[0].observations[1], vec![12.0, 0.0, 1.0, 11.0, 0.7]);
    }

    #[test]
    fn augment_rejects_short_episode() {
        let ds = toy(
            vec![vec![1.0], vec![2.0], vec![3.0]],
            vec![0, 1],
            vec![0.0, 0.0],
        );
        let err = augment_order(&ds, 3, false).unwrap_err();
        assert!(matches!(err, DataError::TooShort { .. }));
    }

    #[test]
    fn augment_composes_with_identity() {
        let ds = toy(
            vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
            vec![0, 1, 0],
            vec![0.1, 0.2, 0.3],
        );
        let once = augment_order(&augment_order(&ds, 1, false).unwrap(), 3, true).unwrap();
        let direct = augment_order(&ds, 3, true).unwrap();
        assert_eq!(once, direct);
    }

    #[test]
    fn transition_view_enumerates_by_hand() {
        // T = 3, q = 2: tuples at t = 0 and t = 1.
        let ds = toy(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            vec![0, 1, 0],
            vec![0.0; 3],
        );
        let view = transition_view(&ds, 2);
        assert_eq!(view.len(), 2);
        assert_eq!(view[0].t, 0);
        assert_eq!(view[1].t, 1);
        // Gap 2: the backward and forward conditioning slots coincide at t+1.
        assert_eq!(view[0].back_obs, view[0].fwd_obs);
        assert_eq!(view[0].future_obs, &[2.0][..]);
        assert_eq!(view[1].future_obs, &[3.0][..]);
    }

    #[test]
    fn transition_view_short_episode_contributes_nothing() {
        let ds = toy(vec![vec![0.0], vec![1.0]], vec![0], vec![0.0]);
        assert!(transition_view(&ds, 2).is_empty());
        assert_eq!(gap_tuple_count(&ds, 2), 0);
    }
}
