//! Forward-backward doubly-robust test of the Markov property and
//! sequential order selection.
//!
//! For each gap q ≥ 2 the test correlates two cross-fitted residuals over
//! all gap-q tuples:
//!
//! - forward: `g(O_{t+q}) − Ê[g(O_{t+q}) | O_{t+q-1}, A_{t+q-1}]`
//! - backward: `h(O_t, A_t) − Ê[h(O_t, A_t) | O_{t+1}, A_{t+1}]`
//!
//! with g and h drawn from characteristic-function banks
//! (cos/sin projections at frozen Gaussian frequencies). Under the null the
//! standardized products behave like centered Gaussian noise for every
//! `(q, g, h)` combination, and the statistic stays valid when either one of
//! the two conditional means is estimated well. The max over all
//! combinations is calibrated by a Gaussian multiplier bootstrap with one
//! multiplier per episode, preserving within-episode dependence.
//!
//! Cross-fitting is by episode: the residuals of an episode are always
//! computed from nuisance models trained on the other folds.

use crate::data::{
    augment_order, gap_tuple_count, one_hot, standardize, DataError, TrajectoryDataset,
};
use crate::regress::{
    self, make_folds, FittedRegressor, FoldAssignment, RegressError, RegressorSpec,
};
use crate::seed;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarkovError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error("gap {requested} infeasible: longest episode supports gaps up to {feasible}")]
    GapTooLarge { requested: usize, feasible: usize },
    #[error("only {count} gap-{q} tuples; need at least 2")]
    TooFewTuples { q: usize, count: usize },
    #[error("bad test config: {0}")]
    BadConfig(String),
}

/// Which nuisance to deliberately break (diagnostic knob for
/// double-robustness studies): the corrupted side is replaced by a
/// constant predictor at the training-fold target means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NuisanceCorruption {
    ForwardConstant,
    BackwardConstant,
}

/// Which coordinates the test functions read.
///
/// When a dataset has been lag-augmented to order k, most of the augmented
/// observation at t+q is a deterministic copy of coordinates already present
/// in the forward conditioning pair (and likewise most of the augmented past
/// pair is visible to the backward conditioning pair). Conditioning-
/// measurable coordinates carry no information about the null — removing
/// them leaves the hypothesis unchanged — but estimating their conditional
/// means injects pure nuisance error into the residual products. The blocks
/// therefore restrict g to the genuinely new future coordinates and h to the
/// genuinely new past coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestBlocks {
    /// Coordinates of the (augmented) observation that g reads at t+q.
    pub g_coords: Vec<usize>,
    /// Coordinates of the (augmented) observation that h reads at t.
    pub h_coords: Vec<usize>,
    /// Append onehot(A_t) to h's argument.
    pub h_include_action: bool,
}

impl TestBlocks {
    /// First-order layout: g sees the whole observation, h sees the whole
    /// observation plus the current action.
    pub fn full(obs_dim: usize) -> Self {
        TestBlocks {
            g_coords: (0..obs_dim).collect(),
            h_coords: (0..obs_dim).collect(),
            h_include_action: true,
        }
    }

    /// Blocks for a dataset produced by `augment_order(raw, k, include_reward)`
    /// from a raw process with `base_obs_dim` observation coordinates and
    /// `action_count` actions.
    ///
    /// Augmented layout: `[O_t | A_{t-1}, O_{t-1} (, R_{t-1}) | … | A_{t-k+1}, O_{t-k+1} (, R_{t-k+1})]`.
    /// New future content at gap q is `(O_{t+q}, R_{t+q-1})`; new past content
    /// is the oldest lag triple, whose one-hot action coordinates make an
    /// explicit action term redundant.
    pub fn for_order(
        k: usize,
        base_obs_dim: usize,
        action_count: usize,
        include_reward: bool,
    ) -> Self {
        if k <= 1 {
            return TestBlocks::full(base_obs_dim);
        }
        let block = action_count + base_obs_dim + usize::from(include_reward);
        let mut g_coords: Vec<usize> = (0..base_obs_dim).collect();
        if include_reward {
            // R_{t+q-1} sits at the end of the first lagged block.
            g_coords.push(base_obs_dim + action_count + base_obs_dim);
        }
        let oldest_start = base_obs_dim + (k - 2) * block;
        let h_coords = (oldest_start..oldest_start + block).collect();
        TestBlocks {
            g_coords,
            h_coords,
            h_include_action: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestConfig {
    /// Largest gap tested (gaps run 2..=max_gap; auto-capped by episode length).
    pub max_gap: usize,
    /// Number of forward characteristic frequencies (J).
    pub forward_features: usize,
    /// Number of backward characteristic frequencies (L).
    pub backward_features: usize,
    /// Cross-fitting folds (episode-level).
    pub folds: usize,
    /// Multiplier-bootstrap replications.
    pub bootstrap_reps: usize,
    pub alpha: f64,
    pub seed: u64,
    pub regressor: RegressorSpec,
    /// Carry lagged rewards inside augmented observations during order
    /// selection.
    pub include_reward: bool,
    /// Test-function coordinate blocks; `None` means the first-order layout
    /// ([`TestBlocks::full`]). Order selection fills these per order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks: Option<TestBlocks>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corruption: Option<NuisanceCorruption>,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            max_gap: 6,
            forward_features: 16,
            backward_features: 16,
            folds: 3,
            bootstrap_reps: 2000,
            alpha: 0.05,
            seed: 0,
            regressor: RegressorSpec::default(),
            include_reward: true,
            blocks: None,
            corruption: None,
        }
    }
}

impl TestConfig {
    fn validate(&self) -> Result<(), MarkovError> {
        if self.max_gap < 2 {
            return Err(MarkovError::BadConfig("max_gap must be >= 2".into()));
        }
        if self.forward_features < 1 || self.backward_features < 1 || self.bootstrap_reps < 1 {
            return Err(MarkovError::BadConfig(
                "feature and bootstrap counts must be >= 1".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(MarkovError::BadConfig(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if self.folds < 2 {
            return Err(MarkovError::BadConfig("folds must be >= 2".into()));
        }
        Ok(())
    }
}

// ── Characteristic-function feature banks ─────────────────────────────

/// Frozen frequency banks. Forward frequencies live on observation space,
/// backward frequencies on observation ⊕ one-hot action space. Frequencies
/// are spherical Gaussian with unit scale, which presumes standardized
/// coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBank {
    pub forward: Vec<Vec<f64>>,
    pub backward: Vec<Vec<f64>>,
}

pub fn build_feature_bank(
    obs_dim: usize,
    action_count: usize,
    num_forward: usize,
    num_backward: usize,
    seed_value: u64,
) -> FeatureBank {
    let mut rng = seed::stream(seed_value, "feature-bank", 0);
    let normal = StandardNormal;
    let mut draw = |dim: usize| -> Vec<f64> {
        (0..dim).map(|_| normal.sample(&mut rng)).collect()
    };
    let forward = (0..num_forward).map(|_| draw(obs_dim)).collect();
    let backward = (0..num_backward)
        .map(|_| draw(obs_dim + action_count))
        .collect();
    FeatureBank { forward, backward }
}

/// Interleaved (cos(μᵀx), sin(μᵀx)) pairs, one per frequency.
pub fn char_features(x: &[f64], freqs: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * freqs.len());
    for mu in freqs {
        assert_eq!(mu.len(), x.len(), "frequency/input dimension mismatch");
        let dot: f64 = mu.iter().zip(x).map(|(m, v)| m * v).sum();
        out.push(dot.cos());
        out.push(dot.sin());
    }
    out
}

// ── Nuisance estimation ───────────────────────────────────────────────

/// Per-fold forward/backward conditional-mean models. The fold-f models are
/// trained only on episodes outside fold f.
#[derive(Debug, Clone)]
pub struct NuisanceModels {
    pub forward: Vec<FittedRegressor>,
    pub backward: Vec<FittedRegressor>,
    /// Episodes each fold's models were trained on.
    pub trained_on: Vec<Vec<usize>>,
}

fn obs_action_row(ds: &TrajectoryDataset, episode: usize, t: usize) -> Vec<f64> {
    let ep = &ds.episodes[episode];
    let mut row = ep.observations[t].clone();
    row.extend(one_hot(ep.actions[t], ds.num_actions()));
    row
}

/// Fit one forward and one backward model per fold. The forward model
/// regresses `char(O_{t+1})` on `O_t ⊕ onehot(A_t)` (all transitions); the
/// backward model regresses `char(O_t ⊕ onehot(A_t))` on
/// `O_{t+1} ⊕ onehot(A_{t+1})` (transitions with a successor action). One
/// fit serves all J (resp. L) features jointly.
pub fn fit_nuisances(
    ds: &TrajectoryDataset,
    bank: &FeatureBank,
    folds: &FoldAssignment,
    spec: &RegressorSpec,
    corruption: Option<NuisanceCorruption>,
) -> Result<NuisanceModels, MarkovError> {
    let jobs: Vec<(usize, bool)> = (0..folds.num_folds)
        .flat_map(|f| [(f, true), (f, false)])
        .collect();
    let fitted: Result<Vec<FittedRegressor>, MarkovError> = jobs
        .par_iter()
        .map(|(fold, is_forward)| {
            let train = folds.episodes_not_in(*fold);
            let mut inputs = Vec::new();
            let mut targets = Vec::new();
            for &e in &train {
                let ep = &ds.episodes[e];
                if *is_forward {
                    for t in 0..ep.transitions() {
                        inputs.push(obs_action_row(ds, e, t));
                        targets.push(char_features(&ep.observations[t + 1], &bank.forward));
                    }
                } else {
                    for t in 0..ep.transitions().saturating_sub(1) {
                        inputs.push(obs_action_row(ds, e, t + 1));
                        targets.push(char_features(
                            &obs_action_row(ds, e, t),
                            &bank.backward,
                        ));
                    }
                }
            }
            let x = regress::rows_to_matrix(&inputs);
            let y = regress::rows_to_matrix(&targets);
            let corrupt_this = matches!(
                (corruption, is_forward),
                (Some(NuisanceCorruption::ForwardConstant), true)
                    | (Some(NuisanceCorruption::BackwardConstant), false)
            );
            if corrupt_this {
                let means: Vec<f64> = (0..y.ncols()).map(|c| y.column(c).mean()).collect();
                return Ok(FittedRegressor::constant(x.ncols(), &means));
            }
            let label = if *is_forward { "nuisance-forward" } else { "nuisance-backward" };
            let fold_spec = spec.with_seed(seed::derive(spec.seed, label, *fold as u64));
            regress::fit(&fold_spec, &x, &y).map_err(MarkovError::from)
        })
        .collect();
    let fitted = fitted?;
    let mut forward = Vec::with_capacity(folds.num_folds);
    let mut backward = Vec::with_capacity(folds.num_folds);
    for (i, model) in fitted.into_iter().enumerate() {
        if i % 2 == 0 {
            forward.push(model);
        } else {
            backward.push(model);
        }
    }
    let trained_on = (0..folds.num_folds).map(|f| folds.episodes_not_in(f)).collect();
    Ok(NuisanceModels {
        forward,
        backward,
        trained_on,
    })
}

// ── Residual products ─────────────────────────────────────────────────

/// Reference from a gap-q tuple into the per-transition residual arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TupleRef {
    pub episode: usize,
    /// Transition carrying the forward residual (time t+q-1).
    pub fwd: usize,
    /// Transition carrying the backward residual (time t).
    pub back: usize,
}

#[derive(Debug, Clone)]
pub struct GapTuples {
    pub q: usize,
    pub tuples: Vec<TupleRef>,
}

/// Per-tuple contributions in factored form: cross-fitted forward and
/// backward residuals are stored once per transition, and each gap-q tuple
/// references the pair it multiplies. `contribution` materializes the
/// 4·J·L products for one tuple.
#[derive(Debug, Clone)]
pub struct ContributionTable {
    pub num_forward: usize,
    pub num_backward: usize,
    pub n_episodes: usize,
    fwd_resid: Vec<Vec<f64>>,
    back_resid: Vec<Vec<f64>>,
    gaps: Vec<GapTuples>,
}

/// Statistic layout: index = ((j·L) + l)·4 + component with components
/// ordered (cc, cs, sc, ss); the first letter is the forward cos/sin part,
/// the second the backward part.
pub fn stat_index(num_backward: usize, j: usize, l: usize, component: usize) -> usize {
    (j * num_backward + l) * 4 + component
}

impl ContributionTable {
    pub fn num_stats(&self) -> usize {
        4 * self.num_forward * self.num_backward
    }

    pub fn gaps(&self) -> &[GapTuples] {
        &self.gaps
    }

    /// Outer product of the tuple's forward and backward residual vectors,
    /// written into `buf` (length `num_stats`).
    pub fn contribution_into(&self, tuple: &TupleRef, buf: &mut [f64]) {
        let fwd = &self.fwd_resid[tuple.fwd];
        let back = &self.back_resid[tuple.back];
        let l2 = 2 * self.num_backward;
        for (a, fv) in fwd.iter().enumerate() {
            let base = a * l2;
            for (b, bv) in back.iter().enumerate() {
                buf[base + b] = fv * bv;
            }
        }
    }
}

/// Compute cross-fitted residuals for every transition and enumerate the
/// gap-q tuples for q in `2..=max_gap`. Residuals for an episode always come
/// from its own fold's models (trained on the other folds).
pub fn statistic_contributions(
    ds: &TrajectoryDataset,
    bank: &FeatureBank,
    nuisances: &NuisanceModels,
    folds: &FoldAssignment,
    max_gap: usize,
) -> Result<ContributionTable, MarkovError> {
    let feasible = ds.max_transitions();
    if max_gap > feasible {
        return Err(MarkovError::GapTooLarge {
            requested: max_gap,
            feasible,
        });
    }
    let n_transitions = ds.total_transitions();
    let mut offsets = Vec::with_capacity(ds.episodes.len());
    let mut acc = 0usize;
    for ep in &ds.episodes {
        offsets.push(acc);
        acc += ep.transitions();
    }

    // Batch predictions fold by fold.
    let mut fwd_pred: Vec<Vec<f64>> = vec![Vec::new(); n_transitions];
    let mut back_pred: Vec<Vec<f64>> = vec![Vec::new(); n_transitions];
    for fold in 0..folds.num_folds {
        let members = folds.episodes_in(fold);
        let mut fwd_rows = Vec::new();
        let mut fwd_ids = Vec::new();
        let mut back_rows = Vec::new();
        let mut back_ids = Vec::new();
        for &e in &members {
            let ep = &ds.episodes[e];
            for t in 0..ep.transitions() {
                fwd_rows.push(obs_action_row(ds, e, t));
                fwd_ids.push(offsets[e] + t);
            }
            for t in 0..ep.transitions().saturating_sub(1) {
                back_rows.push(obs_action_row(ds, e, t + 1));
                back_ids.push(offsets[e] + t);
            }
        }
        if !fwd_rows.is_empty() {
            let preds = nuisances.forward[fold].predict(&regress::rows_to_matrix(&fwd_rows))?;
            for (k, id) in fwd_ids.iter().enumerate() {
                fwd_pred[*id] = preds.row(k).iter().copied().collect();
            }
        }
        if !back_rows.is_empty() {
            let preds = nuisances.backward[fold].predict(&regress::rows_to_matrix(&back_rows))?;
            for (k, id) in back_ids.iter().enumerate() {
                back_pred[*id] = preds.row(k).iter().copied().collect();
            }
        }
    }

    // Residuals per transition.
    let mut fwd_resid = vec![Vec::new(); n_transitions];
    let mut back_resid = vec![Vec::new(); n_transitions];
    for (e, ep) in ds.episodes.iter().enumerate() {
        for t in 0..ep.transitions() {
            let id = offsets[e] + t;
            let g = char_features(&ep.observations[t + 1], &bank.forward);
            fwd_resid[id] = g.iter().zip(&fwd_pred[id]).map(|(a, b)| a - b).collect();
            if t + 1 < ep.transitions() {
                let h = char_features(&obs_action_row(ds, e, t), &bank.backward);
                back_resid[id] = h.iter().zip(&back_pred[id]).map(|(a, b)| a - b).collect();
            }
        }
    }

    let mut gaps = Vec::new();
    for q in 2..=max_gap {
        let mut tuples = Vec::with_capacity(gap_tuple_count(ds, q));
        for (e, ep) in ds.episodes.iter().enumerate() {
            let t_max = ep.transitions();
            if t_max < q {
                continue;
            }
            for t in 0..=(t_max - q) {
                tuples.push(TupleRef {
                    episode: e,
                    fwd: offsets[e] + t + q - 1,
                    back: offsets[e] + t,
                });
            }
        }
        gaps.push(GapTuples { q, tuples });
    }

    Ok(ContributionTable {
        num_forward: bank.forward.len(),
        num_backward: bank.backward.len(),
        n_episodes: ds.episodes.len(),
        fwd_resid,
        back_resid,
        gaps,
    })
}

// ── Aggregation and bootstrap ─────────────────────────────────────────

/// Standardized statistics for one gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStatistics {
    pub q: usize,
    pub n_tuples: usize,
    /// S(q,j,l,c) in `stat_index` layout.
    pub values: Vec<f64>,
    /// Per-statistic contribution standard deviations (the normalizers).
    pub sds: Vec<f64>,
    pub max_abs: f64,
}

/// Centered contributions grouped by episode: because the bootstrap draws
/// one multiplier per episode, only per-episode sums of centered
/// contributions enter a replication, so grouping loses nothing and keeps
/// memory linear in episodes.
#[derive(Debug, Clone)]
pub struct CenteredContributions {
    pub n_episodes: usize,
    pub gaps: Vec<CenteredGap>,
}

#[derive(Debug, Clone)]
pub struct CenteredGap {
    pub q: usize,
    pub n_tuples: usize,
    pub sds: Vec<f64>,
    /// episode → per-statistic sum of centered contributions.
    pub episode_sums: Vec<Vec<f64>>,
}

/// Floor for contribution standard deviations; degenerate (zero-variance)
/// statistics hit the floor and effectively dominate the max.
pub const SD_FLOOR: f64 = 1e-12;

/// S(q,j,l,c) = √n_q · mean / sd, with the sample (n−1) standard deviation
/// floored at [`SD_FLOOR`]. Also returns the episode-grouped centered
/// contributions the bootstrap reuses.
pub fn aggregate_statistics(
    table: &ContributionTable,
) -> Result<(Vec<GapStatistics>, CenteredContributions), MarkovError> {
    let s = table.num_stats();
    let mut stats = Vec::with_capacity(table.gaps.len());
    let mut centered_gaps = Vec::with_capacity(table.gaps.len());
    let mut buf = vec![0.0; s];
    for gap in &table.gaps {
        let n = gap.tuples.len();
        if n < 2 {
            return Err(MarkovError::TooFewTuples {
                q: gap.q,
                count: n,
            });
        }
        let mut sums = vec![0.0; s];
        for tuple in &gap.tuples {
            table.contribution_into(tuple, &mut buf);
            for (acc, v) in sums.iter_mut().zip(&buf) {
                *acc += v;
            }
        }
        let means: Vec<f64> = sums.iter().map(|v| v / n as f64).collect();
        let mut sq = vec![0.0; s];
        let mut episode_sums = vec![vec![0.0; s]; table.n_episodes];
        for tuple in &gap.tuples {
            table.contribution_into(tuple, &mut buf);
            let ep_sum = &mut episode_sums[tuple.episode];
            for k in 0..s {
                let c = buf[k] - means[k];
                sq[k] += c * c;
                ep_sum[k] += c;
            }
        }
        let sds: Vec<f64> = sq
            .iter()
            .map(|v| (v / (n - 1) as f64).sqrt().max(SD_FLOOR))
            .collect();
        let values: Vec<f64> = means
            .iter()
            .zip(&sds)
            .map(|(m, sd)| (n as f64).sqrt() * m / sd)
            .collect();
        let max_abs = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        stats.push(GapStatistics {
            q: gap.q,
            n_tuples: n,
            values,
            sds: sds.clone(),
            max_abs,
        });
        centered_gaps.push(CenteredGap {
            q: gap.q,
            n_tuples: n,
            sds,
            episode_sums,
        });
    }
    Ok((
        stats,
        CenteredContributions {
            n_episodes: table.n_episodes,
            gaps: centered_gaps,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOutcome {
    /// Empirical upper-α quantile of the bootstrap max statistics
    /// (the floor(α·(B+1))-th largest).
    pub threshold: f64,
    /// Finite-sample p-value (1 + #{max_b ≥ observed}) / (B + 1).
    pub p_value: f64,
    pub replications: usize,
    pub warnings: Vec<String>,
}

/// Gaussian multiplier bootstrap with one standard-normal multiplier per
/// episode, shared across gaps within a replication. Each replication draws
/// from its own derived stream, so results do not depend on worker count.
pub fn multiplier_bootstrap(
    centered: &CenteredContributions,
    observed_max: f64,
    replications: usize,
    alpha: f64,
    seed_value: u64,
) -> BootstrapOutcome {
    let mut warnings = Vec::new();
    if replications < 100 {
        warnings.push(format!(
            "bootstrap replications {} < 100; threshold and p-value are coarse",
            replications
        ));
    }
    let maxes: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::stream(seed_value, "bootstrap-rep", b as u64);
            let normal = StandardNormal;
            let multipliers: Vec<f64> = (0..centered.n_episodes)
                .map(|_| normal.sample(&mut rng))
                .collect();
            let mut max_b = 0.0f64;
            for gap in &centered.gaps {
                let scale = (gap.n_tuples as f64).sqrt();
                let s = gap.sds.len();
                let mut acc = vec![0.0; s];
                for (e, w) in multipliers.iter().enumerate() {
                    let sums = &gap.episode_sums[e];
                    for k in 0..s {
                        acc[k] += w * sums[k];
                    }
                }
                for k in 0..s {
                    let v = (acc[k] / (scale * gap.sds[k])).abs();
                    max_b = max_b.max(v);
                }
            }
            max_b
        })
        .collect();

    let exceed = maxes.iter().filter(|m| **m >= observed_max).count();
    let p_value = (1 + exceed) as f64 / (replications + 1) as f64;
    let mut sorted = maxes;
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite bootstrap maxes"));
    let k = ((alpha * (replications + 1) as f64).floor() as usize).min(replications);
    let threshold = if k >= 1 {
        sorted[k - 1]
    } else {
        warnings.push("too few replications for the requested alpha; threshold set to the bootstrap max".into());
        sorted[0]
    };
    BootstrapOutcome {
        threshold,
        p_value,
        replications,
        warnings,
    }
}

// ── Full pipeline ─────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovTestReport {
    pub config: TestConfig,
    pub n_episodes: usize,
    pub n_transitions: usize,
    pub obs_dim: usize,
    pub num_actions: usize,
    /// Largest gap actually tested after feasibility capping.
    pub max_gap_used: usize,
    pub statistics: Vec<GapStatistics>,
    pub max_statistic: f64,
    pub threshold: f64,
    pub p_value: f64,
    /// True iff `p_value < alpha`. Up to bootstrap ties this matches
    /// `max_statistic > threshold`.
    pub reject: bool,
    pub warnings: Vec<String>,
}

/// Run the full pipeline on a dataset (already augmented to the order under
/// test): standardize → folds → feature bank → cross-fitted nuisances →
/// residual products → standardized max statistic → multiplier bootstrap.
pub fn markov_test(
    ds: &TrajectoryDataset,
    config: &TestConfig,
) -> Result<MarkovTestReport, MarkovError> {
    config.validate()?;
    let mut warnings = Vec::new();

    // Cap the gap range so every tested gap has at least 2 tuples.
    let mut max_gap = 0usize;
    for q in 2..=config.max_gap {
        if gap_tuple_count(ds, q) >= 2 {
            max_gap = q;
        } else {
            break;
        }
    }
    if max_gap < 2 {
        return Err(MarkovError::TooFewTuples {
            q: 2,
            count: gap_tuple_count(ds, 2),
        });
    }
    if max_gap < config.max_gap {
        warnings.push(format!(
            "max_gap capped at {} (episodes too short for {})",
            max_gap, config.max_gap
        ));
    }

    let (std_ds, _) = standardize(ds);
    let folds = make_folds(&std_ds, config.folds, seed::derive(config.seed, "folds", 0))?;
    let bank = build_feature_bank(
        std_ds.obs_dim,
        std_ds.num_actions(),
        config.forward_features,
        config.backward_features,
        seed::derive(config.seed, "bank", 0),
    );
    let reg_spec = config
        .regressor
        .with_seed(seed::derive(config.seed, "regressor", config.regressor.seed));
    let nuisances = fit_nuisances(&std_ds, &bank, &folds, &reg_spec, config.corruption)?;
    let table = statistic_contributions(&std_ds, &bank, &nuisances, &folds, max_gap)?;
    let (statistics, centered) = aggregate_statistics(&table)?;
    let max_statistic = statistics.iter().fold(0.0f64, |a, g| a.max(g.max_abs));
    let boot = multiplier_bootstrap(
        &centered,
        max_statistic,
        config.bootstrap_reps,
        config.alpha,
        seed::derive(config.seed, "bootstrap", 0),
    );
    warnings.extend(boot.warnings.clone());
    Ok(MarkovTestReport {
        config: config.clone(),
        n_episodes: ds.episodes.len(),
        n_transitions: ds.total_transitions(),
        obs_dim: ds.obs_dim,
        num_actions: ds.num_actions(),
        max_gap_used: max_gap,
        statistics,
        max_statistic,
        threshold: boot.threshold,
        p_value: boot.p_value,
        reject: boot.p_value < config.alpha,
        warnings,
    })
}

// ── Order selection ───────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderTestSummary {
    pub order: usize,
    pub p_value: f64,
    pub max_statistic: f64,
    pub threshold: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSelectionReport {
    pub alpha: f64,
    pub k_max: usize,
    pub tested: Vec<OrderTestSummary>,
    /// Smallest order whose null was not rejected, if any.
    pub selected_order: Option<usize>,
    /// Every tested order rejected: the data looks like no finite-order MDP
    /// up to k_max, i.e. POMDP-suspect.
    pub pomdp_suspect: bool,
    pub warnings: Vec<String>,
}

/// Forward-selection over orders: test k = 1, 2, … on lag-augmented data and
/// stop at the first non-rejection. Orders infeasible for the episode
/// lengths truncate the search with a warning.
pub fn select_order(
    ds: &TrajectoryDataset,
    k_max: usize,
    config: &TestConfig,
) -> Result<OrderSelectionReport, MarkovError> {
    assert!(k_max >= 1, "k_max must be >= 1");
    let mut tested = Vec::new();
    let mut warnings = Vec::new();
    let mut selected = None;
    for k in 1..=k_max {
        let shortest = ds.episodes.iter().map(|e| e.transitions()).min().unwrap_or(0);
        // Augmentation needs T >= k; the q=2 statistic needs two tuples.
        if shortest < k || gap_tuple_count(ds, k + 1) < 2 {
            warnings.push(format!(
                "order search truncated at k={} (episodes too short)",
                k
            ));
            break;
        }
        let ds_k = augment_order(ds, k, config.include_reward)?;
        let sub_config = TestConfig {
            seed: seed::derive(config.seed, "order", k as u64),
            ..config.clone()
        };
        let report = markov_test(&ds_k, &sub_config)?;
        tested.push(OrderTestSummary {
            order: k,
            p_value: report.p_value,
            max_statistic: report.max_statistic,
            threshold: report.threshold,
            reject: report.reject,
        });
        if !report.reject {
            selected = Some(k);
            break;
        }
    }
    let pomdp_suspect = selected.is_none();
    Ok(OrderSelectionReport {
        alpha: config.alpha,
        k_max,
        tested,
        selected_order: selected,
        pomdp_suspect,
        warnings,
    })
}
