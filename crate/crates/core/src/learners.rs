//! Behavioral cloning, empirical moment matching and replay estimation.
//!
//! Replay estimation builds a hybrid estimate of the expert's occupancy
//! measures. One half of the data (`D1`) trains a BC policy and a membership
//! oracle `m_t(s)` that marks where BC is trusted. The BC policy is then
//! replayed in the MDP, each visit weighted by the prefix weight
//! `P = prod m_{t'}(s_{t'})`; the other half (`D2`) contributes each visit
//! with weight `1 - P`. The learner moment-matches the combined target.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{empirical_occupancy, split, Dataset, SplitConfig};
use crate::error::{config, dimension, Error, Result};
use crate::lp::{extract_policy, solve_occupancy_match, MatchTarget};
use crate::mdp::{MarkovPolicy, MeasureKind, OccupancyMeasures, TabularMdp, PROB_TOL};
use crate::rng::{derive_seed, sample_categorical, seeded_rng, stream_rng};

/// How BC breaks ties between equally frequent actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TieRule {
    /// Lowest action index among the most frequent.
    #[default]
    LowestIndex,
    /// Uniformly random among the most frequent, keyed by `(seed, t, s)`.
    Random(u64),
}

/// Tabular BC: the majority action at every observed `(s, t)`, the uniform
/// row elsewhere.
pub fn bc_train(
    dataset: &Dataset,
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    tie_rule: TieRule,
) -> Result<MarkovPolicy> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.horizon() != horizon {
        return Err(dimension(format!(
            "dataset horizon {} differs from H = {horizon}",
            dataset.horizon()
        )));
    }
    dataset.check_indices(num_states, num_actions)?;
    let mut counts = vec![0usize; horizon * num_states * num_actions];
    for tr in dataset.trajectories() {
        for (t, &(s, a)) in tr.steps.iter().enumerate() {
            counts[(t * num_states + s) * num_actions + a] += 1;
        }
    }
    MarkovPolicy::from_fn(horizon, num_states, num_actions, |t, s| {
        let c = &counts[(t * num_states + s) * num_actions..(t * num_states + s + 1) * num_actions];
        let max = *c.iter().max().expect("at least one action");
        if max == 0 {
            return vec![1.0 / num_actions as f64; num_actions];
        }
        let best: Vec<usize> = (0..num_actions).filter(|&a| c[a] == max).collect();
        let pick = match tie_rule {
            TieRule::LowestIndex => best[0],
            TieRule::Random(seed) => {
                let mut rng = seeded_rng(derive_seed(seed, &[t as u64, s as u64]));
                best[rng.gen_range(0..best.len())]
            }
        };
        let mut row = vec![0.0; num_actions];
        row[pick] = 1.0;
        row
    })
}

/// Moment matching against `target`: solve the L1 occupancy LP and read off
/// the policy.
pub fn match_and_extract(mdp: &TabularMdp, target: &MatchTarget) -> Result<MarkovPolicy> {
    let (occ, _) = solve_occupancy_match(mdp, target)?.into_optimal()?;
    extract_policy(&occ, mdp)
}

/// Empirical moment matching on `dataset`.
pub fn mm_train(dataset: &Dataset, mdp: &TabularMdp) -> Result<MarkovPolicy> {
    let emp = empirical_occupancy(dataset, mdp.num_states(), mdp.num_actions())?;
    if emp.horizon() != mdp.horizon() {
        return Err(dimension("dataset horizon differs from the MDP"));
    }
    match_and_extract(mdp, &MatchTarget::from(&emp))
}

/// Scores `m_t(s)` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipOracle {
    horizon: usize,
    num_states: usize,
    m: Vec<f64>,
}

impl MembershipOracle {
    pub fn new(horizon: usize, num_states: usize, m: Vec<f64>) -> Result<Self> {
        if m.len() != horizon * num_states {
            return Err(dimension(format!(
                "oracle has {} entries, expected {}",
                m.len(),
                horizon * num_states
            )));
        }
        if let Some(x) = m.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Invalid(format!(
                "membership score {x} outside [0, 1]"
            )));
        }
        Ok(Self {
            horizon,
            num_states,
            m,
        })
    }

    /// The same score everywhere.
    pub fn constant(horizon: usize, num_states: usize, value: f64) -> Result<Self> {
        Self::new(horizon, num_states, vec![value; horizon * num_states])
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn get(&self, t: usize, s: usize) -> f64 {
        self.m[t * self.num_states + s]
    }

    /// True when every score is 0 or 1.
    pub fn is_hard(&self) -> bool {
        self.m.iter().all(|&x| x == 0.0 || x == 1.0)
    }
}

/// Hard oracle: `m_t(s) = 1` iff some trajectory of `d1` is at `s` at step
/// `t`.
pub fn membership_tabular(
    d1: &Dataset,
    num_states: usize,
    horizon: usize,
) -> Result<MembershipOracle> {
    if !d1.is_empty() && d1.horizon() != horizon {
        return Err(dimension("dataset horizon differs from H"));
    }
    let mut m = vec![0.0; horizon * num_states];
    for tr in d1.trajectories() {
        for (t, &(s, _)) in tr.steps.iter().enumerate() {
            if s >= num_states {
                return Err(dimension(format!("state {s} out of range")));
            }
            m[t * num_states + s] = 1.0;
        }
    }
    MembershipOracle::new(horizon, num_states, m)
}

/// Which membership factors gate the visit at step `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PrefixConvention {
    /// `prod_{t' < t} m_{t'}(s_{t'})`; the visit at `t` is weighted by the
    /// states before it.
    #[default]
    BeforeStep,
    /// `prod_{t' <= t} m_{t'}(s_{t'})`.
    ThroughStep,
}

/// `prod_{t'} m_{t'}(s_{t'})` over the given prefix `s_0, .., s_{k-1}`
/// (1 for an empty prefix).
pub fn prefix_weight(oracle: &MembershipOracle, prefix: &[usize]) -> f64 {
    prefix
        .iter()
        .enumerate()
        .map(|(t, &s)| oracle.get(t, s))
        .product()
}

/// Weight of the visit at step `t` of a trajectory with states `states`.
pub fn visit_weight(
    oracle: &MembershipOracle,
    states: &[usize],
    t: usize,
    convention: PrefixConvention,
) -> f64 {
    match convention {
        PrefixConvention::BeforeStep => prefix_weight(oracle, &states[..t]),
        PrefixConvention::ThroughStep => prefix_weight(oracle, &states[..=t]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ReplayMode {
    /// Weighted forward recursion (infinitely many replays).
    #[default]
    Exact,
    MonteCarlo {
        n_replay: usize,
        seed: u64,
    },
}

/// Prefix-weighted occupancies of the replayed BC policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMeasures {
    pub measures: OccupancyMeasures,
    pub mode: ReplayMode,
    pub convention: PrefixConvention,
}

fn check_replay_inputs(
    mdp: &TabularMdp,
    policy: &MarkovPolicy,
    oracle: &MembershipOracle,
) -> Result<()> {
    mdp.check_policy(policy)?;
    if oracle.horizon() != mdp.horizon() || oracle.num_states() != mdp.num_states() {
        return Err(dimension("oracle shape differs from the MDP"));
    }
    Ok(())
}

/// `E_{pi}[1(s_t = s, a_t = a) P]` by the weighted recursion
/// `w_{t+1}(s') = sum_{s,a} w_t(s) m_t(s) pi_t(a|s) P_t(s'|s,a)`, `w_0 = rho`.
pub fn replay_exact(
    mdp: &TabularMdp,
    bc_policy: &MarkovPolicy,
    oracle: &MembershipOracle,
) -> Result<ReplayMeasures> {
    replay_exact_with(mdp, bc_policy, oracle, PrefixConvention::BeforeStep)
}

pub fn replay_exact_with(
    mdp: &TabularMdp,
    bc_policy: &MarkovPolicy,
    oracle: &MembershipOracle,
    convention: PrefixConvention,
) -> Result<ReplayMeasures> {
    check_replay_inputs(mdp, bc_policy, oracle)?;
    let (h, ns, na) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut d = vec![0.0; h * ns * na];
    let mut w = mdp.rho().to_vec();
    for t in 0..h {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            let m = oracle.get(t, s);
            let visit = match convention {
                PrefixConvention::BeforeStep => w[s],
                PrefixConvention::ThroughStep => w[s] * m,
            };
            for a in 0..na {
                let pa = bc_policy.prob(t, s, a);
                d[(t * ns + s) * na + a] = visit * pa;
                let carry = w[s] * m * pa;
                if t + 1 < h && carry != 0.0 {
                    for (sp, p) in mdp.transition(t, s, a).iter().enumerate() {
                        next[sp] += carry * p;
                    }
                }
            }
        }
        w = next;
    }
    let measures = OccupancyMeasures::new(h, ns, na, MeasureKind::Weighted, d)?;
    Ok(ReplayMeasures {
        measures,
        mode: ReplayMode::Exact,
        convention,
    })
}

/// Weighted empirical measures from `n_replay` rollouts of `bc_policy`.
/// Rollout `i` uses seed `hash(seed, i)` and stops once its weight is 0.
pub fn replay_mc(
    mdp: &TabularMdp,
    bc_policy: &MarkovPolicy,
    oracle: &MembershipOracle,
    n_replay: usize,
    seed: u64,
) -> Result<ReplayMeasures> {
    replay_mc_with(
        mdp,
        bc_policy,
        oracle,
        n_replay,
        seed,
        PrefixConvention::BeforeStep,
    )
}

pub fn replay_mc_with(
    mdp: &TabularMdp,
    bc_policy: &MarkovPolicy,
    oracle: &MembershipOracle,
    n_replay: usize,
    seed: u64,
    convention: PrefixConvention,
) -> Result<ReplayMeasures> {
    if n_replay == 0 {
        return Err(config("n_replay must be at least 1"));
    }
    check_replay_inputs(mdp, bc_policy, oracle)?;
    let (h, ns, na) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut d = vec![0.0; h * ns * na];
    for i in 0..n_replay {
        let traj_seed = derive_seed(seed, &[i as u64]);
        let mut w = 1.0;
        let mut s = 0;
        for t in 0..h {
            let mut rng = stream_rng(traj_seed, t as u64);
            if t == 0 {
                s = sample_categorical(&mut rng, mdp.rho());
            }
            let a = sample_categorical(&mut rng, bc_policy.row(t, s));
            let m = oracle.get(t, s);
            let visit = match convention {
                PrefixConvention::BeforeStep => w,
                PrefixConvention::ThroughStep => w * m,
            };
            d[(t * ns + s) * na + a] += visit;
            w *= m;
            if w == 0.0 {
                break;
            }
            if t + 1 < h {
                s = sample_categorical(&mut rng, mdp.transition(t, s, a));
            }
        }
    }
    let n = n_replay as f64;
    d.iter_mut().for_each(|x| *x /= n);
    let measures = OccupancyMeasures::new(h, ns, na, MeasureKind::Weighted, d)?;
    Ok(ReplayMeasures {
        measures,
        mode: ReplayMode::MonteCarlo { n_replay, seed },
        convention,
    })
}

/// Hybrid target `g_t(s,a) = replay_t(s,a) + E_{D2}[1(s_t=s, a_t=a)(1 - P)]`
/// with the replay's prefix convention.
pub fn hybrid_estimate(
    replay: &ReplayMeasures,
    d2: &Dataset,
    oracle: &MembershipOracle,
) -> Result<MatchTarget> {
    let r = &replay.measures;
    let (h, ns, na) = (r.horizon(), r.num_states(), r.num_actions());
    if d2.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if d2.horizon() != h || oracle.horizon() != h || oracle.num_states() != ns {
        return Err(dimension("replay, dataset and oracle differ in shape"));
    }
    d2.check_indices(ns, na)?;
    let mut g = r.as_slice().to_vec();
    let inv = 1.0 / d2.len() as f64;
    let mut states = Vec::with_capacity(h);
    for tr in d2.trajectories() {
        states.clear();
        states.extend(tr.steps.iter().map(|&(s, _)| s));
        for (t, &(s, a)) in tr.steps.iter().enumerate() {
            let p = visit_weight(oracle, &states, t, replay.convention);
            if p < 1.0 {
                g[(t * ns + s) * na + a] += (1.0 - p) * inv;
            }
        }
    }
    MatchTarget::new(h, ns, na, g)
}

/// `E_pi[1(s_t = s, a_t = a)(1 - P)]`, the mass that replay leaves to the
/// empirical side, by a forward recursion on the pair
/// `(E[1(s_t = s) P], E[1(s_t = s)(1 - P)])`.
pub fn complement_exact(
    mdp: &TabularMdp,
    policy: &MarkovPolicy,
    oracle: &MembershipOracle,
    convention: PrefixConvention,
) -> Result<OccupancyMeasures> {
    check_replay_inputs(mdp, policy, oracle)?;
    let (h, ns, na) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut d = vec![0.0; h * ns * na];
    let mut kept = mdp.rho().to_vec();
    let mut dropped = vec![0.0; ns];
    for t in 0..h {
        let mut next_kept = vec![0.0; ns];
        let mut next_dropped = vec![0.0; ns];
        for s in 0..ns {
            let m = oracle.get(t, s);
            let lost_here = kept[s] * (1.0 - m);
            let visit = match convention {
                PrefixConvention::BeforeStep => dropped[s],
                PrefixConvention::ThroughStep => dropped[s] + lost_here,
            };
            for a in 0..na {
                let pa = policy.prob(t, s, a);
                d[(t * ns + s) * na + a] = visit * pa;
                if t + 1 < h && pa != 0.0 {
                    for (sp, p) in mdp.transition(t, s, a).iter().enumerate() {
                        next_kept[sp] += kept[s] * m * pa * p;
                        next_dropped[sp] += (dropped[s] + lost_here) * pa * p;
                    }
                }
            }
        }
        kept = next_kept;
        dropped = next_dropped;
    }
    OccupancyMeasures::new(h, ns, na, MeasureKind::Weighted, d)
}

/// Hybrid target from replayed measures and an exact complement.
pub fn hybrid_from_parts(
    replay: &ReplayMeasures,
    complement: &OccupancyMeasures,
) -> Result<MatchTarget> {
    let r = &replay.measures;
    if !r.same_shape(complement) {
        return Err(dimension("replay and complement differ in shape"));
    }
    let g = r
        .as_slice()
        .iter()
        .zip(complement.as_slice())
        .map(|(a, b)| a + b)
        .collect();
    MatchTarget::new(r.horizon(), r.num_states(), r.num_actions(), g)
}

/// Replay estimation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ReConfig {
    pub split: SplitConfig,
    pub replay: ReplayMode,
    /// Use all of `D` instead of `D2` for the empirical side.
    pub use_full_dataset: bool,
    pub tie_rule: TieRule,
    pub prefix: PrefixConvention,
    /// Replace the tabular oracle with a constant score.
    pub oracle_override: Option<f64>,
}

/// Everything replay estimation computes on the way to its policy.
#[derive(Debug, Clone)]
pub struct ReOutput {
    pub policy: MarkovPolicy,
    pub bc_policy: MarkovPolicy,
    pub oracle: MembershipOracle,
    pub replay: ReplayMeasures,
    pub target: MatchTarget,
    pub d1: Dataset,
    pub d2: Dataset,
}

/// Replay estimation; see [`re_train_detailed`].
pub fn re_train(dataset: &Dataset, mdp: &TabularMdp, cfg: &ReConfig) -> Result<MarkovPolicy> {
    re_train_detailed(dataset, mdp, cfg).map(|o| o.policy)
}

/// split -> oracle from `D1` -> BC on `D1` -> replay -> hybrid target -> LP
/// match -> policy.
pub fn re_train_detailed(dataset: &Dataset, mdp: &TabularMdp, cfg: &ReConfig) -> Result<ReOutput> {
    let (h, ns, na) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    if dataset.horizon() != h {
        return Err(dimension("dataset horizon differs from the MDP"));
    }
    dataset.check_indices(ns, na)?;
    let (d1, d2) = split(dataset, &cfg.split)?;
    let oracle = match cfg.oracle_override {
        Some(v) => MembershipOracle::constant(h, ns, v)?,
        None => membership_tabular(&d1, ns, h)?,
    };
    let bc_policy = bc_train(&d1, ns, na, h, cfg.tie_rule)?;
    let replay = match cfg.replay {
        ReplayMode::Exact => replay_exact_with(mdp, &bc_policy, &oracle, cfg.prefix)?,
        ReplayMode::MonteCarlo { n_replay, seed } => {
            replay_mc_with(mdp, &bc_policy, &oracle, n_replay, seed, cfg.prefix)?
        }
    };
    let empirical_side = if cfg.use_full_dataset { dataset } else { &d2 };
    let target = hybrid_estimate(&replay, empirical_side, &oracle)?;
    let policy = match_and_extract(mdp, &target)?;
    Ok(ReOutput {
        policy,
        bc_policy,
        oracle,
        replay,
        target,
        d1,
        d2,
    })
}

/// Sum of each target layer, for inspection.
pub fn target_layer_sums(target: &MatchTarget) -> Vec<f64> {
    (0..target.horizon()).map(|t| target.layer_sum(t)).collect()
}

/// True when the replay layer sums are non-increasing in `t` (as prefix
/// weights are).
pub fn replay_mass_is_monotone(replay: &ReplayMeasures) -> bool {
    let m = &replay.measures;
    (1..m.horizon()).all(|t| m.layer_sum(t) <= m.layer_sum(t - 1) + PROB_TOL)
}
