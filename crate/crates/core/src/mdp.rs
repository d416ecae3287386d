//! Finite-horizon tabular MDPs, Markov policies and occupancy measures.
//!
//! Steps are indexed `0..horizon` in code (step `t` here is step `t + 1` in
//! the usual 1-based notation). Transitions exist for steps `0..horizon - 1`
//! only; nothing leaves the final step.

use serde::{Deserialize, Serialize};

use crate::error::{dimension, Error, Result};
use crate::rng::{sample_categorical, stream_rng};

/// Row-sum tolerance for every probability vector.
pub const PROB_TOL: f64 = 1e-9;

/// Checks a probability row and renormalizes it when the deviation is within
/// tolerance. Rows outside tolerance, with negative or non-finite entries,
/// are rejected.
pub(crate) fn validate_row(row: &mut [f64], context: impl Fn() -> String) -> Result<()> {
    if let Some(bad) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::Probability {
            context: context(),
            reason: format!("entry {bad} is negative or not finite"),
        });
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::Probability {
            context: context(),
            reason: format!("row sums to {sum}"),
        });
    }
    if sum != 1.0 {
        row.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(())
}

/// Finite-horizon MDP with non-stationary transitions and rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpJson", into = "MdpJson")]
pub struct TabularMdp {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    rho: Vec<f64>,
    // [t][s][a][s'] for t < horizon - 1
    transitions: Vec<f64>,
    // [t][s][a]
    rewards: Vec<f64>,
}

impl TabularMdp {
    /// Builds an MDP from flat row-major tables.
    ///
    /// `transitions` is indexed `[t][s][a][s']` for `t < horizon - 1`,
    /// `rewards` is indexed `[t][s][a]` for `t < horizon`.
    pub fn new(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        mut rho: Vec<f64>,
        mut transitions: Vec<f64>,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        if horizon == 0 || num_states == 0 || num_actions == 0 {
            return Err(dimension(
                "horizon, num_states and num_actions must be positive",
            ));
        }
        if rho.len() != num_states {
            return Err(dimension(format!(
                "rho has length {}, expected {num_states}",
                rho.len()
            )));
        }
        let n_trans = (horizon - 1) * num_states * num_actions * num_states;
        if transitions.len() != n_trans {
            return Err(dimension(format!(
                "transition table has {} entries, expected {n_trans}",
                transitions.len()
            )));
        }
        let n_rew = horizon * num_states * num_actions;
        if rewards.len() != n_rew {
            return Err(dimension(format!(
                "reward table has {} entries, expected {n_rew}",
                rewards.len()
            )));
        }
        validate_row(&mut rho, || "rho".to_string())?;
        for (k, row) in transitions.chunks_mut(num_states).enumerate() {
            validate_row(row, || {
                let a = k % num_actions;
                let s = (k / num_actions) % num_states;
                let t = k / (num_actions * num_states);
                format!("P_{t}(.|s={s}, a={a})")
            })?;
        }
        if let Some(r) = rewards.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Invalid(format!("reward {r} outside [0, 1]")));
        }
        Ok(Self {
            horizon,
            num_states,
            num_actions,
            rho,
            transitions,
            rewards,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// Next-state distribution `P_t(.|s, a)`; `t < horizon - 1`.
    #[inline]
    pub fn transition(&self, t: usize, s: usize, a: usize) -> &[f64] {
        let sa = self.num_states * self.num_actions;
        let start = ((t * sa) + s * self.num_actions + a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    #[inline]
    pub fn reward(&self, t: usize, s: usize, a: usize) -> f64 {
        self.rewards[(t * self.num_states + s) * self.num_actions + a]
    }

    /// Number of (t, s, a) cells.
    pub fn num_cells(&self) -> usize {
        self.horizon * self.num_states * self.num_actions
    }

    /// Returns an error unless `policy` has this MDP's dimensions.
    pub fn check_policy(&self, policy: &MarkovPolicy) -> Result<()> {
        if policy.horizon != self.horizon
            || policy.num_states != self.num_states
            || policy.num_actions != self.num_actions
        {
            return Err(dimension(format!(
                "policy is (H={}, S={}, A={}) but MDP is (H={}, S={}, A={})",
                policy.horizon,
                policy.num_states,
                policy.num_actions,
                self.horizon,
                self.num_states,
                self.num_actions
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Serialize, Deserialize)]
struct MdpJson {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    rho: Vec<f64>,
    transitions: Vec<Vec<Vec<Vec<f64>>>>,
    rewards: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<MdpJson> for TabularMdp {
    type Error = Error;

    fn try_from(j: MdpJson) -> Result<Self> {
        let flat_t: Vec<f64> = j
            .transitions
            .into_iter()
            .flatten()
            .flatten()
            .flatten()
            .collect();
        let flat_r: Vec<f64> = j.rewards.into_iter().flatten().flatten().collect();
        TabularMdp::new(
            j.horizon,
            j.num_states,
            j.num_actions,
            j.rho,
            flat_t,
            flat_r,
        )
    }
}

impl From<TabularMdp> for MdpJson {
    fn from(m: TabularMdp) -> Self {
        let (s, a) = (m.num_states, m.num_actions);
        let transitions = m
            .transitions
            .chunks(s * a * s)
            .map(|layer| {
                layer
                    .chunks(a * s)
                    .map(|st| st.chunks(s).map(<[f64]>::to_vec).collect())
                    .collect()
            })
            .collect();
        let rewards = m
            .rewards
            .chunks(s * a)
            .map(|layer| layer.chunks(a).map(<[f64]>::to_vec).collect())
            .collect();
        MdpJson {
            horizon: m.horizon,
            num_states: s,
            num_actions: a,
            rho: m.rho,
            transitions,
            rewards,
        }
    }
}

/// Non-stationary stochastic policy `pi_t(a|s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyJson", into = "PolicyJson")]
pub struct MarkovPolicy {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    // [t][s][a]
    probs: Vec<f64>,
}

impl MarkovPolicy {
    pub fn new(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        mut probs: Vec<f64>,
    ) -> Result<Self> {
        if horizon == 0 || num_states == 0 || num_actions == 0 {
            return Err(dimension(
                "horizon, num_states and num_actions must be positive",
            ));
        }
        let n = horizon * num_states * num_actions;
        if probs.len() != n {
            return Err(dimension(format!(
                "policy table has {} entries, expected {n}",
                probs.len()
            )));
        }
        for (k, row) in probs.chunks_mut(num_actions).enumerate() {
            validate_row(row, || {
                format!("pi_{}(.|s={})", k / num_states, k % num_states)
            })?;
        }
        Ok(Self {
            horizon,
            num_states,
            num_actions,
            probs,
        })
    }

    /// Policy whose row at `(t, s)` is `row(t, s)`.
    pub fn from_fn(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        mut row: impl FnMut(usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        let mut probs = Vec::with_capacity(horizon * num_states * num_actions);
        for t in 0..horizon {
            for s in 0..num_states {
                let r = row(t, s);
                if r.len() != num_actions {
                    return Err(dimension(format!("row ({t}, {s}) has length {}", r.len())));
                }
                probs.extend(r);
            }
        }
        Self::new(horizon, num_states, num_actions, probs)
    }

    /// Deterministic policy playing `action(t, s)`.
    pub fn deterministic(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        mut action: impl FnMut(usize, usize) -> usize,
    ) -> Result<Self> {
        Self::from_fn(horizon, num_states, num_actions, |t, s| {
            let mut r = vec![0.0; num_actions];
            r[action(t, s).min(num_actions - 1)] = 1.0;
            r
        })
    }

    pub fn uniform(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Self {
            horizon,
            num_states,
            num_actions,
            probs: vec![p; horizon * num_states * num_actions],
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn row(&self, t: usize, s: usize) -> &[f64] {
        let start = (t * self.num_states + s) * self.num_actions;
        &self.probs[start..start + self.num_actions]
    }

    #[inline]
    pub fn prob(&self, t: usize, s: usize, a: usize) -> f64 {
        self.probs[(t * self.num_states + s) * self.num_actions + a]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyJson {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    probs: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<PolicyJson> for MarkovPolicy {
    type Error = Error;

    fn try_from(j: PolicyJson) -> Result<Self> {
        let flat = j.probs.into_iter().flatten().flatten().collect();
        MarkovPolicy::new(j.horizon, j.num_states, j.num_actions, flat)
    }
}

impl From<MarkovPolicy> for PolicyJson {
    fn from(p: MarkovPolicy) -> Self {
        let probs = p
            .probs
            .chunks(p.num_states * p.num_actions)
            .map(|layer| layer.chunks(p.num_actions).map(<[f64]>::to_vec).collect())
            .collect();
        PolicyJson {
            horizon: p.horizon,
            num_states: p.num_states,
            num_actions: p.num_actions,
            probs,
        }
    }
}

/// A length-H sequence of (state, action) pairs. Rewards are never recorded.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory {
    pub steps: Vec<(usize, usize)>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    #[inline]
    pub fn state(&self, t: usize) -> usize {
        self.steps[t].0
    }

    #[inline]
    pub fn action(&self, t: usize) -> usize {
        self.steps[t].1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureKind {
    Exact,
    Empirical,
    /// Prefix-weighted measures; layers may carry less than unit mass.
    Weighted,
}

/// Per-step state-action measures `d_t(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMeasures {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    kind: MeasureKind,
    // [t][s][a]
    d: Vec<f64>,
}

impl OccupancyMeasures {
    pub fn new(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        kind: MeasureKind,
        d: Vec<f64>,
    ) -> Result<Self> {
        let n = horizon * num_states * num_actions;
        if d.len() != n {
            return Err(dimension(format!(
                "measure table has {} entries, expected {n}",
                d.len()
            )));
        }
        if let Some(x) = d.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::Invalid(format!(
                "negative or non-finite measure entry {x}"
            )));
        }
        let m = Self {
            horizon,
            num_states,
            num_actions,
            kind,
            d,
        };
        for t in 0..horizon {
            let sum = m.layer_sum(t);
            let ok = match kind {
                MeasureKind::Exact | MeasureKind::Empirical => (sum - 1.0).abs() <= PROB_TOL,
                MeasureKind::Weighted => sum <= 1.0 + PROB_TOL,
            };
            if !ok {
                return Err(Error::Invalid(format!(
                    "{kind:?} measure layer {t} sums to {sum}"
                )));
            }
        }
        Ok(m)
    }

    pub(crate) fn new_unchecked(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        kind: MeasureKind,
        d: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(d.len(), horizon * num_states * num_actions);
        Self {
            horizon,
            num_states,
            num_actions,
            kind,
            d,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.d
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.d
    }

    #[inline]
    pub fn get(&self, t: usize, s: usize, a: usize) -> f64 {
        self.d[(t * self.num_states + s) * self.num_actions + a]
    }

    pub fn layer(&self, t: usize) -> &[f64] {
        let w = self.num_states * self.num_actions;
        &self.d[t * w..(t + 1) * w]
    }

    pub fn layer_sum(&self, t: usize) -> f64 {
        self.layer(t).iter().sum()
    }

    /// Marginal over states at step `t`.
    pub fn state_marginal(&self, t: usize) -> Vec<f64> {
        self.layer(t)
            .chunks(self.num_actions)
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn same_shape(&self, other: &OccupancyMeasures) -> bool {
        self.horizon == other.horizon
            && self.num_states == other.num_states
            && self.num_actions == other.num_actions
    }
}

/// Samples one trajectory by ancestral sampling.
///
/// Step `t` draws from ChaCha8 stream `t` under key `seed`: first the state
/// (only at `t = 0`), then the action, then the next state.
pub fn rollout(mdp: &TabularMdp, policy: &MarkovPolicy, seed: u64) -> Result<Trajectory> {
    mdp.check_policy(policy)?;
    Ok(rollout_unchecked(mdp, policy, seed))
}

pub(crate) fn rollout_unchecked(mdp: &TabularMdp, policy: &MarkovPolicy, seed: u64) -> Trajectory {
    let h = mdp.horizon();
    let mut steps = Vec::with_capacity(h);
    let mut s = 0;
    for t in 0..h {
        let mut rng = stream_rng(seed, t as u64);
        if t == 0 {
            s = sample_categorical(&mut rng, mdp.rho());
        }
        let a = sample_categorical(&mut rng, policy.row(t, s));
        steps.push((s, a));
        if t + 1 < h {
            s = sample_categorical(&mut rng, mdp.transition(t, s, a));
        }
    }
    Trajectory { steps }
}

/// Forward recursion `d_{t+1}(s') = sum_{s,a} d_t(s,a) P_t(s'|s,a)`.
pub fn exact_occupancy(mdp: &TabularMdp, policy: &MarkovPolicy) -> Result<OccupancyMeasures> {
    mdp.check_policy(policy)?;
    let (h, ns, na) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut d = vec![0.0; h * ns * na];
    let mut state = mdp.rho().to_vec();
    for t in 0..h {
        let base = t * ns * na;
        for s in 0..ns {
            if state[s] == 0.0 {
                continue;
            }
            for (a, p) in policy.row(t, s).iter().enumerate() {
                d[base + s * na + a] = state[s] * p;
            }
        }
        if t + 1 < h {
            let mut next = vec![0.0; ns];
            for s in 0..ns {
                for a in 0..na {
                    let mass = d[base + s * na + a];
                    if mass == 0.0 {
                        continue;
                    }
                    for (sp, p) in mdp.transition(t, s, a).iter().enumerate() {
                        next[sp] += mass * p;
                    }
                }
            }
            state = next;
        }
    }
    Ok(OccupancyMeasures::new_unchecked(
        h,
        ns,
        na,
        MeasureKind::Exact,
        d,
    ))
}

/// Tolerance for the forward/backward value cross-check.
pub const VALUE_CROSS_CHECK_TOL: f64 = 1e-10;

/// Expected return `J(pi)`.
///
/// Computed both as `sum_t <d_t, r_t>` and by backward induction over
/// Q-values; the two must agree to [`VALUE_CROSS_CHECK_TOL`].
pub fn policy_value(mdp: &TabularMdp, policy: &MarkovPolicy) -> Result<f64> {
    let occ = exact_occupancy(mdp, policy)?;
    let forward = value_from_occupancy(mdp, &occ);
    let backward = backward_value(mdp, policy);
    assert!(
        (forward - backward).abs() <= VALUE_CROSS_CHECK_TOL,
        "policy value cross-check failed: forward {forward} vs backward {backward}"
    );
    Ok(forward)
}

/// `sum_t sum_{s,a} d_t(s,a) r_t(s,a)`.
pub fn value_from_occupancy(mdp: &TabularMdp, occ: &OccupancyMeasures) -> f64 {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut v = 0.0;
    for t in 0..mdp.horizon() {
        for s in 0..ns {
            for a in 0..na {
                v += occ.get(t, s, a) * mdp.reward(t, s, a);
            }
        }
    }
    v
}

fn backward_value(mdp: &TabularMdp, policy: &MarkovPolicy) -> f64 {
    let (h, ns, na) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut v_next = vec![0.0; ns];
    for t in (0..h).rev() {
        let mut v = vec![0.0; ns];
        for s in 0..ns {
            let mut vs = 0.0;
            for a in 0..na {
                let mut q = mdp.reward(t, s, a);
                if t + 1 < h {
                    q += mdp
                        .transition(t, s, a)
                        .iter()
                        .zip(&v_next)
                        .map(|(p, w)| p * w)
                        .sum::<f64>();
                }
                vs += policy.prob(t, s, a) * q;
            }
            v[s] = vs;
        }
        v_next = v;
    }
    mdp.rho().iter().zip(&v_next).map(|(p, v)| p * v).sum()
}

/// `J(expert) - J(learner)`.
pub fn imitation_gap(
    mdp: &TabularMdp,
    expert: &MarkovPolicy,
    learner: &MarkovPolicy,
) -> Result<f64> {
    Ok(policy_value(mdp, expert)? - policy_value(mdp, learner)?)
}

/// `sum_{s,a} |p_t(s,a) - q_t(s,a)|`, twice the total variation when both
/// layers are probability measures.
pub fn l1_layer_distance(p: &OccupancyMeasures, q: &OccupancyMeasures, t: usize) -> Result<f64> {
    if !p.same_shape(q) {
        return Err(dimension("measures have different shapes"));
    }
    if t >= p.horizon() {
        return Err(dimension(format!(
            "step {t} outside horizon {}",
            p.horizon()
        )));
    }
    Ok(l1(p.layer(t), q.layer(t)))
}

#[inline]
pub(crate) fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}
