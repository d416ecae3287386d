//! Hard instances for imitation learners and their experts.
//!
//! * [`make_mm_lb`]: two-state instance on which empirical moment matching
//!   pays `H / sqrt(N)`.
//! * [`make_bc_lb`]: good/bad-state instance on which any offline learner
//!   pays `|S| H^2 / N`.
//! * [`make_two_state_uniform`] and [`make_fan`]: the small motivating MDPs.
//! * [`MixtureSampler`]: fair coin over the two lower-bound instances.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::mdp::{validate_row, MarkovPolicy, TabularMdp};
use crate::rng::{derive_seed, seeded_rng};

/// An MDP together with its expert.
#[derive(Debug, Clone)]
pub struct Instance {
    pub mdp: TabularMdp,
    pub expert: MarkovPolicy,
}

/// Two states, two actions. At step 0 every action leads to the uniform
/// distribution except action 1 at state 1, which stays at state 1; from
/// step 1 on every state is absorbing. Reward 1 at state 0 for steps >= 1.
/// The initial distribution puts `1/sqrt(n_exp)` on state 1. The expert
/// always plays action 0.
pub fn make_mm_lb(horizon: usize, n_exp: usize) -> Result<Instance> {
    if horizon < 4 {
        return Err(config(format!(
            "mm-lb needs H >= 4 for the moment-matching lower bound to hold, got H = {horizon}"
        )));
    }
    if n_exp == 0 {
        return Err(config("mm-lb needs n_exp >= 1"));
    }
    let q = 1.0 / (n_exp as f64).sqrt();
    let rho = vec![1.0 - q, q];
    let (ns, na) = (2, 2);
    let mut transitions = Vec::with_capacity((horizon - 1) * ns * na * ns);
    for t in 0..horizon - 1 {
        for s in 0..ns {
            for a in 0..na {
                let row = match (t, s, a) {
                    (0, 1, 1) => [0.0, 1.0],
                    (0, _, _) => [0.5, 0.5],
                    (_, 0, _) => [1.0, 0.0],
                    _ => [0.0, 1.0],
                };
                transitions.extend(row);
            }
        }
    }
    let mut rewards = vec![0.0; horizon * ns * na];
    for t in 1..horizon {
        for a in 0..na {
            rewards[(t * ns) * na + a] = 1.0;
        }
    }
    let mdp = TabularMdp::new(horizon, ns, na, rho, transitions, rewards)?;
    let expert = MarkovPolicy::deterministic(horizon, ns, na, |_, _| 0)?;
    Ok(Instance { mdp, expert })
}

/// Initial/reset distribution for [`make_bc_lb`] when none is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ResetKind {
    /// Uniform over the good states.
    #[default]
    Uniform,
    /// One heavy state; every other good state has mass `1/(n_exp + 1)`.
    Rare,
    Explicit(Vec<f64>),
}

/// Reset distribution with `num_good - 1` rare states of mass `1/(n_exp+1)`
/// and the rest on good state 0. Each rare state then goes unobserved in `n_exp`
/// expert trajectories with probability about `1/e`, which makes the missing
/// mass decay as `1/n_exp`.
pub fn rare_reset(num_good: usize, n_exp: usize) -> Result<Vec<f64>> {
    if num_good < 2 {
        return Err(config("rare reset needs at least two good states"));
    }
    let q = 1.0 / (n_exp as f64 + 1.0);
    let heavy = 1.0 - (num_good - 1) as f64 * q;
    if heavy < q {
        return Err(config(format!(
            "rare reset with {num_good} good states needs n_exp >= {}",
            2 * num_good - 2
        )));
    }
    let mut row = vec![q; num_good];
    row[0] = heavy;
    Ok(row)
}

impl ResetKind {
    pub fn resolve(&self, num_good: usize, n_exp: usize) -> Result<Option<Vec<f64>>> {
        match self {
            ResetKind::Uniform => Ok(None),
            ResetKind::Rare => rare_reset(num_good, n_exp).map(Some),
            ResetKind::Explicit(v) => Ok(Some(v.clone())),
        }
    }
}

/// Good-action index of each good state in a [`make_bc_lb`] instance built
/// with `seed`.
pub fn bc_lb_good_actions(num_states: usize, num_actions: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeded_rng(derive_seed(seed, &[0xBC]));
    (0..num_states - 1)
        .map(|_| rng.gen_range(0..num_actions))
        .collect()
}

/// State `S - 1` is the absorbing zero-reward bad state. Every good state has
/// one good action (index drawn per state from `seed`) that pays 1 and resets
/// to `reset_dist`; all other actions lead to the bad state and pay 0. The
/// episode also starts from `reset_dist`. The expert always plays the good
/// action.
pub fn make_bc_lb(
    num_states: usize,
    horizon: usize,
    num_actions: usize,
    reset_dist: Option<Vec<f64>>,
    seed: u64,
) -> Result<Instance> {
    if num_states < 2 || num_actions < 2 || horizon == 0 {
        return Err(config("bc-lb needs S >= 2, A >= 2 and H >= 1"));
    }
    let num_good = num_states - 1;
    let mut reset = match reset_dist {
        Some(r) => r,
        None => vec![1.0 / num_good as f64; num_good],
    };
    if reset.len() != num_good {
        return Err(config(format!(
            "reset distribution has length {}, expected {num_good}",
            reset.len()
        )));
    }
    validate_row(&mut reset, || "bc-lb reset distribution".to_string())?;
    let good = bc_lb_good_actions(num_states, num_actions, seed);
    let bad = num_states - 1;

    let mut rho = reset.clone();
    rho.push(0.0);
    let mut bad_row = vec![0.0; num_states];
    bad_row[bad] = 1.0;

    let mut transitions =
        Vec::with_capacity(horizon.saturating_sub(1) * num_states * num_actions * num_states);
    for _ in 0..horizon.saturating_sub(1) {
        for s in 0..num_states {
            for a in 0..num_actions {
                if s != bad && a == good[s] {
                    transitions.extend_from_slice(&rho);
                } else {
                    transitions.extend_from_slice(&bad_row);
                }
            }
        }
    }
    let mut rewards = vec![0.0; horizon * num_states * num_actions];
    for t in 0..horizon {
        for (s, &g) in good.iter().enumerate() {
            rewards[(t * num_states + s) * num_actions + g] = 1.0;
        }
    }
    let mdp = TabularMdp::new(horizon, num_states, num_actions, rho, transitions, rewards)?;
    let expert = MarkovPolicy::deterministic(horizon, num_states, num_actions, |_, s| {
        if s == bad {
            0
        } else {
            good[s]
        }
    })?;
    Ok(Instance { mdp, expert })
}

/// Two states, two actions. Action 0 leads to the uniform distribution from
/// either state; action 1 stays at state 1 but aliases action 0 at state 0.
/// Reward 1 at state 0 for steps >= 1. Starts uniform; the expert plays 0.
pub fn make_two_state_uniform(horizon: usize) -> Result<Instance> {
    if horizon == 0 {
        return Err(config("horizon must be positive"));
    }
    let (ns, na) = (2, 2);
    let mut transitions = Vec::new();
    for _ in 0..horizon - 1 {
        transitions.extend([0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.0, 1.0]);
    }
    let mut rewards = vec![0.0; horizon * ns * na];
    for t in 1..horizon {
        rewards[t * ns * na] = 1.0;
        rewards[t * ns * na + 1] = 1.0;
    }
    let mdp = TabularMdp::new(horizon, ns, na, vec![0.5, 0.5], transitions, rewards)?;
    let expert = MarkovPolicy::deterministic(horizon, ns, na, |_, _| 0)?;
    Ok(Instance { mdp, expert })
}

/// `n` top-row states plus a sink (index `n`). Green (action 0) at a top
/// state pays 1 and resets uniformly over the top row; red (action 1) leads
/// to the sink. The sink is absorbing and pays nothing. The expert plays
/// green.
pub fn make_fan(n: usize, horizon: usize) -> Result<Instance> {
    if n < 2 || horizon == 0 {
        return Err(config("fan needs n >= 2 and H >= 1"));
    }
    let (ns, na) = (n + 1, 2);
    let mut top = vec![1.0 / n as f64; n];
    top.push(0.0);
    let mut sink = vec![0.0; ns];
    sink[n] = 1.0;
    let mut transitions = Vec::new();
    for _ in 0..horizon - 1 {
        for s in 0..ns {
            for a in 0..na {
                if s < n && a == 0 {
                    transitions.extend_from_slice(&top);
                } else {
                    transitions.extend_from_slice(&sink);
                }
            }
        }
    }
    let mut rewards = vec![0.0; horizon * ns * na];
    for t in 0..horizon {
        for s in 0..n {
            rewards[(t * ns + s) * na] = 1.0;
        }
    }
    let mdp = TabularMdp::new(horizon, ns, na, top, transitions, rewards)?;
    let expert = MarkovPolicy::deterministic(horizon, ns, na, |_, _| 0)?;
    Ok(Instance { mdp, expert })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    #[serde(rename = "mm-lb")]
    MmLb,
    #[serde(rename = "bc-lb")]
    BcLb,
}

impl Component {
    pub fn as_str(self) -> &'static str {
        match self {
            Component::MmLb => "mm-lb",
            Component::BcLb => "bc-lb",
        }
    }
}

/// Parameters of both mixture components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub horizon: usize,
    pub n_exp: usize,
    pub bc_states: usize,
    pub bc_actions: usize,
    #[serde(default)]
    pub bc_reset: ResetKind,
}

#[derive(Debug, Clone)]
pub struct MixtureDraw {
    pub index: u64,
    pub component: Component,
    pub instance: Instance,
}

/// Fair coin over mm-lb and bc-lb. Draw `i` is a pure function of
/// `(seed, i)`.
#[derive(Debug, Clone)]
pub struct MixtureSampler {
    seed: u64,
    params: MixtureParams,
}

pub fn make_mixture_sampler(seed: u64, params: MixtureParams) -> MixtureSampler {
    MixtureSampler { seed, params }
}

impl MixtureSampler {
    pub fn component(&self, index: u64) -> Component {
        let u: f64 = seeded_rng(derive_seed(self.seed, &[0xC014, index])).gen();
        if u < 0.5 {
            Component::MmLb
        } else {
            Component::BcLb
        }
    }

    /// Realizes draw `index`; the bc-lb component is built with
    /// `instance_seed`.
    pub fn draw_with(&self, index: u64, instance_seed: u64) -> Result<MixtureDraw> {
        let p = &self.params;
        let component = self.component(index);
        let instance = match component {
            Component::MmLb => make_mm_lb(p.horizon, p.n_exp)?,
            Component::BcLb => {
                let reset = p.bc_reset.resolve(p.bc_states - 1, p.n_exp)?;
                make_bc_lb(p.bc_states, p.horizon, p.bc_actions, reset, instance_seed)?
            }
        };
        Ok(MixtureDraw {
            index,
            component,
            instance,
        })
    }

    pub fn draw(&self, index: u64) -> Result<MixtureDraw> {
        self.draw_with(index, derive_seed(self.seed, &[0x1257, index]))
    }
}

/// Row-wise mixture `(1 - gamma) * policy + gamma * deviation`. Each row stays
/// within total variation `gamma` of the base policy.
pub fn perturb_policy(
    policy: &MarkovPolicy,
    gamma: f64,
    deviation: &MarkovPolicy,
) -> Result<MarkovPolicy> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(config(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    if policy.horizon() != deviation.horizon()
        || policy.num_states() != deviation.num_states()
        || policy.num_actions() != deviation.num_actions()
    {
        return Err(crate::error::dimension(
            "policy and deviation differ in shape",
        ));
    }
    MarkovPolicy::from_fn(
        policy.horizon(),
        policy.num_states(),
        policy.num_actions(),
        |t, s| {
            policy
                .row(t, s)
                .iter()
                .zip(deviation.row(t, s))
                .map(|(p, q)| (1.0 - gamma) * p + gamma * q)
                .collect()
        },
    )
}

/// Random MDP for property tests. About a fifth of the rows are
/// deterministic, the rest are Dirichlet(1); rewards are uniform on
/// `[0, 1]`.
pub fn random_mdp(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    seed: u64,
) -> Result<TabularMdp> {
    if num_states == 0 || num_actions == 0 || horizon == 0 {
        return Err(config("random MDP needs positive dimensions"));
    }
    let mut rng = seeded_rng(derive_seed(seed, &[0x4D44]));
    let random_row = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        if rng.gen_bool(0.2) {
            let mut row = vec![0.0; num_states];
            row[rng.gen_range(0..num_states)] = 1.0;
            return row;
        }
        let w: Vec<f64> = (0..num_states)
            .map(|_| -(1.0 - rng.gen::<f64>()).ln())
            .collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    };
    let rho = random_row(&mut rng);
    let mut transitions = Vec::with_capacity((horizon - 1) * num_states * num_actions * num_states);
    for _ in 0..(horizon - 1) * num_states * num_actions {
        transitions.extend(random_row(&mut rng));
    }
    let rewards = (0..horizon * num_states * num_actions)
        .map(|_| rng.gen::<f64>())
        .collect();
    TabularMdp::new(horizon, num_states, num_actions, rho, transitions, rewards)
}

/// Random stochastic policy; about a quarter of the rows are deterministic.
pub fn random_policy(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    seed: u64,
) -> Result<MarkovPolicy> {
    let mut rng = seeded_rng(derive_seed(seed, &[0x5011]));
    MarkovPolicy::from_fn(horizon, num_states, num_actions, |_, _| {
        let mut row = vec![0.0; num_actions];
        if rng.gen_bool(0.25) {
            row[rng.gen_range(0..num_actions)] = 1.0;
            return row;
        }
        let w: Vec<f64> = (0..num_actions)
            .map(|_| -(1.0 - rng.gen::<f64>()).ln())
            .collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{exact_occupancy, policy_value};

    #[test]
    fn mm_lb_shape() {
        let inst = make_mm_lb(4, 100).unwrap();
        let m = &inst.mdp;
        assert!((m.rho()[0] - 0.9).abs() < 1e-15 && (m.rho()[1] - 0.1).abs() < 1e-15);
        for s in 0..2 {
            for a in 0..2 {
                assert_eq!(m.reward(0, s, a), 0.0);
            }
        }
        assert_eq!(m.transition(0, 1, 1), &[0.0, 1.0]);
        assert_eq!(m.transition(0, 1, 0), &[0.5, 0.5]);
        assert_eq!(m.transition(0, 0, 1), &[0.5, 0.5]);
        for t in 1..3 {
            for s in 0..2 {
                for a in 0..2 {
                    assert_eq!(m.transition(t, s, a)[s], 1.0, "absorbing at t={t}");
                }
            }
        }
        assert!((policy_value(m, &inst.expert).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn mm_lb_rejects_short_horizon() {
        let err = make_mm_lb(3, 100).unwrap_err().to_string();
        assert!(err.contains("H >= 4"), "{err}");
    }

    #[test]
    fn bc_lb_values() {
        let inst = make_bc_lb(3, 2, 2, None, 11).unwrap();
        assert!((policy_value(&inst.mdp, &inst.expert).unwrap() - 2.0).abs() < 1e-12);

        let inst = make_bc_lb(3, 3, 2, None, 5).unwrap();
        let half = MarkovPolicy::uniform(3, 3, 2);
        assert!((policy_value(&inst.mdp, &half).unwrap() - 0.875).abs() < 1e-12);

        let good = bc_lb_good_actions(5, 3, 2);
        let inst = make_bc_lb(5, 4, 3, None, 2).unwrap();
        let always_bad =
            MarkovPolicy::deterministic(4, 5, 3, |_, s| if s < 4 { (good[s] + 1) % 3 } else { 0 })
                .unwrap();
        assert_eq!(policy_value(&inst.mdp, &always_bad).unwrap(), 0.0);
    }

    #[test]
    fn bc_lb_good_actions_vary_with_seed() {
        let patterns: std::collections::HashSet<Vec<usize>> =
            (0..20).map(|seed| bc_lb_good_actions(9, 2, seed)).collect();
        assert!(patterns.len() > 1);
    }

    #[test]
    fn bc_lb_rejects_bad_reset() {
        assert!(make_bc_lb(3, 2, 2, Some(vec![0.3, 0.3]), 0).is_err());
        assert!(make_bc_lb(3, 2, 2, Some(vec![1.0]), 0).is_err());
        assert!(make_bc_lb(3, 2, 2, Some(vec![0.25, 0.75]), 0).is_ok());
    }

    #[test]
    fn rare_reset_masses() {
        let r = rare_reset(19, 4096).unwrap();
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((r[5] - 1.0 / 4097.0).abs() < 1e-15);
        assert!(rare_reset(19, 10).is_err());
    }

    #[test]
    fn two_state_uniform_values() {
        let inst = make_two_state_uniform(2).unwrap();
        assert!((policy_value(&inst.mdp, &inst.expert).unwrap() - 0.5).abs() < 1e-12);
        let occ = exact_occupancy(&inst.mdp, &inst.expert).unwrap();
        assert_eq!(occ.state_marginal(1), vec![0.5, 0.5]);
        let inst = make_two_state_uniform(1).unwrap();
        assert_eq!(
            policy_value(&inst.mdp, &MarkovPolicy::uniform(1, 2, 2)).unwrap(),
            0.0
        );
    }

    #[test]
    fn fan_values() {
        let inst = make_fan(4, 3).unwrap();
        assert!((policy_value(&inst.mdp, &inst.expert).unwrap() - 3.0).abs() < 1e-12);
        let red = MarkovPolicy::deterministic(3, 5, 2, |_, _| 1).unwrap();
        assert_eq!(policy_value(&inst.mdp, &red).unwrap(), 0.0);
        let inst = make_fan(2, 1).unwrap();
        assert!((policy_value(&inst.mdp, &inst.expert).unwrap() - 1.0).abs() < 1e-12);
    }

    fn mixture_params() -> MixtureParams {
        MixtureParams {
            horizon: 4,
            n_exp: 100,
            bc_states: 5,
            bc_actions: 2,
            bc_reset: ResetKind::Uniform,
        }
    }

    #[test]
    fn mixture_is_deterministic_and_fair() {
        let sampler = make_mixture_sampler(77, mixture_params());
        let a = sampler.draw(3).unwrap();
        let b = sampler.draw(3).unwrap();
        assert_eq!(a.component, b.component);
        assert_eq!(a.instance.mdp, b.instance.mdp);
        let n = 10_000;
        let mm = (0..n)
            .filter(|&i| sampler.component(i) == Component::MmLb)
            .count();
        assert!((mm as f64 / n as f64 - 0.5).abs() <= 0.015);
    }

    #[test]
    fn perturb_examples() {
        let base = MarkovPolicy::deterministic(1, 1, 2, |_, _| 0).unwrap();
        let dev = MarkovPolicy::deterministic(1, 1, 2, |_, _| 1).unwrap();
        assert_eq!(perturb_policy(&base, 0.0, &dev).unwrap(), base);
        assert_eq!(perturb_policy(&base, 1.0, &dev).unwrap(), dev);
        let p = perturb_policy(&base, 0.3, &dev).unwrap();
        assert!((p.prob(0, 0, 0) - 0.7).abs() < 1e-15 && (p.prob(0, 0, 1) - 0.3).abs() < 1e-15);
        assert!(perturb_policy(&base, 1.5, &dev).is_err());
    }
}
