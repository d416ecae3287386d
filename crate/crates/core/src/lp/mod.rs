//! L1 occupancy matching over the occupancy polytope.
//!
//! Moment matching against the class of all 1-bounded discriminators is the
//! per-step L1 distance between occupancy measures, so the learner's problem
//! `min_pi sum_t ||d_t^pi - g_t||_1` becomes a linear program in the
//! occupancies. The deviation from the target is split as
//! `d = g + u - v` with `u >= 0` and `0 <= v <= g`, which keeps `d >= 0`
//! implicit and leaves only the flow constraints as rows.

pub mod simplex;

use serde::{Deserialize, Serialize};

use crate::error::{dimension, Error, Result};
use crate::mdp::{
    exact_occupancy, l1, MarkovPolicy, MeasureKind, OccupancyMeasures, TabularMdp, PROB_TOL,
};
use simplex::{LinearProgram, SimplexOptions, UNBOUNDED};

pub use simplex::LpStatus;

/// Largest flow residual accepted from the solver or by [`extract_policy`].
pub const FLOW_TOL: f64 = 1e-8;

/// Largest layer sum accepted in a [`MatchTarget`]. Hybrid replay targets
/// add a replayed part and an empirical part, each carrying at most unit
/// mass.
pub const MAX_TARGET_LAYER_SUM: f64 = 2.0;

/// Measure family `g_t(s, a)` to match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchTarget {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    g: Vec<f64>,
}

impl MatchTarget {
    pub fn new(horizon: usize, num_states: usize, num_actions: usize, g: Vec<f64>) -> Result<Self> {
        if g.len() != horizon * num_states * num_actions {
            return Err(dimension(format!(
                "target has {} entries, expected {}",
                g.len(),
                horizon * num_states * num_actions
            )));
        }
        if let Some(x) = g.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::Invalid(format!(
                "negative or non-finite target entry {x}"
            )));
        }
        let w = num_states * num_actions;
        for t in 0..horizon {
            let sum: f64 = g[t * w..(t + 1) * w].iter().sum();
            if sum > MAX_TARGET_LAYER_SUM + PROB_TOL {
                return Err(Error::Invalid(format!(
                    "target layer {t} carries mass {sum}"
                )));
            }
        }
        Ok(Self {
            horizon,
            num_states,
            num_actions,
            g,
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

    pub fn as_slice(&self) -> &[f64] {
        &self.g
    }

    #[inline]
    pub fn get(&self, t: usize, s: usize, a: usize) -> f64 {
        self.g[(t * self.num_states + s) * self.num_actions + a]
    }

    pub fn layer(&self, t: usize) -> &[f64] {
        let w = self.num_states * self.num_actions;
        &self.g[t * w..(t + 1) * w]
    }

    pub fn layer_sum(&self, t: usize) -> f64 {
        self.layer(t).iter().sum()
    }

    /// `sum_t ||d_t - g_t||_1`.
    pub fn distance(&self, occ: &OccupancyMeasures) -> Result<f64> {
        if occ.horizon() != self.horizon
            || occ.num_states() != self.num_states
            || occ.num_actions() != self.num_actions
        {
            return Err(dimension("measures and target differ in shape"));
        }
        Ok(l1(occ.as_slice(), &self.g))
    }

    fn check_mdp(&self, mdp: &TabularMdp) -> Result<()> {
        if mdp.horizon() != self.horizon
            || mdp.num_states() != self.num_states
            || mdp.num_actions() != self.num_actions
        {
            return Err(dimension(format!(
                "target is {}x{}x{} but the MDP is {}x{}x{}",
                self.horizon,
                self.num_states,
                self.num_actions,
                mdp.horizon(),
                mdp.num_states(),
                mdp.num_actions()
            )));
        }
        Ok(())
    }
}

impl From<&OccupancyMeasures> for MatchTarget {
    fn from(occ: &OccupancyMeasures) -> Self {
        Self {
            horizon: occ.horizon(),
            num_states: occ.num_states(),
            num_actions: occ.num_actions(),
            g: occ.as_slice().to_vec(),
        }
    }
}

/// Result of [`solve_occupancy_match`]. `occupancies` is present only when
/// the solve is optimal.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub occupancies: Option<OccupancyMeasures>,
    pub objective: f64,
    pub iterations: usize,
    pub message: Option<String>,
}

impl LpSolution {
    /// Occupancies of an optimal solve, or a solver error.
    pub fn into_optimal(self) -> Result<(OccupancyMeasures, f64)> {
        match (self.status, self.occupancies) {
            (LpStatus::Optimal, Some(occ)) => Ok((occ, self.objective)),
            (status, _) => Err(Error::Solver(format!(
                "{status:?}: {}",
                self.message.unwrap_or_else(|| "no detail".into())
            ))),
        }
    }

    fn failed(status: LpStatus, iterations: usize, message: String) -> Self {
        Self {
            status,
            occupancies: None,
            objective: f64::NAN,
            iterations,
            message: Some(message),
        }
    }
}

/// Largest absolute residual of the initial-distribution and flow
/// constraints.
pub fn flow_violation(mdp: &TabularMdp, occ: &OccupancyMeasures) -> Result<f64> {
    if occ.horizon() != mdp.horizon()
        || occ.num_states() != mdp.num_states()
        || occ.num_actions() != mdp.num_actions()
    {
        return Err(dimension("measures and MDP differ in shape"));
    }
    let (h, ns, na) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut worst: f64 = 0.0;
    let mut inflow = mdp.rho().to_vec();
    for t in 0..h {
        let marg = occ.state_marginal(t);
        for s in 0..ns {
            worst = worst.max((marg[s] - inflow[s]).abs());
        }
        if t + 1 < h {
            inflow = vec![0.0; ns];
            for s in 0..ns {
                for a in 0..na {
                    let m = occ.get(t, s, a);
                    if m != 0.0 {
                        for (sp, p) in mdp.transition(t, s, a).iter().enumerate() {
                            inflow[sp] += m * p;
                        }
                    }
                }
            }
        }
    }
    Ok(worst)
}

/// Minimizes `sum_t ||d_t - g_t||_1` over all occupancy measures of the
/// MDP, i.e. over every Markov policy including stochastic ones.
pub fn solve_occupancy_match(mdp: &TabularMdp, target: &MatchTarget) -> Result<LpSolution> {
    solve_occupancy_match_with(mdp, target, &SimplexOptions::default())
}

pub fn solve_occupancy_match_with(
    mdp: &TabularMdp,
    target: &MatchTarget,
    opts: &SimplexOptions,
) -> Result<LpSolution> {
    target.check_mdp(mdp)?;
    let (h, ns, na) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let cells = h * ns * na;
    let cell = |t: usize, s: usize, a: usize| (t * ns + s) * na + a;
    // columns: u_0..u_{cells-1}, v_0..v_{cells-1}
    let mut upper = vec![UNBOUNDED; 2 * cells];
    upper[cells..].copy_from_slice(target.as_slice());
    let cost = vec![1.0; 2 * cells];

    let g = target.as_slice();
    let mut rows = Vec::with_capacity(h * ns);
    let mut rhs = Vec::with_capacity(h * ns);
    for t in 0..h {
        for sp in 0..ns {
            let mut row: Vec<(usize, f64)> = Vec::new();
            let mut b = 0.0;
            for a in 0..na {
                let c = cell(t, sp, a);
                row.push((c, 1.0));
                row.push((cells + c, -1.0));
                b -= g[c];
            }
            if t == 0 {
                b += mdp.rho()[sp];
            } else {
                for s in 0..ns {
                    for a in 0..na {
                        let p = mdp.transition(t - 1, s, a)[sp];
                        if p != 0.0 {
                            let c = cell(t - 1, s, a);
                            row.push((c, -p));
                            row.push((cells + c, p));
                            b += p * g[c];
                        }
                    }
                }
            }
            rows.push(row);
            rhs.push(b);
        }
    }

    let lp = LinearProgram {
        cost,
        upper,
        rows,
        rhs,
    };
    let res = simplex::solve(&lp, opts);
    if res.status != LpStatus::Optimal {
        return Ok(LpSolution::failed(
            res.status,
            res.iterations,
            res.message
                .unwrap_or_else(|| "solver did not reach optimality".into()),
        ));
    }

    let d: Vec<f64> = (0..cells)
        .map(|c| (g[c] + res.x[c] - res.x[cells + c]).max(0.0))
        .collect();
    let occ = OccupancyMeasures::new_unchecked(h, ns, na, MeasureKind::Exact, d);
    let violation = flow_violation(mdp, &occ)?;
    if violation > FLOW_TOL {
        return Ok(LpSolution::failed(
            LpStatus::NumericFailure,
            res.iterations,
            format!("flow residual {violation:e} exceeds {FLOW_TOL:e}"),
        ));
    }
    let objective = target.distance(&occ)?;
    if (objective - res.objective).abs() > FLOW_TOL {
        return Ok(LpSolution::failed(
            LpStatus::NumericFailure,
            res.iterations,
            format!(
                "objective {objective} not reproduced by the basis value {}",
                res.objective
            ),
        ));
    }
    Ok(LpSolution {
        status: LpStatus::Optimal,
        occupancies: Some(occ),
        objective,
        iterations: res.iterations,
        message: None,
    })
}

/// Smallest state mass at which [`extract_policy`] trusts the ratio
/// `d_t(s,a) / sum_a d_t(s,a)`.
pub const REACHABLE_TOL: f64 = 1e-12;

/// Policy whose occupancies are `occ`: normalizes each state's row, using
/// the uniform row where the state carries no mass.
pub fn extract_policy(occ: &OccupancyMeasures, mdp: &TabularMdp) -> Result<MarkovPolicy> {
    let violation = flow_violation(mdp, occ)?;
    if violation > FLOW_TOL {
        return Err(Error::Invalid(format!(
            "measures violate flow conservation by {violation:e}"
        )));
    }
    let na = mdp.num_actions();
    MarkovPolicy::from_fn(mdp.horizon(), mdp.num_states(), na, |t, s| {
        let row: Vec<f64> = (0..na).map(|a| occ.get(t, s, a)).collect();
        let mass: f64 = row.iter().sum();
        if mass >= REACHABLE_TOL {
            row.iter().map(|x| x / mass).collect()
        } else {
            vec![1.0 / na as f64; na]
        }
    })
}

/// Upper limit on the number of deterministic policies enumerated by
/// [`brute_force_match`].
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Exhaustive minimum of `sum_t ||d_t^pi - g_t||_1` over deterministic
/// Markov policies. The first minimizer in enumeration order is returned.
pub fn brute_force_match(mdp: &TabularMdp, target: &MatchTarget) -> Result<(MarkovPolicy, f64)> {
    target.check_mdp(mdp)?;
    let (h, ns, na) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let slots = (h * ns) as u32;
    let count = (na as u128).checked_pow(slots).unwrap_or(u128::MAX);
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::Config(format!(
            "brute force over {na}^{slots} deterministic policies exceeds the limit of {BRUTE_FORCE_LIMIT}"
        )));
    }
    let mut choice = vec![0usize; h * ns];
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let pol = MarkovPolicy::deterministic(h, ns, na, |t, s| choice[t * ns + s])?;
        let obj = target.distance(&exact_occupancy(mdp, &pol)?)?;
        if best.as_ref().map_or(true, |(_, b)| obj < *b) {
            best = Some((choice.clone(), obj));
        }
        // odometer increment
        let mut k = 0;
        while k < choice.len() {
            choice[k] += 1;
            if choice[k] < na {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
        if k == choice.len() {
            break;
        }
    }
    let (choice, obj) = best.expect("at least one deterministic policy");
    let pol = MarkovPolicy::deterministic(h, ns, na, |t, s| choice[t * ns + s])?;
    Ok((pol, obj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{make_fan, make_mm_lb, make_two_state_uniform};

    fn mm_lb_events_target(n: usize, h: usize, delta_prime: f64, delta: f64) -> MatchTarget {
        let ns = 2;
        let na = 2;
        let mut g = vec![0.0; h * ns * na];
        g[0] = 1.0 - delta_prime;
        g[2] = delta_prime;
        for t in 1..h {
            g[t * 4] = 0.5 - delta;
            g[t * 4 + 2] = 0.5 + delta;
        }
        let _ = n;
        MatchTarget::new(h, ns, na, g).unwrap()
    }

    #[test]
    fn exact_target_is_matched_exactly() {
        let inst = make_mm_lb(4, 100).unwrap();
        let occ = exact_occupancy(&inst.mdp, &inst.expert).unwrap();
        let sol = solve_occupancy_match(&inst.mdp, &MatchTarget::from(&occ)).unwrap();
        let (d, obj) = sol.into_optimal().unwrap();
        assert!(obj.abs() < 1e-9);
        assert!(l1(d.as_slice(), occ.as_slice()) < 1e-9);
    }

    #[test]
    fn deviation_is_forced_by_skewed_target() {
        let inst = make_mm_lb(4, 100).unwrap();
        let target = mm_lb_events_target(100, 4, 0.08, 0.2);
        let (occ, _) = solve_occupancy_match(&inst.mdp, &target)
            .unwrap()
            .into_optimal()
            .unwrap();
        let pol = extract_policy(&occ, &inst.mdp).unwrap();
        assert!(
            (pol.prob(0, 1, 1) - 1.0).abs() < 1e-9,
            "{:?}",
            pol.row(0, 1)
        );
        let (bf, _) = brute_force_match(&inst.mdp, &target).unwrap();
        assert_eq!(bf.prob(0, 1, 1), 1.0);
    }

    #[test]
    fn extract_normalizes_and_defaults_to_uniform() {
        let inst = make_fan(2, 2).unwrap();
        let pol = MarkovPolicy::from_fn(2, 3, 2, |_, _| vec![0.5, 0.5]).unwrap();
        let occ = exact_occupancy(&inst.mdp, &pol).unwrap();
        let back = extract_policy(&occ, &inst.mdp).unwrap();
        assert_eq!(back.row(0, 0), &[0.5, 0.5]);
        // the sink is unreachable at step 0
        assert_eq!(back.row(0, 2), &[0.5, 0.5]);
    }

    #[test]
    fn extract_rejects_flow_violation() {
        let inst = make_two_state_uniform(3).unwrap();
        let mut d = exact_occupancy(&inst.mdp, &inst.expert).unwrap().into_vec();
        // layer 1 stays normalized but no longer follows from layer 0
        d[4] += 0.1;
        d[6] -= 0.1;
        let occ = OccupancyMeasures::new(3, 2, 2, MeasureKind::Exact, d).unwrap();
        assert!((flow_violation(&inst.mdp, &occ).unwrap() - 0.1).abs() < 1e-12);
        assert!(extract_policy(&occ, &inst.mdp).is_err());
    }

    #[test]
    fn brute_force_recovers_deterministic_policy() {
        let inst = make_two_state_uniform(3).unwrap();
        let pol = MarkovPolicy::deterministic(3, 2, 2, |t, s| (t + s) % 2).unwrap();
        let occ = exact_occupancy(&inst.mdp, &pol).unwrap();
        let (_, obj) = brute_force_match(&inst.mdp, &MatchTarget::from(&occ)).unwrap();
        assert_eq!(obj, 0.0);
    }

    #[test]
    fn brute_force_size_guard() {
        let inst = make_fan(6, 4).unwrap();
        let occ = exact_occupancy(&inst.mdp, &inst.expert).unwrap();
        assert!(matches!(
            brute_force_match(&inst.mdp, &MatchTarget::from(&occ)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn target_rejects_negative_entries() {
        assert!(MatchTarget::new(1, 1, 2, vec![-0.1, 0.5]).is_err());
        assert!(MatchTarget::new(1, 1, 2, vec![0.1]).is_err());
    }
}
