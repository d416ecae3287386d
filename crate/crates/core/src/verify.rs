//! Acceptance checks for the whole laboratory.
//!
//! Each `criterion_*` function runs one experiment family end to end and
//! returns a [`CriterionReport`] made of individual [`Check`]s. Thresholds
//! are fixed; only the amount of Monte Carlo work is scaled by [`Budget`].

use std::fmt;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::dataset::{
    empirical_occupancy, missing_mass, sample_dataset, split, Dataset, SplitConfig,
};
use crate::error::Result;
use crate::harness::{
    aggregate, conditional_gap_check, event_probe, fit_slope, run_experiment, EventCondition,
    ExperimentConfig, Family, FitOptions, Grid, InstanceParams, InstanceSpec, LearnerId,
    LearnerSpec, Learners, ResultRow, RowFilter, Seeds, XAxis,
};
use crate::instances::{
    make_bc_lb, make_fan, make_mixture_sampler, make_mm_lb, make_two_state_uniform, random_mdp,
    random_policy, Instance, MixtureParams, ResetKind,
};
use crate::learners::{
    bc_train, complement_exact, hybrid_from_parts, match_and_extract, membership_tabular, mm_train,
    prefix_weight, re_train, re_train_detailed, replay_exact, replay_exact_with, replay_mc,
    visit_weight, MembershipOracle, PrefixConvention, ReConfig, TieRule,
};
use crate::lp::{
    brute_force_match, extract_policy, flow_violation, solve_occupancy_match, MatchTarget,
    REACHABLE_TOL,
};
use crate::mdp::{
    exact_occupancy, l1, l1_layer_distance, policy_value, rollout, MarkovPolicy, TabularMdp,
};
use crate::rng::{derive_seed, seeded_rng};

/// Amount of Monte Carlo work per criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    /// Seeds per grid point of the scaling experiments.
    pub seeds: usize,
    /// Expert datasets for the event probes.
    pub datasets: usize,
    /// Random instances for the solver and estimator checks.
    pub instances: usize,
}

impl Budget {
    /// The sizes the thresholds were calibrated for.
    pub fn full() -> Self {
        Self {
            seeds: 500,
            datasets: 10_000,
            instances: 200,
        }
    }

    /// Smoke-test sizes; statistical checks may be noisy.
    pub fn quick() -> Self {
        Self {
            seeds: 20,
            datasets: 300,
            instances: 20,
        }
    }
}

/// One measured quantity against its target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub label: String,
    pub value: String,
    pub target: String,
    pub passed: bool,
}

impl Check {
    fn new(
        label: impl Into<String>,
        value: impl Into<String>,
        target: impl Into<String>,
        passed: bool,
    ) -> Self {
        Self {
            label: label.into(),
            value: value.into(),
            target: target.into(),
            passed,
        }
    }
}

/// Outcome of one criterion. `notes` carry supplementary measurements that
/// do not affect the verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionReport {
    pub id: u32,
    pub name: &'static str,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub seconds: f64,
}

impl CriterionReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let parts: Vec<String> = self
            .checks
            .iter()
            .map(|c| {
                format!(
                    "{}{} = {} (target {})",
                    if c.passed { "" } else { "!" },
                    c.label,
                    c.value,
                    c.target
                )
            })
            .collect();
        write!(
            f,
            "{verdict} [{}] {} ({:.1}s): {}",
            self.id,
            self.name,
            self.seconds,
            parts.join("; ")
        )
    }
}

fn report(
    id: u32,
    name: &'static str,
    f: impl FnOnce(&mut Vec<Check>, &mut Vec<String>) -> Result<()>,
) -> CriterionReport {
    let start = Instant::now();
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    if let Err(e) = f(&mut checks, &mut notes) {
        checks.push(Check::new("error", e.to_string(), "no error", false));
    }
    CriterionReport {
        id,
        name,
        checks,
        notes,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn in_range(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo && x <= hi
}

fn experiment(
    family: Family,
    params: InstanceParams,
    learners: &[LearnerId],
    horizon: Vec<usize>,
    n_exp: Vec<usize>,
    seeds: usize,
    base: u64,
) -> ExperimentConfig {
    ExperimentConfig {
        instance: InstanceSpec { family, params },
        learner: Learners::Many(learners.iter().map(|&l| LearnerSpec::new(l)).collect()),
        grid: Grid { horizon, n_exp },
        seeds: Seeds { count: seeds, base },
        output: None,
    }
}

fn fit_opts(b: &Budget) -> FitOptions {
    FitOptions {
        min_points: 3,
        min_seeds: b.seeds.min(100),
    }
}

fn failures(rows: &[ResultRow]) -> Check {
    let n = rows.iter().filter(|r| !r.is_ok()).count();
    Check::new("failed runs", n.to_string(), "0", n == 0)
}

/// Moment matching on mm-lb loses `H / sqrt(N)`: slope of the mean gap in
/// `N` near `-1/2`, computed single-threaded in under five minutes.
pub fn criterion_1(b: &Budget) -> CriterionReport {
    report(1, "MM lower-bound rate on mm-lb", |checks, notes| {
        let cfg = experiment(
            Family::MmLb,
            InstanceParams::default(),
            &[LearnerId::Mm],
            vec![8],
            vec![64, 256, 1024, 4096],
            b.seeds,
            1,
        );
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("thread pool");
        let start = Instant::now();
        let rows = pool.install(|| run_experiment(&cfg))?;
        let secs = start.elapsed().as_secs_f64();
        checks.push(failures(&rows));
        let fit = fit_slope(&rows, &RowFilter::new(), XAxis::NExp, fit_opts(b))?;
        checks.push(Check::new(
            "slope",
            format!("{:.3} +- {:.3}", fit.slope, fit.stderr),
            "[-0.65, -0.35]",
            in_range(fit.slope, -0.65, -0.35),
        ));
        checks.push(Check::new(
            "single-thread runtime",
            format!("{secs:.1}s"),
            "< 300s",
            secs < 300.0,
        ));
        for p in &fit.points {
            notes.push(format!(
                "N={} mean gap {:.5} (median {:.5}, n={})",
                p.x, p.mean, p.median, p.n
            ));
        }
        Ok(())
    })
}

/// Under E1, E2 and E3 on mm-lb (H=4, N=100) the moment-matching gap is
/// exactly `(H-1)/(2 sqrt(N)) = 0.15`; at least one such draw in the budget.
pub fn criterion_2(b: &Budget) -> CriterionReport {
    report(2, "conditional exactness on mm-lb", |checks, notes| {
        let r = conditional_gap_check(100, 4, b.datasets, 2, EventCondition::Literal)?;
        checks.push(Check::new(
            "conditioning draws",
            format!("{} of {}", r.conditioned, r.draws),
            ">= 1",
            r.conditioned >= 1,
        ));
        checks.push(Check::new(
            "exact gaps",
            format!(
                "{} of {} (max error {:.1e})",
                r.exact, r.conditioned, r.max_abs_error
            ),
            "all within 1e-9 of 0.15",
            r.exact == r.conditioned,
        ));
        let s = conditional_gap_check(100, 4, b.datasets, 2, EventCondition::Sufficient)?;
        notes.push(format!(
            "with E1 and delta >= 1/(2 sqrt N): {} conditioning draws, {} exact (max error {:.1e})",
            s.conditioned, s.exact, s.max_abs_error
        ));
        match make_mm_lb(3, 100) {
            Err(e) => notes.push(format!("H=3 rejected: {e}")),
            Ok(_) => checks.push(Check::new("H=3 rejected", "accepted", "rejected", false)),
        }
        Ok(())
    })
}

/// Event frequencies at N=400: `Pr(E2) >= 0.45` and
/// `Pr(E1, E2, E3) >= 0.02`.
pub fn criterion_3(b: &Budget) -> CriterionReport {
    report(3, "event probabilities on mm-lb", |checks, notes| {
        let f = event_probe(400, 4, b.datasets, 3)?;
        checks.push(Check::new(
            "Pr(E2)",
            format!("{:.4}", f.e2),
            ">= 0.45",
            f.e2 >= 0.45,
        ));
        checks.push(Check::new(
            "Pr(E1)",
            format!("{:.4}", f.e1),
            ">= 0.99",
            f.e1 >= 0.99,
        ));
        checks.push(Check::new(
            "Pr(E1 E2 E3)",
            format!("{:.5}", f.intersection),
            ">= 0.02",
            f.intersection >= 0.02,
        ));
        notes.push(format!(
            "Pr(E3) = {:.5}; Pr(E1, delta >= 1/(2 sqrt N)) = {:.4}",
            f.e3, f.sufficient
        ));
        Ok(())
    })
}

/// Behavioral cloning on bc-lb (S=20, A=2): gap ratio H=16 vs H=8 in [3, 5]
/// at N=4096, and slope in N within [-1.2, -0.8] at H=8.
pub fn criterion_4(b: &Budget) -> CriterionReport {
    report(
        4,
        "BC quadratic horizon and 1/N rate on bc-lb",
        |checks, notes| {
            let params = InstanceParams {
                states: 20,
                actions: 2,
                ..Default::default()
            };
            let ratio_rows = run_experiment(&experiment(
                Family::BcLb,
                params.clone(),
                &[LearnerId::Bc],
                vec![8, 16],
                vec![4096],
                b.seeds,
                4,
            ))?;
            checks.push(failures(&ratio_rows));
            let pts = aggregate(&ratio_rows, &RowFilter::new(), XAxis::Horizon);
            let ratio = pts[1].mean / pts[0].mean;
            checks.push(Check::new(
                "gap ratio H=16/H=8",
                format!("{ratio:.3}"),
                "[3, 5]",
                in_range(ratio, 3.0, 5.0),
            ));
            let rows = run_experiment(&experiment(
                Family::BcLb,
                params,
                &[LearnerId::Bc],
                vec![8],
                vec![256, 1024, 4096, 16384],
                b.seeds,
                5,
            ))?;
            checks.push(failures(&rows));
            let fit = fit_slope(&rows, &RowFilter::new(), XAxis::NExp, fit_opts(b))?;
            checks.push(Check::new(
                "slope",
                format!("{:.3} +- {:.3}", fit.slope, fit.stderr),
                "[-1.2, -0.8]",
                in_range(fit.slope, -1.2, -0.8),
            ));
            notes.push(format!(
                "means at H=8, 16 (N=4096): {:.5}, {:.5}",
                pts[0].mean, pts[1].mean
            ));
            Ok(())
        },
    )
}

/// Paired comparison of two learners on the same runs: mean and standard
/// error of `gap(a) - gap(b)`.
fn paired(rows: &[ResultRow], a: &str, b: &str, n_exp: usize) -> (f64, f64, usize) {
    let pick = |l: &str| -> Vec<(u64, f64)> {
        rows.iter()
            .filter(|r| r.learner == l && r.n_exp == n_exp && r.is_ok())
            .map(|r| (r.seed, r.gap))
            .collect()
    };
    let (xa, xb) = (pick(a), pick(b));
    let diffs: Vec<f64> = xa
        .iter()
        .filter_map(|(s, ga)| xb.iter().find(|(t, _)| t == s).map(|(_, gb)| ga - gb))
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt(), diffs.len())
}

/// Slope check on means that may vanish: positive means are fitted by OLS;
/// zeros are checked against the power-law envelope
/// `mean(N) <= mean(N0) (N/N0)^-0.8` (an all-zero tail has slope -inf).
fn decay_check(points: &[(usize, f64)], bound: f64) -> (String, bool) {
    if points.iter().all(|&(_, m)| m > 1e-12) {
        let xs: Vec<f64> = points.iter().map(|&(x, _)| (x as f64).ln()).collect();
        let ys: Vec<f64> = points.iter().map(|&(_, m)| m.ln()).collect();
        let (slope, _, se) = crate::harness::stats::ols(&xs, &ys);
        return (format!("{slope:.3} +- {se:.3}"), slope <= bound);
    }
    let (x0, m0) = points[0];
    let ok = points
        .iter()
        .all(|&(x, m)| m <= 1e-12 || m <= m0 * (x as f64 / x0 as f64).powf(bound) + 1e-15);
    let desc = if points.iter().all(|&(_, m)| m <= 1e-12) {
        "-inf (every mean gap is 0)".to_string()
    } else {
        format!("envelope {}", if ok { "respected" } else { "violated" })
    };
    (desc, ok)
}

/// Replay estimation beats moment matching on mm-lb at every N, decays at
/// least like `N^-0.8` on the upper half of the grid, and on the fair
/// mixture of mm-lb and bc-lb stays within 1.1 of the better baseline.
pub fn criterion_5(b: &Budget) -> CriterionReport {
    report(5, "RE better than both", |checks, notes| {
        let grid = vec![256, 512, 1024, 2048, 4096, 8192, 16384];
        let rows = run_experiment(&experiment(
            Family::MmLb,
            InstanceParams::default(),
            &[LearnerId::Mm, LearnerId::Re],
            vec![8],
            grid.clone(),
            b.seeds,
            6,
        ))?;
        checks.push(failures(&rows));
        let mut worst = Vec::new();
        let mut all_ok = true;
        for &n in &grid {
            let (mean, se, _) = paired(&rows, "re", "mm", n);
            let ok = mean <= 3.0 * se;
            all_ok &= ok;
            worst.push(format!("N={n}: {mean:+.5} (se {se:.5})"));
        }
        checks.push(Check::new(
            "mm-lb paired RE - MM",
            if all_ok {
                "not above 3se anywhere".to_string()
            } else {
                worst.join(", ")
            },
            "<= 3 se at every N",
            all_ok,
        ));
        notes.push(format!("paired mean RE - MM: {}", worst.join(", ")));
        let re_pts: Vec<(usize, f64)> =
            aggregate(&rows, &RowFilter::new().with("learner", "re"), XAxis::NExp)
                .into_iter()
                .filter(|p| p.x >= 2048)
                .map(|p| (p.x, p.mean))
                .collect();
        let (desc, ok) = decay_check(&re_pts, -0.8);
        checks.push(Check::new("RE slope for N >= 2048", desc, "<= -0.8", ok));

        let params = InstanceParams {
            states: 20,
            actions: 2,
            ..Default::default()
        };
        let mix = run_experiment(&experiment(
            Family::Mixture,
            params,
            &[LearnerId::Bc, LearnerId::Mm, LearnerId::Re],
            vec![8],
            vec![1024, 4096, 16384],
            b.seeds,
            7,
        ))?;
        checks.push(failures(&mix));
        let mean_of = |l: &str| aggregate(&mix, &RowFilter::new().with("learner", l), XAxis::NExp);
        let (bc, mm, re) = (mean_of("bc"), mean_of("mm"), mean_of("re"));
        let mut ok = true;
        let mut parts = Vec::new();
        for i in 0..re.len() {
            let best = bc[i].mean.min(mm[i].mean);
            ok &= re[i].mean <= 1.1 * best;
            parts.push(format!(
                "N={}: RE {:.5} vs BC {:.5} / MM {:.5}",
                re[i].x, re[i].mean, bc[i].mean, mm[i].mean
            ));
        }
        checks.push(Check::new(
            "mixture RE / min(BC, MM)",
            parts.join(", "),
            "<= 1.1 at every N >= 1024",
            ok,
        ));
        Ok(())
    })
}

/// Minimum of the matching objective over stochastic policies whose action
/// probabilities lie on the grid `{k / steps}`; only two-action instances.
pub fn grid_search_match(mdp: &TabularMdp, target: &MatchTarget, steps: usize) -> f64 {
    fn rec(
        mdp: &TabularMdp,
        target: &MatchTarget,
        steps: usize,
        t: usize,
        mu: &[f64],
        acc: f64,
        best: &mut f64,
    ) {
        let (h, ns, na) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
        if t == h {
            *best = best.min(acc);
            return;
        }
        if acc >= *best {
            return;
        }
        let choices = if na == 1 { 1 } else { steps + 1 };
        let combos = choices.pow(ns as u32);
        let g = target.layer(t);
        for mut code in 0..combos {
            let mut cost = 0.0;
            let mut next = vec![0.0; ns];
            for s in 0..ns {
                let k = code % choices;
                code /= choices;
                let p0 = if na == 1 {
                    1.0
                } else {
                    k as f64 / steps as f64
                };
                for a in 0..na {
                    let pa = if a == 0 { p0 } else { 1.0 - p0 };
                    let m = mu[s] * pa;
                    cost += (m - g[s * na + a]).abs();
                    if t + 1 < h && m != 0.0 {
                        for (sp, p) in mdp.transition(t, s, a).iter().enumerate() {
                            next[sp] += m * p;
                        }
                    }
                }
            }
            rec(mdp, target, steps, t + 1, &next, acc + cost, best);
        }
    }
    assert!(
        mdp.num_actions() <= 2,
        "grid search supports at most two actions"
    );
    let mut best = f64::INFINITY;
    rec(mdp, target, steps, 0, mdp.rho(), 0.0, &mut best);
    best
}

fn random_target(mdp: &TabularMdp, seed: u64) -> Result<MatchTarget> {
    let (h, ns, na) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut rng = seeded_rng(derive_seed(seed, &[0x7A]));
    let mut g = Vec::with_capacity(h * ns * na);
    for _ in 0..h {
        let mass = if rng.gen_bool(0.5) {
            1.0
        } else {
            rng.gen_range(0.2..1.5)
        };
        let w: Vec<f64> = (0..ns * na)
            .map(|_| {
                if rng.gen_bool(0.2) {
                    0.0
                } else {
                    rng.gen::<f64>()
                }
            })
            .collect();
        let z: f64 = w.iter().sum::<f64>().max(1e-300);
        g.extend(w.iter().map(|x| x / z * mass));
    }
    MatchTarget::new(h, ns, na, g)
}

fn round_to_grid(policy: &MarkovPolicy, steps: usize) -> Result<MarkovPolicy> {
    MarkovPolicy::from_fn(
        policy.horizon(),
        policy.num_states(),
        policy.num_actions(),
        |t, s| {
            let row = policy.row(t, s);
            if row.len() == 1 {
                return vec![1.0];
            }
            let p0 = (row[0] * steps as f64).round() / steps as f64;
            vec![p0, 1.0 - p0]
        },
    )
}

/// LP optimum against exhaustive deterministic search and a 1/64 grid over
/// stochastic policies on random small instances.
pub fn criterion_6(b: &Budget) -> CriterionReport {
    report(6, "solver-oracle equivalence", |checks, notes| {
        let start = Instant::now();
        let steps = 64;
        let (mut optimal, mut relax_ok, mut grid_ok, mut full_grids) = (0, 0, 0, 0);
        let mut worst_relax: f64 = f64::NEG_INFINITY;
        for i in 0..b.instances {
            let seed = derive_seed(6, &[i as u64]);
            let mut rng = seeded_rng(seed);
            let (ns, na, h) = (
                rng.gen_range(1..=3),
                rng.gen_range(1..=2),
                rng.gen_range(1..=3),
            );
            let mdp = random_mdp(ns, na, h, seed)?;
            let target = random_target(&mdp, seed)?;
            let sol = solve_occupancy_match(&mdp, &target)?;
            let Ok((occ, lp)) = sol.into_optimal() else {
                continue;
            };
            optimal += 1;
            let (_, bf) = brute_force_match(&mdp, &target)?;
            worst_relax = worst_relax.max(lp - bf);
            if lp <= bf + 1e-8 {
                relax_ok += 1;
            }
            let slack = (h * (h + 1)) as f64 / (2.0 * steps as f64);
            let free = ns * h * (na - 1);
            let ok = if free <= 4 {
                full_grids += 1;
                let grid = grid_search_match(&mdp, &target, steps);
                lp <= grid + 1e-9 && grid <= lp + slack
            } else {
                // nearest grid point of the LP policy, plus random grid points
                let pol = extract_policy(&occ, &mdp)?;
                let rounded =
                    target.distance(&exact_occupancy(&mdp, &round_to_grid(&pol, steps)?)?)?;
                let mut sampled_min = f64::INFINITY;
                for _ in 0..2000 {
                    let p = MarkovPolicy::from_fn(h, ns, na, |_, _| {
                        let p0 = rng.gen_range(0..=steps) as f64 / steps as f64;
                        vec![p0, 1.0 - p0]
                    })?;
                    sampled_min = sampled_min.min(target.distance(&exact_occupancy(&mdp, &p)?)?);
                }
                rounded <= lp + slack && lp <= sampled_min + 1e-9
            };
            if ok {
                grid_ok += 1;
            }
        }
        let n = b.instances;
        let secs = start.elapsed().as_secs_f64();
        checks.push(Check::new(
            "optimal solves",
            format!("{optimal}/{n}"),
            "all",
            optimal == n,
        ));
        checks.push(Check::new(
            "LP <= brute force + 1e-8",
            format!("{relax_ok}/{n}"),
            "all",
            relax_ok == n,
        ));
        checks.push(Check::new(
            "LP matches 1/64 grid within slack",
            format!("{grid_ok}/{n}"),
            "all",
            grid_ok == n,
        ));
        checks.push(Check::new(
            "runtime",
            format!("{secs:.1}s"),
            "< 60s",
            secs < 60.0,
        ));
        notes.push(format!("{full_grids} instances searched on the full grid; largest LP - brute force {worst_relax:.2e}"));
        Ok(())
    })
}

/// Fraction of cells of `mc` within `3 sqrt(p(1-p)/n) + 1e-6` of `exact`.
fn three_sigma_cells(mc: &[f64], exact: &[f64], n: usize) -> (usize, usize) {
    let ok = mc
        .iter()
        .zip(exact)
        .filter(|(m, p)| {
            let p = p.clamp(0.0, 1.0);
            (*m - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt() + 1e-6
        })
        .count();
    (ok, mc.len())
}

fn random_hard_oracle(h: usize, ns: usize, seed: u64) -> Result<MembershipOracle> {
    let mut rng = seeded_rng(derive_seed(seed, &[0x0A]));
    MembershipOracle::new(
        h,
        ns,
        (0..h * ns)
            .map(|_| if rng.gen_bool(0.75) { 1.0 } else { 0.0 })
            .collect(),
    )
}

fn random_soft_oracle(h: usize, ns: usize, seed: u64) -> Result<MembershipOracle> {
    let mut rng = seeded_rng(derive_seed(seed, &[0x50]));
    MembershipOracle::new(h, ns, (0..h * ns).map(|_| rng.gen::<f64>()).collect())
}

/// Replay and hybrid estimator identities.
pub fn criterion_7(b: &Budget) -> CriterionReport {
    report(7, "estimator identities", |checks, notes| {
        let trials = (b.instances / 10).max(5);
        // (a) Monte Carlo replay converges to the exact recursion
        let mut mean_max_err = Vec::new();
        for n_replay in [100, 1000, 10_000] {
            let (mut ok, mut total, mut err_sum) = (0, 0, 0.0);
            for i in 0..trials {
                let seed = derive_seed(71, &[i as u64]);
                let mut rng = seeded_rng(seed);
                let (ns, na, h) = (
                    rng.gen_range(2..=4),
                    rng.gen_range(2..=4),
                    rng.gen_range(2..=5),
                );
                let mdp = random_mdp(ns, na, h, seed)?;
                let pol = random_policy(ns, na, h, seed)?;
                let oracle = random_hard_oracle(h, ns, seed)?;
                let exact = replay_exact(&mdp, &pol, &oracle)?;
                let mc = replay_mc(&mdp, &pol, &oracle, n_replay, seed)?;
                let (o, t) =
                    three_sigma_cells(mc.measures.as_slice(), exact.measures.as_slice(), n_replay);
                ok += o;
                total += t;
                err_sum += mc
                    .measures
                    .as_slice()
                    .iter()
                    .zip(exact.measures.as_slice())
                    .map(|(m, p)| (m - p).abs())
                    .fold(0.0, f64::max);
            }
            let frac = ok as f64 / total as f64;
            checks.push(Check::new(
                format!("MC replay 3-sigma cells at {n_replay}"),
                format!("{:.4}", frac),
                ">= 0.99",
                frac >= 0.99,
            ));
            mean_max_err.push(err_sum / trials as f64);
        }
        // two decades of rollouts should shrink the error by about ten
        let shrink = mean_max_err[0] / mean_max_err[2];
        checks.push(Check::new(
            "max-cell error shrink 1e2 -> 1e4",
            format!("{shrink:.2}"),
            "[4, 25]",
            in_range(shrink, 4.0, 25.0),
        ));
        notes.push(format!(
            "mean max-cell error: {:.2e}, {:.2e}, {:.2e}",
            mean_max_err[0], mean_max_err[1], mean_max_err[2]
        ));

        // (b) pipeline identities for constant oracles
        let (mut one_ok, mut zero_ok, mut layer_ok, mut cases) = (0, 0, 0, 0);
        let mut worst: f64 = 0.0;
        for i in 0..trials {
            let seed = derive_seed(72, &[i as u64]);
            let mut rng = seeded_rng(seed);
            let (ns, na, h) = (
                rng.gen_range(2..=4),
                rng.gen_range(2..=3),
                rng.gen_range(2..=5),
            );
            let inst = Instance {
                mdp: random_mdp(ns, na, h, seed)?,
                expert: random_policy(ns, na, h, seed ^ 1)?,
            };
            let data = sample_dataset(&inst.mdp, &inst.expert, rng.gen_range(4..40), seed)?;
            cases += 1;
            let split_cfg = SplitConfig {
                frac1: 0.5,
                split_seed: seed,
            };
            let cfg1 = ReConfig {
                split: split_cfg,
                oracle_override: Some(1.0),
                ..Default::default()
            };
            let out = re_train_detailed(&data, &inst.mdp, &cfg1)?;
            let d = (policy_value(&inst.mdp, &out.policy)?
                - policy_value(&inst.mdp, &out.bc_policy)?)
            .abs();
            worst = worst.max(d);
            if d <= 1e-9 {
                one_ok += 1;
            }
            let (_, d2) = split(&data, &split_cfg)?;
            let mm_value = policy_value(&inst.mdp, &mm_train(&d2, &inst.mdp)?)?;
            let cfg0 = ReConfig {
                split: split_cfg,
                oracle_override: Some(0.0),
                prefix: PrefixConvention::ThroughStep,
                ..Default::default()
            };
            let d =
                (policy_value(&inst.mdp, &re_train(&data, &inst.mdp, &cfg0)?)? - mm_value).abs();
            worst = worst.max(d);
            if d <= 1e-9 {
                zero_ok += 1;
            }
            // default convention: first layer is replayed BC, the rest is D2
            let cfgb = ReConfig {
                split: split_cfg,
                oracle_override: Some(0.0),
                ..Default::default()
            };
            let out = re_train_detailed(&data, &inst.mdp, &cfgb)?;
            let emp = empirical_occupancy(&d2, ns, na)?;
            let bc_first = exact_occupancy(&inst.mdp, &out.bc_policy)?;
            let first = l1(out.target.layer(0), bc_first.layer(0)) <= 1e-12;
            let rest = (1..h).all(|t| l1(out.target.layer(t), emp.layer(t)) <= 1e-12);
            if first && rest {
                layer_ok += 1;
            }
        }
        checks.push(Check::new(
            "oracle 1: J(RE) = J(BC on D1)",
            format!("{one_ok}/{cases}"),
            "all within 1e-9",
            one_ok == cases,
        ));
        checks.push(Check::new(
            "oracle 0: J(RE) = J(MM on D2)",
            format!("{zero_ok}/{cases}"),
            "all within 1e-9",
            zero_ok == cases,
        ));
        checks.push(Check::new(
            "oracle 0 target layers",
            format!("{layer_ok}/{cases}"),
            "all",
            layer_ok == cases,
        ));
        notes.push(format!("largest value difference {worst:.1e}; the oracle-0 value identity uses the through-step prefix convention"));

        // (c) replay plus complement reproduces the expert's measures
        let (mut comp_ok, mut comp_cases) = (0, 0);
        for i in 0..trials {
            let seed = derive_seed(73, &[i as u64]);
            let mut rng = seeded_rng(seed);
            let (ns, na, h) = (
                rng.gen_range(1..=5),
                rng.gen_range(1..=3),
                rng.gen_range(1..=6),
            );
            let mdp = random_mdp(ns, na, h, seed)?;
            let expert = random_policy(ns, na, h, seed)?;
            let occ = exact_occupancy(&mdp, &expert)?;
            for oracle in [
                random_hard_oracle(h, ns, seed)?,
                random_soft_oracle(h, ns, seed)?,
            ] {
                for conv in [PrefixConvention::BeforeStep, PrefixConvention::ThroughStep] {
                    comp_cases += 1;
                    let r = replay_exact_with(&mdp, &expert, &oracle, conv)?;
                    let c = complement_exact(&mdp, &expert, &oracle, conv)?;
                    let g = hybrid_from_parts(&r, &c)?;
                    if l1(g.as_slice(), occ.as_slice()) <= 1e-12 {
                        comp_ok += 1;
                    }
                }
            }
        }
        checks.push(Check::new(
            "replay + complement = expert measures",
            format!("{comp_ok}/{comp_cases}"),
            "all within 1e-12",
            comp_ok == comp_cases,
        ));
        Ok(())
    })
}

/// Every instance family on which moment matching against exact expert
/// measures is checked.
fn family_instances() -> Result<Vec<(String, Instance)>> {
    let mut out = Vec::new();
    for h in [4, 6, 8] {
        out.push((format!("mm-lb H={h}"), make_mm_lb(h, 100)?));
    }
    for (s, h) in [(3, 2), (5, 4), (20, 8)] {
        out.push((
            format!("bc-lb S={s} H={h} uniform"),
            make_bc_lb(s, h, 2, None, s as u64)?,
        ));
        let reset = ResetKind::Rare.resolve(s - 1, 256)?;
        out.push((
            format!("bc-lb S={s} H={h} rare"),
            make_bc_lb(s, h, 3, reset, h as u64)?,
        ));
    }
    for h in 1..=5 {
        out.push((format!("two-state H={h}"), make_two_state_uniform(h)?));
    }
    for (n, h) in [(2, 1), (4, 3), (5, 5)] {
        out.push((format!("fan n={n} H={h}"), make_fan(n, h)?));
    }
    let sampler = make_mixture_sampler(
        8,
        MixtureParams {
            horizon: 6,
            n_exp: 64,
            bc_states: 8,
            bc_actions: 2,
            bc_reset: ResetKind::Rare,
        },
    );
    for i in 0..6 {
        let d = sampler.draw(i)?;
        out.push((
            format!("mixture draw {i} ({})", d.component.as_str()),
            d.instance,
        ));
    }
    Ok(out)
}

/// Matching exact expert measures recovers the expert's value.
pub fn criterion_8(_b: &Budget) -> CriterionReport {
    report(8, "infinite-data value equivalence", |checks, notes| {
        let instances = family_instances()?;
        let mut worst: f64 = 0.0;
        let mut bad = Vec::new();
        for (name, inst) in &instances {
            let occ = exact_occupancy(&inst.mdp, &inst.expert)?;
            let pol = match_and_extract(&inst.mdp, &MatchTarget::from(&occ))?;
            let gap =
                (policy_value(&inst.mdp, &inst.expert)? - policy_value(&inst.mdp, &pol)?).abs();
            worst = worst.max(gap);
            if gap > 1e-9 {
                bad.push(name.clone());
            }
        }
        checks.push(Check::new(
            "max |gap|",
            format!("{worst:.1e} over {} instances", instances.len()),
            "<= 1e-9",
            bad.is_empty(),
        ));
        if !bad.is_empty() {
            notes.push(format!("failing: {}", bad.join(", ")));
        }
        Ok(())
    })
}

/// Randomized sweep over the structural invariants.
pub fn criterion_9(b: &Budget) -> CriterionReport {
    report(9, "invariant suites", |checks, _notes| {
        let trials = b.instances.max(10);
        let mut flow = 0;
        let mut round_trip = 0;
        let mut witness = 0;
        let mut prefix = 0;
        let mut missing = 0;
        let mut repro = 0;
        for i in 0..trials {
            let seed = derive_seed(9, &[i as u64]);
            let mut rng = seeded_rng(seed);
            let (ns, na, h) = (
                rng.gen_range(1..=5),
                rng.gen_range(1..=3),
                rng.gen_range(1..=6),
            );
            let mdp = random_mdp(ns, na, h, seed)?;
            let pol = random_policy(ns, na, h, seed)?;
            let occ = exact_occupancy(&mdp, &pol)?;

            let target = random_target(&mdp, seed)?;
            let (lp_occ, _) = solve_occupancy_match(&mdp, &target)?.into_optimal()?;
            if flow_violation(&mdp, &lp_occ)? <= 1e-8 {
                flow += 1;
            }

            let p1 = extract_policy(&occ, &mdp)?;
            let occ1 = exact_occupancy(&mdp, &p1)?;
            let p2 = extract_policy(&occ1, &mdp)?;
            let reproduces = l1(occ1.as_slice(), occ.as_slice()) <= 1e-7;
            let idempotent = (0..h).all(|t| {
                (0..ns).all(|s| {
                    let mass: f64 = (0..na).map(|a| occ.get(t, s, a)).sum();
                    mass < REACHABLE_TOL || l1(p1.row(t, s), p2.row(t, s)) <= 1e-9
                })
            });
            if reproduces && idempotent {
                round_trip += 1;
            }

            let other = exact_occupancy(&mdp, &random_policy(ns, na, h, seed ^ 7)?)?;
            let t = rng.gen_range(0..h);
            let dist = l1_layer_distance(&occ, &other, t)?;
            let (p, q) = (occ.layer(t), other.layer(t));
            let star: f64 = p
                .iter()
                .zip(q)
                .map(|(x, y)| (x - y).signum() * (x - y))
                .sum();
            let mut ok = (star - dist).abs() <= 1e-12;
            for _ in 0..1000 {
                let v: f64 = p
                    .iter()
                    .zip(q)
                    .map(|(x, y)| rng.gen_range(-1.0..=1.0) * (x - y))
                    .sum();
                ok &= v <= dist + 1e-9;
            }
            if ok {
                witness += 1;
            }

            let soft = random_soft_oracle(h, ns, seed)?;
            let hard = random_hard_oracle(h, ns, seed)?;
            let traj = rollout(&mdp, &pol, seed)?;
            let states: Vec<usize> = traj.steps.iter().map(|&(s, _)| s).collect();
            let mono = |o: &MembershipOracle| {
                (1..h).all(|t| prefix_weight(o, &states[..t]) <= prefix_weight(o, &states[..t - 1]))
            };
            let hard_vals: Vec<f64> = (0..h)
                .map(|t| visit_weight(&hard, &states, t, PrefixConvention::BeforeStep))
                .collect();
            let binary = hard_vals.iter().all(|&w| w == 0.0 || w == 1.0);
            let sticky = hard_vals.windows(2).all(|w| w[0] > 0.0 || w[1] == 0.0);
            if mono(&soft) && mono(&hard) && binary && sticky {
                prefix += 1;
            }

            let data = sample_dataset(&mdp, &pol, rng.gen_range(1..10), seed)?;
            let more = data.extended(
                &sample_dataset(&mdp, &pol, 5, seed ^ 3)?
                    .trajectories()
                    .to_vec(),
            )?;
            let m1 = missing_mass(&data, &mdp, &pol)?;
            let m2 = missing_mass(&more, &mdp, &pol)?;
            let in_unit = m1.iter().all(|&m| (-1e-12..=1.0 + 1e-12).contains(&m));
            if in_unit && m1.iter().zip(&m2).all(|(a, b)| *b <= *a + 1e-12) {
                missing += 1;
            }

            if reproducible(&mdp, &pol, &data, &hard, seed)? {
                repro += 1;
            }
        }
        let n = trials;
        checks.push(Check::new(
            "flow conservation",
            format!("{flow}/{n}"),
            "all",
            flow == n,
        ));
        checks.push(Check::new(
            "occupancy round trip",
            format!("{round_trip}/{n}"),
            "all",
            round_trip == n,
        ));
        checks.push(Check::new(
            "variational L1 witness",
            format!("{witness}/{n}"),
            "all",
            witness == n,
        ));
        checks.push(Check::new(
            "prefix-weight monotonicity",
            format!("{prefix}/{n}"),
            "all",
            prefix == n,
        ));
        checks.push(Check::new(
            "missing-mass monotonicity",
            format!("{missing}/{n}"),
            "all",
            missing == n,
        ));
        checks.push(Check::new(
            "bit reproducibility",
            format!("{repro}/{n}"),
            "all",
            repro == n,
        ));
        Ok(())
    })
}

fn reproducible(
    mdp: &TabularMdp,
    pol: &MarkovPolicy,
    data: &Dataset,
    oracle: &MembershipOracle,
    seed: u64,
) -> Result<bool> {
    let h = mdp.horizon();
    let same_rollout = rollout(mdp, pol, seed)? == rollout(mdp, pol, seed)?;
    let same_data = sample_dataset(mdp, pol, 6, seed)? == sample_dataset(mdp, pol, 6, seed)?;
    let same_replay =
        replay_mc(mdp, pol, oracle, 50, seed)? == replay_mc(mdp, pol, oracle, 50, seed)?;
    let same_bc = bc_train(
        data,
        mdp.num_states(),
        mdp.num_actions(),
        h,
        TieRule::Random(seed),
    )? == bc_train(
        data,
        mdp.num_states(),
        mdp.num_actions(),
        h,
        TieRule::Random(seed),
    )?;
    let same_oracle = membership_tabular(data, mdp.num_states(), h)?
        == membership_tabular(data, mdp.num_states(), h)?;
    let same_split = if data.len() >= 2 {
        let cfg = SplitConfig {
            frac1: 0.5,
            split_seed: seed,
        };
        split(data, &cfg)? == split(data, &cfg)?
    } else {
        true
    };
    Ok(same_rollout && same_data && same_replay && same_bc && same_oracle && same_split)
}

/// All criteria in order.
pub fn run_all(b: &Budget) -> Vec<CriterionReport> {
    vec![
        criterion_1(b),
        criterion_2(b),
        criterion_3(b),
        criterion_4(b),
        criterion_5(b),
        criterion_6(b),
        criterion_7(b),
        criterion_8(b),
        criterion_9(b),
    ]
}

/// Criterion by number (1 to 9).
pub fn run_one(id: u32, b: &Budget) -> Option<CriterionReport> {
    Some(match id {
        1 => criterion_1(b),
        2 => criterion_2(b),
        3 => criterion_3(b),
        4 => criterion_4(b),
        5 => criterion_5(b),
        6 => criterion_6(b),
        7 => criterion_7(b),
        8 => criterion_8(b),
        9 => criterion_9(b),
        _ => return None,
    })
}
