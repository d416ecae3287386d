use il_lab_core::dataset::{
    empirical_occupancy, sample_dataset, split, Dataset, Provenance, SplitConfig,
};
use il_lab_core::harness::DatasetEvents;
use il_lab_core::instances::{
    make_bc_lb, make_fan, make_mm_lb, make_two_state_uniform, random_mdp, random_policy,
};
use il_lab_core::learners::{
    bc_train, membership_tabular, mm_train, re_train, replay_exact, replay_mc, MembershipOracle,
    ReConfig, TieRule,
};
use il_lab_core::lp::{brute_force_match, extract_policy, solve_occupancy_match, MatchTarget};
use il_lab_core::mdp::{
    exact_occupancy, imitation_gap, l1_layer_distance, MarkovPolicy, Trajectory,
};
use il_lab_core::rng::derive_seed;
use il_lab_core::verify::grid_search_match;

/// Target with the rare-start marginal `delta1` at step 0 and later state
/// marginals `(1/2 - delta, 1/2 + delta)`, all mass on action 0.
fn skewed_target(h: usize, delta1: f64, delta: f64) -> MatchTarget {
    let mut g = vec![0.0; h * 4];
    g[0] = 1.0 - delta1;
    g[2] = delta1;
    for t in 1..h {
        g[t * 4] = 0.5 - delta;
        g[t * 4 + 2] = 0.5 + delta;
    }
    MatchTarget::new(h, 2, 2, g).unwrap()
}

#[test]
fn skewed_target_forces_the_deviation() {
    let inst = make_mm_lb(4, 100).unwrap();
    let target = skewed_target(4, 0.08, 0.2);
    let (occ, _) = solve_occupancy_match(&inst.mdp, &target)
        .unwrap()
        .into_optimal()
        .unwrap();
    let pol = extract_policy(&occ, &inst.mdp).unwrap();
    assert!(
        (pol.prob(0, 1, 1) - 1.0).abs() < 1e-9,
        "row {:?}",
        pol.row(0, 1)
    );
    let (det, _) = brute_force_match(&inst.mdp, &target).unwrap();
    assert_eq!(det.prob(0, 1, 1), 1.0);
}

#[test]
fn exact_targets_are_matched() {
    let instances = [
        make_mm_lb(5, 64).unwrap(),
        make_bc_lb(4, 3, 3, None, 2).unwrap(),
        make_fan(3, 3).unwrap(),
        make_two_state_uniform(4).unwrap(),
    ];
    for inst in &instances {
        let occ = exact_occupancy(&inst.mdp, &inst.expert).unwrap();
        let (found, obj) = solve_occupancy_match(&inst.mdp, &MatchTarget::from(&occ))
            .unwrap()
            .into_optimal()
            .unwrap();
        assert!(obj.abs() < 1e-9);
        for (x, y) in found.as_slice().iter().zip(occ.as_slice()) {
            assert!((x - y).abs() < 1e-9);
        }
        let (det, bf) = brute_force_match(&inst.mdp, &MatchTarget::from(&occ)).unwrap();
        assert!(bf.abs() < 1e-12);
        let reproduced = exact_occupancy(&inst.mdp, &det).unwrap();
        for (x, y) in reproduced.as_slice().iter().zip(occ.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn lp_against_deterministic_and_grid_oracles() {
    for i in 0..6 {
        let seed = derive_seed(31, &[i]);
        let mdp = random_mdp(2, 2, 2, seed).unwrap();
        let other = random_policy(2, 2, 2, seed ^ 5).unwrap();
        let mut g = exact_occupancy(&mdp, &other).unwrap().into_vec();
        for (k, x) in g.iter_mut().enumerate() {
            *x *= 0.5 + (k % 3) as f64 * 0.4;
        }
        let target = MatchTarget::new(2, 2, 2, g).unwrap();
        let (_, lp) = solve_occupancy_match(&mdp, &target)
            .unwrap()
            .into_optimal()
            .unwrap();
        let (_, bf) = brute_force_match(&mdp, &target).unwrap();
        assert!(lp <= bf + 1e-8);
        let grid = grid_search_match(&mdp, &target, 64);
        let slack = 2.0 * 3.0 / 128.0;
        assert!(
            lp <= grid + 1e-9 && grid <= lp + slack,
            "lp {lp} grid {grid}"
        );
    }
}

#[test]
fn full_coverage_forces_expert_actions_after_the_first_step() {
    let inst = make_mm_lb(4, 100).unwrap();
    let mut checked = 0;
    for seed in 0..60 {
        let d = sample_dataset(&inst.mdp, &inst.expert, 100, seed).unwrap();
        if !DatasetEvents::of(&d).e1() {
            continue;
        }
        checked += 1;
        let pol = mm_train(&d, &inst.mdp).unwrap();
        for t in 1..4 {
            for s in 0..2 {
                assert!(
                    (pol.prob(t, s, 0) - 1.0).abs() < 1e-9,
                    "seed {seed} t {t} s {s}"
                );
            }
        }
    }
    assert!(checked > 30);
}

#[test]
fn bc_replays_covered_states() {
    let inst = make_bc_lb(6, 5, 3, None, 8).unwrap();
    let d = sample_dataset(&inst.mdp, &inst.expert, 40, 1).unwrap();
    let bc = bc_train(&d, 6, 3, 5, TieRule::LowestIndex).unwrap();
    let oracle = membership_tabular(&d, 6, 5).unwrap();
    for t in 0..5 {
        for s in 0..6 {
            if oracle.get(t, s) == 1.0 {
                assert_eq!(bc.row(t, s), inst.expert.row(t, s));
            } else {
                assert!(bc.row(t, s).iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
            }
        }
    }
    // replaying BC through visited states only never leaves the expert's support
    let replay = replay_exact(&inst.mdp, &bc, &oracle).unwrap();
    let expert = exact_occupancy(&inst.mdp, &inst.expert).unwrap();
    for (r, e) in replay.measures.as_slice().iter().zip(expert.as_slice()) {
        assert!(*r <= e + 1e-12);
    }
}

#[test]
fn membership_of_a_single_trajectory() {
    let tr = Trajectory {
        steps: vec![(0, 1), (2, 0)],
    };
    let d = Dataset::new(vec![tr], 2, Provenance::default()).unwrap();
    let m = membership_tabular(&d, 3, 2).unwrap();
    assert_eq!([m.get(0, 0), m.get(0, 1), m.get(0, 2)], [1.0, 0.0, 0.0]);
    assert_eq!([m.get(1, 0), m.get(1, 1), m.get(1, 2)], [0.0, 0.0, 1.0]);
    let occ = empirical_occupancy(&d, 3, 2).unwrap();
    assert_eq!((occ.get(0, 0, 1), occ.get(1, 2, 0)), (1.0, 1.0));
}

#[test]
fn monte_carlo_replay_converges() {
    for i in 0..3 {
        let mdp = random_mdp(4, 4, 4, i).unwrap();
        let pol = random_policy(4, 4, 4, i).unwrap();
        let oracle = MembershipOracle::constant(4, 4, 1.0).unwrap();
        let exact = replay_exact(&mdp, &pol, &oracle).unwrap();
        let mc = replay_mc(&mdp, &pol, &oracle, 100_000, i).unwrap();
        for t in 0..4 {
            assert!(l1_layer_distance(&mc.measures, &exact.measures, t).unwrap() <= 0.05);
        }
        let occ = exact_occupancy(&mdp, &pol).unwrap();
        for (x, y) in exact.measures.as_slice().iter().zip(occ.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn moment_matching_converges_on_two_state() {
    let inst = make_two_state_uniform(5).unwrap();
    let d = sample_dataset(&inst.mdp, &inst.expert, 100_000, 3).unwrap();
    let gap = imitation_gap(&inst.mdp, &inst.expert, &mm_train(&d, &inst.mdp).unwrap()).unwrap();
    assert!(gap <= 0.02 * 5.0, "gap {gap}");
}

#[test]
fn replay_estimation_beats_moment_matching_on_mm_lb() {
    let (h, n, seeds) = (8, 1024, 500u64);
    let inst = make_mm_lb(h, n).unwrap();
    let diffs: Vec<f64> = (0..seeds)
        .map(|i| {
            let d = sample_dataset(&inst.mdp, &inst.expert, n, derive_seed(41, &[i])).unwrap();
            let cfg = ReConfig {
                split: SplitConfig {
                    frac1: 0.5,
                    split_seed: i,
                },
                ..Default::default()
            };
            let re = imitation_gap(
                &inst.mdp,
                &inst.expert,
                &re_train(&d, &inst.mdp, &cfg).unwrap(),
            )
            .unwrap();
            let mm =
                imitation_gap(&inst.mdp, &inst.expert, &mm_train(&d, &inst.mdp).unwrap()).unwrap();
            re - mm
        })
        .collect();
    let k = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / k;
    let sd = (diffs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    assert!(mean + 3.0 * sd / k.sqrt() < 0.0, "mean {mean} sd {sd}");
}

#[test]
fn constant_oracles_reduce_to_the_baselines() {
    let inst = make_bc_lb(5, 4, 2, None, 1).unwrap();
    let d = sample_dataset(&inst.mdp, &inst.expert, 30, 2).unwrap();
    let split_cfg = SplitConfig {
        frac1: 0.5,
        split_seed: 9,
    };
    let (d1, _) = split(&d, &split_cfg).unwrap();
    let cfg = ReConfig {
        split: split_cfg,
        oracle_override: Some(1.0),
        ..Default::default()
    };
    let re = re_train(&d, &inst.mdp, &cfg).unwrap();
    let bc = bc_train(&d1, 5, 2, 4, TieRule::LowestIndex).unwrap();
    let gap = |p: &MarkovPolicy| imitation_gap(&inst.mdp, &inst.expert, p).unwrap();
    assert!((gap(&re) - gap(&bc)).abs() < 1e-9);
}
