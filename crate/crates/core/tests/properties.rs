use proptest::prelude::*;

use il_lab_core::dataset::{missing_mass, sample_dataset, split_indices, SplitConfig};
use il_lab_core::instances::{perturb_policy, random_mdp, random_policy};
use il_lab_core::learners::{
    complement_exact, hybrid_from_parts, prefix_weight, replay_exact_with, replay_mc, visit_weight,
    MembershipOracle, PrefixConvention,
};
use il_lab_core::lp::{
    brute_force_match, extract_policy, flow_violation, solve_occupancy_match, MatchTarget,
};
use il_lab_core::mdp::{
    exact_occupancy, l1_layer_distance, policy_value, rollout, value_from_occupancy,
};

fn shape(
    max_s: usize,
    max_a: usize,
    max_h: usize,
) -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (1..=max_s, 1..=max_a, 1..=max_h, any::<u64>())
}

fn oracle_table(h: usize, s: usize, seed: u64, hard: bool) -> MembershipOracle {
    let mut x = seed | 1;
    let vals = (0..h * s)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            let u = (x >> 11) as f64 / (1u64 << 53) as f64;
            if hard {
                f64::from(u < 0.7)
            } else {
                u
            }
        })
        .collect();
    MembershipOracle::new(h, s, vals).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn occupancy_layers_are_distributions((s, a, h, seed) in shape(5, 4, 6)) {
        let mdp = random_mdp(s, a, h, seed).unwrap();
        let pol = random_policy(s, a, h, seed).unwrap();
        let occ = exact_occupancy(&mdp, &pol).unwrap();
        for t in 0..h {
            prop_assert!((occ.layer_sum(t) - 1.0).abs() <= 1e-9);
        }
        prop_assert!(occ.as_slice().iter().all(|&x| x >= 0.0));
        prop_assert!((value_from_occupancy(&mdp, &occ) - policy_value(&mdp, &pol).unwrap()).abs() <= 1e-10);
        prop_assert!(flow_violation(&mdp, &occ).unwrap() <= 1e-12);
    }

    #[test]
    fn lp_optimum_is_feasible_and_relaxes_brute_force((s, a, h, seed) in shape(3, 2, 3), scale in 0.3f64..1.7) {
        let mdp = random_mdp(s, a, h, seed).unwrap();
        let other = random_policy(s, a, h, seed.wrapping_add(1)).unwrap();
        let g: Vec<f64> = exact_occupancy(&mdp, &other).unwrap().into_vec().iter().enumerate()
            .map(|(i, x)| if i % 2 == 0 { x * scale } else { *x })
            .collect();
        let target = MatchTarget::new(h, s, a, g).unwrap();
        let (occ, obj) = solve_occupancy_match(&mdp, &target).unwrap().into_optimal().unwrap();
        prop_assert!(flow_violation(&mdp, &occ).unwrap() <= 1e-8);
        prop_assert!((target.distance(&occ).unwrap() - obj).abs() <= 1e-8);
        let (_, bf) = brute_force_match(&mdp, &target).unwrap();
        prop_assert!(obj <= bf + 1e-8);
    }

    #[test]
    fn extraction_round_trips((s, a, h, seed) in shape(4, 3, 5)) {
        let mdp = random_mdp(s, a, h, seed).unwrap();
        let pol = random_policy(s, a, h, seed).unwrap();
        let occ = exact_occupancy(&mdp, &pol).unwrap();
        let p1 = extract_policy(&occ, &mdp).unwrap();
        let occ1 = exact_occupancy(&mdp, &p1).unwrap();
        for (x, y) in occ1.as_slice().iter().zip(occ.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
        let p2 = extract_policy(&occ1, &mdp).unwrap();
        for t in 0..h {
            for st in 0..s {
                let mass: f64 = (0..a).map(|b| occ.get(t, st, b)).sum();
                if mass > 1e-12 {
                    for b in 0..a {
                        prop_assert!((p1.prob(t, st, b) - p2.prob(t, st, b)).abs() <= 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn l1_distance_is_a_variational_supremum((s, a, h, seed) in shape(4, 3, 4), fs in prop::collection::vec(-1.0f64..=1.0, 48)) {
        let mdp = random_mdp(s, a, h, seed).unwrap();
        let p = exact_occupancy(&mdp, &random_policy(s, a, h, seed).unwrap()).unwrap();
        let q = exact_occupancy(&mdp, &random_policy(s, a, h, seed ^ 0xFF).unwrap()).unwrap();
        for t in 0..h {
            let d = l1_layer_distance(&p, &q, t).unwrap();
            let diff: Vec<f64> = p.layer(t).iter().zip(q.layer(t)).map(|(x, y)| x - y).collect();
            let witness: f64 = diff.iter().map(|x| x.signum() * x).sum();
            prop_assert!((witness - d).abs() <= 1e-12);
            let any: f64 = diff.iter().zip(fs.iter().cycle()).map(|(x, f)| f * x).sum();
            prop_assert!(any <= d + 1e-9);
        }
    }

    #[test]
    fn prefix_weights_never_increase((s, a, h, seed) in shape(4, 3, 7), hard in any::<bool>()) {
        let mdp = random_mdp(s, a, h, seed).unwrap();
        let pol = random_policy(s, a, h, seed).unwrap();
        let oracle = oracle_table(h, s, seed, hard);
        let tr = rollout(&mdp, &pol, seed).unwrap();
        let states: Vec<usize> = tr.steps.iter().map(|&(st, _)| st).collect();
        let mut last = 1.0;
        for t in 0..h {
            let w = prefix_weight(&oracle, &states[..t]);
            prop_assert!(w <= last && (0.0..=1.0).contains(&w));
            prop_assert_eq!(w, visit_weight(&oracle, &states, t, PrefixConvention::BeforeStep));
            if hard {
                prop_assert!(w == 0.0 || w == 1.0);
            }
            last = w;
        }
    }

    #[test]
    fn replay_plus_complement_is_the_expert((s, a, h, seed) in shape(4, 3, 6), hard in any::<bool>(), through in any::<bool>()) {
        let mdp = random_mdp(s, a, h, seed).unwrap();
        let pol = random_policy(s, a, h, seed).unwrap();
        let oracle = oracle_table(h, s, seed, hard);
        let conv = if through { PrefixConvention::ThroughStep } else { PrefixConvention::BeforeStep };
        let r = replay_exact_with(&mdp, &pol, &oracle, conv).unwrap();
        for t in 0..h {
            prop_assert!(r.measures.layer_sum(t) <= 1.0 + 1e-9);
        }
        let c = complement_exact(&mdp, &pol, &oracle, conv).unwrap();
        let g = hybrid_from_parts(&r, &c).unwrap();
        let occ = exact_occupancy(&mdp, &pol).unwrap();
        for (x, y) in g.as_slice().iter().zip(occ.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn missing_mass_shrinks_as_data_grows((s, a, h, seed) in shape(5, 3, 5), n in 1usize..20, extra in 1usize..20) {
        let mdp = random_mdp(s, a, h, seed).unwrap();
        let pol = random_policy(s, a, h, seed).unwrap();
        let d = sample_dataset(&mdp, &pol, n, seed).unwrap();
        let more = d.extended(sample_dataset(&mdp, &pol, extra, seed ^ 1).unwrap().trajectories()).unwrap();
        let m1 = missing_mass(&d, &mdp, &pol).unwrap();
        let m2 = missing_mass(&more, &mdp, &pol).unwrap();
        for (x, y) in m1.iter().zip(&m2) {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(x));
            prop_assert!(*y <= *x + 1e-12);
        }
    }

    #[test]
    fn splits_partition_the_indices(n in 2usize..300, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let cfg = SplitConfig { frac1: frac, split_seed: seed };
        let first = (frac * n as f64 + 0.5).floor() as usize;
        if first == 0 || first == n {
            prop_assert!(split_indices(n, &cfg).is_err());
            return Ok(());
        }
        let (a, b) = split_indices(n, &cfg).unwrap();
        prop_assert_eq!(a.len(), first);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn seeded_operations_are_reproducible((s, a, h, seed) in shape(4, 3, 6)) {
        let mdp = random_mdp(s, a, h, seed).unwrap();
        prop_assert_eq!(&mdp, &random_mdp(s, a, h, seed).unwrap());
        let pol = random_policy(s, a, h, seed).unwrap();
        prop_assert_eq!(rollout(&mdp, &pol, seed).unwrap(), rollout(&mdp, &pol, seed).unwrap());
        prop_assert_eq!(sample_dataset(&mdp, &pol, 5, seed).unwrap(), sample_dataset(&mdp, &pol, 5, seed).unwrap());
        let oracle = oracle_table(h, s, seed, true);
        prop_assert_eq!(replay_mc(&mdp, &pol, &oracle, 20, seed).unwrap(), replay_mc(&mdp, &pol, &oracle, 20, seed).unwrap());
    }

    #[test]
    fn perturbation_stays_within_gamma((s, a, h, seed) in shape(4, 4, 4), gamma in 0.0f64..=1.0) {
        let base = random_policy(s, a, h, seed).unwrap();
        let dev = random_policy(s, a, h, seed ^ 9).unwrap();
        let p = perturb_policy(&base, gamma, &dev).unwrap();
        for t in 0..h {
            for st in 0..s {
                let row = p.row(t, st);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                let tv: f64 = 0.5 * row.iter().zip(base.row(t, st)).map(|(x, y)| (x - y).abs()).sum::<f64>();
                prop_assert!(tv <= gamma + 1e-12);
            }
        }
    }
}
