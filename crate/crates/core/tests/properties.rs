use calsig::ir::{design_ir, exante_utility, ir_marginals, ir_revenue, region};
use calsig::marginals::{check_calibration_feasible, optimal_marginals, optimal_thresholds, solve_linsys, slack_total, Convention};
use calsig::oracle::{brute_force_transport, grid_lp_optimal, GridSpec};
use calsig::signaling::{design_optimal, raw_revenue, revenue, symmetrize, symmetry_defect, verify_calibration, RawSignaling};
use calsig::transport::{check_plan_feasible, correlate_general, correlate_k1_lp, plan_from_k1, secmax_upper_bound};
use calsig::{DiscreteDist, PriorBySum};
use proptest::prelude::*;

fn prior_strategy(n_lo: usize, n_hi: usize) -> impl Strategy<Value = PriorBySum> {
    (n_lo..=n_hi)
        .prop_flat_map(|n| proptest::collection::vec(0.01f64..1.0, n + 1))
        .prop_map(|raw| {
            let s: f64 = raw.iter().sum();
            let mut lam: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let n = lam.len() - 1;
            lam[n] = 1.0 - lam[..n].iter().sum::<f64>();
            PriorBySum::new(lam).unwrap()
        })
}

fn dist_strategy() -> impl Strategy<Value = DiscreteDist> {
    proptest::collection::vec((0u8..=10, 0.05f64..1.0), 1..=5).prop_map(|atoms| {
        let s: f64 = atoms.iter().map(|a| a.1).sum();
        DiscreteDist::new(atoms.into_iter().map(|(x, p)| (x as f64 / 10.0, p / s))).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linsys_identities(prior in prior_strategy(2, 12)) {
        let s = solve_linsys(&prior).unwrap();
        prop_assert!((s.x_star + s.y_star - slack_total(&prior)).abs() < 1e-9);
        prop_assert!(s.x_star >= 0.0 && s.y_star >= 0.0);
        for k in 2..=prior.n() {
            prop_assert!(s.a[k] >= 0.0 && s.b[k] >= 0.0);
            prop_assert!((s.a[k] + s.b[k] - (k as f64 - 2.0) / k as f64).abs() < 1e-9);
        }
        if prior.n() > 2 {
            prop_assert!(s.b[prior.n()] > 0.0);
        }
    }

    #[test]
    fn thresholds_ordered(prior in prior_strategy(2, 12)) {
        let th = optimal_thresholds(&prior, Convention::Appendix).unwrap();
        prop_assert!(th.t1 >= 0.5 - 1e-12 && th.t1 <= 1.0);
        prop_assert!(th.t0 >= 0.0 && th.t0 <= th.t1 + 1e-12);
    }

    #[test]
    fn optimal_design_is_calibrated_and_beats_full_info(prior in prior_strategy(2, 8)) {
        let fam = optimal_marginals(&prior).unwrap();
        prop_assert!(check_calibration_feasible(&prior, &fam, 1e-9).unwrap().feasible);
        let sig = design_optimal(&prior).unwrap();
        prop_assert!(verify_calibration(&sig, 1e-9).passed);
        for (k, plan) in sig.plans.iter().enumerate() {
            prop_assert!(check_plan_feasible(plan, fam.f1(k), fam.f0(k), 1e-9).feasible);
        }
        let r = revenue(&sig);
        prop_assert!(r >= prior.full_info_revenue() - 1e-12);
        prop_assert!(r <= 1.0 + 1e-12);
    }

    #[test]
    fn ir_design_properties(prior in prior_strategy(3, 7), eps in prop_oneof![Just(0.2), Just(0.1)]) {
        if let Ok(sig) = design_ir(&prior, eps) {
            prop_assert!(verify_calibration(&sig, 1e-8).passed);
            let r = revenue(&sig);
            prop_assert!(r <= prior.welfare() + 1e-9);
            prop_assert!(exante_utility(&sig).per_bidder[0] >= -1e-9);
            let opt = revenue(&design_optimal(&prior).unwrap());
            if region(&prior).unwrap() == 1 {
                prop_assert!(r >= opt - eps);
            } else {
                prop_assert!((r - prior.welfare()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn general_coupling_is_optimal(f1 in dist_strategy(), f0 in dist_strategy(), n in 4usize..=6, kk in 0usize..8) {
        let k = 2 + kk % (n - 3);
        let plan = correlate_general(k, Some(&f1), Some(&f0), n).unwrap();
        prop_assert!(check_plan_feasible(&plan, Some(&f1), Some(&f0), 1e-9).feasible);
        let ub = secmax_upper_bound(k, Some(&f1), Some(&f0), n).unwrap();
        prop_assert!((plan.expected_secmax() - ub).abs() < 1e-9);
        let bf = brute_force_transport(k, Some(&f1), Some(&f0), n).unwrap();
        prop_assert!((plan.expected_secmax() - bf).abs() < 1e-7);
    }

    #[test]
    fn single_click_plan_matches_lp(f11 in dist_strategy(), f10 in dist_strategy(), n in 2usize..=6) {
        let sol = correlate_k1_lp(&f11, &f10, n).unwrap();
        prop_assert!(sol.is_monotone());
        let plan = plan_from_k1(&sol, &f11, &f10, n).unwrap();
        prop_assert!(check_plan_feasible(&plan, Some(&f11), Some(&f10), 1e-9).feasible);
        prop_assert!((plan.expected_secmax() - sol.value).abs() < 1e-9);
        prop_assert!(sol.value <= secmax_upper_bound(1, Some(&f11), Some(&f10), n).unwrap() + 1e-9);
    }

    #[test]
    fn symmetrize_preserves_revenue(
        prior in prior_strategy(2, 3),
        bids in proptest::collection::vec((0u8..=4, 0u8..=4, 0u8..=4, 0.1f64..1.0), 16),
    ) {
        let n = prior.n();
        let mut raw = RawSignaling::new();
        for mask in 0..1usize << n {
            let o: Vec<u8> = (0..n).map(|i| ((mask >> i) & 1) as u8).collect();
            let rows: Vec<(Vec<f64>, f64)> = bids[2 * mask..2 * mask + 2]
                .iter()
                .map(|&(a, b, c, w)| ([a, b, c][..n].iter().map(|&v| v as f64 / 4.0).collect(), w))
                .collect();
            let tot: f64 = rows.iter().map(|r| r.1).sum();
            raw.insert(o, rows.into_iter().map(|(b, w)| (b, w / tot)).collect());
        }
        let sym = symmetrize(&raw, &prior).unwrap();
        prop_assert!((revenue(&sym) - raw_revenue(&raw, &prior)).abs() < 1e-12);
        prop_assert!(symmetry_defect(&sym) < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ir_structure(prior in prior_strategy(3, 8), eps in prop_oneof![Just(0.25), Just(0.1), Just(0.05)]) {
        if let Ok(irm) = ir_marginals(&prior, eps) {
            let cap = 2 * irm.seq.m + 2;
            for k in 0..=prior.n() {
                for f in [irm.family.f1(k), irm.family.f0(k)].into_iter().flatten() {
                    prop_assert!(f.len() <= cap);
                }
            }
            let sig = design_ir(&prior, eps).unwrap();
            prop_assert!((ir_revenue(&prior, &irm).unwrap() - revenue(&sig)).abs() < 1e-9);
            for row in &sig.plans[1].rows {
                prop_assert!(row.bids[1..].iter().all(|&b| b < row.bids[0]));
            }
        }
    }

    #[test]
    fn ir_revenue_monotone_in_epsilon(prior in prior_strategy(3, 6)) {
        prop_assume!(region(&prior).unwrap() == 1);
        let revs: Vec<f64> = [0.2, 0.1, 0.05, 0.02]
            .iter()
            .filter_map(|&e| ir_marginals(&prior, e).ok().map(|irm| ir_revenue(&prior, &irm).unwrap()))
            .collect();
        prop_assert!(revs.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{:?}", revs);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn grid_lp_bounded_by_design(prior in prior_strategy(2, 2), extra in proptest::collection::vec(1u8..10, 0..4)) {
        let opt = revenue(&design_optimal(&prior).unwrap());
        let coarse = GridSpec::new(extra.iter().map(|&v| v as f64 / 10.0)).unwrap();
        let fine = GridSpec::new(extra.iter().map(|&v| v as f64 / 10.0).chain([0.25, 0.75])).unwrap();
        let (gc, gf) = (grid_lp_optimal(&prior, &coarse).unwrap(), grid_lp_optimal(&prior, &fine).unwrap());
        prop_assert!(gc <= gf + 1e-9);
        prop_assert!(gf <= opt + 1e-6);
    }
}
