use clusterse::design::{enumerate_assignments, observe};
use clusterse::estimators::estimate_ate;
use clusterse::oracles::{
    asymptotic_variances, corollary1_gap, estimands, eta_diff_variances,
    expected_clustered_variance, expected_robust_variance, true_conditional_variance,
    true_unconditional_variance,
};
use clusterse::population::{
    CrossArm, Population, ShockDistribution, ShockFamily, ShockModel, ShockRealization, Stratum,
};
use proptest::prelude::*;

fn eta_strategy() -> impl Strategy<Value = ShockDistribution> {
    let family = prop_oneof![
        (0.0..2.0f64).prop_map(|sd| ShockFamily::Normal { sd }),
        (0.0..2.0f64).prop_map(|half_width| ShockFamily::Uniform { half_width }),
        (0.0..2.0f64).prop_map(|a| ShockFamily::TwoPoint { a, p: 0.5 }),
        Just(ShockFamily::Degenerate),
    ];
    let mode = prop_oneof![
        Just(CrossArm::Identical),
        Just(CrossArm::Independent),
        (-1.0..1.0f64).prop_map(CrossArm::Correlated),
    ];
    (family, mode).prop_map(|(f, m)| ShockDistribution::new(f, m))
}

fn stratum_strategy(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Stratum> {
    n.prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(0.0..2.0f64, n),
            prop::collection::vec(0.0..2.0f64, n),
            eta_strategy(),
            2..=n - 2,
        )
    })
    .prop_map(|(y0, y1, eps_sd0, eps_sd1, eta, n_treat)| Stratum {
        id: 0,
        y0,
        y1,
        eps_sd0,
        eps_sd1,
        eps_cross_arm: CrossArm::Independent,
        eta,
        n_treat,
    })
}

fn population(
    k: std::ops::Range<usize>,
    n: std::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = Population> {
    prop::collection::vec(stratum_strategy(n), k)
        .prop_map(|strata| Population::new(strata, ShockModel::Additive).unwrap())
}

/// All strata sized like the first.
fn equalize(pop: &Population) -> Population {
    let first = &pop.strata()[0];
    let n = first.n();
    let strata = pop
        .strata()
        .iter()
        .map(|s| {
            let take = |v: &Vec<f64>| v.iter().cycle().take(n).copied().collect::<Vec<_>>();
            Stratum {
                y0: take(&s.y0),
                y1: take(&s.y1),
                eps_sd0: take(&s.eps_sd0),
                eps_sd1: take(&s.eps_sd1),
                n_treat: first.n_treat,
                ..s.clone()
            }
        })
        .collect();
    Population::new(strata, ShockModel::Additive).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sigma2_plus_dominates_sigma2(pop in population(2..8, 4..=9)) {
        let a = asymptotic_variances(&pop).unwrap();
        prop_assert!(a.sigma2_plus >= a.sigma2 - 1e-12);
    }

    #[test]
    fn k_times_unconditional_variance_is_sigma2(pop in population(2..8, 4..=9)) {
        let k = pop.k() as f64;
        let a = asymptotic_variances(&pop).unwrap();
        prop_assert!(close(k * true_unconditional_variance(&pop).unwrap(), a.sigma2));
    }

    #[test]
    fn total_variance_decomposition(pop in population(2..8, 4..=9)) {
        let k = pop.k() as f64;
        let v_cond = true_conditional_variance(&pop, None).unwrap().v_cond;
        let eta_part: f64 = pop
            .weights()
            .iter()
            .zip(eta_diff_variances(&pop))
            .map(|(w, v)| w * w * v)
            .sum::<f64>()
            / (k * k);
        prop_assert!(close(true_unconditional_variance(&pop).unwrap(), v_cond + eta_part));
    }

    #[test]
    fn conditional_variance_ignores_eta_values(pop in population(2..5, 4..=7), shift in -3.0..3.0f64) {
        let shocks = ShockRealization {
            eta0: vec![shift; pop.k()],
            eta1: (0..pop.k()).map(|k| shift * k as f64).collect(),
            ..pop.zero_shocks()
        };
        let with = true_conditional_variance(&pop, Some(&shocks)).unwrap().v_cond;
        let without = true_conditional_variance(&pop, None).unwrap().v_cond;
        prop_assert!(close(with, without));
    }

    #[test]
    fn identical_shocks_leave_the_estimand_unchanged(pop in population(2..6, 4..=7), eta in prop::collection::vec(-3.0..3.0f64, 6)) {
        let k = pop.k();
        let shocks = ShockRealization { eta0: eta[..k].to_vec(), eta1: eta[..k].to_vec(), ..pop.zero_shocks() };
        let e = estimands(&pop, Some(&shocks)).unwrap();
        prop_assert_eq!(e.given_eta().unwrap(), e.ate);
        let zero = estimands(&pop, Some(&pop.zero_shocks())).unwrap();
        prop_assert!(close(zero.given_all().unwrap(), zero.ate));
        prop_assert!(close(zero.given_eta().unwrap(), zero.ate));
    }

    #[test]
    fn gap_equals_difference_of_expected_estimators(pop in population(2..7, 4..=8)) {
        let pop = equalize(&pop);
        let k = pop.k() as f64;
        let gap = corollary1_gap(&pop).unwrap();
        let diff = k * (expected_clustered_variance(&pop).unwrap() - expected_robust_variance(&pop, None).unwrap());
        prop_assert!((gap - diff).abs() <= 1e-10 * (1.0 + gap.abs()), "{} vs {}", gap, diff);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Exact assignment variance of the estimator equals the closed form when
    /// unit shocks are switched off.
    #[test]
    fn enumeration_matches_conditional_variance(pop in population(2..4, 4..=7)) {
        prop_assume!(clusterse::design::assignment_count(&pop.sizes()) <= 100_000);
        let strata = pop.strata().iter().map(|s| Stratum { eps_sd0: vec![0.0; s.n()], eps_sd1: vec![0.0; s.n()], ..s.clone() }).collect();
        let pop = Population::new(strata, ShockModel::Additive).unwrap();
        let po = pop.realize_outcomes(&pop.zero_shocks()).unwrap();
        let (mut m1, mut m2) = (0.0, 0.0);
        for (a, p) in enumerate_assignments(&pop.sizes(), 100_000).unwrap() {
            let est = estimate_ate(&observe(&po, &a).unwrap());
            m1 += p * est;
            m2 += p * est * est;
        }
        let closed = true_conditional_variance(&pop, None).unwrap().v_cond;
        prop_assert!((m2 - m1 * m1 - closed).abs() <= 1e-10 * (1.0 + closed), "{} vs {}", m2 - m1 * m1, closed);
        prop_assert!(close(m1, estimands(&pop, None).unwrap().ate));
    }
}
