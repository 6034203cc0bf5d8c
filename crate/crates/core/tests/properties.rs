use proptest::prelude::*;
use submcmc::diagnostics::acf;
use submcmc::estimators::{
    block_poisson_from_dhat, block_range, cpm_index, estimate_from_diffs, plan_sigma_target,
    sampling_fraction_srs_wor, PlanningInputs,
};
use submcmc::{ChainTrace, Theta};

proptest! {
    #[test]
    fn estimate_is_total_plus_scaled_mean(
        n in 1usize..10_000,
        sum_q in -1e4f64..1e4,
        diffs in prop::collection::vec(-10.0f64..10.0, 1..50),
    ) {
        let est = estimate_from_diffs(n, sum_q, &diffs, &Theta::zeros(1)).unwrap();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let want = sum_q + n as f64 * mean;
        prop_assert!((est.value - want).abs() <= 1e-9 * (1.0 + want.abs()));
        prop_assert!(est.sample_variance >= 0.0);
        prop_assert_eq!(est.m, diffs.len());
    }

    #[test]
    fn constant_differences_are_estimated_exactly(
        n in 1usize..10_000,
        d in -5.0f64..5.0,
        m in 1usize..40,
    ) {
        let est = estimate_from_diffs(n, 3.0, &vec![d; m], &Theta::zeros(1)).unwrap();
        prop_assert_eq!(est.sample_variance, 0.0);
        prop_assert!((est.value - (3.0 + n as f64 * d)).abs() <= 1e-9 * (1.0 + (n as f64 * d).abs()));
    }

    #[test]
    fn planned_m_is_the_ceiling_and_monotone_in_the_target(
        n in 2usize..100_000,
        sigma2 in 1e-8f64..1.0,
        target in 0.1f64..10.0,
    ) {
        let p = plan_sigma_target(n, sigma2, target).unwrap();
        let exact = (n as f64).powi(2) * sigma2 / target;
        prop_assert!(p.m >= 1);
        prop_assert!(p.m as f64 >= exact.min(1e18) - 1e-6 || p.m == n);
        let doubled = plan_sigma_target(n, sigma2, 2.0 * target).unwrap();
        prop_assert!(doubled.m <= p.m);
    }

    #[test]
    fn sampling_fraction_increases_with_n(
        n in 1usize..1_000_000,
        sigma2 in 1e-4f64..1.0,
        target in 0.5f64..5.0,
    ) {
        let f = |n| sampling_fraction_srs_wor(&PlanningInputs::new(n, sigma2, target));
        let (a, b) = (f(n), f(n + 1));
        prop_assert!(a > 0.0 && a < 1.0);
        prop_assert!(b > a);
    }

    #[test]
    fn block_poisson_sign_is_the_product_of_factor_signs(
        dhat in prop::collection::vec(-20.0f64..20.0, 0..12),
        a in -10.0f64..10.0,
        lambda in 1usize..8,
    ) {
        prop_assume!(dhat.iter().all(|d| d != &a));
        let (log_abs, sign) = block_poisson_from_dhat(1.5, lambda, a, dhat.iter().copied());
        let lam = lambda as f64;
        let negatives = dhat.iter().filter(|&&d| d < a).count();
        prop_assert_eq!(sign, if negatives % 2 == 0 { 1 } else { -1 });
        let want = 1.5 + a + lam + dhat.iter().map(|d| ((d - a) / lam).abs().ln()).sum::<f64>();
        prop_assert!((log_abs - want).abs() <= 1e-9 * (1.0 + want.abs()));
    }

    #[test]
    fn cpm_index_stays_in_range(u in -40.0f64..40.0, n in 1usize..1_000_000) {
        prop_assert!(cpm_index(u, n) < n);
    }

    #[test]
    fn block_ranges_partition_the_slots(len in 1usize..500, groups in 1usize..50) {
        prop_assume!(groups <= len);
        let mut next = 0;
        for g in 0..groups {
            let r = block_range(len, groups, g);
            prop_assert_eq!(r.start, next);
            prop_assert!(!r.is_empty());
            next = r.end;
        }
        prop_assert_eq!(next, len);
    }

    #[test]
    fn autocorrelations_are_bounded(x in prop::collection::vec(-100.0f64..100.0, 10..200)) {
        prop_assume!(x.iter().any(|v| (v - x[0]).abs() > 1e-6));
        let r = acf(&x, x.len() - 1).unwrap();
        prop_assert!((r[0] - 1.0).abs() < 1e-12);
        prop_assert!(r.iter().all(|v| v.abs() <= 1.0 + 1e-9));
    }

    #[test]
    fn trace_csv_round_trips(
        rows in prop::collection::vec(
            (prop::array::uniform2(-1e6f64..1e6), any::<bool>(), -1e8f64..0.0, prop::bool::ANY),
            1..40,
        ),
    ) {
        let mut t = ChainTrace::new("pmmh", 0, 0, 2, rows.len());
        for (theta, acc, ll, pos) in &rows {
            t.push(&Theta::from_column_slice(theta), *acc, *ll, if *pos { 1 } else { -1 });
        }
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = ChainTrace::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), t.len());
        for i in 0..t.len() {
            prop_assert_eq!(back.draw(i), t.draw(i));
            prop_assert_eq!(back.accept[i], t.accept[i]);
            prop_assert_eq!(back.loglik_est[i], t.loglik_est[i]);
            prop_assert_eq!(back.sign[i], t.sign[i]);
        }
    }
}
