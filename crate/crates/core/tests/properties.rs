mod common;

use optmmd::{
    eval_kernel, gram_bundle, grid_select, joint_gram, mmd2_u, p_value, sample_null_naive, sample_null_optimized,
    t_statistic, variance_hat, witness, Criterion, Dataset, KernelSpec, SelectConfig,
};
use proptest::prelude::*;

fn dataset(m: usize, d: usize) -> impl Strategy<Value = Dataset> {
    prop::collection::vec(-3.0f64..3.0, m * d).prop_map(move |v| Dataset::new(m, d, v).unwrap())
}

/// Two samples of equal size `m` in dimension `d`.
fn pair(m: std::ops::Range<usize>, d: std::ops::Range<usize>) -> impl Strategy<Value = (Dataset, Dataset)> {
    (m, d).prop_flat_map(|(m, d)| (dataset(m, d), dataset(m, d)))
}

fn permuted(x: &Dataset, perm: &[usize]) -> Dataset {
    let rows: Vec<&[f64]> = perm.iter().map(|&i| x.row(i)).collect();
    Dataset::from_rows(&rows).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_values_in_unit_interval_and_symmetric(
        a in prop::collection::vec(-5.0f64..5.0, 3),
        b in prop::collection::vec(-5.0f64..5.0, 3),
        log_bw in -3.0f64..3.0,
        w in prop::collection::vec(0.1f64..3.0, 3),
    ) {
        for spec in [KernelSpec::rbf(log_bw.exp()).unwrap(), KernelSpec::ard(log_bw.exp(), &w).unwrap()] {
            let kab = eval_kernel(&spec, &a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&kab));
            prop_assert_eq!(kab, eval_kernel(&spec, &b, &a).unwrap());
            prop_assert_eq!(eval_kernel(&spec, &a, &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn optimized_sampler_matches_naive(
        (x, y) in pair(4..50, 1..3),
        b in 1usize..24,
        seed in any::<u64>(),
        threads in 1usize..5,
    ) {
        let k = joint_gram(&KernelSpec::rbf(1.0).unwrap(), &x, &y).unwrap();
        let fast = sample_null_optimized(&k, b, seed, threads).unwrap();
        let slow = sample_null_naive(&k, b, seed).unwrap();
        prop_assert_eq!(fast.values.len(), b);
        for (f, s) in fast.values.iter().zip(&slow.values) {
            prop_assert_eq!(f.to_bits(), s.to_bits());
        }
    }

    #[test]
    fn p_value_bounds((x, y) in pair(4..20, 1..3), b in 1usize..50, seed in any::<u64>(), stat in -1.0f64..1.0) {
        let k = joint_gram(&KernelSpec::rbf(0.8).unwrap(), &x, &y).unwrap();
        let null = sample_null_optimized(&k, b, seed, 1).unwrap();
        let p = p_value(&null, stat);
        prop_assert!(p >= 1.0 / (b as f64 + 1.0) && p <= 1.0);
    }

    #[test]
    fn max_t_choice_is_the_argmax((x, y) in pair(6..25, 1..3), lo in -2.0f64..0.0, span in 0.5f64..4.0, count in 2usize..8) {
        let grid: Vec<KernelSpec> = (0..count)
            .map(|i| KernelSpec::rbf((lo + span * i as f64 / (count - 1) as f64).exp()).unwrap())
            .collect();
        let floor = 1e-8;
        let cfg = SelectConfig { floor, ..SelectConfig::default() };
        let report = grid_select(&x, &y, &grid, Criterion::MaxT, &cfg).unwrap();
        let mut best = 0;
        let mut best_t = f64::NEG_INFINITY;
        for (i, spec) in grid.iter().enumerate() {
            let t = t_statistic(&gram_bundle(spec, &x, &y).unwrap(), floor).unwrap();
            if t > best_t {
                best = i;
                best_t = t;
            }
        }
        prop_assert_eq!(report.chosen, best);
    }

    #[test]
    fn mmd2_of_identical_samples_is_zero((x, _) in pair(2..30, 1..4), log_bw in -2.0f64..2.0) {
        let g = gram_bundle(&KernelSpec::rbf(log_bw.exp()).unwrap(), &x, &x).unwrap();
        prop_assert_eq!(mmd2_u(&g).unwrap(), 0.0);
    }

    #[test]
    fn mmd2_is_symmetric_in_the_samples((x, y) in pair(2..30, 1..4)) {
        let spec = KernelSpec::rbf(1.3).unwrap();
        let a = mmd2_u(&gram_bundle(&spec, &x, &y).unwrap()).unwrap();
        let b = mmd2_u(&gram_bundle(&spec, &y, &x).unwrap()).unwrap();
        prop_assert!((a - b).abs() <= 1e-13, "{} vs {}", a, b);
    }

    #[test]
    fn estimators_invariant_under_joint_row_permutation(
        (x, y) in pair(4..25, 1..3),
        keys in prop::collection::vec(any::<u32>(), 25),
    ) {
        let m = x.rows();
        let mut perm: Vec<usize> = (0..m).collect();
        perm.sort_by_key(|&i| (keys[i], i));
        let spec = KernelSpec::rbf(0.9).unwrap();
        let g = gram_bundle(&spec, &x, &y).unwrap();
        let gp = gram_bundle(&spec, &permuted(&x, &perm), &permuted(&y, &perm)).unwrap();
        prop_assert!((mmd2_u(&g).unwrap() - mmd2_u(&gp).unwrap()).abs() <= 1e-13);
        let (v, vp) = (variance_hat(&g).unwrap(), variance_hat(&gp).unwrap());
        prop_assert!((v - vp).abs() <= 1e-13, "{} vs {}", v, vp);
    }

    #[test]
    fn witness_identities((x, y) in pair(1..20, 1..3), probes in (1usize..10).prop_flat_map(|n| dataset(n, 2))) {
        let d = x.dim();
        let probes = Dataset::from_rows(
            &(0..probes.rows()).map(|i| probes.row(i)[..1].repeat(d)).collect::<Vec<_>>(),
        )
        .unwrap();
        let spec = KernelSpec::rbf(0.7).unwrap();
        let same = witness(&spec, &x, &x, &probes).unwrap();
        prop_assert!(same.iter().all(|&v| v == 0.0));
        let fwd = witness(&spec, &x, &y, &probes).unwrap();
        let back = witness(&spec, &y, &x, &probes).unwrap();
        for (i, (f, b)) in fwd.iter().zip(&back).enumerate() {
            prop_assert_eq!(*f, -*b);
            let direct = (0..x.rows()).map(|j| common::rbf(x.row(j), probes.row(i), 0.7)).sum::<f64>() / x.rows() as f64
                - (0..y.rows()).map(|j| common::rbf(y.row(j), probes.row(i), 0.7)).sum::<f64>() / y.rows() as f64;
            prop_assert!(rel_close(*f, direct, 1e-12) || (f - direct).abs() < 1e-15);
        }
    }
}
