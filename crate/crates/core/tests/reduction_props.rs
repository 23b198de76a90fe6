use lru_mor::linalg::{frequency_response, hankel_singular_values};
use lru_mor::lru::{LruInit, LruParams, LruState};
use lru_mor::mor::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lru(seed: u64, n: usize) -> LruParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = LruParams::init(&mut rng, n, 2, 1, &LruInit { r_min: 0.1, r_max: 0.95 });
    p.d = DMatrix::from_fn(1, 2, |_, _| rng.random_range(-1.0..1.0));
    p
}

fn method() -> impl Strategy<Value = ReductionMethod> {
    prop::sample::select(ReductionMethod::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn bound_is_monotone_and_vanishes_at_full_order(seed in any::<u64>(), n in 1usize..9) {
        let s = hankel_singular_values(&lru(seed, n).to_state_space()).unwrap();
        prop_assert_eq!(error_bound(&s, n), 0.0);
        for r in 0..n {
            prop_assert!(error_bound(&s, r) >= error_bound(&s, r + 1));
        }
    }

    #[test]
    fn balanced_error_respects_bound(seed in any::<u64>(), n in 1usize..8, r in 0usize..8) {
        let ss = lru(seed, n).to_state_space();
        let r = r.min(n);
        for m in [ReductionMethod::Bt, ReductionMethod::Bsp] {
            let (_, rep) = reduce_block(&ss, r, m).unwrap();
            prop_assert!(rep.hinf_error_estimate <= rep.bound.unwrap() + 1e-6, "{} r={}", m, r);
        }
    }

    #[test]
    fn reduced_blocks_are_stable_with_requested_order(seed in any::<u64>(), n in 1usize..8, r in 0usize..8, m in method()) {
        let p = lru(seed, n);
        let r = r.min(n);
        let (q, rep) = reduce_lru(&p, r, m).unwrap();
        prop_assert_eq!(q.n_states(), r);
        prop_assert_eq!(rep.retained_order, r);
        prop_assert_eq!(rep.removed_eigenvalues.len(), n - r);
        prop_assert!(q.eigenvalues().iter().all(|z| z.norm() < 1.0));
    }

    #[test]
    fn perturbation_methods_keep_dc_gain(seed in any::<u64>(), n in 1usize..8, r in 0usize..8) {
        let p = lru(seed, n);
        let g = frequency_response(&p.to_state_space(), 0.0).unwrap();
        for m in [ReductionMethod::Msp, ReductionMethod::Bsp] {
            let (q, _) = reduce_lru(&p, r.min(n), m).unwrap();
            let gq = frequency_response(&q.to_state_space(), 0.0).unwrap();
            prop_assert!((&g - &gq).norm() <= 1e-9 * (1.0 + g.norm()));
        }
    }

    #[test]
    fn modal_truncation_keeps_the_slowest_modes(seed in any::<u64>(), n in 1usize..9, r in 0usize..9) {
        let p = lru(seed, n);
        let r = r.min(n);
        let (q, _) = reduce_lru(&p, r, ReductionMethod::Mt).unwrap();
        let mut mods: Vec<f64> = p.eigenvalues().iter().map(|z| z.norm()).collect();
        mods.sort_by(|a, b| b.total_cmp(a));
        let mut kept: Vec<f64> = q.eigenvalues().iter().map(|z| z.norm()).collect();
        kept.sort_by(|a, b| b.total_cmp(a));
        prop_assert_eq!(&kept[..], &mods[..r]);
    }

    #[test]
    fn full_order_reduction_preserves_outputs(seed in any::<u64>(), n in 1usize..7, m in method()) {
        let p = lru(seed, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let u = DMatrix::from_fn(2, 120, |_, _| rng.random_range(-1.0..1.0));
        let (q, _) = reduce_lru(&p, n, m).unwrap();
        let y = p.simulate_sequential(&u, &LruState::zeros(n));
        let yq = q.simulate_sequential(&u, &LruState::zeros(n));
        prop_assert!((yq - y).amax() <= 1e-8);
    }
}
