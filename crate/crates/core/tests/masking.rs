use lvmae::masking::{mask_count, random_mask, reassemble, semantic_mask, MaskPlan, MaskStrategy};
use lvmae::numerics::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn counts_stay_in_range(n in 2usize..300, ratio in 0.001f64..0.999) {
        let m = mask_count(n, ratio);
        prop_assert!(m >= 1 && m < n);
        prop_assert!(m as f64 <= (ratio * n as f64).max(1.0) + 1e-6);
    }

    #[test]
    fn random_plans_partition_the_sequence(n in 2usize..64, ratio in 0.05f64..0.95, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = random_mask(n, ratio, &mut rng).unwrap();
        prop_assert_eq!(plan.masked_idx.len(), mask_count(n, ratio));
        prop_assert!(plan.masked_idx.windows(2).all(|w| w[0] < w[1]));
        let vis = plan.visible_idx();
        prop_assert_eq!(vis.len() + plan.masked_idx.len(), n);
        prop_assert!(vis.iter().all(|&i| !plan.is_masked(i)));
        prop_assert!(MaskPlan::new(n, plan.masked_idx.clone(), MaskStrategy::Random, ratio).is_ok());

        let visible: Vec<usize> = vis.clone();
        let masked: Vec<usize> = plan.masked_idx.clone();
        prop_assert_eq!(reassemble(&plan, &visible, &masked).unwrap(), (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn semantic_never_masks_the_first_token_first(n in 3usize..40, seed: u64) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * 5).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let e = Tensor::matrix(n, 5, data).unwrap();
        let plan = semantic_mask(&e, 0.5).unwrap();
        // Token 0 scores +1, the maximum, so it is masked only when every
        // other token also scores +1.
        prop_assert!(!plan.is_masked(0));
        prop_assert_eq!(semantic_mask(&e, 0.5).unwrap(), plan);
    }
}

#[test]
fn same_seed_same_mask() {
    let a = random_mask(50, 0.4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = random_mask(50, 0.4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a, b);
}
