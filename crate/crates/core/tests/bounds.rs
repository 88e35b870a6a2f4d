use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use uavad::autoencoder::StackedAutoencoder;
use uavad::Matrix;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn latents_nonnegative_and_outputs_bounded(seed in any::<u64>(), t in 1usize..30, scale in 0.1f64..50.0) {
        let stack = StackedAutoencoder::new(&[6, 4, 3, 2], seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let g = Normal::new(0.0, scale).unwrap();
        let x = Matrix::from_fn(t, 6, |_, _| g.sample(&mut rng));
        let (recon, latents) = stack.forward_stack(&x).unwrap();
        for z in &latents {
            prop_assert!(z.as_slice().iter().all(|&v| (0.0..1.0).contains(&v)));
        }
        prop_assert!(recon.as_slice().iter().all(|v| v.abs() < 1.0));
    }
}
