mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uavad::autoencoder::StackedAutoencoder;
use uavad::lstm::LstmState;
use uavad::Matrix;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

fn random_input(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Matrix {
    Matrix::from_fn(t, d, |_, _| rng.gen_range(-1.0..1.0))
}

fn worst(dims: &[usize], full: bool, weight_c: Option<f64>, seed: u64) -> (String, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stack = StackedAutoencoder::new(dims, rng.gen()).unwrap();
    let chain = if full { stack.full_chain() } else { stack.stage_chain(0) };
    let t = rng.gen_range(1..=5);
    let input = random_input(&mut rng, t, dims[0]);
    let init: Vec<LstmState> = stack
        .zero_states(&chain)
        .into_iter()
        .map(|s| LstmState {
            h: s.h.iter().map(|_| rng.gen_range(-0.5..0.5)).collect(),
            c: s.c.iter().map(|_| rng.gen_range(-0.5..0.5)).collect(),
        })
        .collect();
    support::finite_difference_check(&stack, &chain, &input, &init, weight_c, STEP)
        .into_iter()
        .map(|(label, a, n)| (label, support::relative_error(a, n)))
        .fold((String::new(), 0.0), |acc, x| if x.1 > acc.1 { x } else { acc })
}

#[test]
fn sub_autoencoder_gradients_plain_mse() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..20 {
        let d = rng.gen_range(2..=4);
        let latent = rng.gen_range(1..d);
        let (label, err) = worst(&[d, latent], false, None, seed);
        assert!(err < TOLERANCE, "seed {seed}: {label} rel err {err:e}");
    }
}

#[test]
fn sub_autoencoder_gradients_weighted() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..20 {
        let d = rng.gen_range(2..=4);
        let latent = rng.gen_range(1..d);
        let c = rng.gen_range(0.05..0.8);
        let (label, err) = worst(&[d, latent], false, Some(c), seed + 100);
        assert!(err < TOLERANCE, "seed {seed}: {label} rel err {err:e}");
    }
}

#[test]
fn full_stack_gradients() {
    for (seed, c) in [(7, None), (8, Some(0.3))] {
        let (label, err) = worst(&[4, 3, 2], true, c, seed);
        assert!(err < TOLERANCE, "{label} rel err {err:e}");
    }
}
