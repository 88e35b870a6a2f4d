mod support;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uavad::ingest::FrameSeries;
use uavad::preprocess::{ComponentCount, NormalizationParams, PcaModel};
use uavad::Matrix;

/// Rows with clearly separated per-axis scales, rotated by a random mixing.
fn anisotropic(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mix: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..d).map(|j| rng.gen_range(-1.0..1.0) * 2f64.powi(-(j as i32))).collect();
            (0..d).map(|i| (0..d).map(|j| mix[i][j] * z[j]).sum::<f64>() + 3.0).collect()
        })
        .collect()
}

fn series(rows: &[Vec<f64>]) -> FrameSeries {
    let d = rows[0].len();
    FrameSeries::new(
        "x",
        (0..d).map(|i| format!("f{i}")).collect(),
        (0..rows.len() as i64).collect(),
        Matrix::from_rows(rows).unwrap(),
        vec![false; rows.len()],
    )
    .unwrap()
}

#[test]
fn components_match_power_iteration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let d = rng.gen_range(1..=8);
        let n = rng.gen_range(20..=200);
        let rows = anisotropic(&mut rng, n, d);
        let model = PcaModel::fit(&[series(&rows)], ComponentCount::Fixed(d)).unwrap();
        let oracle = support::power_eigen(&support::covariance(&rows));
        let total: f64 = oracle.iter().map(|p| p.0).sum();
        let mut cum = 0.0;
        let report = model.variance_report();
        for (k, (lambda, v)) in oracle.iter().enumerate() {
            let col = model.components.column(k);
            let same: f64 = col.iter().zip(v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let flip: f64 = col.iter().zip(v).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
            assert!(same.min(flip) < 1e-8, "case {case} component {k}: {}", same.min(flip));
            assert!((model.explained_variance[k] - lambda).abs() < 1e-10 * total.max(1.0));
            cum += lambda;
            assert!((report[k] - cum / total).abs() < 1e-10, "case {case} ratio {k}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn components_are_orthonormal(seed in any::<u64>(), d in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = anisotropic(&mut rng, 60, d);
        let model = PcaModel::fit(&[series(&rows)], ComponentCount::Fixed(d)).unwrap();
        let gram = model.components.transpose().matmul(&model.components).unwrap();
        prop_assert!(gram.max_abs_diff(&Matrix::identity(d)) < 1e-10);
        prop_assert!(model.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn full_rank_projection_inverts(seed in any::<u64>(), d in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = anisotropic(&mut rng, 40, d);
        let s = series(&rows);
        let model = PcaModel::fit(std::slice::from_ref(&s), ComponentCount::Fixed(d)).unwrap();
        let back = model.back_project(&model.apply(&s).unwrap()).unwrap();
        prop_assert!(back.frames.max_abs_diff(&s.frames) < 1e-9);
    }

    #[test]
    fn zscore_gives_zero_mean_unit_std(seed in any::<u64>(), d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = series(&anisotropic(&mut rng, 50, d));
        let b = series(&anisotropic(&mut rng, 30, d));
        let params = NormalizationParams::fit(&[a.clone(), b.clone()]).unwrap();
        let mut all: Vec<Vec<f64>> = vec![Vec::new(); d];
        for s in [&a, &b] {
            let z = params.apply(s).unwrap();
            for row in z.frames.iter_rows() {
                for (j, v) in row.iter().enumerate() {
                    all[j].push(*v);
                }
            }
        }
        for col in all {
            let (m, sd) = uavad::matrix::mean_std(&col);
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((sd - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn variance_target_picks_smallest_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = anisotropic(&mut rng, 150, 5);
    let full = PcaModel::fit(&[series(&rows)], ComponentCount::Fixed(5)).unwrap();
    let ratios = full.variance_report();
    let target = (ratios[1] + ratios[2]) / 2.0;
    let m = PcaModel::fit(&[series(&rows)], ComponentCount::VarianceTarget(target)).unwrap();
    assert_eq!(m.k(), 3);
}
