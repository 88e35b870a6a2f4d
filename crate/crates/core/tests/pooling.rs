mod support;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uavad::ingest::{pool_timestamps, FrameSeries};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pooling_matches_exhaustive_scan(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (set, cfg) = support::random_stream_set(&mut rng);
        let expected = support::pool_oracle(&set, &cfg);
        if expected.timestamps.is_empty() {
            prop_assert!(pool_timestamps(&set, &cfg).is_err());
            return Ok(());
        }
        let got = pool_timestamps(&set, &cfg).unwrap();
        prop_assert_eq!(&got.timestamps, &expected.timestamps);
        prop_assert_eq!(&got.labels, &expected.labels);
        let rows: Vec<Vec<f64>> = got.frames.iter_rows().map(|r| r.to_vec()).collect();
        prop_assert_eq!(rows, expected.rows);
    }

    #[test]
    fn grid_points_are_stride_multiples(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (set, cfg) = support::random_stream_set(&mut rng);
        let Ok(got) = pool_timestamps(&set, &cfg) else { return Ok(()) };
        prop_assert!(got.timestamps.iter().all(|t| t % cfg.stride_ms as i64 == 0));
        prop_assert!(got.timestamps.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn frames_csv_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fs = loop {
        let (set, cfg) = support::random_stream_set(&mut rng);
        if let Ok(fs) = pool_timestamps(&set, &cfg) {
            break fs;
        }
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rand.frames.csv");
    fs.write_csv(&path).unwrap();
    let back = FrameSeries::read_csv(&path).unwrap();
    assert_eq!(back, fs);
}
