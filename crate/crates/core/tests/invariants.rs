use proptest::prelude::*;

use cscodec::measurement::{tile_measurements, untile_measurements};
use cscodec::sampling::BlockMeasurements;
use cscodec::sampling::{SamplingConfig, SamplingOperator};
use cscodec::training::rate_loss;
use cscodec::GrayImage;

fn operator(ratio: f64, b: usize, l: usize, raw: &[f64]) -> SamplingOperator {
    let cfg = SamplingConfig::new(ratio, b, l, 0).unwrap();
    let mut op = SamplingOperator::new(cfg).unwrap();
    let n = op.raw_weights().len();
    for (dst, src) in op.raw_weights_mut().iter_mut().zip(raw.iter().cycle().take(n)) {
        *dst = *src;
    }
    op.refresh().unwrap();
    op
}

proptest! {
    #[test]
    fn filters_stay_normalized_for_any_raw_weights(
        ratio in 0.05f64..0.5,
        raw in prop::collection::vec(-3.0f64..3.0, 1..40),
    ) {
        let op = operator(ratio, 8, 3, &raw);
        for (k, f) in op.normalized_weights().chunks(64).enumerate() {
            prop_assert!(f.iter().all(|v| *v >= 0.0));
            prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for r in 0..8 {
                for c in 0..8 {
                    if !op.in_window(k, r, c) {
                        prop_assert_eq!(f[r * 8 + c], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn sampling_is_linear(
        seed in any::<u64>(),
        alpha in -2.0f64..2.0,
        beta in -2.0f64..2.0,
    ) {
        let op = SamplingOperator::new(SamplingConfig::new(0.25, 4, 2, seed).unwrap()).unwrap();
        let a = GrayImage::from_fn(8, 12, |x, y| ((x * 7 + y * 3 + seed as usize) % 11) as f64 / 10.0);
        let b = GrayImage::from_fn(8, 12, |x, y| ((x * 5 + y * 13) % 7) as f64 / 6.0);
        let mix = GrayImage::from_fn(8, 12, |x, y| alpha * a.get(x, y) + beta * b.get(x, y));
        let (ya, yb, ym) = (op.sample(&a).unwrap(), op.sample(&b).unwrap(), op.sample(&mix).unwrap());
        for i in 0..ym.values.len() {
            prop_assert!((ym.values[i] - alpha * ya.values[i] - beta * yb.values[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn measurements_of_unit_range_images_stay_in_unit_range(
        seed in any::<u64>(),
        pixels in prop::collection::vec(0.0f64..=1.0, 256),
    ) {
        let op = SamplingOperator::new(SamplingConfig::new(0.2, 8, 3, seed).unwrap()).unwrap();
        let img = GrayImage::from_fn(16, 16, |x, y| pixels[y * 16 + x]);
        let y = op.sample(&img).unwrap();
        prop_assert!(y.values.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
    }

    #[test]
    fn tiling_round_trips(
        rows in 1usize..5,
        cols in 1usize..5,
        n_b in 1usize..80,
        seed in any::<u64>(),
    ) {
        let mut bm = BlockMeasurements::zeros(rows, cols, n_b);
        for (i, v) in bm.values.iter_mut().enumerate() {
            *v = ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 / 999.0;
        }
        let plane = tile_measurements(&bm).unwrap();
        prop_assert_eq!(untile_measurements(&plane).unwrap(), bm);
    }

    #[test]
    fn rate_loss_is_nonnegative_and_zero_on_constants(
        c in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let op = SamplingOperator::new(SamplingConfig::new(0.3, 8, 3, seed).unwrap()).unwrap();
        let flat = tile_measurements(&op.sample(&GrayImage::filled(16, 24, c)).unwrap()).unwrap();
        prop_assert!(rate_loss(&flat, 2.0).abs() < 1e-20);
        let busy = GrayImage::from_fn(16, 24, |x, y| ((x ^ y) & 1) as f64 * c);
        let plane = tile_measurements(&op.sample(&busy).unwrap()).unwrap();
        prop_assert!(rate_loss(&plane, 2.0) >= 0.0);
    }
}
