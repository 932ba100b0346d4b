use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cscodec::checkpoint;
use cscodec::measurement::{tile_measurements, CodecRegistry};
use cscodec::training::{rate_loss, TrainConfig, Trainer};
use cscodec::GrayImage;

fn small_config(seed: u64) -> TrainConfig {
    let mut c = TrainConfig::new(0.25);
    c.block_size = 8;
    c.window_size = 3;
    c.seed = seed;
    c.network.channels = 8;
    c.network.blocks_per_level = 1;
    c.network.tail_blocks = 1;
    c.loss.batch_size = 4;
    c.schedule.crop_size = 32;
    c.schedule.learning_rate = 1e-3;
    c.schedule.augment = false;
    c
}

fn smooth_batch(seed: u64, n: usize) -> Vec<GrayImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (a, b, p) = (rng.gen_range(0.05..0.2), rng.gen_range(0.05..0.2), rng.gen_range(0.0..6.0));
            GrayImage::from_fn(32, 32, |x, y| 0.5 + 0.4 * ((a * x as f64 + b * y as f64) + p).sin())
        })
        .collect()
}

#[test]
fn loss_falls_on_a_fixed_batch() {
    let batch = smooth_batch(1, 4);
    let mut trainer = Trainer::new(small_config(3), CodecRegistry::builtin()).unwrap();
    let losses: Vec<f64> = (0..200).map(|_| trainer.train_step(&batch).unwrap().loss.total).collect();
    let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = losses[190..].iter().sum::<f64>() / 10.0;
    assert!(tail < 0.5 * head, "loss {head} -> {tail}");
    let rises = losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rises * 5 <= losses.len(), "{rises} rising steps out of {}", losses.len());
}

#[test]
fn learned_filters_remain_local_and_normalized() {
    let batch = smooth_batch(2, 4);
    let mut trainer = Trainer::new(small_config(5), CodecRegistry::builtin()).unwrap();
    for _ in 0..30 {
        trainer.train_step(&batch).unwrap();
    }
    let op = &trainer.model().sampling;
    for (k, f) in op.normalized_weights().chunks(64).enumerate() {
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(f.iter().all(|v| *v >= 0.0));
        let outside = (0..64).filter(|i| !op.in_window(k, i / 8, i % 8)).all(|i| f[i] == 0.0);
        assert!(outside, "filter {k} leaked outside its window");
    }
}

#[test]
fn rate_weight_smooths_the_measurement_plane() {
    let batch = smooth_batch(4, 4);
    let probe: Vec<GrayImage> = smooth_batch(9, 4);
    let plane_rate = |gamma: f64, seed: u64| {
        let mut c = small_config(seed);
        c.loss.gamma = gamma;
        c.schedule.learning_rate = 1e-2;
        let mut trainer = Trainer::new(c, CodecRegistry::builtin()).unwrap();
        for _ in 0..60 {
            trainer.train_step(&batch).unwrap();
        }
        let model = trainer.model();
        probe
            .iter()
            .map(|img| rate_loss(&tile_measurements(&model.sampling.sample(img).unwrap()).unwrap(), 2.0))
            .sum::<f64>()
    };
    for seed in [11, 12, 13] {
        let (loose, tight) = (plane_rate(0.0, seed), plane_rate(50.0, seed));
        assert!(tight < loose, "seed {seed}: gamma 50 gave {tight}, gamma 0 gave {loose}");
    }
}

#[test]
fn checkpoint_file_reproduces_measurements() {
    let batch = smooth_batch(6, 4);
    let mut trainer = Trainer::new(small_config(8), CodecRegistry::builtin()).unwrap();
    for _ in 0..5 {
        trainer.train_step(&batch).unwrap();
    }
    let model = trainer.into_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.safetensors");
    checkpoint::save(&model, &path).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    let a = model.measure(&batch[0]).unwrap();
    let b = loaded.measure(&batch[0]).unwrap();
    assert_eq!(a, b);
}
