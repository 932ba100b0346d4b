use std::path::Path;
use std::process::{Command, Output};

fn cscodec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cscodec"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("CSCODEC_J2K_ENCODER")
        .env_remove("CSCODEC_J2K_DECODER")
        .env_remove("CSCODEC_BPG_ENCODER")
        .env_remove("CSCODEC_BPG_DECODER")
        .env("PATH", "/nonexistent")
        .output()
        .expect("spawn cscodec")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_pgm(path: &Path, w: usize, h: usize) {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend((0..w * h).map(|i| ((i % w) * 255 / w.max(2) + (i / w) % 7) as u8));
    std::fs::write(path, bytes).unwrap();
}

fn pgm_size(path: &Path) -> (usize, usize) {
    let text = std::fs::read(path).unwrap();
    let header: Vec<String> = String::from_utf8_lossy(&text[..20.min(text.len())])
        .split_whitespace()
        .map(str::to_owned)
        .collect();
    (header[1].parse().unwrap(), header[2].parse().unwrap())
}

#[test]
fn quant8_rate_is_ratio_times_eight() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.pgm");
    write_pgm(&img, 256, 256);
    let out = dir.path().join("a.csc");
    let o = cscodec(&["--ratio", "0.25", "--codec", "quant8", "encode", img.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(stdout(&o).trim(), "bpp 2.000000");
    assert_eq!(std::fs::metadata(&out).unwrap().len(), 34 + 256 * 256 / 4);
}

#[test]
fn decode_restores_source_size_for_ragged_images() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("b.pgm");
    write_pgm(&img, 90, 100);
    let c = dir.path().join("b.csc");
    let rec = dir.path().join("b_rec.pgm");
    assert!(cscodec(&["--ratio", "0.25", "encode", img.to_str().unwrap(), "-o", c.to_str().unwrap()]).status.success());
    let o = cscodec(&["decode", c.to_str().unwrap(), "-o", rec.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(pgm_size(&rec), (90, 100));
}

#[test]
fn exit_codes_name_the_failure() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("c.pgm");
    write_pgm(&img, 64, 64);
    let out = dir.path().join("c.csc");
    let (i, o) = (img.to_str().unwrap(), out.to_str().unwrap());
    let code = |args: &[&str]| cscodec(args).status.code();
    assert_eq!(code(&["--ratio", "0", "encode", i, "-o", o]), Some(3));
    assert_eq!(code(&["encode", "/no/such/file.pgm", "-o", o]), Some(4));
    assert_eq!(code(&["--codec", "j2k", "encode", i, "-o", o]), Some(6));
    let junk = dir.path().join("junk.csc");
    std::fs::write(&junk, b"not a container").unwrap();
    assert_eq!(code(&["decode", junk.to_str().unwrap(), "-o", o]), Some(5));
    assert_eq!(code(&["encode"]), Some(2));
}

#[test]
fn short_training_run_produces_a_usable_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(
        &cfg,
        "ratio = 0.25\nblock_size = 8\nseed = 3\n\
         [network]\nchannels = 4\nblocks_per_level = 1\ntail_blocks = 1\n\
         [loss]\nbatch_size = 2\n\
         [schedule]\nlearning_rate = 1e-3\nepochs = 2\niterations_per_epoch = 3\ncrop_size = 32\n",
    )
    .unwrap();
    let model = dir.path().join("m.safetensors");
    let log = dir.path().join("log.csv");
    let state = dir.path().join("state.json");
    let o = cscodec(&[
        "--config", cfg.to_str().unwrap(), "train", "--synthetic", "4",
        "-o", model.to_str().unwrap(), "--log", log.to_str().unwrap(), "--state", state.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    let rows = std::fs::read_to_string(&log).unwrap();
    assert_eq!(rows.lines().count(), 3, "{rows}");
    assert!(state.exists());

    let resumed = cscodec(&[
        "train", "--resume", state.to_str().unwrap(), "--synthetic", "4", "--epochs", "3",
        "-o", model.to_str().unwrap(), "--log", log.to_str().unwrap(),
    ]);
    assert!(resumed.status.success(), "{resumed:?}");
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 4);

    let img = dir.path().join("d.pgm");
    write_pgm(&img, 40, 24);
    let o = cscodec(&["reconstruct", img.to_str().unwrap(), "--model", model.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let fields: Vec<&str> = text.split_whitespace().collect();
    assert!(fields.contains(&"bpp") && fields.contains(&"psnr"), "{fields:?}");
}
