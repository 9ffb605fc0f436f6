//! End-to-end tests that spawn the compiled `denoiser` binary and check
//! exit codes, stderr wording, and the files each command leaves behind.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use denoise_core::eval::psnr;
use denoise_core::io::{load_fimg, load_png, save_png};
use denoise_core::nn::checkpoint::{save_checkpoint, Checkpoint};
use denoise_core::nn::{Architecture, Network};
use denoise_core::ImageTensor;
use tempfile::TempDir;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_denoiser")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("spawn denoiser")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Smooth synthetic RGB image; phase varies per index so a directory of
/// them is not degenerate.
fn synth_image(size: usize, idx: usize) -> ImageTensor {
    let mut data = Vec::with_capacity(size * size * 3);
    let phase = idx as f64 * 1.7;
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                let u = (x as f64 * 0.23 + phase + c as f64).sin();
                let v = (y as f64 * 0.17 + phase * 0.5).cos();
                data.push(0.5 + 0.22 * u * v + 0.15 * u);
            }
        }
    }
    ImageTensor::from_data(size, size, 3, data).unwrap()
}

fn write_corpus(dir: &Path, count: usize, size: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..count {
        save_png(&dir.join(format!("img{i:02}.png")), &synth_image(size, i)).unwrap();
    }
}

fn write_config(path: &Path, body: &str) {
    std::fs::write(path, body).unwrap();
}

/// Trains into `out` and returns the final checkpoint path.
fn tiny_train(tmp: &Path, out: &str, total_batches: u64, seed: u64) -> PathBuf {
    let data = tmp.join("data");
    if !data.exists() {
        write_corpus(&data, 4, 48);
    }
    let out_dir = tmp.join(out);
    let cfg = tmp.join(format!("{out}.cfg"));
    write_config(
        &cfg,
        &format!(
            "data_dir = {}\nout_dir = {}\npatch_size = 16\nbatch_size = 2\n\
             total_batches = {total_batches}\nseed = {seed}\n",
            data.display(),
            out_dir.display()
        ),
    );
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    out_dir.join("final.ckpt")
}

#[test]
fn train_writes_checkpoint_and_loss_csv() {
    let tmp = TempDir::new().unwrap();
    let ckpt = tiny_train(tmp.path(), "run", 10, 7);
    assert!(ckpt.is_file());
    let csv = std::fs::read_to_string(tmp.path().join("run/loss.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "batch,loss,lr");
    assert_eq!(lines.len(), 11);
    assert!(lines[1].starts_with("0,"));
    assert!(lines[10].starts_with("9,"));
}

#[test]
fn identical_configs_produce_identical_artifacts() {
    let tmp = TempDir::new().unwrap();
    let a = tiny_train(tmp.path(), "a", 6, 3);
    let b = tiny_train(tmp.path(), "b", 6, 3);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert_eq!(
        std::fs::read(tmp.path().join("a/loss.csv")).unwrap(),
        std::fs::read(tmp.path().join("b/loss.csv")).unwrap()
    );
}

#[test]
fn missing_required_key_exits_one_and_names_it() {
    let tmp = TempDir::new().unwrap();
    let out = run(&["train", "--out_dir", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr_of(&out).contains("data_dir"), "{}", stderr_of(&out));
}

#[test]
fn unknown_flag_exits_one() {
    let out = run(&["train", "--sgima", "0.1"]);
    assert_eq!(code(&out), 1);
    assert!(stderr_of(&out).contains("sgima"));
}

#[test]
fn nonexistent_checkpoint_exits_one() {
    let tmp = TempDir::new().unwrap();
    let img = tmp.path().join("in.png");
    save_png(&img, &synth_image(32, 0)).unwrap();
    let out = run(&[
        "denoise",
        "--checkpoint",
        "/no/such/file.ckpt",
        "--input",
        img.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    let err = stderr_of(&out);
    assert!(err.contains("checkpoint") && err.contains("no such file"), "{err}");
}

#[test]
fn flags_override_the_config_file() {
    let tmp = TempDir::new().unwrap();
    let clean = tmp.path().join("clean");
    std::fs::create_dir(&clean).unwrap();
    let flat = ImageTensor::from_data(64, 64, 3, vec![0.5; 64 * 64 * 3]).unwrap();
    save_png(&clean.join("flat.png"), &flat).unwrap();
    let out_dir = tmp.path().join("noisy");
    let cfg = tmp.path().join("mk.cfg");
    write_config(
        &cfg,
        &format!(
            "in_dir = {}\nout_dir = {}\nsigma = 0.05\nseed = 11\n",
            clean.display(),
            out_dir.display()
        ),
    );
    let out = run(&[
        "make-noisy",
        "--config",
        cfg.to_str().unwrap(),
        "--sigma",
        "0.2",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    let noisy = load_fimg(&out_dir.join("flat_noisy.fimg")).unwrap();
    let clean_png = load_png(&clean.join("flat.png")).unwrap();
    let std = noisy.sub(&clean_png).unwrap().std();
    // 64*64*3 samples: far outside the file's 0.05 if the flag won.
    assert!((std - 0.2).abs() < 0.02, "noise std {std}");
}

/// The conv stack sits on a global skip connection, so an all-zero network
/// is the identity map. With alpha = 1 the doubly-noisy correction is
/// 2 f(Z) - Z, which returns the input exactly; the written PNG must match
/// the input pixel for pixel.
#[test]
fn identity_network_denoise_returns_the_input() {
    let tmp = TempDir::new().unwrap();
    let net = Network::<f64>::zeros(Architecture::default()).unwrap();
    let ckpt_path = tmp.path().join("zero.ckpt");
    save_checkpoint(
        &ckpt_path,
        &Checkpoint {
            net,
            step_count: 0,
            base_step: 0,
            config_hash: [0u8; 32],
            adam: None,
        },
    )
    .unwrap();
    let img = tmp.path().join("in.png");
    save_png(&img, &synth_image(32, 1)).unwrap();
    let out = run(&[
        "denoise",
        "--checkpoint",
        ckpt_path.to_str().unwrap(),
        "--input",
        img.to_str().unwrap(),
        "--alpha",
        "1",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));

    let input = load_png(&img).unwrap();
    let corrected = load_png(&tmp.path().join("in_corrected.png")).unwrap();
    assert_eq!(input.data(), corrected.data());
    // Zero net output minus input is zero, so the residual image is flat
    // mid-gray.
    let residual = load_png(&tmp.path().join("in_residual.png")).unwrap();
    let first = residual.data()[0];
    assert!((first - 0.5).abs() < 0.01);
    assert!(residual.data().iter().all(|&v| v == first));
}

#[test]
fn debug_dump_writes_consistent_float_tensors() {
    let tmp = TempDir::new().unwrap();
    // The output layer initializes to zero, so a fresh net is the identity;
    // a few optimizer steps make the residual genuinely nonzero.
    let ckpt = tiny_train(tmp.path(), "init", 5, 21);
    let img = tmp.path().join("probe.png");
    save_png(&img, &synth_image(40, 2)).unwrap();
    let out_dir = tmp.path().join("dn");
    let out = run(&[
        "denoise",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        img.to_str().unwrap(),
        "--out_dir",
        out_dir.to_str().unwrap(),
        "--alpha",
        "1",
        "--debug_dump",
        "true",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    let input = load_fimg(&out_dir.join("probe_input.fimg")).unwrap();
    let raw = load_fimg(&out_dir.join("probe_raw.fimg")).unwrap();
    let residual = load_fimg(&out_dir.join("probe_residual.fimg")).unwrap();
    let corrected = load_fimg(&out_dir.join("probe_corrected.fimg")).unwrap();
    let max_err = |a: &ImageTensor, b: &ImageTensor| {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max)
    };
    // Dumps are f32, so allow f32 rounding.
    let recon_residual = input.sub(&raw).unwrap();
    assert!(max_err(&recon_residual, &residual) < 1e-6);
    let recon_corrected = raw.scale(2.0).sub(&input).unwrap();
    assert!(max_err(&recon_corrected, &corrected) < 1e-6);
    // The init is random, not zero: the residual must carry signal.
    assert!(residual.data().iter().any(|v| v.abs() > 1e-4));
}

#[test]
fn eval_writes_a_deterministic_report() {
    let tmp = TempDir::new().unwrap();
    let ckpt = tiny_train(tmp.path(), "net", 0, 5);
    let test_dir = tmp.path().join("test");
    write_corpus(&test_dir, 2, 48);
    let report1 = tmp.path().join("r1.csv");
    let report2 = tmp.path().join("r2.csv");
    for report in [&report1, &report2] {
        let out = run(&[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--test_dir",
            test_dir.to_str().unwrap(),
            "--out_dir",
            tmp.path().to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
            "--draws",
            "2",
            "--seed",
            "9",
            "--figures",
            "true",
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    }
    let text = std::fs::read_to_string(&report1).unwrap();
    assert!(text.contains("aggregate_mean"), "{text}");
    assert!(text.lines().any(|l| l.starts_with("img00")));
    assert_eq!(
        std::fs::read(&report1).unwrap(),
        std::fs::read(&report2).unwrap()
    );
    for i in 0..2 {
        let strip = tmp.path().join("figures").join(format!("img{i:02}_grid.png"));
        assert!(strip.is_file(), "missing {}", strip.display());
    }
}

#[test]
fn eval_without_test_images_exits_one() {
    let tmp = TempDir::new().unwrap();
    let ckpt = tiny_train(tmp.path(), "net", 0, 5);
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--test_dir",
        empty.to_str().unwrap(),
        "--out_dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr_of(&out).contains("no PNG images"), "{}", stderr_of(&out));
}

#[test]
fn oracle_prints_a_pass_table() {
    let out = run(&["oracle", "--seed", "4"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    for col in ["check", "target", "measured", "tolerance", "result"] {
        assert!(text.contains(col), "missing column {col}:\n{text}");
    }
    assert!(text.matches("PASS").count() >= 6, "{text}");
    assert!(!text.contains("FAIL"), "{text}");
}

#[test]
fn make_noisy_hits_the_expected_psnr() {
    let tmp = TempDir::new().unwrap();
    let clean_dir = tmp.path().join("clean");
    write_corpus(&clean_dir, 1, 256);
    let out_dir = tmp.path().join("noisy");
    let out = run(&[
        "make-noisy",
        "--in_dir",
        clean_dir.to_str().unwrap(),
        "--out_dir",
        out_dir.to_str().unwrap(),
        "--sigma",
        "0.1",
        "--seed",
        "13",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    assert!(out_dir.join("img00_noisy.png").is_file());
    let clean = load_png(&clean_dir.join("img00.png")).unwrap();
    let noisy = load_fimg(&out_dir.join("img00_noisy.fimg")).unwrap();
    let db = psnr(&clean, &noisy, 1.0).unwrap();
    assert!((db - 20.0).abs() < 0.05, "psnr {db}");
}

#[test]
fn fine_tune_continues_a_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let base = tiny_train(tmp.path(), "base", 4, 17);
    let out_dir = tmp.path().join("ft");
    let out = run(&[
        "fine-tune",
        "--checkpoint",
        base.to_str().unwrap(),
        "--new_alpha",
        "0.5",
        "--data_dir",
        tmp.path().join("data").to_str().unwrap(),
        "--out_dir",
        out_dir.to_str().unwrap(),
        "--patch_size",
        "16",
        "--batch_size",
        "2",
        "--total_batches",
        "3",
        "--seed",
        "18",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    // 4 base steps + 3 new ones recorded cumulatively.
    assert!(text.contains("fine-tuned 7 steps"), "{text}");
    assert!(out_dir.join("final.ckpt").is_file());
}

#[test]
fn fine_tune_rejects_mask_noise_as_config_error() {
    let tmp = TempDir::new().unwrap();
    let base = tiny_train(tmp.path(), "base", 2, 30);
    let out = run(&[
        "fine-tune",
        "--checkpoint",
        base.to_str().unwrap(),
        "--new_alpha",
        "0.5",
        "--data_dir",
        tmp.path().join("data").to_str().unwrap(),
        "--out_dir",
        tmp.path().join("ft").to_str().unwrap(),
        "--noise",
        "mask",
        "--q",
        "0.5",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr_of(&out).contains("mask"), "{}", stderr_of(&out));
}

#[test]
fn help_paths_exit_cleanly() {
    let none = run(&[]);
    assert_eq!(code(&none), 1);

    let top = run(&["--help"]);
    assert_eq!(code(&top), 0);
    assert!(stdout_of(&top).contains("make-noisy"));

    let train = run(&["train", "--help"]);
    assert_eq!(code(&train), 0);
    let text = stdout_of(&train);
    assert!(text.contains("--data_dir") && text.contains("--total_batches"));
    assert!(!text.contains("--new_alpha"));

    let unknown = run(&["frobnicate"]);
    assert_eq!(code(&unknown), 1);
    assert!(stderr_of(&unknown).contains("frobnicate"));
}
