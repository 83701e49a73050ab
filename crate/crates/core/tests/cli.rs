use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_gazelab");

const TINY: [&str; 14] = [
    "--set",
    "batch_size=4",
    "--set",
    "model.gen_channels=2",
    "--set",
    "model.res_blocks=1",
    "--set",
    "model.disc_channels=2",
    "--set",
    "perceptual.width_div=32",
    "--set",
    "max_steps=2",
    "--set",
    "n_critic=1",
];

fn gazelab(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .env_remove("GAZELAB_DATA_DIR")
        .output()
        .expect("spawn gazelab")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = gazelab(args, cwd);
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "{args:?} failed: {stdout}{}",
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

fn run_dir(stdout: &str, cwd: &Path) -> PathBuf {
    let line = stdout
        .lines()
        .find_map(|l| l.strip_prefix("run directory: "))
        .expect("run directory line");
    cwd.join(line)
}

fn exit_code(args: &[&str], cwd: &Path) -> i32 {
    gazelab(args, cwd).status.code().expect("exit code")
}

/// Synthetic frames for two subjects, prepared into a manifest with one
/// test subject.
fn prepared(dir: &Path) -> PathBuf {
    ok(&["synth-data", "--out-dir", "raw", "--subjects", "2"], dir);
    let out = ok(
        &["prepare-data", "--input-dir", "raw", "--manifest-out", "data/manifest.csv", "--n-test", "1"],
        dir,
    );
    assert!(out.contains("84 patches, 1 train / 1 test subjects"), "{out}");
    dir.join("data/manifest.csv")
}

#[test]
fn full_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let manifest = prepared(dir);
    let m = manifest.to_str().unwrap();

    let mut args = vec!["train", "--manifest", m, "--out", "runs"];
    args.extend(TINY);
    let train_dir = run_dir(&ok(&args, dir), dir);
    let ck = train_dir.join("checkpoints/final.ckpt");
    assert!(ck.exists());
    let echoed = std::fs::read_to_string(train_dir.join("effective_config.txt")).unwrap();
    assert!(echoed.contains("model.gen_channels = 2"), "{echoed}");
    assert_eq!(std::fs::read_to_string(train_dir.join("train_log.jsonl")).unwrap().lines().count(), 2);

    let mut resume = vec!["train", "--manifest", m, "--out", "runs", "--resume", ck.to_str().unwrap()];
    resume.extend(TINY);
    resume.extend(["--set", "max_steps=3"]);
    let resumed = ok(&resume, dir);
    assert!(resumed.contains("trained 3 steps"), "{resumed}");

    let est_dir = run_dir(
        &ok(
            &[
                "train-estimator",
                "--manifest",
                m,
                "--set",
                "estimator.epochs=1",
                "--set",
                "estimator.architecture=backbone",
                "--set",
                "estimator.width=2",
                "--out",
                "runs",
            ],
            dir,
        ),
        dir,
    );
    let est = est_dir.join("estimator.ckpt");
    assert!(est.exists());

    let patch = "data/patches/0001_2m_0P_0V_0H_left.png";
    let c = ck.to_str().unwrap();
    ok(&["redirect", "--checkpoint", c, "--image", patch, "--grid", "--output", "grid.png"], dir);
    assert_eq!(image::image_dimensions(dir.join("grid.png")).unwrap(), (448, 192));
    ok(
        &["redirect", "--checkpoint", c, "--image", patch, "--yaw", "-5", "--pitch", "10", "--output", "one.png"],
        dir,
    );
    assert_eq!(image::image_dimensions(dir.join("one.png")).unwrap(), (64, 64));

    let e = est.to_str().unwrap();
    let eval_out = ok(
        &["evaluate", "--set", "redirector=ground_truth", "--manifest", m, "--estimator", e, "--out", "runs"],
        dir,
    );
    let eval_dir = run_dir(&eval_out, dir);
    let all = eval_out.lines().find(|l| l.starts_with("all")).expect("overall row");
    let cols: Vec<&str> = all.split_whitespace().collect();
    assert_eq!(cols[1], "840");
    assert_eq!(cols[2].parse::<f64>().unwrap(), 0.0);
    for f in ["report.csv", "report.json", "pairs.csv", "curve_lpips.csv", "effective_config.txt"] {
        assert!(eval_dir.join(f).exists(), "{f}");
    }

    let mut ablate = vec![
        "ablate",
        "--manifest",
        m,
        "--estimator",
        e,
        "--variant",
        "full,no_gaze",
        "--out",
        "runs",
        "--set",
        "train.max_steps=1",
        "--set",
        "train.n_critic=1",
        "--set",
        "train.batch_size=4",
        "--set",
        "train.model.gen_channels=2",
        "--set",
        "train.model.res_blocks=1",
        "--set",
        "train.model.disc_channels=2",
        "--set",
        "train.perceptual.width_div=32",
    ];
    let ablate_dir = run_dir(&ok(&ablate, dir), dir);
    let csv = std::fs::read_to_string(ablate_dir.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    ablate.extend(["--variant", "no_adv"]);
    assert_eq!(exit_code(&ablate, dir), 2);

    let aug_out = ok(
        &[
            "augment",
            "--checkpoint",
            c,
            "--manifest",
            m,
            "--out",
            "runs",
            "--set",
            "study.raw_estimator.epochs=1",
            "--set",
            "study.raw_estimator.architecture=backbone",
            "--set",
            "study.raw_estimator.width=2",
            "--set",
            "study.augmented_estimator.epochs=1",
            "--set",
            "study.augmented_estimator.architecture=backbone",
            "--set",
            "study.augmented_estimator.width=2",
        ],
        dir,
    );
    let aug_dir = run_dir(&aug_out, dir);
    for f in ["augmentation.csv", "estimator_raw.ckpt", "estimator_augmented.ckpt", "augmented/manifest_augmented.csv"] {
        assert!(aug_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let manifest = prepared(dir);
    let m = manifest.to_str().unwrap();
    assert_eq!(exit_code(&["train", "--manifest", m, "--set", "nope=1", "--out", "runs"], dir), 2);
    assert_eq!(exit_code(&["train", "--manifest", m, "--set", "n_critic=0", "--out", "runs"], dir), 2);
    assert_eq!(exit_code(&["train", "--manifest", "missing.csv", "--out", "runs"], dir), 3);
    assert_eq!(exit_code(&["train", "--out", "runs"], dir), 2);
    assert_eq!(
        exit_code(&["evaluate", "--set", "redirector=ground_truth", "--manifest", m, "--out", "runs"], dir),
        2
    );
    assert_eq!(
        exit_code(
            &["redirect", "--checkpoint", "missing.ckpt", "--image", "x.png", "--yaw", "0", "--pitch", "0"],
            dir
        ),
        3
    );
    assert_ne!(exit_code(&["redirect", "--checkpoint", "a", "--image", "b"], dir), 0);
}
