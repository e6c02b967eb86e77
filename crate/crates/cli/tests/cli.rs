//! CLI behavior: flag validation, seeds, manifests, output formats.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_v2c")
}

fn work_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("v2c-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn synth_small(dir: &PathBuf, seed: &str) {
    let status = Command::new(bin())
        .args(["synth", "--out"])
        .arg(dir)
        .args([
            "--clips",
            "12",
            "--hands",
            "2",
            "--actions",
            "4",
            "--objects",
            "3",
            "--dim",
            "16",
            "--frames-min",
            "8",
            "--frames-max",
            "14",
            "--noise",
            "0.02",
            "--seed",
            seed,
        ])
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn synth_same_seed_twice_gives_identical_trees() {
    let root = work_dir("synth-twice");
    let a = root.join("a");
    let b = root.join("b");
    synth_small(&a, "1");
    synth_small(&b, "1");
    for file in [
        "annotations.tsv",
        "mean.v2cm",
        "features/clip0000.v2cf",
        "features/clip0007.v2cf",
    ] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let _ = std::fs::remove_dir_all(&root);
}

#[test]
fn synth_rejects_negative_noise_and_occupied_dir() {
    let root = work_dir("synth-validate");
    let out = Command::new(bin())
        .args(["synth", "--out"])
        .arg(root.join("x"))
        .args(["--noise", "-1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    let occupied = root.join("occupied");
    synth_small(&occupied, "2");
    let again = Command::new(bin())
        .args(["synth", "--out"])
        .arg(&occupied)
        .output()
        .unwrap();
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let _ = std::fs::remove_dir_all(&root);
}

#[test]
fn synth_confusion_pair_emits_both_verbs() {
    let root = work_dir("synth-confuse");
    let status = Command::new(bin())
        .args(["synth", "--out"])
        .arg(&root)
        .args([
            "--clips",
            "64",
            "--hands",
            "2",
            "--actions",
            "8",
            "--objects",
            "3",
            "--dim",
            "16",
            "--frames-min",
            "8",
            "--frames-max",
            "12",
            "--seed",
            "3",
            "--confuse",
            "stir:shake",
            "--force",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let annotations = std::fs::read_to_string(root.join("annotations.tsv")).unwrap();
    assert!(annotations.contains("\tstir\t"));
    assert!(annotations.contains("\tshake\t"));
    let _ = std::fs::remove_dir_all(&root);
}

#[test]
fn train_echoes_reference_defaults_and_ednet_manifest_records_joint_false() {
    let root = work_dir("train-flags");
    let data = root.join("data");
    synth_small(&data, "4");

    let run = root.join("run");
    let out = Command::new(bin())
        .args(["train", "--annotations"])
        .arg(data.join("annotations.tsv"))
        .args(["--out"])
        .arg(&run)
        .args([
            "--epochs",
            "1",
            "--ednet",
            "--tcn-filters",
            "8,8,8",
            "--tcn-fc",
            "8",
            "--hidden",
            "8",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    // reference defaults echoed: n=30, batch=16, lr=0.0001
    assert!(stdout.contains("n=30"), "{stdout}");
    assert!(stdout.contains("batch=16"), "{stdout}");
    assert!(stdout.contains("lr=0.0001"), "{stdout}");
    assert!(stdout.contains("baseline"), "{stdout}");

    let manifest = std::fs::read_to_string(run.join("manifest.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(json["config"]["joint"], serde_json::Value::Bool(false));
    assert_eq!(json["command"], "train");
    let _ = std::fs::remove_dir_all(&root);
}

#[test]
fn env_seed_overrides_flag() {
    let root = work_dir("env-seed");
    let a = root.join("a");
    let b = root.join("b");
    // different --seed flags, same V2C_SEED: identical datasets
    for (dir, flag_seed) in [(&a, "7"), (&b, "99")] {
        let status = Command::new(bin())
            .env("V2C_SEED", "123")
            .args(["synth", "--out"])
            .arg(dir)
            .args([
                "--clips",
                "6",
                "--hands",
                "2",
                "--actions",
                "2",
                "--objects",
                "2",
            ])
            .args([
                "--dim",
                "8",
                "--frames-min",
                "6",
                "--frames-max",
                "9",
                "--seed",
                flag_seed,
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(
        std::fs::read(a.join("annotations.tsv")).unwrap(),
        std::fs::read(b.join("annotations.tsv")).unwrap()
    );
    let _ = std::fs::remove_dir_all(&root);
}

#[test]
fn decode_prints_command_action_and_flag() {
    let root = work_dir("decode");
    let data = root.join("data");
    synth_small(&data, "5");
    let run = root.join("run");
    let status = Command::new(bin())
        .args(["train", "--annotations"])
        .arg(data.join("annotations.tsv"))
        .args(["--mean-frame"])
        .arg(data.join("mean.v2cm"))
        .args(["--out"])
        .arg(&run)
        .args([
            "--hidden",
            "16",
            "--frames",
            "10",
            "--epochs",
            "5",
            "--batch",
            "4",
            "--lr",
            "1e-3",
            "--tcn-filters",
            "8,8,8",
            "--tcn-fc",
            "8",
            "--seed",
            "5",
        ])
        .status()
        .unwrap();
    assert!(status.success());

    let out = Command::new(bin())
        .args(["decode", "--checkpoint"])
        .arg(run.join("checkpoint.v2c"))
        .args(["--features"])
        .arg(data.join("features/clip0000.v2cf"))
        .args(["--mean-frame"])
        .arg(data.join("mean.v2cm"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let line = stdout.lines().next().unwrap();
    let fields: Vec<&str> = line.split('\t').collect();
    assert_eq!(fields.len(), 3, "{line}");
    assert!(fields[2] == "truncated" || fields[2] == "complete");

    // decoding twice is deterministic
    let again = Command::new(bin())
        .args(["decode", "--checkpoint"])
        .arg(run.join("checkpoint.v2c"))
        .args(["--features"])
        .arg(data.join("features/clip0000.v2cf"))
        .args(["--mean-frame"])
        .arg(data.join("mean.v2cm"))
        .output()
        .unwrap();
    assert_eq!(out.stdout, again.stdout);

    // missing feature file is a clean error
    let missing = Command::new(bin())
        .args(["decode", "--checkpoint"])
        .arg(run.join("checkpoint.v2c"))
        .args(["--features", "/nonexistent/clip.v2cf"])
        .output()
        .unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
    let _ = std::fs::remove_dir_all(&root);
}

#[test]
fn eval_detects_feature_dim_mismatch_and_writes_dump() {
    let root = work_dir("eval");
    let data = root.join("data");
    synth_small(&data, "6");
    let run = root.join("run");
    let status = Command::new(bin())
        .args(["train", "--annotations"])
        .arg(data.join("annotations.tsv"))
        .args(["--out"])
        .arg(&run)
        .args([
            "--hidden",
            "12",
            "--frames",
            "10",
            "--epochs",
            "3",
            "--batch",
            "4",
            "--lr",
            "1e-3",
            "--tcn-filters",
            "8,8,8",
            "--tcn-fc",
            "8",
            "--seed",
            "6",
        ])
        .status()
        .unwrap();
    assert!(status.success());

    let dump = root.join("dump.tsv");
    let out = Command::new(bin())
        .args(["eval", "--checkpoint"])
        .arg(run.join("checkpoint.v2c"))
        .args(["--annotations"])
        .arg(data.join("annotations.tsv"))
        .args(["--dump"])
        .arg(&dump)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Bleu_1"), "{stdout}");
    let dump_text = std::fs::read_to_string(&dump).unwrap();
    assert_eq!(dump_text.lines().count(), 12);
    assert!(dump_text.lines().all(|l| l.split('\t').count() == 6));

    // the thread count must not change any result
    let dump2 = root.join("dump2.tsv");
    let threaded = Command::new(bin())
        .args(["eval", "--checkpoint"])
        .arg(run.join("checkpoint.v2c"))
        .args(["--annotations"])
        .arg(data.join("annotations.tsv"))
        .args(["--threads", "2", "--dump"])
        .arg(&dump2)
        .output()
        .unwrap();
    assert!(threaded.status.success());
    assert_eq!(dump_text, std::fs::read_to_string(&dump2).unwrap());

    // a dataset with a different feature dimension is rejected up front
    let other = root.join("other");
    let status = Command::new(bin())
        .args(["synth", "--out"])
        .arg(&other)
        .args([
            "--clips",
            "4",
            "--hands",
            "2",
            "--actions",
            "2",
            "--objects",
            "2",
        ])
        .args([
            "--dim",
            "8",
            "--frames-min",
            "6",
            "--frames-max",
            "9",
            "--seed",
            "6",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let mismatch = Command::new(bin())
        .args(["eval", "--checkpoint"])
        .arg(run.join("checkpoint.v2c"))
        .args(["--annotations"])
        .arg(other.join("annotations.tsv"))
        .output()
        .unwrap();
    assert!(!mismatch.status.success());
    let stderr = String::from_utf8_lossy(&mismatch.stderr);
    assert!(stderr.contains("feature dim"), "{stderr}");
    let _ = std::fs::remove_dir_all(&root);
}

#[test]
fn gradcheck_eps_is_recorded_in_manifest() {
    let root = work_dir("gradcheck-manifest");
    let manifest = root.join("manifest.json");
    let status = Command::new(bin())
        .args(["gradcheck", "--eps", "1e-6", "--manifest"])
        .arg(&manifest)
        .status()
        .unwrap();
    assert!(status.success());
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(json["config"]["eps"], serde_json::json!(1e-6));
    let _ = std::fs::remove_dir_all(&root);
}
