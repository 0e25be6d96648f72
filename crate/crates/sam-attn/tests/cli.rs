//! End-to-end checks of the `sam-attn` binary: the gen/train/eval/attention
//! pipeline, the flag/config layering, the exit-code contract, and
//! byte-level reproducibility of every artifact.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_sam-attn")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env("SAM_ATTN_LOG", "quiet")
        .output()
        .expect("binary spawns")
}

fn assert_code(out: &Output, want: i32, what: &str) {
    assert_eq!(
        out.status.code(),
        Some(want),
        "{what}: stdout={} stderr={}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Tiny dataset: 3 classes, 6 train + 12 test images each, 30x30.
fn gen_tiny(dir: &Path) -> PathBuf {
    let config = dir.join("gen.cfg");
    std::fs::write(&config, "images_per_class = 6\nimage_size = 30\n").unwrap();
    let out = run_in(
        dir,
        &[
            "gen-data",
            "--out",
            "data",
            "--categories",
            "3",
            "--seed",
            "5",
            "--config",
            config.to_str().unwrap(),
        ],
    );
    assert_code(&out, 0, "gen-data");
    dir.join("data")
}

fn read_dir_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(dir: &Path, prefix: &str, out: &mut Vec<(String, Vec<u8>)>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for path in entries {
            let name = format!("{prefix}/{}", path.file_name().unwrap().to_string_lossy());
            if path.is_dir() {
                walk(&path, &name, out);
            } else {
                out.push((name, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, "", &mut out);
    out
}

/// metrics.csv with the wall-clock column dropped; the rest must be
/// byte-stable across reruns.
fn csv_without_seconds(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0)
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn pipeline_gen_train_eval_attention() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen_tiny(dir);

    let out = run_in(
        dir,
        &[
            "train", "--data", "data", "--mode", "sam", "--epochs", "2", "--batch-size", "6",
            "--seed", "3", "--out", "run",
        ],
    );
    assert_code(&out, 0, "train");
    assert!(stdout(&out).contains("final test_accuracy = "), "{}", stdout(&out));
    assert!(dir.join("run/model.ckpt").is_file());
    let csv = std::fs::read_to_string(dir.join("run/metrics.csv")).unwrap();
    assert!(csv.starts_with("epoch,train_loss,train_ce,train_sam,test_acc,seconds\n"));
    assert_eq!(csv.lines().count(), 3, "header + one line per epoch");

    let out = run_in(dir, &["eval", "run/model.ckpt", "--data", "data"]);
    assert_code(&out, 0, "eval");
    assert!(stdout(&out).starts_with("test_accuracy = 0."), "{}", stdout(&out));

    // Pick any test image from the folder layout gen-data wrote.
    let class_dir = dir.join("data/test/class_001");
    let image = std::fs::read_dir(&class_dir).unwrap().next().unwrap().unwrap().path();
    for kind in ["cam", "gradcam", "sam-pred"] {
        let out = run_in(
            dir,
            &[
                "attention", "run/model.ckpt", image.to_str().unwrap(), "1",
                "--kind", kind, "--out", "maps",
            ],
        );
        assert_code(&out, 0, kind);
        let pgm = std::fs::read(dir.join(format!("maps/{kind}.pgm"))).unwrap();
        assert!(pgm.starts_with(b"P5\n"), "{kind} map is written as binary PGM");
        let ppm = std::fs::read(dir.join(format!("maps/{kind}_overlay.ppm"))).unwrap();
        assert!(ppm.starts_with(b"P6\n"), "{kind} overlay is written as binary PPM");
    }
}

#[test]
fn union_attention_emits_one_file_per_filter_plus_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen_tiny(dir);
    let out = run_in(
        dir,
        &[
            "train", "--data", "data", "--mode", "sam_bilinear", "--epochs", "1",
            "--batch-size", "6", "--k", "3", "--seed", "1", "--out", "run",
        ],
    );
    assert_code(&out, 0, "train sam_bilinear");

    let class_dir = dir.join("data/test/class_000");
    let image = std::fs::read_dir(&class_dir).unwrap().next().unwrap().unwrap().path();
    let out = run_in(
        dir,
        &[
            "attention", "run/model.ckpt", image.to_str().unwrap(),
            "--kind", "union", "--out", "maps",
        ],
    );
    assert_code(&out, 0, "attention union");
    let mut names: Vec<_> = std::fs::read_dir(dir.join("maps"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        vec![
            "union.pgm",
            "union_overlay.ppm",
            "union_part_00.pgm",
            "union_part_01.pgm",
            "union_part_02.pgm",
        ],
        "K + 2 files for K = 3"
    );
}

#[test]
fn exit_codes_split_usage_from_runtime() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen_tiny(dir);

    // Usage problems: exit 2 before any work.
    let usage: Vec<Vec<&str>> = vec![
        vec!["train", "--data", "data", "--mode", "wild"],
        vec!["train", "--data", "data", "--lr", "-0.5"],
        vec!["train", "--data", "data", "--label-proportion", "1.5"],
        vec!["sweep-k", "--data", "data", "--k", "4,4"],
        vec!["sweep-k", "--data", "data", "--k", "0"],
        vec!["no-such-command"],
        vec!["train"],
    ];
    for args in &usage {
        assert_code(&run_in(dir, args), 2, &format!("{args:?}"));
    }

    // An unreadable env filter is also a usage problem.
    let out = Command::new(bin())
        .args(["eval", "nothing.ckpt", "--data", "data"])
        .current_dir(dir)
        .env("SAM_ATTN_LOG", "chatty")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "bad SAM_ATTN_LOG");

    // Runtime problems: exit 1 after configuration resolved.
    let out = run_in(dir, &["train", "--data", "nowhere", "--epochs", "1"]);
    assert_code(&out, 1, "missing dataset root");
    let out = run_in(dir, &["eval", "missing.ckpt", "--data", "data"]);
    assert_code(&out, 1, "missing checkpoint");

    // A well-formed index beyond the class count resolves fine as a flag
    // but fails against the actual model.
    let out = run_in(
        dir,
        &["train", "--data", "data", "--epochs", "1", "--batch-size", "6", "--out", "run"],
    );
    assert_code(&out, 0, "train for class range check");
    let class_dir = dir.join("data/test/class_000");
    let image = std::fs::read_dir(&class_dir).unwrap().next().unwrap().unwrap().path();
    let out = run_in(
        dir,
        &[
            "attention", "run/model.ckpt", image.to_str().unwrap(), "9",
            "--kind", "cam", "--out", "maps",
        ],
    );
    assert_code(&out, 1, "class index out of range");
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(err.contains("out of range"), "{err}");

    // A corrupt checkpoint is a runtime failure naming the file.
    std::fs::write(dir.join("bad.ckpt"), b"not a checkpoint").unwrap();
    let out = run_in(dir, &["eval", "bad.ckpt", "--data", "data"]);
    assert_code(&out, 1, "corrupt checkpoint");

    assert_code(&run_in(dir, &["--help"]), 0, "help");
}

#[test]
fn flags_override_config_file_entries() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen_tiny(dir);
    std::fs::write(dir.join("train.cfg"), "epochs = 3\nbatch_size = 6\nseed = 2\n").unwrap();

    // Flag wins: one epoch, not three.
    let out = run_in(
        dir,
        &[
            "train", "--data", "data", "--config", "train.cfg", "--epochs", "1", "--out", "run",
        ],
    );
    assert_code(&out, 0, "train with config");
    let csv = std::fs::read_to_string(dir.join("run/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "header + the single flag-forced epoch");

    // A key no command consumes is rejected up front.
    std::fs::write(dir.join("typo.cfg"), "epochz = 3\n").unwrap();
    let out = run_in(dir, &["train", "--data", "data", "--config", "typo.cfg"]);
    assert_code(&out, 2, "unknown config key");
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
}

#[test]
fn reruns_reproduce_every_artifact_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    // The dataset itself, twice.
    gen_tiny(dir);
    std::fs::rename(dir.join("data"), dir.join("data_a")).unwrap();
    gen_tiny(dir);
    assert_eq!(
        read_dir_bytes(&dir.join("data")),
        read_dir_bytes(&dir.join("data_a")),
        "gen-data reruns are byte-identical"
    );

    // The manifest alone reproduces the dataset too.
    let out = run_in(
        dir,
        &["gen-data", "--out", "data_b", "--config", "data/manifest.txt"],
    );
    assert_code(&out, 0, "gen-data from manifest");
    assert_eq!(read_dir_bytes(&dir.join("data")), read_dir_bytes(&dir.join("data_b")));

    // Training twice: identical checkpoint, identical metrics apart from
    // the wall-clock seconds column.
    let train = |out_dir: &str| {
        let out = run_in(
            dir,
            &[
                "train", "--data", "data", "--mode", "sam", "--epochs", "2", "--batch-size", "6",
                "--seed", "3", "--out", out_dir,
            ],
        );
        assert_code(&out, 0, "train rerun");
    };
    train("run_a");
    train("run_b");
    assert_eq!(
        std::fs::read(dir.join("run_a/model.ckpt")).unwrap(),
        std::fs::read(dir.join("run_b/model.ckpt")).unwrap(),
        "checkpoints are byte-identical"
    );
    assert_eq!(
        csv_without_seconds(&dir.join("run_a/metrics.csv")),
        csv_without_seconds(&dir.join("run_b/metrics.csv")),
        "metrics differ only in wall-clock seconds"
    );

    // Heatmaps twice.
    let class_dir = dir.join("data/test/class_002");
    let image = std::fs::read_dir(&class_dir).unwrap().next().unwrap().unwrap().path();
    for out_dir in ["maps_a", "maps_b"] {
        let out = run_in(
            dir,
            &[
                "attention", "run_a/model.ckpt", image.to_str().unwrap(), "2",
                "--kind", "gradcam", "--out", out_dir,
            ],
        );
        assert_code(&out, 0, "attention rerun");
    }
    assert_eq!(
        read_dir_bytes(&dir.join("maps_a")),
        read_dir_bytes(&dir.join("maps_b")),
        "heatmaps are byte-identical"
    );
}

#[test]
fn zero_lambda_training_writes_the_baseline_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen_tiny(dir);
    for (mode, lambda, out_dir) in [
        ("baseline", "0.01", "run_base"),
        ("sam", "0", "run_off"),
    ] {
        let out = run_in(
            dir,
            &[
                "train", "--data", "data", "--mode", mode, "--lambda", lambda, "--epochs", "2",
                "--batch-size", "6", "--seed", "4", "--out", out_dir,
            ],
        );
        assert_code(&out, 0, mode);
    }
    // Identical learned tensors; the checkpoints differ only in the
    // architecture record (mode and the untouched projection filter).
    assert_eq!(
        csv_without_seconds(&dir.join("run_base/metrics.csv")),
        csv_without_seconds(&dir.join("run_off/metrics.csv")),
        "lambda = 0 trains exactly like the baseline"
    );
}

#[test]
fn sweep_k_writes_ordered_rows_and_parallel_matches() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen_tiny(dir);
    let base: Vec<&str> = vec![
        "sweep-k", "--data", "data", "--k", "2,1", "--repeats", "2", "--epochs", "1",
        "--batch-size", "6", "--seed", "7",
    ];

    let mut sequential = base.clone();
    sequential.extend(["--out", "seq"]);
    assert_code(&run_in(dir, &sequential), 0, "sweep sequential");
    let csv = std::fs::read_to_string(dir.join("seq/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "k,seed,test_acc");
    assert_eq!(lines.len(), 5, "header + |K| * repeats rows");
    // Rows keep the requested K order and consecutive seeds.
    assert!(lines[1].starts_with("2,7,") && lines[2].starts_with("2,8,"));
    assert!(lines[3].starts_with("1,7,") && lines[4].starts_with("1,8,"));
    for row in &lines[1..] {
        let acc: f64 = row.rsplit_once(',').unwrap().1.parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    let mut parallel = base.clone();
    parallel.extend(["--parallel", "--out", "par"]);
    assert_code(&run_in(dir, &parallel), 0, "sweep parallel");
    assert_eq!(
        std::fs::read(dir.join("seq/sweep.csv")).unwrap(),
        std::fs::read(dir.join("par/sweep.csv")).unwrap(),
        "threaded sweep is byte-identical to sequential"
    );
}
