//! CLI-level integration tests: subcommand contracts, error reporting, and
//! exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn emorec() -> Command {
    Command::new(env!("CARGO_BIN_EXE_emorec"))
}

fn assert_ok(output: &Output) {
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn write_config(dir: &Path) -> PathBuf {
    let config = dir.join("run.toml");
    std::fs::write(
        &config,
        "seed = 3\n\n[paths]\nmanifest = \"corpus/manifest.csv\"\nfeatures = \"features\"\n\n\
         [network]\nbilstm_layers = 1\nhidden_size = 8\n\n\
         [[network.conv]]\nchannels = 4\nkernel = [3, 5]\nstride = [1, 2]\n\n\
         [train]\nmax_epochs = 2\npatience = 2\n",
    )
    .unwrap();
    config
}

/// gen-corpus + prepare in a fresh directory.
fn prepared_workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = emorec()
        .current_dir(dir.path())
        .args(["gen-corpus", "--out", "corpus", "--seed", "1", "--per-class", "12"])
        .output()
        .unwrap();
    assert_ok(&out);
    let out = emorec()
        .current_dir(dir.path())
        .args(["prepare", "--manifest", "corpus/manifest.csv", "--config"])
        .arg(&config)
        .args(["--out", "features"])
        .output()
        .unwrap();
    assert_ok(&out);
    (dir, config)
}

#[test]
fn gen_corpus_is_deterministic_and_histogram_sums() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = emorec()
            .current_dir(dir.path())
            .args(["gen-corpus", "--out", name, "--seed", "7", "--per-class", "5"])
            .output()
            .unwrap();
        assert_ok(&out);
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("wrote 20 utterances"), "{text}");
    }
    let manifest_a = std::fs::read(dir.path().join("a/manifest.csv")).unwrap();
    let manifest_b = std::fs::read(dir.path().join("b/manifest.csv")).unwrap();
    assert_eq!(manifest_a, manifest_b);
    // Spot-check one wav byte-identical across runs.
    let wav_name = std::fs::read_dir(dir.path().join("a/wav"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .file_name();
    assert_eq!(
        std::fs::read(dir.path().join("a/wav").join(&wav_name)).unwrap(),
        std::fs::read(dir.path().join("b/wav").join(&wav_name)).unwrap()
    );
}

#[test]
fn prepare_is_idempotent_and_covers_every_row() {
    let (dir, config) = prepared_workspace();
    let features = dir.path().join("features");
    let count = std::fs::read_dir(&features)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "emsp")
        })
        .count();
    let manifest = std::fs::read_to_string(dir.path().join("corpus/manifest.csv")).unwrap();
    assert_eq!(count, manifest.lines().count() - 1);

    // Snapshot, re-run, compare bytes.
    let mut snapshot = Vec::new();
    for entry in std::fs::read_dir(&features).unwrap() {
        let path = entry.unwrap().path();
        snapshot.push((path.clone(), std::fs::read(&path).unwrap()));
    }
    let out = emorec()
        .current_dir(dir.path())
        .args(["prepare", "--manifest", "corpus/manifest.csv", "--config"])
        .arg(&config)
        .args(["--out", "features"])
        .output()
        .unwrap();
    assert_ok(&out);
    for (path, bytes) in snapshot {
        assert_eq!(std::fs::read(&path).unwrap(), bytes, "{}", path.display());
    }
}

#[test]
fn prepare_reports_missing_audio_by_utterance_id() {
    let (dir, config) = prepared_workspace();
    // Remove one wav and re-run into a fresh directory.
    let manifest = std::fs::read_to_string(dir.path().join("corpus/manifest.csv")).unwrap();
    let first_row = manifest.lines().nth(1).unwrap().to_string();
    let id = first_row.split(',').next().unwrap().to_string();
    std::fs::remove_file(dir.path().join(format!("corpus/wav/{id}.wav"))).unwrap();

    let out = emorec()
        .current_dir(dir.path())
        .args(["prepare", "--manifest", "corpus/manifest.csv", "--config"])
        .arg(&config)
        .args(["--out", "features2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains(&id), "{stderr}");
    // No partial outputs: validation happens before any write.
    assert!(!dir.path().join("features2").exists());
}

#[test]
fn prepare_reports_corrupt_wav_by_utterance_id() {
    let (dir, config) = prepared_workspace();
    let manifest = std::fs::read_to_string(dir.path().join("corpus/manifest.csv")).unwrap();
    let id = manifest.lines().nth(1).unwrap().split(',').next().unwrap().to_string();
    std::fs::write(
        dir.path().join(format!("corpus/wav/{id}.wav")),
        b"not a wav at all",
    )
    .unwrap();
    let out = emorec()
        .current_dir(dir.path())
        .args(["prepare", "--manifest", "corpus/manifest.csv", "--config"])
        .arg(&config)
        .args(["--out", "features3"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains(&id), "{stderr}");
}

#[test]
fn train_writes_artifacts_and_is_deterministic() {
    let (dir, config) = prepared_workspace();
    for out_name in ["t1", "t2"] {
        let out = emorec()
            .current_dir(dir.path())
            .args(["train", "--config"])
            .arg(&config)
            .args(["--fold", "4", "--out", out_name])
            .output()
            .unwrap();
        assert_ok(&out);
    }
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("t1/metrics.csv"), read("t2/metrics.csv"));
    assert_eq!(read("t1/checkpoint.emck"), read("t2/checkpoint.emck"));

    // Gradient log is nonempty after at least one step.
    let log = std::fs::read_to_string(dir.path().join("t1/gradients.csv")).unwrap();
    assert!(log.lines().count() > 1, "{log}");

    // The checkpoint round-trips with bit-identical tensors.
    let params =
        emorec_core::net::load_checkpoint(&dir.path().join("t1/checkpoint.emck")).unwrap();
    let copy = dir.path().join("t1/copy.emck");
    emorec_core::net::save_checkpoint(&copy, &params).unwrap();
    assert_eq!(read("t1/checkpoint.emck"), read("t1/copy.emck"));
}

#[test]
fn train_rejects_out_of_range_fold_with_exit_one() {
    let (dir, config) = prepared_workspace();
    let out = emorec()
        .current_dir(dir.path())
        .args(["train", "--config"])
        .arg(&config)
        .args(["--fold", "11", "--out", "bad"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("bad").exists());
}

#[test]
fn cv_selected_fold_produces_one_result_row() {
    let (dir, config) = prepared_workspace();
    let out = emorec()
        .current_dir(dir.path())
        .args(["cv", "--config"])
        .arg(&config)
        .args(["--out", "cv", "--folds", "3"])
        .output()
        .unwrap();
    assert_ok(&out);
    let results = std::fs::read_to_string(dir.path().join("cv/results.csv")).unwrap();
    let rows: Vec<&str> = results.lines().collect();
    assert_eq!(rows[0], "fold,session,gender,wa,ua,best_epoch");
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("3,2,F,"));
}

#[test]
fn augment_identity_preserves_values_and_shape() {
    let (dir, config) = prepared_workspace();
    let _ = config;
    let spec_file = std::fs::read_dir(dir.path().join("features"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "emsp"))
        .unwrap();

    let out_file = dir.path().join("warped.emsp");
    let out = emorec()
        .args(["augment", "--in"])
        .arg(&spec_file)
        .args(["--alpha", "1.0", "--out"])
        .arg(&out_file)
        .output()
        .unwrap();
    assert_ok(&out);
    // Identity warp survives the f32 container round trip byte for byte.
    assert_eq!(
        std::fs::read(&spec_file).unwrap(),
        std::fs::read(&out_file).unwrap()
    );

    // Off-range alpha warns but proceeds; --strict rejects with exit 1.
    let out = emorec()
        .args(["augment", "--in"])
        .arg(&spec_file)
        .args(["--alpha", "1.5", "--out"])
        .arg(dir.path().join("wide.emsp"))
        .output()
        .unwrap();
    assert_ok(&out);
    assert!(String::from_utf8(out.stderr).unwrap().contains("warning"));
    let loaded = emorec_core::corpus::read_spectrogram(&dir.path().join("wide.emsp")).unwrap();
    let original = emorec_core::corpus::read_spectrogram(&spec_file).unwrap();
    assert_eq!(loaded.frames(), original.frames());
    assert_eq!(loaded.bins(), original.bins());

    let out = emorec()
        .args(["augment", "--in"])
        .arg(&spec_file)
        .args(["--alpha", "1.5", "--strict", "--out"])
        .arg(dir.path().join("rejected.emsp"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("rejected.emsp").exists());
}

#[test]
fn config_with_unknown_key_exits_one_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(
        &config,
        "[paths]\nmanifest = \"m.csv\"\nfeatures = \"f\"\n\n[train]\nlearning_rate = 0.1\n",
    )
    .unwrap();
    let out = emorec()
        .current_dir(dir.path())
        .args(["cv", "--config"])
        .arg(&config)
        .args(["--out", "cv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("cv").exists());
}

#[test]
fn gradcheck_supports_high_precision_and_config_variants() {
    let out = emorec()
        .args(["gradcheck", "--precision", "high"])
        .output()
        .unwrap();
    assert_ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("gradcheck PASS"), "{text}");

    let out = emorec()
        .args(["gradcheck", "--precision", "sometimes"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
