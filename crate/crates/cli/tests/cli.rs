use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[run]
seed = 3
max_folds = 1
scenarios = ["No_Sep", "GT_Sep"]
models = ["bn"]
data_dir = "inst"
out_dir = "out"
max_len = 24

[seq2res]
enc_embed = 8
enc_hidden = 8
dec_embed = 8
dec_hidden = 16

[seq2res_train]
epochs = 1
batch = 50
checkpoint_every = 1

[classifier]
embed = 8
hidden = 8
layers = 1
heads = 2
ff_mult = 2

[classifier_train]
epochs = 2
lr = 1e-3
batch = 50
checkpoint_every = 1
"#;

fn resep(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resep"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("RESEP_DATA")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = resep(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth_and_prep(dir: &Path) {
    ok(
        dir,
        &[
            "synth",
            "--out",
            "data",
            "--days",
            "26",
            "--events-per-day",
            "60",
            "--seed",
            "2",
        ],
    );
    let text = ok(dir, &["prep", "--in", "data", "--out", "inst"]);
    assert!(text.contains("26 days"), "{text}");
}

#[test]
fn synth_prep_run_all_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_and_prep(dir);
    assert_eq!(fs::read_dir(dir.join("data")).unwrap().count(), 27);
    for f in ["instances.tsv", "vocab.tsv", "classes.txt"] {
        assert!(dir.join("inst").join(f).exists(), "{f}");
    }
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    let text = ok(dir, &["run-all", "--config", "tiny.toml"]);
    assert!(text.contains("Macro-F1 (%)"), "{text}");
    let out = dir.join("out");
    for f in [
        "config.toml",
        "folds.tsv",
        "summary.tsv",
        "report.txt",
        "timing.tsv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let fold = out.join("GT_Sep/bn/fold1");
    for f in [
        "vocab.tsv",
        "bn-epoch0001.ckpt",
        "bn-final.ckpt",
        "metrics.tsv",
        "predictions.tsv",
    ] {
        assert!(fold.join(f).exists(), "{f}");
    }
    let report = ok(dir, &["report", "--dir", "out"]);
    assert_eq!(report, fs::read_to_string(out.join("report.txt")).unwrap());

    let scored = ok(
        dir,
        &[
            "eval",
            "--config",
            "tiny.toml",
            "--fold",
            "1",
            "--scenario",
            "gt_sep",
            "--model",
            "bn",
        ],
    );
    let line = scored.lines().find(|l| l.contains("accuracy")).unwrap();
    assert!(line.starts_with("GT_Sep\tBiGRU+BN\taccuracy\t"), "{line}");
}

#[test]
fn per_fold_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_and_prep(dir);
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    let text = ok(dir, &["train-sep", "--config", "tiny.toml", "--fold", "2"]);
    assert!(text.contains("fold 2"), "{text}");
    assert!(dir
        .join("out/separation/Seq2Res/fold2/seq2res-final.ckpt")
        .exists());
    let bleu = ok(dir, &["eval", "--config", "tiny.toml", "--fold", "2"]);
    assert!(bleu.starts_with("separation\tSeq2Res\tbleu\t"), "{bleu}");
    ok(
        dir,
        &[
            "train-cls",
            "--config",
            "tiny.toml",
            "--fold",
            "2",
            "--scenario",
            "S2S_Sep",
            "--model",
            "q2l",
        ],
    );
    assert!(dir.join("out/S2S_Sep/q2l/fold2/q2l-final.ckpt").exists());
    let scored = ok(
        dir,
        &[
            "eval",
            "--config",
            "tiny.toml",
            "--fold",
            "2",
            "--scenario",
            "S2S_Sep",
            "--model",
            "q2l",
        ],
    );
    assert!(scored.contains("macro_f1"), "{scored}");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(resep(dir, &["bogus"]).status.code(), Some(2));
    assert_eq!(
        resep(dir, &["train-cls", "--config", "x.toml"])
            .status
            .code(),
        Some(2)
    );

    let missing = resep(dir, &["run-all", "--config", "nope.toml"]);
    assert_eq!(missing.status.code(), Some(3));
    let err = String::from_utf8_lossy(&missing.stderr);
    assert!(
        err.contains("nope.toml") && err.lines().count() == 1,
        "{err}"
    );
    assert_eq!(
        resep(dir, &["report", "--dir", "nowhere"]).status.code(),
        Some(3)
    );
    assert_eq!(
        resep(dir, &["prep", "--in", "nowhere", "--out", "x"])
            .status
            .code(),
        Some(3)
    );

    fs::write(dir.join("bad.toml"), "[run]\nmax_folds = 0\n").unwrap();
    assert_eq!(
        resep(dir, &["run-all", "--config", "bad.toml"])
            .status
            .code(),
        Some(4)
    );

    ok(
        dir,
        &[
            "synth",
            "--out",
            "short",
            "--days",
            "5",
            "--events-per-day",
            "60",
        ],
    );
    ok(dir, &["prep", "--in", "short", "--out", "inst"]);
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    let out = resep(dir, &["run-all", "--config", "tiny.toml"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("26 days"));
}

#[test]
fn synth_config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("synth.toml"),
        "days = 3\nevents_per_day = 40\npatterns = 1\n",
    )
    .unwrap();
    let text = ok(
        dir,
        &[
            "synth",
            "--config",
            "synth.toml",
            "--days",
            "4",
            "--out",
            "d",
        ],
    );
    assert!(text.starts_with("4 day files, 6 classes"), "{text}");
    assert_eq!(fs::read_dir(dir.join("d")).unwrap().count(), 5);
    fs::write(dir.join("bad.toml"), "overlap = 2.0\n").unwrap();
    assert_eq!(
        resep(dir, &["synth", "--config", "bad.toml"]).status.code(),
        Some(4)
    );
}
