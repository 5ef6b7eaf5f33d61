use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TRAIN: &str = "\
ka lo mi
tu pe ra so
mi ka
lo tu pe
ra so ka lo
pe mi tu
so ra
ka tu mi lo
";

const DEV: &str = "\
lo ka
mi tu pe
so ka ra
";

const MORPH: &str = "\
ka//lo mi
tu pe//ra so
mi//ka lo//tu
";

const SMALL: &[&str] = &[
    "--set",
    "epochs=3",
    "--set",
    "state=6",
    "--set",
    "char_vec=4",
    "--set",
    "ngram_vecs=4",
    "--set",
    "min_best_epoch=2",
];

fn seqseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_small(dir: &Path, train: &Path, dev: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--train", s(train), "--dev", s(dev), "--out", s(out)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    let o = seqseg(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.exists());
}

#[test]
fn eval_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(dir.path(), "gold.txt", TRAIN);
    let pred = write(dir.path(), "pred.txt", TRAIN);
    let o = seqseg(&["eval", "--level", "word", s(&gold), s(&pred)]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap(), "P 1.0000 R 1.0000 F 1.0000\n");
}

#[test]
fn eval_hand_case() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(dir.path(), "gold.txt", "ab c\n");
    let pred = write(dir.path(), "pred.txt", "a b c\n");
    let o = seqseg(&["eval", s(&gold), s(&pred)]);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), "P 0.3333 R 0.5000 F 0.4000\n");
}

#[test]
fn missing_checkpoint_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "in.txt", "kalomi\n");
    let missing = dir.path().join("nowhere.ckpt");
    let o = seqseg(&["decode", s(&missing), "--input", s(&input)]);
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("nowhere.ckpt"), "{err}");
}

#[test]
fn malformed_corpus_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let train = write(dir.path(), "train.txt", "ka lo\nka//  lo\n");
    let dev = write(dir.path(), "dev.txt", DEV);
    let out = dir.path().join("m.ckpt");
    let o = seqseg(&[
        "train", "--train", s(&train), "--dev", s(&dev), "--out", s(&out), "--scheme", "biesx",
    ]);
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("train.txt:2"), "{err}");
}

#[test]
fn train_decode_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let train = write(dir.path(), "train.txt", TRAIN);
    let dev = write(dir.path(), "dev.txt", DEV);
    let model = dir.path().join("model.ckpt");
    train_small(dir.path(), &train, &dev, &model, &["--seed", "3"]);

    let log = fs::read_to_string(dir.path().join("model.ckpt.log")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.lines().all(|l| l.starts_with("epoch ") && l.contains(" devF1 ")));

    let pred = dir.path().join("pred.txt");
    let o = seqseg(&["decode", s(&model), "--input", s(&dev), "--segmented", "--out", s(&pred)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&dev).unwrap(), DEV, "input untouched");

    let o = seqseg(&["eval", s(&dev), s(&pred)]);
    let line = String::from_utf8(o.stdout).unwrap();
    let f: f64 = line.trim().rsplit(' ').next().unwrap().parse().unwrap();

    let o = seqseg(&["inspect", s(&model)]);
    let info = String::from_utf8(o.stdout).unwrap();
    assert!(info.contains("seed=3"));
    let best: f64 = info
        .lines()
        .find_map(|l| l.strip_prefix("best_dev_f1="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((f - best).abs() < 5e-5, "decoded F {f} vs recorded {best}");
}

#[test]
fn raw_decode_keeps_lines() {
    let dir = tempfile::tempdir().unwrap();
    let train = write(dir.path(), "train.txt", TRAIN);
    let dev = write(dir.path(), "dev.txt", DEV);
    let model = dir.path().join("model.ckpt");
    train_small(dir.path(), &train, &dev, &model, &[]);
    let input = write(dir.path(), "raw.txt", "kalomi\n\ntupe\n");
    let o = seqseg(&["decode", s(&model), "--input", s(&input)]);
    assert!(o.status.success());
    let out = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0].replace(' ', ""), "kalomi");
    assert_eq!(lines[1], "");
    assert_eq!(lines[2].replace(' ', ""), "tupe");
}

#[test]
fn seeded_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let train = write(dir.path(), "train.txt", TRAIN);
    let dev = write(dir.path(), "dev.txt", DEV);
    let out = dir.path().join("ens.ckpt");
    train_small(dir.path(), &train, &dev, &out, &["--seeds", "1,2,3,4"]);
    let models: Vec<PathBuf> = (1..=4).map(|k| dir.path().join(format!("ens-{k}.ckpt"))).collect();
    for m in &models {
        assert!(m.is_file());
        let mut log = m.as_os_str().to_owned();
        log.push(".log");
        assert!(Path::new(&log).is_file());
    }
    let mut args = vec!["ensemble-decode", "--input", s(&dev), "--segmented"];
    args.extend(models.iter().map(|m| s(m)));
    let o = seqseg(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 3);

    let o = seqseg(&[
        "train", "--train", s(&train), "--dev", s(&dev), "--out", s(&out), "--seeds", "1,1",
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8(o.stderr).unwrap().contains("distinct"));
}

#[test]
fn ensemble_rejects_mixed_schemes() {
    let dir = tempfile::tempdir().unwrap();
    let train = write(dir.path(), "train.txt", TRAIN);
    let dev = write(dir.path(), "dev.txt", DEV);
    let morph = write(dir.path(), "morph.txt", MORPH);
    let words = dir.path().join("words.ckpt");
    let morphs = dir.path().join("morphs.ckpt");
    train_small(dir.path(), &train, &dev, &words, &[]);
    train_small(dir.path(), &morph, &morph, &morphs, &["--scheme", "biesx"]);
    let o = seqseg(&["ensemble-decode", s(&words), s(&morphs), "--input", s(&dev)]);
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("scheme mismatch"), "{err}");
}

#[test]
fn bad_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(dir.path(), "gold.txt", TRAIN);
    let o = Command::new(env!("CARGO_BIN_EXE_seqseg"))
        .args(["eval", s(&gold), s(&gold)])
        .env("SEQSEG_THREADS", "0")
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8(o.stderr).unwrap().contains("SEQSEG_THREADS"));
}

#[test]
fn usage_errors_exit_nonzero() {
    assert!(!seqseg(&["frobnicate"]).status.success());
    assert!(!seqseg(&["eval", "--level", "sentence", "a", "b"]).status.success());
}
