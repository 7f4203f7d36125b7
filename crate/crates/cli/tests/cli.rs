use std::path::Path;
use std::process::{Command, Output};

fn seqbind(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqbind")).args(args).output().expect("spawn seqbind")
}

fn ok(args: &[&str]) -> String {
    let out = seqbind(args);
    assert!(
        out.status.success(),
        "seqbind {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs a command expected to fail and returns its stderr.
fn fails(args: &[&str]) -> String {
    let out = seqbind(args);
    assert!(!out.status.success(), "seqbind {args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "stderr not one line: {err}");
    assert!(err.starts_with("seqbind: error: "), "{err}");
    err
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn toy(dir: &Path, n: &str, seed: &str) {
    ok(&["bench", "--n", n, "--length", "40", "--seed", seed, "--out", p(dir)]);
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

const TINY: [&str; 10] = ["--trials", "2", "--folds", "2", "--restarts", "2", "--max-steps", "20", "--eval-every", "10"];

fn select(dir: &Path, data: &Path, out: &str, extra: &[&str]) -> std::path::PathBuf {
    let out_dir = dir.join(out);
    let pos = data.join("pos.fa");
    let neg = data.join("neg.fa");
    let mut args = vec!["select", "--pos", p(&pos), "--neg", p(&neg), "--seed", "7", "--out", p(&out_dir)];
    args.extend_from_slice(&TINY);
    args.extend_from_slice(extra);
    ok(&args);
    out_dir
}

#[test]
fn select_is_deterministic_and_reports_every_trial() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    toy(&data, "60", "1");
    let a = select(dir.path(), &data, "a", &["--arch", "DeepBind"]);
    let b = select(dir.path(), &data, "b", &["--arch", "DeepBind", "--workers", "2"]);
    let report = read(&a.join("calibration.tsv"));
    assert_eq!(report.lines().count(), 3, "{report}");
    assert!(report.lines().next().unwrap().starts_with("trial\t"));
    assert_eq!(report.lines().filter(|l| l.ends_with("\tbest")).count(), 1);
    assert_eq!(read(&a.join("model.txt")), read(&b.join("model.txt")));
    assert_eq!(report, read(&b.join("calibration.tsv")));
}

#[test]
fn predict_writes_one_row_per_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    toy(&data, "40", "2");
    let run = select(dir.path(), &data, "sel", &["--arch", "DanQ"]);
    let model = run.join("model.txt");
    let tsv = data.join("data.tsv");
    let out1 = dir.path().join("p1.tsv");
    let out2 = dir.path().join("p2.tsv");
    for out in [&out1, &out2] {
        ok(&["predict", "--model", p(&model), "--data-format", "tsv", "--data", p(&tsv), "--out", p(out)]);
    }
    let text = read(&out1);
    assert_eq!(text.lines().count(), 81);
    assert_eq!(text.lines().next(), Some("id\tprobability"));
    for line in text.lines().skip(1) {
        let v: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    assert_eq!(text, read(&out2));
}

#[test]
fn motifs_writes_meme_histogram_and_logos() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    toy(&data, "60", "3");
    let run = select(dir.path(), &data, "sel", &["--arch", "DeepBind"]);
    let out = dir.path().join("motifs");
    let pos = data.join("pos.fa");
    let model = run.join("model.txt");
    let summary = ok(&["motifs", "--model", p(&model), "--pos", p(&pos), "--out", p(&out)]);
    assert!(summary.contains("motifs written"), "{summary}");
    assert!(read(&out.join("motifs.meme")).starts_with("MEME version 4\n\nALPHABET= ACGT\n"));
    assert!(read(&out.join("histogram.tsv")).lines().count() > 1);
    assert!(!read(&out.join("logos.txt")).is_empty());
}

#[test]
fn kegru_requires_embedding_input() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    toy(&data, "20", "4");
    let (pos, neg) = (data.join("pos.fa"), data.join("neg.fa"));
    let out = dir.path().join("o");
    let err = fails(&[
        "select", "--pos", p(&pos), "--neg", p(&neg), "--arch", "KEGRU", "--input", "onehot", "--seed", "1", "--out",
        p(&out),
    ]);
    assert!(err.contains("KEGRU"), "{err}");
}

#[test]
fn motifs_on_a_model_without_convolution_names_the_preset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    toy(&data, "20", "5");
    let (pos, neg) = (data.join("pos.fa"), data.join("neg.fa"));
    let out = dir.path().join("t");
    ok(&["train", "--pos", p(&pos), "--neg", p(&neg), "--arch", "KEGRU", "--steps", "2", "--seed", "1", "--out", p(&out)]);
    let model = out.join("model.txt");
    let err = fails(&["motifs", "--model", p(&model), "--pos", p(&pos), "--out", p(&dir.path().join("m"))]);
    assert!(err.contains("KEGRU"), "{err}");
}

#[test]
fn compare_reports_pairs_and_rejects_bad_tables() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("auc.tsv");
    let mut text = String::from("dataset\tA\tB\n");
    for i in 0..10 {
        text.push_str(&format!("d{i}\t{:.3}\t{:.3}\n", 0.7 + 0.02 * i as f64, 0.69 + 0.015 * i as f64));
    }
    std::fs::write(&table, &text).unwrap();
    let sizes = dir.path().join("sizes.tsv");
    std::fs::write(&sizes, (0..10).map(|i| format!("d{i}\t{}\n", 100 + 300 * i)).collect::<String>()).unwrap();
    let out = dir.path().join("cmp");
    ok(&["compare", "--table", p(&table), "--sizes", p(&sizes), "--out", p(&out)]);
    let pairs = read(&out.join("pairs.tsv"));
    assert_eq!(pairs.lines().count(), 2, "{pairs}");
    assert!(read(&out.join("pvalues.tsv")).contains('A'));
    assert!(read(&out.join("strata.tsv")).contains("small"));

    let dup = dir.path().join("dup.tsv");
    std::fs::write(&dup, "dataset\tA\tB\nd0\t0.5\t0.6\nd0\t0.5\t0.6\n").unwrap();
    fails(&["compare", "--table", p(&dup), "--out", p(&out)]);
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "name A B\nd0 0.5 0.6\n").unwrap();
    fails(&["compare", "--table", p(&bad), "--out", p(&out)]);
}

#[test]
fn shuffle_keeps_ids_and_composition() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    toy(&data, "30", "6");
    let input = data.join("pos.fa");
    let out = dir.path().join("shuf.fa");
    ok(&["shuffle", "--in", p(&input), "--out", p(&out), "--seed", "3"]);
    let before = seqbind::seq::read_fasta(&input).unwrap();
    let after = seqbind::seq::read_fasta(&out).unwrap();
    assert_eq!(before.len(), after.len());
    for ((ia, sa), (ib, sb)) in before.iter().zip(&after) {
        assert_eq!(ia, ib);
        assert_eq!(seqbind::seq::dinucleotide_counts(sa), seqbind::seq::dinucleotide_counts(sb));
    }
}

#[test]
fn missing_input_is_a_one_line_error() {
    let err = fails(&["predict", "--model", "/nonexistent/model.txt", "--pos", "/nonexistent/x.fa", "--out", "/tmp/x"]);
    assert!(err.contains("/nonexistent"), "{err}");
}
