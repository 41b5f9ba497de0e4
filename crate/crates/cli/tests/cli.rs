use std::path::Path;
use std::process::{Command, Output};

fn iuzawa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iuzawa"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn iuzawa")
}

fn datagen(dir: &Path, name: &str, m: usize, n: usize, seed: u64) -> String {
    let out = dir.join(name);
    let o = iuzawa(&[
        "datagen",
        "--problem",
        "elliptic-iso",
        "--m",
        &m.to_string(),
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.to_str().unwrap().to_string()
}

#[test]
fn datagen_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = datagen(dir.path(), "a.bin", 12, 4, 3);
    let b = dir.path().join("b.bin");
    let o = iuzawa(&[
        "--threads", "2", "datagen", "--problem", "elliptic-iso", "--m", "12", "--n", "4", "--seed", "3", "--out",
        b.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.bin");
    let o = iuzawa(&["datagen", "--problem", "elliptic-iso", "--m", "2", "--n", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(iuzawa(&["datagen", "--problem", "nope"]).status.code(), Some(1));
    assert_eq!(iuzawa(&["bogus"]).status.code(), Some(1));
    assert_eq!(iuzawa(&["--help"]).status.code(), Some(0));
}

#[test]
fn solve_reports_and_flags_nonconvergence() {
    let dir = tempfile::tempdir().unwrap();
    let data = datagen(dir.path(), "d.bin", 12, 2, 1);
    let o = iuzawa(&["solve", "--method", "ssn", "--data", &data, "--index", "1", "--rtol", "1e-9"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("converged   true"), "{text}");
    let o = iuzawa(&["solve", "--method", "pd", "--data", &data, "--rtol", "1e-12", "--max-iter", "2"]);
    assert_eq!(o.status.code(), Some(3));
    let o = iuzawa(&["solve", "--method", "pd", "--data", &data, "--index", "9"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_writes_one_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let data = datagen(dir.path(), "d.bin", 12, 3, 2);
    let report = dir.path().join("bench.csv");
    let o = iuzawa(&["bench", "--data", &data, "--rtol", "1e-3", "--report", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(report).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,m,mean_time_s,mean_iters");
    assert_eq!(lines.len(), 4);
    for (line, method) in lines[1..].iter().zip(["ssn", "uzawa", "pd"]) {
        assert!(line.starts_with(&format!("{method},12,")), "{line}");
    }
}

#[test]
fn train_then_eval_with_resampling() {
    let dir = tempfile::tempdir().unwrap();
    let data = datagen(dir.path(), "train.bin", 12, 6, 4);
    let test = datagen(dir.path(), "test.bin", 12, 2, 5);
    let cfg = dir.path().join("train.cfg");
    let ckpt = dir.path().join("net.ckpt");
    let curve = dir.path().join("curve.csv");
    std::fs::write(
        &cfg,
        format!(
            "# tiny network\ndata.train = {data}\ndata.test = {test}\nout.checkpoint = {}\nnet.layers = 2\nnet.k_max = 2\n\
             net.m_p = 4\nnet.qa_width = 8\nnet.fourier_layers = 1\ntrain.batch_size = 3\n",
            ckpt.display()
        ),
    )
    .unwrap();
    let o = iuzawa(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--train.epochs=2",
        "--out.loss_curve",
        curve.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let curve = std::fs::read_to_string(curve).unwrap();
    assert_eq!(curve.lines().count(), 4, "{curve}");

    let report = dir.path().join("eval.csv");
    let o = iuzawa(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        &test,
        "--resample",
        "16",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(report).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1], "16");
    assert_eq!(row[6], "2");

    let o = iuzawa(&["train", "--config", cfg.to_str().unwrap(), "--train.bogus=1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_passes_every_section() {
    let o = iuzawa(&["verify"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}");
    assert!(text.lines().filter(|l| l.starts_with("[PASS]")).count() >= 7, "{text}");
}
