use std::path::Path;
use std::process::{Command, Output};

use l2o::run::verify_manifest;

fn l2o(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_l2o"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

#[test]
fn eval_of_learned_optimizer_needs_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e");
    let o = l2o(&["eval", "--mode", "cl", "--out", path(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint required"));
    assert!(!out.exists());
}

#[test]
fn gradcheck_passes_and_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = l2o(&["gradcheck", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let errors: Vec<f64> = stdout
        .lines()
        .filter_map(|l| l.split_once(','))
        .filter_map(|(_, v)| v.parse().ok())
        .collect();
    assert_eq!(errors.len(), 4);
    assert!(errors.iter().all(|e| *e < 1e-4));
    assert_eq!(verify_manifest(dir.path()), Ok(2));
}

#[test]
fn config_file_errors_name_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# run\nmode = cl\nn_period = 0\n").unwrap();
    let o = l2o(&["train", "--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("line 3") && err.contains("n_period must be ≥ 1"),
        "{err}"
    );

    std::fs::write(&cfg, "mode = cl\nlearning_rate = 1\n").unwrap();
    let err = String::from_utf8_lossy(&l2o(&["train", "--config", path(&cfg)]).stderr).to_string();
    assert!(
        err.contains("line 2") && err.contains("learning_rate"),
        "{err}"
    );
}

#[test]
fn train_twice_gives_identical_artifacts_and_eval_compare_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "optimizee = quadratic\nquadratic_dim = 3\nhidden = 4\nepochs = 5\nn_eval = 40\neval_seeds = 1,2,3\n",
    )
    .unwrap();
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = l2o(&[
            "train",
            "--config",
            path(&cfg),
            "--mode",
            "vanilla",
            "--seed",
            "7",
            "--out",
            path(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(verify_manifest(&out), Ok(4));
        bytes.push(std::fs::read(out.join("checkpoint.l2o")).unwrap());
        assert!(std::fs::read(out.join("checkpoint.l2o"))
            .unwrap()
            .starts_with(b"L2O1"));
    }
    assert_eq!(bytes[0], bytes[1]);

    let ckpt = dir.path().join("a").join("checkpoint.l2o");
    let eval_out = dir.path().join("eval");
    let o = l2o(&[
        "eval",
        "--config",
        path(&cfg),
        "--checkpoint",
        path(&ckpt),
        "--out",
        path(&eval_out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let curves = std::fs::read_to_string(eval_out.join("curves.csv")).unwrap();
    assert!(curves.starts_with("step,seed,loss\n"));
    let summary = std::fs::read_to_string(eval_out.join("summary.csv")).unwrap();
    assert!(summary
        .starts_with("optimizer,median_final,mean_final,std_final,divergence_rate,log_auc\n"));

    let cmp_out = dir.path().join("cmp");
    let list = format!("compare=mine:{},adam,sgd@0.05", ckpt.display());
    let o = l2o(&[
        "compare",
        "--config",
        path(&cfg),
        "--set",
        &list,
        "--out",
        path(&cmp_out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(verify_manifest(&cmp_out), Ok(6));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("mine") && table.contains("adam@0.01") && table.contains('*'));
}

#[test]
fn gradcheck_rejects_a_mode() {
    let dir = tempfile::tempdir().unwrap();
    let o = l2o(&["gradcheck", "--mode", "cl", "--out", path(dir.path())]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not apply"));
}
