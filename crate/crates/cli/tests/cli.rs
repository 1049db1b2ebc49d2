use std::path::Path;
use std::process::{Command, Output};

fn dilseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dilseg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = dilseg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = "filter_base = 2\nbatch_size = 3\nepochs = 2\niterations = 2\nlr = 0.005\n";

#[test]
fn synth_train_test_cross_test_report() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("tiny.cfg");
    std::fs::write(&cfg, format!("# tiny run\n{TINY}")).unwrap();
    let data = root.path().join("frames");
    let shifted = root.path().join("shifted");
    ok(&["synth", "--count", "20", "--out", p(&data)]);
    ok(&["synth", "--count", "10", "--style", "shifted", "--out", p(&shifted), "-s", "data_seed=4"]);
    assert!(data.join("manifest.tsv").is_file() && data.join("synth-00000_mask.png").is_file());

    let run = root.path().join("run");
    let stdout = ok(&["train", "--config", p(&cfg), "--data", p(&data), "--model", "bownet", "--out", p(&run)]);
    assert!(stdout.contains("BowNet: best epoch"), "{stdout}");
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("epoch,train_loss,val_loss,train_dice,val_dice\n"));

    let ckpt = run.join("best.ckpt");
    let eval = root.path().join("eval");
    ok(&["test", "--checkpoint", p(&ckpt), "--data", p(&shifted), "--out", p(&eval)]);
    let metrics = std::fs::read_to_string(eval.join("test_metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 11);
    assert!(metrics.starts_with("id,bce,dice,msd_px,msd_mm,status\n"));

    let stdout = ok(&[
        "cross-test",
        "--checkpoints",
        p(&ckpt),
        "--test-sets",
        &format!("{},{}", p(&data), p(&shifted)),
        "--out",
        p(&eval),
    ]);
    let rows: Vec<&str> = stdout.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("best,frames,20,") && rows[2].starts_with("best,shifted,10,"));

    let report = ok(&["report", p(&eval)]);
    assert!(report.starts_with("== cross_test.csv\n") && report.contains("== test_metrics.csv\n"));
    assert!(!report.contains('\r'));
}

#[test]
fn same_seed_same_log_and_checkpoint() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("tiny.cfg");
    std::fs::write(&cfg, format!("{TINY}synthetic = 30\n")).unwrap();
    let (a, b, c) = (root.path().join("a"), root.path().join("b"), root.path().join("c"));
    ok(&["train", "--config", p(&cfg), "--seed", "7", "--out", p(&a)]);
    ok(&["train", "--config", p(&cfg), "--seed", "7", "--out", p(&b)]);
    ok(&["train", "--config", p(&cfg), "--seed", "8", "--out", p(&c)]);
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "train_log.csv"), read(&b, "train_log.csv"));
    assert_eq!(read(&a, "best.ckpt"), read(&b, "best.ckpt"));
    assert_ne!(read(&a, "train_log.csv"), read(&c, "train_log.csv"));
}

#[test]
fn sweep_and_repeats_tables() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("tiny.cfg");
    std::fs::write(&cfg, format!("{TINY}synthetic = 30\nepochs = 1\nmodel = sdeeplab\n")).unwrap();
    let out = root.path().join("o");
    let sweep = ok(&["sweep", "--config", p(&cfg), "--lrs", "0.001,10", "-s", "iterations=12", "--out", p(&out)]);
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(lines[0], "lr,btl,bvl");
    assert!(lines[1].starts_with("0.001,0."));
    assert_eq!(lines[2], "10,N/A,N/A");

    let reps = ok(&["repeats", "--config", p(&cfg), "--repeats", "2", "--out", p(&out)]);
    assert_eq!(reps.lines().count(), 9);
    assert_eq!(std::fs::read_to_string(out.join("repeats.csv")).unwrap(), reps);
    assert!(!dilseg(&["repeats", "--config", p(&cfg), "--repeats", "1", "--out", p(&out)]).status.success());
}

#[test]
fn bench_writes_the_model_table() {
    let out = tempfile::tempdir().unwrap();
    let stdout = ok(&["bench", "--filter-base", "2", "--timed", "2", "--out", p(out.path())]);
    assert_eq!(stdout.lines().next().unwrap(), "metric,sUNet,sDeepLab,BowNet,wBowNet");
    assert_eq!(std::fs::read_to_string(out.path().join("bench.csv")).unwrap(), stdout);
    let one = ok(&["bench", "--models", "bownet", "--filter-base", "2", "--timed", "2", "--out", p(out.path())]);
    assert!(one.starts_with("metric,BowNet\n"));
}

#[test]
fn bad_input_fails_with_a_message() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("bad.cfg");
    std::fs::write(&cfg, "epochs = 2\nlearning_rate = fast\n").unwrap();
    let out = dilseg(&["train", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = dilseg(&["train", "--set", "model=unet", "--out", p(root.path())]);
    assert_eq!(out.status.code(), Some(1));
    let out = dilseg(&["test", "--checkpoint", p(&root.path().join("none.ckpt")), "--data", p(root.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dilseg(&["annotate", "--data", p(&root.path().join("missing"))]).status.success());
}
