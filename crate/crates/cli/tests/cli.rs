use std::path::Path;
use std::process::{Command, Output};

fn dskd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dskd")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth(dir: &Path) {
    let out = dskd(&[
        "synth", "--out", dir.to_str().unwrap(), "--seed", "3", "--n-train", "4", "--n-test", "6", "--size", "64",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(), "--size", "64", "--width", "4",
        "--epochs", "2", "--batch-size", "2", "--seed", "5",
    ];
    args.extend_from_slice(extra);
    dskd(&args)
}

fn metrics_line(out: &Output) -> Vec<f64> {
    let text = stdout(out);
    let line = text.lines().nth(1).expect("metrics line");
    line.split(',').skip(1).map(|v| v.parse().unwrap_or(f64::NAN)).collect()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&dskd(&["train", "--no-such-flag"])), 2);
    assert_eq!(code(&dskd(&[])), 2);
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    assert_eq!(code(&train(dir.path(), &dir.path().join("o"), &["--variant", "X-Y"])), 2);
    assert_eq!(code(&train(dir.path(), &dir.path().join("o"), &["--epochs", "0"])), 2);
    assert_eq!(code(&train(dir.path(), &dir.path().join("o"), &["--size", "100"])), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(&dir.path().join("missing"), &dir.path().join("o"), &[]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let out = dskd(&["infer", "--checkpoint", dir.path().join("none.safetensors").to_str().unwrap(), "--image", "x.png"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn synth_train_eval_infer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = (dir.path().join("data"), dir.path().join("run"));
    synth(&data);
    let out = train(&data, &run, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = run.join("checkpoint.safetensors");
    assert!(ckpt.is_file() && run.join("config.resolved").is_file());

    let eval_dir = dir.path().join("eval");
    let out = dskd(&[
        "eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m = metrics_line(&out);
    assert!(m.iter().all(|v| (0.0..=1.0).contains(v)), "{m:?}");
    assert!(eval_dir.join("metrics.csv").is_file() && eval_dir.join("results.csv").is_file());
    assert!(eval_dir.join("heatmaps").read_dir().unwrap().count() > 0);

    let image = data.join("synthetic/test/good").read_dir().unwrap().next().unwrap().unwrap().path();
    let out = dskd(&["infer", "--checkpoint", ckpt.to_str().unwrap(), "--image", image.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).lines().count(), 2);

    let out = dskd(&[
        "eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--size", "128",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn config_snapshot_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&train(&data, &a, &["--maps", "M2"])), 0);
    let snapshot = a.join("config.resolved");
    let out = dskd(&["train", "--config", snapshot.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let eval = |run: &Path| {
        let ckpt = run.join("checkpoint.safetensors");
        let out = dskd(&[
            "eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out",
            run.join("eval").to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
        metrics_line(&out)
    };
    let (ma, mb) = (eval(&a), eval(&b));
    for (x, y) in ma.iter().zip(&mb) {
        assert!((x - y).abs() <= 1e-3, "{ma:?} vs {mb:?}");
    }
}
