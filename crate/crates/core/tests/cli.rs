use std::fs;
use std::path::Path;
use std::process::Command;

fn dcn(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_dcn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let (code, _, err) = dcn(&["synth", "--kind", "cluttered", "--n", "100", "--seed", "7", "--out", path(out)]);
        assert_eq!(code, 0, "{err}");
    }
    for name in ["cluttered.dcn", "cluttered_0.pgm", "cluttered_3.pgm"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn bench_reports_the_cluttered_costs() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, err) = dcn(&["bench", "--preset", "cmnist", "--input", "100x100", "--k", "8", "--out", path(dir.path())]);
    assert_eq!(code, 0, "{err}");
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert!(csv.starts_with("plan,input_h,input_w,k,total_mults\n"));
    let dcn_total: f64 = csv
        .lines()
        .find(|l| l.starts_with("dcn,"))
        .and_then(|l| l.rsplit(',').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((dcn_total - 27.7e6).abs() / 27.7e6 < 0.1, "{dcn_total}");
    assert!(stdout.contains("saliency"));
    assert!(fs::read_to_string(dir.path().join("sweep.csv")).unwrap().lines().count() > 5);
}

#[test]
fn eval_with_zero_patches_matches_the_coarse_model() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let (code, _, err) = dcn(&["synth", "--kind", "cluttered", "--n", "40", "--seed", "1", "--out", path(&data_dir)]);
    assert_eq!(code, 0, "{err}");
    let data = data_dir.join("cluttered.dcn");
    let train_dir = dir.path().join("train");
    let (code, _, err) = dcn(&[
        "train", "--preset", "cmnist", "--data", path(&data), "--epochs", "1", "--k", "2", "--batch", "10", "--out",
        path(&train_dir),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(fs::read_to_string(train_dir.join("train_log.csv")).unwrap().starts_with("epoch,train_loss,test_error,hint_distance"));
    let ckpt = train_dir.join("model.ckpt");

    let error_of = |plan: &str, k: &str, name: &str| {
        let out = dir.path().join(name);
        let (code, _, err) = dcn(&[
            "eval", "--preset", "cmnist", "--data", path(&data), "--checkpoint", path(&ckpt), "--plan", plan, "--k", k,
            "--out", path(&out),
        ]);
        assert_eq!(code, 0, "{err}");
        let csv = fs::read_to_string(out.join("eval.csv")).unwrap();
        csv.lines().nth(1).unwrap().rsplit(',').next().unwrap().to_string()
    };
    assert_eq!(error_of("dcn", "0", "e0"), error_of("coarse", "0", "ec"));

    let sal = dir.path().join("sal");
    let (code, _, err) = dcn(&[
        "saliency", "--preset", "cmnist", "--data", path(&data), "--checkpoint", path(&ckpt), "--n", "2", "--k", "3",
        "--out", path(&sal),
    ]);
    assert_eq!(code, 0, "{err}");
    let boxes = fs::read_to_string(sal.join("boxes_1.txt")).unwrap();
    assert_eq!(boxes.lines().count(), 3);
    assert_eq!(boxes.lines().next().unwrap().split(' ').count(), 6);
    assert!(fs::read(sal.join("saliency_0.pgm")).unwrap().starts_with(b"P5\n8 8\n255\n"));
}

#[test]
fn failures_print_one_line_and_clean_up() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = dcn(&["synth", "--kk", "3"]);
    assert_ne!(code, 0);
    assert_eq!(err.trim().lines().count(), 1, "{err}");

    let out = dir.path().join("run");
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "kk=1\n").unwrap();
    let (code, _, err) = dcn(&["bench", "--config", path(&cfg), "--out", path(&out)]);
    assert_ne!(code, 0);
    assert!(err.contains("kk"), "{err}");
    assert!(!out.exists());

    // fails after the output directory exists: k beyond the grid
    let (code, _, err) = dcn(&["bench", "--preset", "toy", "--k", "500", "--out", path(&out)]);
    assert_ne!(code, 0);
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(!out.exists());
}
