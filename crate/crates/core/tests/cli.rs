use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_antisym-rnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn params_prints_the_count() {
    let o = bin(&["params", "--cell", "antisym", "--n", "128", "--m", "1", "--classes", "10"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "9674");
}

#[test]
fn eig_of_a_rotation() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("rot.csv");
    fs::write(&m, "0,1\n-1,0\n").unwrap();
    let o = bin(&["eig", "--matrix", path_str(&m)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("re,im,modulus"));
    let mut ims = Vec::new();
    for line in lines {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(f[0].abs() < 1e-15);
        assert!((f[2] - 1.0).abs() < 1e-15);
        ims.push(f[1]);
    }
    ims.sort_by(f64::total_cmp);
    assert_eq!(ims.len(), 2);
    assert!((ims[0] + 1.0).abs() < 1e-15 && (ims[1] - 1.0).abs() < 1e-15);

    let out = dir.path().join("eig.csv");
    let o = bin(&["eig", "--matrix", path_str(&m), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_to_string(&out).unwrap(), text);
}

#[test]
fn gradcheck_passes_for_a_small_lstm() {
    let o = bin(&["gradcheck", "--cell", "lstm", "--n", "8", "--m", "3", "--t", "12", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let err: f64 = stdout(&o).trim().parse().unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(bin(&[]).status.code(), Some(1));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(bin(&["params", "--cell", "antisym", "--n", "4"]).status.code(), Some(1));
    assert_eq!(
        bin(&["params", "--cell", "nope", "--n", "4", "--m", "1", "--classes", "2"]).status.code(),
        Some(1)
    );
    assert_eq!(bin(&["eig", "--matrix", "/nonexistent/m.csv"]).status.code(), Some(1));
    assert_eq!(
        bin(&["params", "--cell", "antisym", "--n", "4", "--m", "1", "--classes", "2", "--bogus"]).status.code(),
        Some(1)
    );
}

#[test]
fn non_finite_matrix_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("bad.csv");
    fs::write(&m, "0,NaN\n1,0\n").unwrap();
    let o = bin(&["eig", "--matrix", path_str(&m)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn help_exits_zero_everywhere() {
    for sub in ["eig", "simulate", "params", "gradcheck", "train", "spectrum"] {
        let o = bin(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("Usage"), "{sub}");
    }
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
}

#[test]
fn simulate_writes_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.csv");
    let o = bin(&[
        "simulate", "--system", "imaginary", "--epsilon", "0.1", "--steps", "5", "--grid", "-1:1:3", "--seed", "0",
        "--out", path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("traj_id,t,h0,h1"));
    assert_eq!(lines.count(), 9 * 6);
}

#[test]
fn train_then_sweep_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "# tiny planted run\ncell=antisym_gated\nn=6\nm=4\nclasses=2\ngamma=0.01\n\
         dataset=planted\ndataset_args=samples=40;signal_steps=4;t_total=10\n\
         batch_size=8\niterations=6\neval_every=3\n",
    )
    .unwrap();
    let ckpt = dir.path().join("net.ckpt");
    let o = bin(&["train", "--config", path_str(&cfg), "--checkpoint-out", path_str(&ckpt)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 3, "{text}");

    let out = dir.path().join("sweep.csv");
    let o = bin(&[
        "spectrum", "--cell-list", "antisym_gated", "--gamma-list", "0.01", "--t-list", "3,6", "--n", "6",
        "--epsilon", "0.1", "--sigma-w", "1", "--samples", "2", "--seed", "0", "--out", path_str(&out),
        "--checkpoint", path_str(&ckpt),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 1 + 2 * 2);

    let o = bin(&["train", "--config", path_str(&cfg), "--optimizer", "rmsprop"]);
    assert_eq!(o.status.code(), Some(1));
}
