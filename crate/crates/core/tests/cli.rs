use std::path::Path;
use std::process::{Command, Output};

use manifold_sampler::io::read_csv;
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_manifold-sampler"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny_config(method: &str) -> Value {
    json!({
        "method": method,
        "seed": 3,
        "data": {"s_curve": {"n": 300, "t_range": [-3.0, 3.0]}},
        "dmaps": {"epsilon": 0.3, "n_eig": 4, "selected": [1, 2]},
        "gh": {"epsilon2_factor": 0.02},
        "score": {"steps": 20},
        "msgm1": {"n_pairs": 100, "arch": {"hidden": [8]}, "train": {"epochs": 3}},
        "msgm2": {"arch": {"hidden": [8]}, "train": {"epochs": 3}, "steps": 20},
        "plom": {"params": {"burn_in": 10, "thinning": 5}},
        "filter": {"n": 2, "oversample": 1000},
        "eval": {"reference_n": 500, "unfiltered_probe": 100, "baseline_samples": 100}
    })
}

fn write_config(dir: &Path, cfg: &Value) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

#[test]
fn gen_data_writes_requested_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gen-data", "--n", "3000", "--seed", "1", "--out", p(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let data = read_csv(dir.path().join("data.csv")).unwrap();
    assert_eq!(data.data.dim(), (3000, 3));
    assert_eq!(data.headers, ["x", "y", "z"]);
    let t = read_csv(dir.path().join("t.csv")).unwrap();
    assert_eq!(t.data.nrows(), 3000);
    assert!(t.data.iter().all(|v| (-3.0..3.0).contains(v)));
}

#[test]
fn sample_is_deterministic_and_eval_reads_it_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny_config("msgm1"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for o in [&a, &b] {
        let out = run(&["sample", "--config", p(&cfg), "--out", p(o)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let sa = std::fs::read_to_string(a.join("samples.csv")).unwrap();
    let sb = std::fs::read_to_string(b.join("samples.csv")).unwrap();
    assert_eq!(sa, sb);
    assert_eq!(read_csv(a.join("samples.csv")).unwrap().data.nrows(), 600);
    for f in ["metrics.json", "gh.json", "dmaps.json", "generated_latent.csv"] {
        assert!(a.join(f).exists(), "missing {f}");
    }

    let ev = dir.path().join("ev");
    std::fs::create_dir_all(&ev).unwrap();
    let out = run(&[
        "eval",
        "--a",
        p(&a.join("samples.csv")),
        "--b",
        p(&a.join("data.csv")),
        "--out",
        p(&ev),
        "--s-curve",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: Value = serde_json::from_str(&std::fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    assert!(m.to_string().contains("ks"));
}

#[test]
fn lift_uses_a_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny_config("msgm1"));
    let out = run(&["fit", "--config", p(&cfg), "--out", p(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&[
        "lift",
        "--model",
        p(&dir.path().join("gh.json")),
        "--input",
        p(&dir.path().join("latent.csv")),
        "--out",
        p(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lifted = read_csv(dir.path().join("lifted.csv")).unwrap();
    let data = read_csv(dir.path().join("data.csv")).unwrap();
    assert_eq!(lifted.data.dim(), data.data.dim());
    let err = (&lifted.data - &data.data).mapv(f64::abs).mean().unwrap();
    assert!(err < 0.05, "mean reconstruction error {err}");
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["sample", "--method", "bogus"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = run(&["eval", "--a", p(&missing), "--b", p(&missing)]);
    assert_eq!(out.status.code(), Some(1));

    let bad = write_config(dir.path(), &json!({"filter": {"n": 0}}));
    let out = run(&["sample", "--config", p(&bad), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));

    // an undamped, oversized step drives the sampler to a non-finite state
    let mut cfg = tiny_config("mplom");
    cfg["plom"]["params"]["delta_r"] = json!(1.0e6);
    cfg["plom"]["params"]["f0"] = json!(1.0e-12);
    cfg["plom"]["params"]["burn_in"] = json!(200);
    let cfg = write_config(dir.path(), &cfg);
    let out = run(&["sample", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
