use std::path::PathBuf;
use std::process::Command;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("scorekit-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn scorekit(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_scorekit"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn sample_writes_artifacts() {
    let dir = scratch("sample");
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, "[data]\nkind = two_component\n[run]\nsamples = 500\n").unwrap();
    let out = dir.join("out");
    let r = scorekit(&[
        "sample",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for f in [
        "samples.csv",
        "metrics.csv",
        "report.json",
        "sw2_vs_nfe.svg",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let e = scorekit(&[
        "eval",
        "--samples",
        out.join("samples.csv").to_str().unwrap(),
        "--reference",
        out.join("samples.csv").to_str().unwrap(),
    ]);
    assert!(e.status.success());
    let v: serde_json::Value = serde_json::from_slice(&e.stdout).unwrap();
    assert_eq!(v["sw2"], 0.0);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn config_errors_exit_with_2() {
    let dir = scratch("bad");
    let cfg = dir.join("bad.cfg");
    std::fs::write(&cfg, "data.kind = benchmark\nsampler.stpes = 8\n").unwrap();
    let r = scorekit(&[
        "sample",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("sampler.stpes"));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn divergent_training_exits_with_3() {
    let dir = scratch("diverge");
    let cfg = dir.join("train.cfg");
    std::fs::write(
        &cfg,
        "data.kind = two_component\ntrain.lr = 1e300\ntrain.steps = 20\n",
    )
    .unwrap();
    let r = scorekit(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("m.json").to_str().unwrap(),
    ]);
    assert_eq!(
        r.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn partial_grid_failure_exits_with_4() {
    let dir = scratch("grid");
    let train = dir.join("train.cfg");
    std::fs::write(&train, "data.kind = two_component\ntrain.steps = 20\n").unwrap();
    let model = dir.join("model.json");
    let r = scorekit(&[
        "train",
        "--config",
        train.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
    ]);
    assert!(r.status.success());
    // One cell points at a model that does not exist, so it fails at run time.
    let missing = dir.join("missing.json");
    let cfg = dir.join("grid.cfg");
    std::fs::write(
        &cfg,
        format!(
            "data.kind = two_component\nmodel.kind = mlp\nrun.samples = 100\ngrid.model.path = [\"{}\", \"{}\"]\n",
            model.display(),
            missing.display()
        ),
    )
    .unwrap();
    let out = dir.join("out");
    let r = scorekit(&[
        "grid",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        r.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn train_then_sample_with_saved_model() {
    let dir = scratch("train");
    let cfg = dir.join("train.cfg");
    std::fs::write(&cfg, "data.kind = two_component\ntrain.steps = 50\n").unwrap();
    let model = dir.join("model.json");
    let r = scorekit(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let run = dir.join("run.cfg");
    std::fs::write(
        &run,
        format!(
            "data.kind = two_component\nmodel.kind = mlp\nmodel.path = \"{}\"\nrun.samples = 200\n",
            model.display()
        ),
    )
    .unwrap();
    let r = scorekit(&[
        "sample",
        "--config",
        run.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn order_and_trajectory_commands() {
    let dir = scratch("order");
    let cfg = dir.join("g.cfg");
    std::fs::write(&cfg, "data.kind = gaussian\ndata.mean = [0.3]\nsampler.kind = heun\nrun.samples = 3\nsampler.steps = 8\n").unwrap();
    let r = scorekit(&["order", "--config", cfg.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    let slope = v["slope"].as_f64().unwrap();
    assert!((1.7..2.3).contains(&slope), "{slope}");
    let out = dir.join("traj.json");
    let r = scorekit(&[
        "trajectory",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let t: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let paths = t["trajectories"].as_array().unwrap();
    assert_eq!(paths.len(), 3);
    assert_eq!(paths[0].as_array().unwrap().len(), 9);
    std::fs::remove_dir_all(dir).unwrap();
}
