use std::path::Path;
use std::process::{Command, Output};

use mxdecomp::tensorstore::{save_container, DType, TensorSet};
use mxdecomp::Tensor;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mxdecomp"))
        .args(args)
        .output()
        .unwrap()
}

fn run_ok(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write_set(path: &Path, tensors: &[(&str, Vec<usize>, Vec<f64>)]) {
    let mut set = TensorSet::new();
    for (name, shape, data) in tensors {
        set.insert(
            *name,
            DType::F64,
            Tensor::new(shape.clone(), data.clone()).unwrap(),
        )
        .unwrap();
    }
    save_container(&set, path).unwrap();
}

#[test]
fn decompose_worked_block_block() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("b.bin");
    write_set(
        &p,
        &[(
            "blk",
            vec![1, 8],
            vec![0.03, 0.1, 0.3, 0.5, 0.9, 1.5, 2.0, 4.0],
        )],
    );
    let v = run_ok(&[
        "decompose",
        "--input",
        p.to_str().unwrap(),
        "--block-size",
        "8",
    ]);
    let r = &v["result"]["tensors"][0];
    assert_eq!(r["name"], "blk");
    // Q - x = [-0.03, -0.1, 0.2, 0, 0.1, 0, 0, 0]; 2<e_s, e_g> = -0.1.
    let mse = r["mse_total"].as_f64().unwrap();
    assert!((mse - 0.0609 / 8.0).abs() < 1e-12);
    assert!((r["cross_share"].as_f64().unwrap() + 0.1 / 0.0609).abs() < 1e-9);
    assert_eq!(r["cos_scale_dz"].as_f64().unwrap(), 0.0);
    assert_eq!(v["config"]["command"], "decompose");
    assert!(v["duration_seconds"].as_f64().is_some());
    assert!(v["version"].is_string());
}

#[test]
fn decompose_synthetic_set() {
    let v = run_ok(&[
        "decompose",
        "--synth",
        "gaussian:64x64*3",
        "--seed",
        "0",
        "--format",
        "json",
    ]);
    let ts = v["result"]["tensors"].as_array().unwrap();
    assert_eq!(ts.len(), 3);
    for t in ts {
        let s: f64 = ["share_scale", "share_dz", "share_grid", "cross_share"]
            .iter()
            .map(|k| t[k].as_f64().unwrap())
            .sum();
        assert!((s - 1.0).abs() < 1e-9);
        assert!(t["cos_scale_grid"].as_f64().unwrap() < 0.0);
    }
}

#[test]
fn zero_tensor_through_every_command() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("z.bin");
    write_set(&p, &[("zero", vec![4, 128], vec![0.0; 512])]);
    let input = p.to_str().unwrap();
    for cmd in ["decompose", "sweep", "mbs", "of", "gemm"] {
        let v = run_ok(&[cmd, "--input", input, "--no-timing"]);
        assert!(!v["result"].is_null(), "{cmd}");
    }
    let v = run_ok(&["decompose", "--input", input]);
    assert_eq!(v["result"]["tensors"][0]["degenerate"], true);
}

#[test]
fn missing_input_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let o = run(&[
        "decompose",
        "--input",
        "/definitely/not/here.bin",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not/here.bin"));
    assert!(!out.exists());
    assert_eq!(run(&["decompose"]).status.code(), Some(2));
    assert_eq!(
        run(&["decompose", "--synth", "student_t(3):8"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["decompose", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        run(&["of", "--synth", "gaussian:8x32", "--of-alpha", "2"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn sweep_reaches_floor() {
    let v = run_ok(&["sweep", "--synth", "gaussian:512x512", "--seed", "0"]);
    let s = &v["result"][0]["sweep"];
    assert_eq!(s["grid_invariant"], true);
    let r = s["floor_ratio"].as_f64().unwrap();
    assert!((1.0..=1.01).contains(&r), "{r}");
    assert_eq!(s["points"].as_array().unwrap().len(), 9);
}

#[test]
fn json_and_csv_carry_identical_values() {
    let dir = tempfile::tempdir().unwrap();
    let j = dir.path().join("r.json");
    let c = dir.path().join("r.csv");
    let base = [
        "decompose",
        "--synth",
        "laplace:32x64*2",
        "--seed",
        "3",
        "--no-timing",
    ];
    let mut a: Vec<&str> = base.to_vec();
    a.extend(["--out", j.to_str().unwrap()]);
    assert!(run(&a).status.success());
    let mut b: Vec<&str> = base.to_vec();
    b.extend(["--format", "csv", "--out", c.to_str().unwrap()]);
    assert!(run(&b).status.success());

    let json: Value = serde_json::from_slice(&std::fs::read(&j).unwrap()).unwrap();
    let csv = std::fs::read_to_string(&c).unwrap();
    let mut rows = csv.lines();
    assert_eq!(rows.next(), Some("path,value"));
    let mut n = 0;
    for line in rows {
        let (path, value) = line.split_once(',').unwrap();
        // The echoed format and output path differ by construction.
        if path.starts_with("config.args.common.") {
            continue;
        }
        let leaf = lookup(&json, path);
        let want = match leaf {
            Value::String(s) => s.clone(),
            Value::Null => String::new(),
            other => other.to_string(),
        };
        assert_eq!(value.trim_matches('"'), want, "{path}");
        n += 1;
    }
    assert!(n > 50);
}

/// Resolves `a.b[2].c` against a JSON tree.
fn lookup<'a>(v: &'a Value, path: &str) -> &'a Value {
    let mut cur = v;
    for part in path.split('.') {
        let (key, idx) = match part.find('[') {
            Some(i) => (&part[..i], Some(&part[i..])),
            None => (part, None),
        };
        if !key.is_empty() {
            cur = &cur[key];
        }
        if let Some(idx) = idx {
            for i in idx.trim_matches(|c| c == '[' || c == ']').split("][") {
                cur = &cur[i.parse::<usize>().unwrap()];
            }
        }
    }
    cur
}

#[test]
fn reports_are_byte_stable() {
    let args = [
        "mbs",
        "--synth",
        "gaussian:16x256",
        "--seed",
        "5",
        "--no-timing",
    ];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.contains("\"config\""));
    assert!(!text.contains("duration_seconds\": 0."));
}

#[test]
fn analysis_commands_run() {
    let v = run_ok(&["gamma", "--blocks", "2000", "--seed", "1"]);
    assert_eq!(v["result"]["blocks"], 2000);
    let v = run_ok(&["cltsum", "--layers", "48", "--trials", "20000"]);
    let sd = v["result"]["std_sum"].as_f64().unwrap();
    assert!((sd - 2.0).abs() < 0.05);
    let v = run_ok(&["temp", "--draws", "10000", "--ratios", "0,1"]);
    assert!((v["result"]["rows"][0]["t_hat"].as_f64().unwrap() - 1.0).abs() <= 1e-6);
    let v = run_ok(&["gemm", "--synth", "gaussian:64x64", "--samples", "2000"]);
    assert_eq!(v["result"][0]["cross_scale_dz"].as_f64().unwrap(), 0.0);
    let v = run_ok(&[
        "gemm",
        "--synth",
        "gaussian:16x64",
        "--covariance",
        "diagonal",
        "--samples",
        "1000",
    ]);
    assert!(v["result"][0]["identity_residual"].as_f64().unwrap() < 1e-9);
    let v = run_ok(&["of", "--synth", "gaussian:64x128", "--with-mbs"]);
    let r = &v["result"][0];
    assert!(r["dz_rate_after"].as_f64().unwrap() < r["dz_rate_before"].as_f64().unwrap());
    let v = run_ok(&["crossterm", "--blocks", "500", "--block-sizes", "8,32"]);
    assert_eq!(v["result"].as_array().unwrap().len(), 2);
}

#[test]
fn aqn_schedule_and_noised_container() {
    let dir = tempfile::tempdir().unwrap();
    let noised = dir.path().join("n.bin");
    let v = run_ok(&[
        "aqn",
        "--sigma-grid",
        "0.003",
        "--synth",
        "gaussian:8x32*2",
        "--stage",
        "3",
        "--noised-out",
        noised.to_str().unwrap(),
    ]);
    let stages = v["result"]["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 10);
    assert_eq!(stages[0]["sigma"].as_f64().unwrap(), 0.01);
    assert_eq!(stages[9]["sigma"].as_f64().unwrap(), 0.001);
    let t0 = stages[0]["total_noise"].as_f64().unwrap();
    assert!((t0 - (0.01f64).hypot(0.003)).abs() < 1e-12);
    let set = mxdecomp::tensorstore::load_container(&noised).unwrap();
    assert_eq!(set.len(), 2);
    assert_eq!(
        run(&["aqn", "--sigma-start", "0.001", "--sigma-end", "0.01"])
            .status
            .code(),
        Some(2)
    );
}
