use std::path::{Path, PathBuf};
use std::process::Command;

use ndarray::{array, Array1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use polyreach::io::{
    load_config, load_result, load_weights, polygon_contains, project_2d, result_from_json,
    result_to_json, save_result, save_weights,
};
use polyreach::network::{BoxSet, ControlledSystem, SequentialReluNetwork};
use polyreach::oracle::simulate;
use polyreach::reach::{reach, ReachSettings};
use polyreach::Error;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config_path_of(err: Error) -> (String, String) {
    match err {
        Error::Config { path, message } => (path, message),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn double_integrator_config_loads() {
    let cfg = load_config(configs().join("double_integrator.json")).unwrap();
    assert_eq!(cfg.a, vec![vec![1.0, 1.0], vec![0.0, 1.0]]);
    assert_eq!(cfg.b, vec![vec![0.5], vec![1.0]]);
    assert_eq!(cfg.x0_lower, Some(vec![2.5, -0.25]));
    assert_eq!(cfg.x0_upper, Some(vec![3.0, 0.25]));
    assert_eq!((cfg.epsilon, cfg.lambda, cfg.horizon), (0.01, 0.98, 5));
    let sys = cfg.system().unwrap();
    assert_eq!(sys.controller.widths(), vec![2, 10, 5, 1]);
}

#[test]
fn quadrotor_config_loads() {
    let cfg = load_config(configs().join("quadrotor.json")).unwrap();
    assert_eq!((cfg.horizon, cfg.epsilon), (12, 0.001));
    let sys = cfg.system().unwrap();
    // A = I + Δt [[0, I], [0, 0]]
    let dt = 0.1;
    for i in 0..6 {
        for j in 0..6 {
            let want = f64::from(u8::from(i == j)) + if j == i + 3 { dt } else { 0.0 };
            assert_eq!(sys.a[[i, j]], want);
        }
    }
    assert_eq!(sys.controller.widths(), vec![6, 32, 32, 3]);
    assert!((sys.e[5] + dt * 9.81).abs() < 1e-15);
}

#[test]
fn malformed_configs_name_the_field() {
    let cases = [
        ("config_lambda_too_large.json", "lambda"),
        ("config_lambda_zero.json", "lambda"),
        ("config_missing_lambda.json", "<root>"),
        ("config_extra_field.json", "gamma"),
        ("config_negative_epsilon.json", "epsilon"),
        ("config_negative_horizon.json", "horizon"),
        ("config_ragged_a.json", "A[1]"),
        ("config_nonsquare_a.json", "A"),
        ("config_b_rows.json", "B"),
        ("config_e_length.json", "e"),
        ("config_box_inverted.json", "x0_lower[0]"),
        ("config_box_length.json", "x0_lower"),
        ("config_missing_box.json", "x0_lower"),
        ("config_nan.json", "lambda"),
        ("config_overflow.json", "A[0][0]"),
        ("config_string_entry.json", "A[0][1]"),
        ("config_generator_rows.json", "generator"),
        ("config_not_json.json", "<root>"),
    ];
    for (file, field) in cases {
        let err = load_config(fixtures().join("malformed").join(file)).unwrap_err();
        let (path, message) = config_path_of(err);
        assert_eq!(path, field, "{file}: {message}");
    }
    let (_, message) = config_path_of(
        load_config(fixtures().join("malformed/config_missing_lambda.json")).unwrap_err(),
    );
    assert!(message.contains("lambda"), "{message}");
    let (_, message) =
        config_path_of(load_config(fixtures().join("malformed/config_extra_field.json")).unwrap_err());
    assert!(message.contains("gamma"), "{message}");
}

#[test]
fn malformed_weights_name_the_layer() {
    let cases = [
        ("weights_empty.json", "layers"),
        ("weights_nan.json", "layers[0].W[0][1]"),
        ("weights_chain.json", "layers[1].W"),
        ("weights_bias_length.json", "layers[0].b"),
        ("weights_missing_b.json", "layers[0]"),
        ("weights_extra_key.json", "layers[0].activation"),
        ("weights_ragged.json", "layers[0].W[1]"),
    ];
    for (file, field) in cases {
        let err = load_weights(fixtures().join("malformed").join(file)).unwrap_err();
        let (path, message) = config_path_of(err);
        assert_eq!(path, field, "{file}: {message}");
    }
}

#[test]
fn weights_shapes_follow_widths() {
    let net = load_weights(fixtures().join("weights_2_10_5_1.json")).unwrap();
    let shapes: Vec<(usize, usize)> = net.layers().iter().map(|l| l.weight.dim()).collect();
    assert_eq!(shapes, vec![(10, 2), (5, 10), (1, 5)]);
}

#[test]
fn weights_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = SequentialReluNetwork::random(&[3, 7, 2], &mut rng);
    let path = dir.path().join("w.json");
    save_weights(&net, &path).unwrap();
    assert_eq!(load_weights(&path).unwrap(), net);
}

fn double_integrator() -> ControlledSystem {
    let cfg = load_config(configs().join("double_integrator.json")).unwrap();
    cfg.system().unwrap()
}

#[test]
fn horizon_zero_result_has_one_block() {
    let r = reach(&double_integrator(), &ReachSettings::new(0, 0.01, 0.98)).unwrap();
    let json = result_to_json(&r, None).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["steps"].as_array().unwrap().len(), 1);
}

#[test]
fn result_round_trip_is_bit_exact() {
    let cfg = load_config(configs().join("double_integrator.json")).unwrap();
    let r = reach(&cfg.system().unwrap(), &cfg.settings()).unwrap();
    assert_eq!(r.polytopes.len(), 6);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    save_result(&r, Some(&cfg), &path).unwrap();
    let back = load_result(&path).unwrap();
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["steps"].as_array().unwrap().len(), 6);

    assert_eq!(back.result.wall_time, r.wall_time);
    assert_eq!(back.result.settings, r.settings);
    assert_eq!(back.config.as_ref().map(|c| &c.a), Some(&cfg.a));
    for (p, q) in r.polytopes.iter().zip(&back.result.polytopes) {
        let bits = |m: &ndarray::Array2<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(p.directions.directions()), bits(q.directions.directions()));
        let ob: Vec<u64> = p.offsets.iter().map(|v| v.to_bits()).collect();
        let qb: Vec<u64> = q.offsets.iter().map(|v| v.to_bits()).collect();
        assert_eq!(ob, qb);
    }
    for (s, t) in r.stats.iter().zip(&back.result.stats) {
        for (a, b) in s.iter().zip(t) {
            assert_eq!(a.lower.to_bits(), b.lower.to_bits());
            assert_eq!(a.upper.to_bits(), b.upper.to_bits());
            assert_eq!(a.iterations, b.iterations);
        }
    }
    // and serializing again gives the same text
    let again = result_to_json(&back.result, back.config.as_ref()).unwrap();
    assert_eq!(again, std::fs::read_to_string(&path).unwrap());
}

#[test]
fn awkward_doubles_survive_the_round_trip() {
    let mut r = reach(&double_integrator(), &ReachSettings::new(1, 0.01, 0.98)).unwrap();
    let awkward = [0.1 + 0.2, 1.0 / 3.0, 5e-324, 1.7976931348623157e308, -2.2250738585072014e-308];
    for (o, a) in r.polytopes[1].offsets.iter_mut().zip(awkward) {
        *o = a;
    }
    let json = result_to_json(&r, None).unwrap();
    let back = result_from_json(&json, Path::new("mem")).unwrap();
    for (x, y) in r.polytopes[1].offsets.iter().zip(back.result.polytopes[1].offsets.iter()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn projection_contains_simulated_points() {
    let cfg = load_config(configs().join("quadrotor.json")).unwrap();
    let sys = cfg.system().unwrap();
    let r = reach(&sys, &ReachSettings::new(3, 0.01, 0.98)).unwrap();
    let t = simulate(&sys, 2000, 3, 11).unwrap();
    for k in 0..=3 {
        for dims in [(0, 1), (3, 4), (2, 5)] {
            let poly = project_2d(&r.polytopes[k], dims, 48).unwrap();
            for x in t.states[k].axis_iter(Axis(0)) {
                assert!(
                    polygon_contains(&poly, [x[dims.0], x[dims.1]], 1e-6),
                    "k={k} dims={dims:?}"
                );
            }
        }
    }
}

#[test]
fn zonotope_projection_contains_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let sys = ControlledSystem::with_zonotope(
        array![[0.9, 0.2], [-0.1, 1.0]],
        array![[0.0], [0.5]],
        Array1::zeros(2),
        SequentialReluNetwork::random(&[2, 8, 1], &mut rng),
        array![[0.3, 0.1, 0.0], [0.0, 0.2, 0.1]],
    )
    .unwrap();
    let r = reach(&sys, &ReachSettings::new(2, 0.01, 0.98)).unwrap();
    let t = simulate(&sys, 3000, 2, 1).unwrap();
    for k in 0..=2 {
        let poly = project_2d(&r.polytopes[k], (0, 1), 64).unwrap();
        for x in t.states[k].axis_iter(Axis(0)) {
            assert!(polygon_contains(&poly, [x[0], x[1]], 1e-6), "k={k}");
        }
    }
}

// --- command line ---

fn polyreach(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_polyreach"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn cli_reach_project_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("double_integrator.json");
    let cfg = cfg.to_str().unwrap();
    let result = dir.path().join("r.json");
    let result = result.to_str().unwrap();
    let (code, _, err) = polyreach(&["reach", "--config", cfg, "--out", result]);
    assert_eq!(code, 0, "{err}");

    let poly = dir.path().join("p.csv");
    let (code, _, err) = polyreach(&[
        "project", "--result", result, "--step", "5", "--dims", "0,1", "--angles", "16", "--out",
        poly.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(&poly).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,y"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert!(rows.len() >= 3 && rows.iter().all(|r| r.len() == 2));

    let (code, out, err) =
        polyreach(&["check", "--config", cfg, "--result", result, "--samples", "2000"]);
    assert_eq!(code, 0, "{out}{err}");

    let traj = dir.path().join("t.csv");
    let (code, _, err) = polyreach(&[
        "simulate", "--config", cfg, "--samples", "10", "--seed", "4", "--out",
        traj.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(&traj).unwrap();
    assert_eq!(csv.lines().next(), Some("k,sample,x0,x1"));
    assert_eq!(csv.lines().count(), 1 + 10 * 6);
}

#[test]
fn cli_config_errors_exit_2() {
    let bad = fixtures().join("malformed/config_lambda_too_large.json");
    let (code, _, err) = polyreach(&["reach", "--config", bad.to_str().unwrap(), "--out", "/dev/null"]);
    assert_eq!(code, 2);
    assert!(err.contains("lambda"), "{err}");

    let cfg = configs().join("double_integrator.json");
    let (code, _, _) = polyreach(&[
        "reach", "--config", cfg.to_str().unwrap(), "--out", "/dev/null", "--lambda", "1.5",
    ]);
    assert_eq!(code, 2);
    let (code, _, _) = polyreach(&["reach", "--config", "/nonexistent.json", "--out", "/dev/null"]);
    assert_eq!(code, 2);
}

#[test]
fn cli_cap_exceeded_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let net = SequentialReluNetwork::random(&[2, 16, 16, 1], &mut rng);
    save_weights(&net, dir.path().join("w.json")).unwrap();
    let cfg = r#"{"A": [[1.0, 1.0], [0.0, 1.0]], "B": [[0.5], [1.0]], "e": [0.0, 0.0],
        "x0_lower": [-1.0, -1.0], "x0_upper": [1.0, 1.0], "weights": "w.json",
        "horizon": 2, "epsilon": 1e-6, "lambda": 0.98, "rank_tol": 1e-9, "node_cap": 2, "seed": 0}"#;
    std::fs::write(dir.path().join("c.json"), cfg).unwrap();
    let out = dir.path().join("r.json");
    let (code, _, err) = polyreach(&[
        "reach", "--config", dir.path().join("c.json").to_str().unwrap(), "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "{err}");
    // partial result holds the initial set
    assert_eq!(load_result(&out).unwrap().result.polytopes.len(), 1);
}

#[test]
fn cli_audit_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = configs().join("double_integrator.json");
    let cfg = load_config(&cfg_path).unwrap();
    let mut r = reach(&cfg.system().unwrap(), &ReachSettings::new(2, 0.01, 0.98)).unwrap();
    // shrink one facet well inside the true set
    r.polytopes[2].offsets[0] -= 1.0;
    let path = dir.path().join("r.json");
    save_result(&r, Some(&cfg), &path).unwrap();
    let (code, out, _) = polyreach(&[
        "check", "--config", cfg_path.to_str().unwrap(), "--result", path.to_str().unwrap(),
        "--samples", "500",
    ]);
    assert_eq!(code, 4, "{out}");
}

#[test]
fn box_set_from_config_matches() {
    let sys = double_integrator();
    assert_eq!(sys.initial_box, BoxSet::new(array![2.5, -0.25], array![3.0, 0.25]).unwrap());
}
