//! Acceptance criteria. Each test writes one `PASS`/`FAIL` line to stderr
//! (bypassing output capture) and then asserts the criterion.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polyreach::bnb::{maximize, BnBProblem};
use polyreach::io::{halfplane_vertices, load_config};
use polyreach::linalg::pinv;
use polyreach::network::{build_equivalent_step, BoxSet, ControlledSystem, SequentialReluNetwork};
use polyreach::oracle::{exact_maximize, lp_maximize, simulate, LpOutcome, LpProblem};
use polyreach::reach::{reach, ReachSettings};
use polyreach::templates::{affine_directions, network_directions_unpruned, TemplateMatrix};
use polyreach::Matrix;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[acceptance] criterion {id} {verdict}: {name} ({detail})");
}

fn matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

fn random_box(n: usize, rng: &mut ChaCha8Rng) -> BoxSet {
    let lo = Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..0.5));
    let hi = &lo + &Array1::from_shape_fn(n, |_| rng.gen_range(0.05..1.0));
    BoxSet::new(lo, hi).unwrap()
}

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn criterion_1_equivalent_network() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=3);
        let hidden = rng.gen_range(0..=2);
        let mut widths = vec![n];
        widths.extend((0..hidden).map(|_| rng.gen_range(1..=32)));
        widths.push(m);
        let sys = ControlledSystem::new(
            matrix(n, n, &mut rng),
            matrix(n, m, &mut rng),
            Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0)),
            SequentialReluNetwork::random(&widths, &mut rng),
            BoxSet::new(Array1::from_elem(n, -5.0), Array1::from_elem(n, 5.0)).unwrap(),
        )
        .unwrap();
        let feq = build_equivalent_step(&sys).unwrap();
        for _ in 0..10_000 {
            let x = sys.initial_box.sample(&mut rng);
            let y = feq.evaluate(x.view()).unwrap();
            let want = sys.step(x.view());
            worst = (&y - &want).iter().fold(worst, |a, v| a.max(v.abs()));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-9 && secs < 60.0;
    report(1, "F_eq matches the closed loop", pass, &format!("max error {worst:.2e}, {secs:.1}s"));
    assert!(pass);
}

#[test]
fn criterion_2_bnb_certificate_vs_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let eps = 1e-3;
    let mut violations = 0;
    let mut widest = 0.0_f64;
    for _ in 0..50 {
        let n = rng.gen_range(1..=3);
        let h1 = rng.gen_range(1..=8);
        let h2 = rng.gen_range(0..=(14 - h1).min(6));
        let out = rng.gen_range(1..=2);
        let mut widths = vec![n, h1];
        if h2 > 0 {
            widths.push(h2);
        }
        widths.push(out);
        let net = SequentialReluNetwork::random(&widths, &mut rng);
        assert!(net.relu_count() <= 14);
        let b = random_box(n, &mut rng);
        let c = Array1::from_shape_fn(out, |_| rng.gen_range(-1.0..1.0));
        let exact = exact_maximize(&net, c.view(), &b).unwrap().value;
        let r = maximize(&BnBProblem::new(&net, c, b, eps)).unwrap();
        widest = widest.max(r.gap());
        if !(r.lower <= exact + 1e-9 && exact <= r.upper + 1e-9 && r.gap() <= eps) {
            violations += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = violations == 0 && secs < 600.0;
    report(
        2,
        "BnB interval contains the exact maximum",
        pass,
        &format!("{violations} violations in 50, widest gap {widest:.2e}, {secs:.1}s"),
    );
    assert!(pass);
}

/// Criteria 3 and 4 share the double-integrator run.
#[test]
fn criteria_3_4_double_integrator() {
    let start = Instant::now();
    let cfg = load_config(configs().join("double_integrator.json")).unwrap();
    let sys = cfg.system().unwrap();
    assert_eq!(sys.controller.widths(), vec![2, 10, 5, 1]);
    let settings = ReachSettings::new(5, 0.01, 0.98);
    let r = reach(&sys, &settings).unwrap();
    let t = simulate(&sys, 100_000, 5, 2024).unwrap();

    let mut violations = 0usize;
    let mut tight = 0usize;
    let mut rows = 0usize;
    for k in 0..=5 {
        let poly = &r.polytopes[k];
        for x in t.states[k].axis_iter(Axis(0)) {
            if !poly.contains(x, 1e-6) {
                violations += 1;
            }
        }
        if k == 0 {
            continue;
        }
        // best simulated value along each row
        let values = t.states[k].dot(&poly.directions.directions().t());
        for (i, col) in values.axis_iter(Axis(1)).enumerate() {
            let best = col.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v));
            rows += 1;
            if best >= poly.offsets[i] - (settings.epsilon + 0.05) {
                tight += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass3 = violations == 0 && secs < 1800.0;
    report(
        3,
        "double integrator containment of 1e5 trajectories",
        pass3,
        &format!("{violations} violations, {secs:.1}s"),
    );
    let pass4 = 2 * tight >= rows;
    report(
        4,
        "template rows attained by simulation within eps + 0.05",
        pass4,
        &format!("{tight} of {rows} rows"),
    );
    assert!(pass3);
    assert!(pass4);
}

#[test]
fn criterion_5_facet_count_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(1005);
    let mut mismatches = Vec::new();
    let mut checked = 0;
    while checked < 20 {
        let depth = rng.gen_range(1..=3);
        let widths: Vec<usize> = (0..=depth).map(|_| rng.gen_range(1..=6)).collect();
        let net = SequentialReluNetwork::random(&widths, &mut rng);
        let n0 = widths[0];
        let m = rng.gen_range(1..=6);
        let c = TemplateMatrix::new(matrix(m, n0, &mut rng)).unwrap();
        let got = match network_directions_unpruned(&c, &net, 1e-9) {
            Ok(t) => t.rows(),
            Err(_) => continue,
        };
        // the formula presumes no direction is annihilated by a wide layer
        let mut rows = c.directions().clone();
        let mut annihilated = false;
        for l in net.layers() {
            rows = rows.dot(&pinv(&l.weight, 1e-9).unwrap());
            annihilated |= rows.axis_iter(Axis(0)).any(|r| r.iter().all(|v| v.abs() < 1e-9));
        }
        if annihilated {
            continue;
        }
        checked += 1;
        let hidden: usize = widths[1..widths.len() - 1].iter().sum();
        let tall: usize = widths.windows(2).map(|w| w[1].saturating_sub(w[0])).sum();
        let formula = m + hidden + tall;
        if got != formula {
            mismatches.push(format!("{widths:?}: {got} rows vs formula {formula}"));
        }
    }
    let pass = mismatches.is_empty();
    let detail = if pass {
        "20 architectures".to_string()
    } else {
        format!("{} of 20 differ, e.g. {}", mismatches.len(), mismatches[0])
    };
    report(5, "pre-pruning row count equals the facet formula", pass, &detail);
    assert!(pass, "{mismatches:#?}");
}

#[test]
fn criterion_6_boundedness() {
    let mut rng = ChaCha8Rng::seed_from_u64(1006);
    let mut unbounded = 0usize;
    let mut lps = 0usize;
    let mut built = 0;
    while built < 20 {
        let n = rng.gen_range(2..=4);
        let m = rng.gen_range(1..=n);
        let a = matrix(n, n, &mut rng);
        let b = matrix(n, m, &mut rng);
        let h = rng.gen_range(2..=8);
        let net = SequentialReluNetwork::random(&[n, h, m], &mut rng);
        let full_rank = |w: &Matrix| {
            let s = polyreach::linalg::svd(w).unwrap();
            s.rank(1e-9) == w.nrows().min(w.ncols())
        };
        if !full_rank(&a) || !full_rank(&b) || !net.layers().iter().all(|l| full_rank(&l.weight)) {
            continue;
        }
        built += 1;
        let sys = ControlledSystem::new(a, b, Array1::zeros(n), net, random_box(n, &mut rng)).unwrap();
        let r = reach(&sys, &ReachSettings::new(3, 0.01, 0.98)).unwrap();
        for poly in &r.polytopes {
            for i in 0..n {
                for sign in [1.0, -1.0] {
                    let mut objective = Array1::zeros(n);
                    objective[i] = sign;
                    let lp = LpProblem {
                        objective,
                        matrix: poly.directions.directions().clone(),
                        rhs: poly.offsets.clone(),
                    };
                    lps += 1;
                    match lp_maximize(&lp).unwrap() {
                        LpOutcome::Optimal { value, .. } if value.is_finite() => {}
                        _ => unbounded += 1,
                    }
                }
            }
        }
    }
    let pass = unbounded == 0;
    report(
        6,
        "every reach polytope coordinate is bounded",
        pass,
        &format!("{unbounded} non-optimal statuses in {lps} LPs"),
    );
    assert!(pass);
}

#[test]
fn criterion_7_tall_layer_tightness() {
    let mut rng = ChaCha8Rng::seed_from_u64(1007);
    let mut worst = f64::NEG_INFINITY;
    let mut failures = 0;
    for _ in 0..20 {
        let w = matrix(2, 1, &mut rng);
        let bias = Array1::from_shape_fn(2, |_| rng.gen_range(-1.0..1.0));
        let lo = rng.gen_range(-2.0..0.0);
        let hi = lo + rng.gen_range(0.1..2.0);
        let cin = TemplateMatrix::box_directions(1);
        let din = Array1::from(vec![hi, -lo]);
        let cout = affine_directions(&cin, &w, 1e-9).unwrap();
        // exact offsets: the image is a segment, so the support is attained at an end
        let ends = [lo, hi].map(|x| w.column(0).to_owned() * x + &bias);
        let dout = Array1::from_shape_fn(cout.rows(), |r| {
            let c = cout.row(r);
            c.dot(&ends[0]).max(c.dot(&ends[1]))
        });
        let wp = pinv(&w, 1e-9).unwrap();
        match halfplane_vertices(cout.directions(), &dout) {
            Ok(vertices) => {
                for v in vertices {
                    let y = Array1::from(vec![v[0], v[1]]) - &bias;
                    let x = wp.dot(&y);
                    let slack = cin.directions().dot(&x) - &din;
                    worst = slack.iter().fold(worst, |a, s| a.max(*s));
                }
            }
            Err(_) => failures += 1,
        }
    }
    let pass = failures == 0 && worst <= 1e-7;
    report(
        7,
        "tall-layer output vertices map back into the input polytope",
        pass,
        &format!("worst slack {worst:.2e}, {failures} enumeration failures"),
    );
    assert!(pass);
}

#[test]
fn criterion_8_quadrotor_scale() {
    let start = Instant::now();
    let cfg = load_config(configs().join("quadrotor.json")).unwrap();
    let sys = cfg.system().unwrap();
    assert_eq!(sys.controller.widths(), vec![6, 32, 32, 3]);
    let outcome = reach(&sys, &ReachSettings::new(4, 0.01, 0.98));
    let (pass, detail) = match outcome {
        Ok(r) => {
            let t = simulate(&sys, 10_000, 4, 77).unwrap();
            let violations: usize = (0..=4)
                .map(|k| {
                    t.states[k]
                        .axis_iter(Axis(0))
                        .filter(|x| !r.polytopes[k].contains(x.view(), 1e-6))
                        .count()
                })
                .sum();
            let secs = start.elapsed().as_secs_f64();
            (
                violations == 0 && secs < 7200.0,
                format!("{violations} violations, {secs:.1}s"),
            )
        }
        Err(e) => (false, format!("reach failed: {e}")),
    };
    report(8, "quadrotor horizon 4 at eps 0.01 with containment audit", pass, &detail);
    assert!(pass);
}
