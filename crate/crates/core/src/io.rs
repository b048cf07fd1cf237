//! JSON configs, weight files and results; 2-D projections and CSV export.
//!
//! Weight files hold `{"layers": [{"W": [[..]], "b": [..]}, ...]}` where a
//! ReLU sits between consecutive entries and never after the last one.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use ndarray::{Array1, Array2, Axis};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bnb::DEFAULT_NODE_CAP;
use crate::linalg::DEFAULT_RANK_TOL;
use crate::network::{AffineLayer, BoxSet, ControlledSystem, SequentialReluNetwork};
use crate::oracle::{lp_maximize, LpOutcome, LpProblem};
use crate::reach::{DirectionStats, Polytope, ReachResult, ReachSettings};
use crate::templates::TemplateMatrix;
use crate::{Error, Matrix, Result, Vector};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses JSON, reporting failures with the path of the offending field.
fn parse<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let field = if field == "." { "<root>".to_string() } else { field };
        Error::config(
            field,
            format!("{} ({})", e.inner(), path.display()),
        )
    })
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn matrix_from_rows(rows: &[Vec<f64>], field: &str) -> Result<Matrix> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(Error::config(field, "matrix must be non-empty"));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::config(
                format!("{field}[{i}]"),
                format!("row has {} entries, expected {ncols}", r.len()),
            ));
        }
        if let Some(j) = r.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!("{field}[{i}][{j}]"), "non-finite number"));
        }
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((rows.len(), ncols), flat).expect("shape checked"))
}

fn vector_from(values: &[f64], field: &str) -> Result<Vector> {
    if let Some(j) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::config(format!("{field}[{j}]"), "non-finite number"));
    }
    Ok(Array1::from(values.to_vec()))
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.axis_iter(Axis(0)).map(|r| r.to_vec()).collect()
}

// ---------------------------------------------------------------------------
// weights

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    layers: Vec<LayerFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

fn network_from_file(file: WeightsFile) -> Result<SequentialReluNetwork> {
    if file.layers.is_empty() {
        return Err(Error::config("layers", "layer list is empty"));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for (i, l) in file.layers.iter().enumerate() {
        let w = matrix_from_rows(&l.w, &format!("layers[{i}].W"))?;
        let b = vector_from(&l.b, &format!("layers[{i}].b"))?;
        if b.len() != w.nrows() {
            return Err(Error::config(
                format!("layers[{i}].b"),
                format!("bias has {} entries, W has {} rows", b.len(), w.nrows()),
            ));
        }
        if i > 0 && w.ncols() != layers.last().map(AffineLayer::out_dim).unwrap_or(0) {
            let prev: &AffineLayer = layers.last().unwrap();
            return Err(Error::config(
                format!("layers[{i}].W"),
                format!(
                    "layer {i} takes {} inputs but layer {} outputs {}",
                    w.ncols(),
                    i - 1,
                    prev.out_dim()
                ),
            ));
        }
        layers.push(AffineLayer::new(w, b)?);
    }
    SequentialReluNetwork::new(layers)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<SequentialReluNetwork> {
    let path = path.as_ref();
    let file: WeightsFile = parse(path, &read(path)?)?;
    network_from_file(file).map_err(|e| match e {
        Error::Config { path: field, message } => Error::Config {
            path: field,
            message: format!("{message} ({})", path.display()),
        },
        other => other,
    })
}

pub fn save_weights(net: &SequentialReluNetwork, path: impl AsRef<Path>) -> Result<()> {
    let file = WeightsFile {
        layers: net
            .layers()
            .iter()
            .map(|l| LayerFile {
                w: rows_of(&l.weight),
                b: l.bias.to_vec(),
            })
            .collect(),
    };
    write(path.as_ref(), &to_json(&file)?)
}

// ---------------------------------------------------------------------------
// config

fn default_rank_tol() -> f64 {
    DEFAULT_RANK_TOL
}

fn default_node_cap() -> usize {
    DEFAULT_NODE_CAP
}

/// A run description. `x0_lower`/`x0_upper` describe the initial box; when
/// `generator` is present the initial set is the zonotope `{G z : ‖z‖∞ ≤ 1}`
/// and the box fields may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub e: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_upper: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<Vec<Vec<f64>>>,
    /// Relative paths are resolved against the config file's directory.
    pub weights: PathBuf,
    pub horizon: usize,
    pub epsilon: f64,
    pub lambda: f64,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    #[serde(default = "default_node_cap")]
    pub node_cap: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl RunConfig {
    pub fn weights_path(&self) -> PathBuf {
        if self.weights.is_absolute() {
            self.weights.clone()
        } else {
            self.base_dir.join(&self.weights)
        }
    }

    pub fn settings(&self) -> ReachSettings {
        ReachSettings {
            horizon: self.horizon,
            epsilon: self.epsilon,
            lambda: self.lambda,
            rank_tol: self.rank_tol,
            node_cap: self.node_cap,
        }
    }

    /// Checks scalar invariants and matrix shapes (the weights file is not
    /// read).
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("epsilon", format!("must be positive, got {}", self.epsilon)));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::config("lambda", format!("must lie in (0, 1], got {}", self.lambda)));
        }
        if !(self.rank_tol >= 0.0 && self.rank_tol.is_finite()) {
            return Err(Error::config("rank_tol", "must be non-negative"));
        }
        if self.node_cap == 0 {
            return Err(Error::config("node_cap", "must be positive"));
        }
        let a = matrix_from_rows(&self.a, "A")?;
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::config("A", format!("must be square, got {}x{}", n, a.ncols())));
        }
        let b = matrix_from_rows(&self.b, "B")?;
        if b.nrows() != n {
            return Err(Error::config("B", format!("has {} rows, A has {n}", b.nrows())));
        }
        if self.e.len() != n {
            return Err(Error::config("e", format!("has {} entries, expected {n}", self.e.len())));
        }
        vector_from(&self.e, "e")?;
        match &self.generator {
            Some(g) => {
                let g = matrix_from_rows(g, "generator")?;
                if g.nrows() != n {
                    return Err(Error::config(
                        "generator",
                        format!("has {} rows, expected {n}", g.nrows()),
                    ));
                }
            }
            None => {
                let (lo, hi) = match (&self.x0_lower, &self.x0_upper) {
                    (Some(lo), Some(hi)) => (lo, hi),
                    (None, _) => {
                        return Err(Error::config("x0_lower", "missing (required without generator)"))
                    }
                    (_, None) => {
                        return Err(Error::config("x0_upper", "missing (required without generator)"))
                    }
                };
                for (name, v) in [("x0_lower", lo), ("x0_upper", hi)] {
                    if v.len() != n {
                        return Err(Error::config(
                            name,
                            format!("has {} entries, expected {n}", v.len()),
                        ));
                    }
                    vector_from(v, name)?;
                }
                if let Some(i) = (0..n).find(|&i| lo[i] > hi[i]) {
                    return Err(Error::config(
                        format!("x0_lower[{i}]"),
                        format!("exceeds x0_upper[{i}] ({} > {})", lo[i], hi[i]),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Builds the system, loading the controller from [`Self::weights_path`].
    pub fn system(&self) -> Result<ControlledSystem> {
        self.validate()?;
        let controller = load_weights(self.weights_path())?;
        self.system_with(controller)
    }

    pub fn system_with(&self, controller: SequentialReluNetwork) -> Result<ControlledSystem> {
        self.validate()?;
        let a = matrix_from_rows(&self.a, "A")?;
        let b = matrix_from_rows(&self.b, "B")?;
        let e = Array1::from(self.e.clone());
        if controller.input_dim() != a.nrows() {
            return Err(Error::config(
                "weights",
                format!(
                    "controller takes {} inputs, state dimension is {}",
                    controller.input_dim(),
                    a.nrows()
                ),
            ));
        }
        if controller.output_dim() != b.ncols() {
            return Err(Error::config(
                "weights",
                format!(
                    "controller outputs {} values, B has {} columns",
                    controller.output_dim(),
                    b.ncols()
                ),
            ));
        }
        match &self.generator {
            Some(g) => {
                ControlledSystem::with_zonotope(a, b, e, controller, matrix_from_rows(g, "generator")?)
            }
            None => {
                let lo = Array1::from(self.x0_lower.clone().unwrap_or_default());
                let hi = Array1::from(self.x0_upper.clone().unwrap_or_default());
                ControlledSystem::new(a, b, e, controller, BoxSet::new(lo, hi)?)
            }
        }
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&read(path)?, path, &base)
}

/// Parses and validates config text; `origin` only labels error messages and
/// `base_dir` anchors a relative weights path.
pub fn parse_config(text: &str, origin: &Path, base_dir: &Path) -> Result<RunConfig> {
    let mut cfg: RunConfig = parse(origin, text)?;
    cfg.base_dir = base_dir.to_path_buf();
    cfg.validate().map_err(|e| match e {
        Error::Config { path: field, message } => Error::Config {
            path: field,
            message: format!("{message} ({})", origin.display()),
        },
        other => other,
    })?;
    Ok(cfg)
}

pub fn save_config(cfg: &RunConfig, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &to_json(cfg)?)
}

// ---------------------------------------------------------------------------
// results

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResultFile {
    settings: SettingsFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<RunConfig>,
    wall_time: Duration,
    steps: Vec<StepFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SettingsFile {
    horizon: usize,
    epsilon: f64,
    lambda: f64,
    rank_tol: f64,
    node_cap: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepFile {
    k: usize,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    d: Vec<f64>,
    /// `[lower, upper, iterations, max_live_nodes]` per row; empty at k = 0.
    directions: Vec<(f64, f64, usize, usize)>,
}

/// A result file: the reach result plus the config echo, if one was saved.
#[derive(Debug, Clone)]
pub struct SavedResult {
    pub result: ReachResult,
    pub config: Option<RunConfig>,
}

pub fn result_to_json(result: &ReachResult, config: Option<&RunConfig>) -> Result<String> {
    let s = &result.settings;
    let file = ResultFile {
        settings: SettingsFile {
            horizon: s.horizon,
            epsilon: s.epsilon,
            lambda: s.lambda,
            rank_tol: s.rank_tol,
            node_cap: s.node_cap,
        },
        config: config.cloned(),
        wall_time: result.wall_time,
        steps: result
            .polytopes
            .iter()
            .zip(&result.stats)
            .enumerate()
            .map(|(k, (p, st))| StepFile {
                k,
                c: rows_of(p.directions.directions()),
                d: p.offsets.to_vec(),
                directions: st
                    .iter()
                    .map(|s| (s.lower, s.upper, s.iterations, s.max_live_nodes))
                    .collect(),
            })
            .collect(),
    };
    to_json(&file)
}

pub fn save_result(
    result: &ReachResult,
    config: Option<&RunConfig>,
    path: impl AsRef<Path>,
) -> Result<()> {
    write(path.as_ref(), &result_to_json(result, config)?)
}

pub fn result_from_json(text: &str, origin: &Path) -> Result<SavedResult> {
    let file: ResultFile = parse(origin, text)?;
    let mut polytopes = Vec::with_capacity(file.steps.len());
    let mut stats = Vec::with_capacity(file.steps.len());
    for (k, step) in file.steps.into_iter().enumerate() {
        let field = format!("steps[{k}]");
        if step.k != k {
            return Err(Error::config(format!("{field}.k"), format!("expected {k}, got {}", step.k)));
        }
        let c = matrix_from_rows(&step.c, &format!("{field}.C"))?;
        let d = vector_from(&step.d, &format!("{field}.d"))?;
        polytopes.push(Polytope::new(TemplateMatrix::new(c)?, d)?);
        stats.push(
            step.directions
                .into_iter()
                .map(|(lower, upper, iterations, max_live_nodes)| DirectionStats {
                    lower,
                    upper,
                    iterations,
                    max_live_nodes,
                })
                .collect(),
        );
    }
    if polytopes.is_empty() {
        return Err(Error::config("steps", "result holds no polytopes"));
    }
    let s = file.settings;
    Ok(SavedResult {
        result: ReachResult {
            polytopes,
            stats,
            wall_time: file.wall_time,
            settings: ReachSettings {
                horizon: s.horizon,
                epsilon: s.epsilon,
                lambda: s.lambda,
                rank_tol: s.rank_tol,
                node_cap: s.node_cap,
            },
        },
        config: file.config,
    })
}

pub fn load_result(path: impl AsRef<Path>) -> Result<SavedResult> {
    let path = path.as_ref();
    result_from_json(&read(path)?, path)
}

// ---------------------------------------------------------------------------
// projection

/// Vertices of `{y ∈ ℝ² : normals · y ≤ offsets}`, counterclockwise.
///
/// Every pair of boundary lines is intersected and the points satisfying all
/// constraints (up to a scale-relative tolerance) are kept. Returns
/// `EmptyPolytope` when no vertex survives and `Unbounded` when the normals
/// do not positively span the plane.
pub fn halfplane_vertices(normals: &Matrix, offsets: &Vector) -> Result<Vec<[f64; 2]>> {
    if normals.ncols() != 2 {
        return Err(Error::dim("half-plane normals", 2, normals.ncols()));
    }
    if normals.nrows() != offsets.len() {
        return Err(Error::dim("half-plane offsets", normals.nrows(), offsets.len()));
    }
    let m = normals.nrows();
    let scale = offsets.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
    let tol = 1e-9 * scale;
    let mut pts: Vec<[f64; 2]> = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            let (a1, b1, c1) = (normals[[i, 0]], normals[[i, 1]], offsets[i]);
            let (a2, b2, c2) = (normals[[j, 0]], normals[[j, 1]], offsets[j]);
            let det = a1 * b2 - a2 * b1;
            let norm = (a1.hypot(b1) * a2.hypot(b2)).max(f64::MIN_POSITIVE);
            if det.abs() <= 1e-12 * norm {
                continue;
            }
            let p = [(c1 * b2 - c2 * b1) / det, (a1 * c2 - a2 * c1) / det];
            let feasible = (0..m).all(|r| {
                let nr = normals[[r, 0]].hypot(normals[[r, 1]]);
                normals[[r, 0]] * p[0] + normals[[r, 1]] * p[1] <= offsets[r] + tol * nr.max(1.0)
            });
            if feasible && !pts.iter().any(|q| (q[0] - p[0]).hypot(q[1] - p[1]) <= tol) {
                pts.push(p);
            }
        }
    }
    if pts.is_empty() {
        // Either empty or the constraints leave a direction open.
        return Err(if m < 3 {
            Error::Unbounded("fewer than three half-planes".into())
        } else {
            Error::EmptyPolytope
        });
    }
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / pts.len() as f64;
    pts.sort_by(|p, q| {
        let ap = (p[1] - cy).atan2(p[0] - cx);
        let aq = (q[1] - cy).atan2(q[0] - cx);
        ap.total_cmp(&aq)
    });
    Ok(pts)
}

/// Shoelace area of a counterclockwise polygon.
pub fn polygon_area(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    (0..n)
        .map(|i| {
            let (p, q) = (vertices[i], vertices[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        / 2.0
}

/// Whether `p` lies in the convex counterclockwise polygon, up to `tol`.
pub fn polygon_contains(vertices: &[[f64; 2]], p: [f64; 2], tol: f64) -> bool {
    let n = vertices.len();
    match n {
        0 => false,
        1 => (vertices[0][0] - p[0]).hypot(vertices[0][1] - p[1]) <= tol,
        _ => (0..n).all(|i| {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
            let len = ex.hypot(ey);
            if len == 0.0 {
                return true;
            }
            // signed distance to the left of edge a→b
            (ex * (p[1] - a[1]) - ey * (p[0] - a[0])) / len >= -tol
        }),
    }
}

/// Outer polygon of the projection of `poly` onto coordinates `dims`, from
/// support values along `n_angles` evenly spaced directions.
pub fn project_2d(poly: &Polytope, dims: (usize, usize), n_angles: usize) -> Result<Vec<[f64; 2]>> {
    let n = poly.dim();
    if n_angles < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 angles, got {n_angles}")));
    }
    if dims.0 >= n || dims.1 >= n || dims.0 == dims.1 {
        return Err(Error::InvalidArgument(format!(
            "projection dims ({}, {}) invalid for dimension {n}",
            dims.0, dims.1
        )));
    }
    let mut normals = Array2::zeros((n_angles, 2));
    let mut support = Array1::zeros(n_angles);
    for j in 0..n_angles {
        let theta = 2.0 * std::f64::consts::PI * j as f64 / n_angles as f64;
        let (s, c) = theta.sin_cos();
        // exact axis directions keep box supports exact
        let (c, s) = (snap(c), snap(s));
        let mut objective = Array1::zeros(n);
        objective[dims.0] = c;
        objective[dims.1] = s;
        let lp = LpProblem {
            objective,
            matrix: poly.directions.directions().clone(),
            rhs: poly.offsets.clone(),
        };
        match lp_maximize(&lp)? {
            LpOutcome::Optimal { value, .. } => {
                normals[[j, 0]] = c;
                normals[[j, 1]] = s;
                support[j] = value;
            }
            LpOutcome::Infeasible => return Err(Error::EmptyPolytope),
            LpOutcome::Unbounded => {
                return Err(Error::Unbounded(format!("projection support at angle {theta}")))
            }
        }
    }
    halfplane_vertices(&normals, &support)
}

fn snap(v: f64) -> f64 {
    if v.abs() < 1e-15 {
        0.0
    } else if (v.abs() - 1.0).abs() < 1e-15 {
        v.signum()
    } else {
        v
    }
}

// ---------------------------------------------------------------------------
// CSV

/// Formats like C's `%.17g`.
pub fn format_g17(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..17).contains(&exp) {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (16 - exp) as usize;
        strip_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn polygon_csv(vertices: &[[f64; 2]]) -> String {
    let mut out = String::from("x,y\n");
    for v in vertices {
        let _ = writeln!(out, "{},{}", format_g17(v[0]), format_g17(v[1]));
    }
    out
}

pub fn save_polygon_csv(vertices: &[[f64; 2]], path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &polygon_csv(vertices))
}

/// Rows `k,sample,x0,…` for every simulated state.
pub fn trajectories_csv(states: &[Matrix]) -> String {
    let n = states.first().map_or(0, |m| m.ncols());
    let mut out = String::from("k,sample");
    for i in 0..n {
        let _ = write!(out, ",x{i}");
    }
    out.push('\n');
    for (k, m) in states.iter().enumerate() {
        for (s, row) in m.axis_iter(Axis(0)).enumerate() {
            let _ = write!(out, "{k},{s}");
            for v in row {
                let _ = write!(out, ",{}", format_g17(*v));
            }
            out.push('\n');
        }
    }
    out
}

pub fn save_text(text: &str, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), text)
}
