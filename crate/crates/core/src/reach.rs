//! The reachability pipeline.
//!
//! Templates are chained step to step (`C^k` from `C^{k-1}`), while every
//! offset `d^k_i` is computed end-to-end on the `k`-fold unrolled network
//! from the initial set, so over-approximation error does not compound
//! through intermediate polytopes.

use std::time::{Duration, Instant};

use ndarray::{Array1, ArrayView1, Axis};
use rayon::prelude::*;

use crate::bnb::{maximize, BnBProblem, BnBResult, DEFAULT_NODE_CAP};
use crate::linalg::DEFAULT_RANK_TOL;
use crate::network::{
    absorb_zonotope, build_equivalent_step, unroll, AffineLayer, ControlledSystem,
    SequentialReluNetwork,
};
use crate::templates::{affine_directions, step_directions, TemplateMatrix, DEFAULT_LAMBDA};
use crate::{Error, Matrix, Result, Vector};

/// `{x : C x ≤ d}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    pub directions: TemplateMatrix,
    pub offsets: Vector,
}

impl Polytope {
    pub fn new(directions: TemplateMatrix, offsets: Vector) -> Result<Self> {
        if directions.rows() != offsets.len() {
            return Err(Error::dim("polytope offsets", directions.rows(), offsets.len()));
        }
        crate::linalg::check_finite_vector(&offsets, "polytope offsets")?;
        Ok(Self {
            directions,
            offsets,
        })
    }

    pub fn dim(&self) -> usize {
        self.directions.dim()
    }

    pub fn facets(&self) -> usize {
        self.offsets.len()
    }

    /// `C x ≤ d + tol` componentwise.
    pub fn contains(&self, x: ArrayView1<f64>, tol: f64) -> bool {
        self.directions
            .directions()
            .dot(&x)
            .iter()
            .zip(self.offsets.iter())
            .all(|(lhs, d)| *lhs <= d + tol)
    }

    /// Largest `c_i·x − d_i` over facets.
    pub fn max_violation(&self, x: ArrayView1<f64>) -> f64 {
        self.directions
            .directions()
            .dot(&x)
            .iter()
            .zip(self.offsets.iter())
            .map(|(lhs, d)| lhs - d)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Per-direction solver statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionStats {
    pub lower: f64,
    pub upper: f64,
    pub iterations: usize,
    pub max_live_nodes: usize,
}

impl From<&BnBResult> for DirectionStats {
    fn from(r: &BnBResult) -> Self {
        Self {
            lower: r.lower,
            upper: r.upper,
            iterations: r.iterations,
            max_live_nodes: r.max_live_nodes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReachSettings {
    pub horizon: usize,
    pub epsilon: f64,
    pub lambda: f64,
    pub rank_tol: f64,
    pub node_cap: usize,
}

impl ReachSettings {
    pub fn new(horizon: usize, epsilon: f64, lambda: f64) -> Self {
        Self {
            horizon,
            epsilon,
            lambda,
            rank_tol: DEFAULT_RANK_TOL,
            node_cap: DEFAULT_NODE_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda must lie in (0, 1], got {}",
                self.lambda
            )));
        }
        if !(self.rank_tol >= 0.0 && self.rank_tol.is_finite()) {
            return Err(Error::InvalidArgument("rank_tol must be non-negative".into()));
        }
        if self.node_cap == 0 {
            return Err(Error::InvalidArgument("node cap must be positive".into()));
        }
        Ok(())
    }
}

impl Default for ReachSettings {
    fn default() -> Self {
        Self::new(1, 0.01, DEFAULT_LAMBDA)
    }
}

#[derive(Debug, Clone)]
pub struct ReachResult {
    /// `polytopes[k]` over-approximates the states at time `k`; index 0 is
    /// the initial set.
    pub polytopes: Vec<Polytope>,
    /// `stats[k][i]` for row `i` of `polytopes[k]`; `stats[0]` is empty.
    pub stats: Vec<Vec<DirectionStats>>,
    pub wall_time: Duration,
    pub settings: ReachSettings,
}

impl ReachResult {
    /// Number of branch-and-bound problems solved.
    pub fn total_directions(&self) -> usize {
        self.stats.iter().map(Vec::len).sum()
    }
}

/// Template and offsets of the initial set, plus the input lift (for
/// zonotope sets) that the unrolled networks are precomposed with.
fn initial_polytope(
    sys: &ControlledSystem,
    rank_tol: f64,
) -> Result<(ControlledSystem, Polytope, Option<Matrix>)> {
    let sys = if sys.generator.is_some() {
        absorb_zonotope(sys)?
    } else {
        sys.clone()
    };
    match sys.lift.clone() {
        None => {
            let n = sys.state_dim();
            let dirs = TemplateMatrix::box_directions(n);
            let mut d = Array1::zeros(2 * n);
            for i in 0..n {
                d[2 * i] = sys.initial_box.upper[i];
                d[2 * i + 1] = -sys.initial_box.lower[i];
            }
            let poly = Polytope::new(dirs, d)?;
            Ok((sys, poly, None))
        }
        Some(g) => {
            let zdirs = TemplateMatrix::box_directions(g.ncols());
            let dirs = match affine_directions(&zdirs, &g, rank_tol) {
                Ok(d) if d.rows() > 0 => d,
                Ok(_) | Err(Error::RankDeficient { .. }) => {
                    TemplateMatrix::box_directions(sys.state_dim())
                }
                Err(e) => return Err(e),
            };
            // support of {G z : z ∈ box} along c
            let offsets = Array1::from_iter(dirs.directions().axis_iter(Axis(0)).map(|c| {
                let cg = c.dot(&g);
                let (lo, hi) = (&sys.initial_box.lower, &sys.initial_box.upper);
                (0..cg.len())
                    .map(|j| (cg[j] * hi[j]).max(cg[j] * lo[j]))
                    .sum::<f64>()
            }));
            let poly = Polytope::new(dirs, offsets)?;
            Ok((sys, poly, Some(g)))
        }
    }
}

/// `F_eq^{(k)}`, precomposed with the initial-set lift when present.
pub fn unrolled_network(
    step: &SequentialReluNetwork,
    k: usize,
    lift: Option<&Matrix>,
) -> Result<SequentialReluNetwork> {
    let net = unroll(step, k)?;
    match lift {
        Some(g) => net.compose_input(&AffineLayer::new(g.clone(), Array1::zeros(g.nrows()))?),
        None => Ok(net),
    }
}

/// Computes `X̄^0, …, X̄^H` with `X^k ⊆ X̄^k` for every `k`.
pub fn reach(sys: &ControlledSystem, settings: &ReachSettings) -> Result<ReachResult> {
    settings.validate()?;
    sys.validate()?;
    let start = Instant::now();

    let (sys, initial, lift) = initial_polytope(sys, settings.rank_tol)?;
    let step = build_equivalent_step(&sys)?;

    let mut result = ReachResult {
        polytopes: vec![initial],
        stats: vec![Vec::new()],
        wall_time: Duration::ZERO,
        settings: *settings,
    };

    for k in 1..=settings.horizon {
        let prev = &result.polytopes[k - 1].directions;
        let dirs = step_directions(prev, &sys, settings.lambda, settings.rank_tol)?;
        let net = unrolled_network(&step, k, lift.as_ref())?;

        let solved: Vec<Result<BnBResult>> = (0..dirs.rows())
            .into_par_iter()
            .map(|i| {
                let problem =
                    BnBProblem::new(&net, dirs.row(i).to_owned(), sys.initial_box.clone(), settings.epsilon)
                        .with_node_cap(settings.node_cap);
                maximize(&problem)
            })
            .collect();

        let mut offsets = Array1::zeros(dirs.rows());
        let mut stats = Vec::with_capacity(dirs.rows());
        for (i, r) in solved.into_iter().enumerate() {
            match r {
                Ok(r) => {
                    offsets[i] = r.upper;
                    stats.push(DirectionStats::from(&r));
                }
                Err(e) => {
                    result.wall_time = start.elapsed();
                    return Err(Error::ReachAborted {
                        step: k,
                        direction: i,
                        source: Box::new(e),
                        partial: Box::new(result),
                    });
                }
            }
        }
        log::info!(
            "step {k}: {} directions, {} BnB iterations",
            dirs.rows(),
            stats.iter().map(|s| s.iterations).sum::<usize>()
        );
        result.polytopes.push(Polytope::new(dirs, offsets)?);
        result.stats.push(stats);
    }
    result.wall_time = start.elapsed();
    Ok(result)
}
