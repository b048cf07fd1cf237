//! Adaptive template directions.
//!
//! Facet normals are pushed through each affine layer `y = W x + b` as
//! `C W†`. When `W` is tall, the output lives in an affine subspace and the
//! directions `±u_i` spanning the left null space of `W` are added so the
//! subspace is pinned down. A ReLU contributes the facets `−e_i` (`y ≥ 0`).
//! Near-duplicate directions are pruned by signed cosine similarity.

use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};

use crate::linalg::{cosine_similarity, pinv_from_svd, svd};
use crate::network::{ControlledSystem, SequentialReluNetwork};
use crate::{Error, Matrix, Result};

/// Default cosine-similarity pruning level.
pub const DEFAULT_LAMBDA: f64 = 0.98;

/// Facet normals, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateMatrix {
    directions: Matrix,
}

impl TemplateMatrix {
    pub fn new(directions: Matrix) -> Result<Self> {
        if let Some(i) = directions
            .axis_iter(Axis(0))
            .position(|r| r.iter().all(|&v| v == 0.0))
        {
            return Err(Error::InvalidArgument(format!("template row {i} is zero")));
        }
        crate::linalg::check_finite_matrix(&directions, "template")?;
        Ok(Self { directions })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            directions: Array2::zeros((0, dim)),
        }
    }

    /// `e_1, −e_1, e_2, −e_2, …`.
    pub fn box_directions(dim: usize) -> Self {
        let mut d = Array2::zeros((2 * dim, dim));
        for i in 0..dim {
            d[[2 * i, i]] = 1.0;
            d[[2 * i + 1, i]] = -1.0;
        }
        Self { directions: d }
    }

    pub fn directions(&self) -> &Matrix {
        &self.directions
    }

    pub fn into_inner(self) -> Matrix {
        self.directions
    }

    pub fn rows(&self) -> usize {
        self.directions.nrows()
    }

    pub fn dim(&self) -> usize {
        self.directions.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.directions.row(i)
    }

    fn stack(parts: &[&TemplateMatrix]) -> TemplateMatrix {
        let views: Vec<_> = parts.iter().map(|p| p.directions.view()).collect();
        TemplateMatrix {
            directions: concatenate(Axis(0), &views).expect("equal widths"),
        }
    }
}

/// Outcome of pushing directions through one affine layer.
struct AffineStep {
    template: TemplateMatrix,
    full_rank: bool,
}

fn affine_step(c: &TemplateMatrix, w: &Matrix, rank_tol: f64) -> Result<AffineStep> {
    let (n1, n0) = w.dim();
    if c.dim() != n0 {
        return Err(Error::dim("template vs layer input", n0, c.dim()));
    }
    let dec = svd(w)?;
    let rank = dec.rank(rank_tol);
    if n1 > n0 && rank < n0 {
        return Err(Error::RankDeficient {
            rows: n1,
            cols: n0,
            rank,
        });
    }
    let p = pinv_from_svd(&dec, rank_tol);
    let p_norm = if rank > 0 {
        1.0 / dec.singular_values[rank - 1]
    } else {
        0.0
    };
    let pushed = c.directions.dot(&p);

    let mut rows: Vec<Array1<f64>> = Vec::with_capacity(pushed.nrows() + 2 * n1.saturating_sub(n0));
    for (orig, row) in c.directions.axis_iter(Axis(0)).zip(pushed.axis_iter(Axis(0))) {
        let norm = row.dot(&row).sqrt();
        let scale = orig.dot(&orig).sqrt() * p_norm;
        if norm > rank_tol * scale && norm > 0.0 {
            rows.push(row.to_owned());
        }
    }
    if n1 > n0 {
        for i in n0..n1 {
            let u = dec.u.column(i).to_owned();
            rows.push(u.clone());
            rows.push(-u);
        }
    }
    Ok(AffineStep {
        template: from_rows(rows, n1),
        full_rank: rank == n0.min(n1),
    })
}

fn from_rows(rows: Vec<Array1<f64>>, dim: usize) -> TemplateMatrix {
    let mut d = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.into_iter().enumerate() {
        d.row_mut(i).assign(&r);
    }
    TemplateMatrix { directions: d }
}

/// Directions for the image of `Poly(C, ·)` under `y = W x + b`.
///
/// Returns `C W†` with rows annihilated by `W†` removed; for a tall `W`
/// (`n1 > n0`) the rows `±u_i`, `i = n0+1..n1`, are appended. A tall `W`
/// without full column rank is an error.
pub fn affine_directions(c: &TemplateMatrix, w: &Matrix, rank_tol: f64) -> Result<TemplateMatrix> {
    Ok(affine_step(c, w, rank_tol)?.template)
}

/// Appends the facets `−e_1, …, −e_n` of the non-negative orthant.
pub fn relu_directions(c: &TemplateMatrix, n: usize) -> Result<TemplateMatrix> {
    if c.dim() != n {
        return Err(Error::dim("relu_directions width", n, c.dim()));
    }
    let neg = -Array2::<f64>::eye(n);
    Ok(TemplateMatrix {
        directions: concatenate(Axis(0), &[c.directions.view(), neg.view()])
            .expect("equal widths"),
    })
}

/// Keeps a row only if its cosine similarity with every previously kept row
/// is at most `lambda`. Anti-parallel rows are distinct facets and both stay.
pub fn prune_similar(c: &TemplateMatrix, lambda: f64) -> Result<TemplateMatrix> {
    check_lambda(lambda)?;
    let mut kept: Vec<Array1<f64>> = Vec::new();
    for row in c.directions.axis_iter(Axis(0)) {
        let mut keep = true;
        for k in &kept {
            if cosine_similarity(row, k.view())? > lambda {
                keep = false;
                break;
            }
        }
        if keep {
            kept.push(row.to_owned());
        }
    }
    Ok(from_rows(kept, c.dim()))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "similarity level must lie in (0, 1], got {lambda}"
        )))
    }
}

/// Directions pushed through a chain of affine maps; ReLU facets are added
/// after layer `i` when `relu_after[i]` holds. Not pruned.
struct ChainDirections {
    template: TemplateMatrix,
    full_rank: bool,
}

fn chain_directions(
    c: &TemplateMatrix,
    weights: &[&Matrix],
    relu_after: &[bool],
    rank_tol: f64,
) -> Result<ChainDirections> {
    let mut d = c.clone();
    let mut full_rank = true;
    for (w, &relu) in weights.iter().zip(relu_after) {
        let step = affine_step(&d, w, rank_tol)?;
        full_rank &= step.full_rank;
        d = step.template;
        if relu {
            d = relu_directions(&d, w.nrows())?;
        }
    }
    Ok(ChainDirections {
        template: d,
        full_rank,
    })
}

/// Directions for a whole network before similarity pruning. ReLU facets
/// follow every affine layer except the last.
pub fn network_directions_unpruned(
    c: &TemplateMatrix,
    net: &SequentialReluNetwork,
    rank_tol: f64,
) -> Result<TemplateMatrix> {
    if c.dim() != net.input_dim() {
        return Err(Error::dim("template vs network input", net.input_dim(), c.dim()));
    }
    let weights: Vec<&Matrix> = net.layers().iter().map(|l| &l.weight).collect();
    let relu: Vec<bool> = (0..weights.len()).map(|i| i + 1 < weights.len()).collect();
    Ok(chain_directions(c, &weights, &relu, rank_tol)?.template)
}

/// Template directions for the output set of `net` given input directions
/// `c`, pruned at similarity level `lambda`.
pub fn network_directions(
    c: &TemplateMatrix,
    net: &SequentialReluNetwork,
    lambda: f64,
    rank_tol: f64,
) -> Result<TemplateMatrix> {
    check_lambda(lambda)?;
    prune_similar(&network_directions_unpruned(c, net, rank_tol)?, lambda)
}

/// Directions for the next closed-loop state `A x + B f(x) + e`.
///
/// The state part contributes `C A†`; the control part runs the controller
/// followed by `B` as an extra affine layer (no ReLU before or after `B`).
/// When boundedness cannot be guaranteed (the `B f` chain is tall and rank
/// deficient, or `A` is singular and the chain is not full rank), the axis
/// directions `±e_i` are added. The result is pruned at `lambda`.
pub fn step_directions(
    c: &TemplateMatrix,
    sys: &ControlledSystem,
    lambda: f64,
    rank_tol: f64,
) -> Result<TemplateMatrix> {
    check_lambda(lambda)?;
    let n = sys.state_dim();
    if c.dim() != n {
        return Err(Error::dim("template vs state", n, c.dim()));
    }
    let state = affine_step(c, &sys.a, rank_tol)?;

    let mut weights: Vec<&Matrix> = sys.controller.layers().iter().map(|l| &l.weight).collect();
    weights.push(&sys.b);
    let hidden = sys.controller.layers().len() - 1;
    let relu: Vec<bool> = (0..weights.len()).map(|i| i < hidden).collect();

    let mut parts = vec![state.template];
    let needs_axis = match chain_directions(c, &weights, &relu, rank_tol) {
        Ok(chain) => {
            let full = chain.full_rank;
            parts.push(chain.template);
            !state.full_rank && !full
        }
        Err(Error::RankDeficient { .. }) => true,
        Err(e) => return Err(e),
    };
    if needs_axis {
        parts.push(TemplateMatrix::box_directions(n));
    }
    let refs: Vec<&TemplateMatrix> = parts.iter().collect();
    prune_similar(&TemplateMatrix::stack(&refs), lambda)
}
