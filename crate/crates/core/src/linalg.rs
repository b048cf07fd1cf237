//! Dense linear algebra: SVD, pseudoinverse, numerical rank and cosine
//! similarity.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration. It returns *full*
//! orthogonal factors, so the left null space of a tall matrix and the null
//! space of a fat one are both available to template synthesis.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use crate::{Error, Matrix, Result, Vector};

/// Default relative rank tolerance (relative to the largest singular value).
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

const MAX_SWEEPS: usize = 80;
const ORTHO_TOL: f64 = 1e-15;

/// Full singular value decomposition `W = U diag(σ) Vᵀ`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `rows × rows`, orthogonal.
    pub u: Matrix,
    /// `min(rows, cols)` values, non-increasing, non-negative.
    pub singular_values: Vector,
    /// `cols × cols`, orthogonal.
    pub v: Matrix,
}

impl Svd {
    pub fn rank(&self, rank_tol: f64) -> usize {
        numerical_rank(self.singular_values.view(), rank_tol)
    }

    /// `U diag(σ) Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let k = self.singular_values.len();
        let mut us = self.u.slice(s![.., ..k]).to_owned();
        for (mut col, &sigma) in us.axis_iter_mut(Axis(1)).zip(self.singular_values.iter()) {
            col *= sigma;
        }
        us.dot(&self.v.slice(s![.., ..k]).t())
    }
}

pub(crate) fn check_finite_matrix(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub(crate) fn check_finite_vector(v: &Vector, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Full SVD of `w`.
///
/// Singular vectors follow a fixed sign convention: the first entry of each
/// right singular vector with magnitude above `1e-12` is non-negative (the
/// paired left vector flips with it). Basis vectors of the left null space
/// are normalized the same way.
pub fn svd(w: &Matrix) -> Result<Svd> {
    let (rows, cols) = w.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "svd of empty {rows}x{cols} matrix"
        )));
    }
    check_finite_matrix(w, "svd input")?;

    let (mut u, sigma, mut v) = if rows >= cols {
        jacobi_tall(w)?
    } else {
        let (ut, sigma, vt) = jacobi_tall(&w.t().to_owned())?;
        (vt, sigma, ut)
    };

    let k = sigma.len();
    for i in 0..k {
        if leading_sign(v.column(i)) < 0.0 {
            v.column_mut(i).mapv_inplace(|x| -x);
            u.column_mut(i).mapv_inplace(|x| -x);
        }
    }
    for i in k..cols {
        if leading_sign(v.column(i)) < 0.0 {
            v.column_mut(i).mapv_inplace(|x| -x);
        }
    }
    for i in k..rows {
        if leading_sign(u.column(i)) < 0.0 {
            u.column_mut(i).mapv_inplace(|x| -x);
        }
    }

    Ok(Svd {
        u,
        singular_values: sigma,
        v,
    })
}

fn leading_sign(v: ArrayView1<f64>) -> f64 {
    v.iter()
        .find(|x| x.abs() > 1e-12)
        .map(|x| x.signum())
        .unwrap_or(1.0)
}

/// One-sided Jacobi on a matrix with `rows >= cols`.
fn jacobi_tall(a: &Matrix) -> Result<(Matrix, Vector, Matrix)> {
    let (m, n) = a.dim();
    let mut work = a.clone();
    let mut v = Array2::<f64>::eye(n);

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let (x, y) = (work[[i, p]], work[[i, q]]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= ORTHO_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                rotate_columns(&mut work, p, q, c, sn);
                rotate_columns(&mut v, p, q, c, sn);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::SvdNoConvergence { sweeps: MAX_SWEEPS });
    }

    let norms: Vec<f64> = work
        .axis_iter(Axis(1))
        .map(|c| c.dot(&c).sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let sigma_max = norms[order[0]];
    let negligible = sigma_max * (m.max(n) as f64) * f64::EPSILON;

    let mut sigma = Array1::<f64>::zeros(n);
    let mut v_sorted = Array2::<f64>::zeros((n, n));
    let mut left: Vec<Vector> = Vec::with_capacity(m);
    let mut zero_slots = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = norms[src];
        v_sorted.column_mut(dst).assign(&v.column(src));
        if norms[src] > negligible && norms[src] > 0.0 {
            left.push(work.column(src).mapv(|x| x / norms[src]));
        } else {
            zero_slots.push(dst);
        }
    }

    // Left vectors for negligible σ are taken from the orthogonal completion;
    // they pair with the corresponding right vectors only through σ ≈ 0.
    let full = complete_basis(&left, m);
    let mut u = Array2::<f64>::zeros((m, m));
    let nonzero = left.len();
    let mut next_completion = nonzero;
    let mut next_range = 0;
    for col in 0..n {
        if zero_slots.contains(&col) {
            u.column_mut(col).assign(&full.column(next_completion));
            next_completion += 1;
        } else {
            u.column_mut(col).assign(&full.column(next_range));
            next_range += 1;
        }
    }
    for col in n..m {
        u.column_mut(col).assign(&full.column(next_completion));
        next_completion += 1;
    }
    Ok((u, sigma, v_sorted))
}

fn rotate_columns(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let (x, y) = (row[p], row[q]);
        row[p] = c * x - s * y;
        row[q] = s * x + c * y;
    }
}

/// Extends an orthonormal set of vectors in `R^dim` to an orthonormal basis.
/// The given vectors come first, in order.
fn complete_basis(vectors: &[Vector], dim: usize) -> Matrix {
    let mut basis: Vec<Vector> = vectors.to_vec();
    while basis.len() < dim {
        // Greedy: the standard basis vector with the largest residual.
        let mut best: Option<(f64, Vector)> = None;
        for k in 0..dim {
            let mut cand = Array1::<f64>::zeros(dim);
            cand[k] = 1.0;
            for _ in 0..2 {
                for b in &basis {
                    let proj = b.dot(&cand);
                    cand.scaled_add(-proj, b);
                }
            }
            let norm = cand.dot(&cand).sqrt();
            if best.as_ref().is_none_or(|(bn, _)| norm > *bn) {
                best = Some((norm, cand));
            }
        }
        let (norm, cand) = best.expect("dim > 0");
        basis.push(cand / norm);
    }
    let mut out = Array2::<f64>::zeros((dim, dim));
    for (j, b) in basis.iter().enumerate() {
        out.column_mut(j).assign(b);
    }
    out
}

/// Number of singular values strictly above `rank_tol · σ₁`.
pub fn numerical_rank(singular_values: ArrayView1<f64>, rank_tol: f64) -> usize {
    let Some(&largest) = singular_values.first() else {
        return 0;
    };
    if largest <= 0.0 {
        return 0;
    }
    let cutoff = rank_tol * largest;
    singular_values.iter().filter(|&&s| s > cutoff).count()
}

/// Moore–Penrose pseudoinverse from an existing SVD.
pub fn pinv_from_svd(svd: &Svd, rank_tol: f64) -> Matrix {
    let rows = svd.u.nrows();
    let cols = svd.v.nrows();
    let rank = svd.rank(rank_tol);
    let mut out = Array2::<f64>::zeros((cols, rows));
    for i in 0..rank {
        let vi = svd.v.column(i);
        let ui = svd.u.column(i);
        let inv = 1.0 / svd.singular_values[i];
        for r in 0..cols {
            let scale = vi[r] * inv;
            if scale != 0.0 {
                out.row_mut(r).scaled_add(scale, &ui);
            }
        }
    }
    out
}

/// Moore–Penrose pseudoinverse; singular values at or below `rank_tol · σ₁`
/// are treated as zero. The all-zero matrix maps to the zero matrix of
/// transposed shape.
pub fn pinv(w: &Matrix, rank_tol: f64) -> Result<Matrix> {
    if w.iter().all(|&x| x == 0.0) {
        check_finite_matrix(w, "pinv input")?;
        return Ok(Array2::zeros((w.ncols(), w.nrows())));
    }
    Ok(pinv_from_svd(&svd(w)?, rank_tol))
}

/// `c1ᵀc2 / (‖c1‖ ‖c2‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(c1: ArrayView1<f64>, c2: ArrayView1<f64>) -> Result<f64> {
    if c1.len() != c2.len() {
        return Err(Error::dim("cosine_similarity", c1.len(), c2.len()));
    }
    let n1 = c1.dot(&c1).sqrt();
    let n2 = c2.dot(&c2).sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((c1.dot(&c2) / (n1 * n2)).clamp(-1.0, 1.0))
}

/// Frobenius norm.
pub fn frobenius(m: &Matrix) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}
