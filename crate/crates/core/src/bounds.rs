//! Symbolic linear bound propagation (DeepPoly-style) over input boxes.
//!
//! Each ReLU with pre-activation bounds `[l, u]` is relaxed by one linear
//! upper and one linear lower function:
//!
//! - `l ≥ 0`: identity, `u ≤ 0`: zero (stable, exact);
//! - otherwise `y ≤ u (x − l) / (u − l)` and `y ≥ λ x` with `λ = 1` when
//!   `u > −l`, else `λ = 0`.
//!
//! Bounds of every layer are obtained by back-substituting through all
//! preceding layers down to the input box.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::network::{BoxSet, SequentialReluNetwork};
use crate::{Error, Matrix, Result, Vector};

/// Concrete pre-activation bounds of one affine layer's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronBounds {
    pub lower: Vector,
    pub upper: Vector,
}

/// Linear functions of the network input enclosing one layer's outputs:
/// `lower_coeffs·x + lower_offset ≤ z ≤ upper_coeffs·x + upper_offset`.
#[derive(Debug, Clone)]
pub struct SymbolicBound {
    pub lower_coeffs: Matrix,
    pub lower_offset: Vector,
    pub upper_coeffs: Matrix,
    pub upper_offset: Vector,
}

#[derive(Debug, Clone)]
pub struct LayerBounds {
    pub symbolic: SymbolicBound,
    pub concrete: NeuronBounds,
}

/// Per-neuron ReLU relaxation `λ z ≤ relu(z) ≤ s z + t`.
#[derive(Debug, Clone)]
struct Relaxation {
    upper_slope: Vector,
    upper_intercept: Vector,
    lower_slope: Vector,
}

impl Relaxation {
    fn from_bounds(b: &NeuronBounds) -> Self {
        let n = b.lower.len();
        let mut upper_slope = Array1::zeros(n);
        let mut upper_intercept = Array1::zeros(n);
        let mut lower_slope = Array1::zeros(n);
        for i in 0..n {
            let (l, u) = (b.lower[i], b.upper[i]);
            if l >= 0.0 {
                upper_slope[i] = 1.0;
                lower_slope[i] = 1.0;
            } else if u <= 0.0 {
                // inactive: all zero
            } else {
                let s = u / (u - l);
                upper_slope[i] = s;
                upper_intercept[i] = -s * l;
                lower_slope[i] = if u > -l { 1.0 } else { 0.0 };
            }
        }
        Self {
            upper_slope,
            upper_intercept,
            lower_slope,
        }
    }
}

/// One side of a back-substituted bound: `coeffs · (layer input) + offset`.
struct Linear {
    coeffs: Matrix,
    offset: Vector,
}

enum Side {
    Upper,
    Lower,
}

/// Pushes a linear bound on layer `j`'s output back to the network input.
fn back_substitute(
    net: &SequentialReluNetwork,
    relax: &[Relaxation],
    j: usize,
    mut expr: Linear,
    side: Side,
) -> Linear {
    let layers = net.layers();
    let mut i = j;
    loop {
        // through the affine layer i
        expr.offset = expr.offset + expr.coeffs.dot(&layers[i].bias);
        expr.coeffs = expr.coeffs.dot(&layers[i].weight);
        if i == 0 {
            return expr;
        }
        i -= 1;
        // through the ReLU that follows affine layer i
        let r = &relax[i];
        let (rows, cols) = expr.coeffs.dim();
        let mut offset_add = Array1::<f64>::zeros(rows);
        for (mut row, add) in expr.coeffs.axis_iter_mut(Axis(0)).zip(offset_add.iter_mut()) {
            for k in 0..cols {
                let a = row[k];
                let use_upper = match side {
                    Side::Upper => a > 0.0,
                    Side::Lower => a < 0.0,
                };
                if use_upper {
                    row[k] = a * r.upper_slope[k];
                    *add += a * r.upper_intercept[k];
                } else {
                    row[k] = a * r.lower_slope[k];
                }
            }
        }
        expr.offset = expr.offset + offset_add;
    }
}

/// `max_{x ∈ box} coeffs·x + offset` per row.
fn concretize_upper(coeffs: ArrayView2<f64>, offset: ArrayView1<f64>, b: &BoxSet) -> Vector {
    Array1::from_shape_fn(coeffs.nrows(), |r| {
        offset[r]
            + coeffs
                .row(r)
                .iter()
                .zip(b.lower.iter().zip(b.upper.iter()))
                .map(|(&a, (&l, &u))| if a >= 0.0 { a * u } else { a * l })
                .sum::<f64>()
    })
}

/// `min_{x ∈ box} coeffs·x + offset` per row.
fn concretize_lower(coeffs: ArrayView2<f64>, offset: ArrayView1<f64>, b: &BoxSet) -> Vector {
    Array1::from_shape_fn(coeffs.nrows(), |r| {
        offset[r]
            + coeffs
                .row(r)
                .iter()
                .zip(b.lower.iter().zip(b.upper.iter()))
                .map(|(&a, (&l, &u))| if a >= 0.0 { a * l } else { a * u })
                .sum::<f64>()
    })
}

fn identity_expr(n: usize) -> Linear {
    Linear {
        coeffs: Array2::eye(n),
        offset: Array1::zeros(n),
    }
}

/// Bounds for every ReLU layer (all affine layers except the last).
fn relaxations(net: &SequentialReluNetwork, b: &BoxSet) -> Vec<Relaxation> {
    let n_relu = net.layers().len() - 1;
    let mut relax = Vec::with_capacity(n_relu);
    for j in 0..n_relu {
        let bounds = layer_bounds(net, &relax, j, b);
        relax.push(Relaxation::from_bounds(&bounds.concrete));
    }
    relax
}

fn layer_bounds(
    net: &SequentialReluNetwork,
    relax: &[Relaxation],
    j: usize,
    b: &BoxSet,
) -> LayerBounds {
    let width = net.layers()[j].out_dim();
    let up = back_substitute(net, relax, j, identity_expr(width), Side::Upper);
    let lo = back_substitute(net, relax, j, identity_expr(width), Side::Lower);
    let mut upper = concretize_upper(up.coeffs.view(), up.offset.view(), b);
    let lower = concretize_lower(lo.coeffs.view(), lo.offset.view(), b);
    // rounding can invert a degenerate interval
    for (u, &l) in upper.iter_mut().zip(lower.iter()) {
        if *u < l {
            *u = l;
        }
    }
    LayerBounds {
        symbolic: SymbolicBound {
            lower_coeffs: lo.coeffs,
            lower_offset: lo.offset,
            upper_coeffs: up.coeffs,
            upper_offset: up.offset,
        },
        concrete: NeuronBounds { lower, upper },
    }
}

/// Sound symbolic and concrete bounds on the output of every affine layer,
/// for inputs in `input_box`.
pub fn propagate(net: &SequentialReluNetwork, input_box: &BoxSet) -> Result<Vec<LayerBounds>> {
    if input_box.dim() != net.input_dim() {
        return Err(Error::dim("bound propagation box", net.input_dim(), input_box.dim()));
    }
    let mut relax = Vec::new();
    let mut out = Vec::with_capacity(net.layers().len());
    for j in 0..net.layers().len() {
        let bounds = layer_bounds(net, &relax, j, input_box);
        if j + 1 < net.layers().len() {
            relax.push(Relaxation::from_bounds(&bounds.concrete));
        }
        out.push(bounds);
    }
    Ok(out)
}

/// Linear upper bound `g·x + h ≥ cᵀ net(x)` valid on the box, together with
/// its maximum over the box.
#[derive(Debug, Clone)]
pub struct ObjectiveBound {
    pub upper: f64,
    pub coeffs: Vector,
    pub offset: f64,
}

impl ObjectiveBound {
    /// The box corner maximizing the linear upper function.
    pub fn maximizing_corner(&self, b: &BoxSet) -> Vector {
        Array1::from_shape_fn(b.dim(), |i| {
            if self.coeffs[i] >= 0.0 {
                b.upper[i]
            } else {
                b.lower[i]
            }
        })
    }
}

pub(crate) fn objective_bound_unchecked(
    net: &SequentialReluNetwork,
    c: ArrayView1<f64>,
    input_box: &BoxSet,
) -> ObjectiveBound {
    let relax = relaxations(net, input_box);
    let last = net.layers().len() - 1;
    let expr = Linear {
        coeffs: c.to_owned().insert_axis(Axis(0)),
        offset: Array1::zeros(1),
    };
    let up = back_substitute(net, &relax, last, expr, Side::Upper);
    let upper = concretize_upper(up.coeffs.view(), up.offset.view(), input_box)[0];
    ObjectiveBound {
        upper,
        coeffs: up.coeffs.row(0).to_owned(),
        offset: up.offset[0],
    }
}

/// Sound upper bound on `max_{x ∈ box} cᵀ net(x)`.
pub fn objective_bound(
    net: &SequentialReluNetwork,
    c: ArrayView1<f64>,
    input_box: &BoxSet,
) -> Result<ObjectiveBound> {
    if c.len() != net.output_dim() {
        return Err(Error::dim("objective direction", net.output_dim(), c.len()));
    }
    if input_box.dim() != net.input_dim() {
        return Err(Error::dim("bound propagation box", net.input_dim(), input_box.dim()));
    }
    Ok(objective_bound_unchecked(net, c, input_box))
}

/// Sound upper bound `d̄ ≥ max_{x ∈ box} cᵀ net(x)`.
pub fn upper_bound_objective(
    net: &SequentialReluNetwork,
    c: ArrayView1<f64>,
    input_box: &BoxSet,
) -> Result<f64> {
    Ok(objective_bound(net, c, input_box)?.upper)
}
