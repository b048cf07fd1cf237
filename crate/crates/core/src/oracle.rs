//! Exact reference solvers for small instances.
//!
//! `exact_maximize` enumerates ReLU activation patterns depth-first; on each
//! pattern the network is affine, so the maximum is one LP over the box
//! intersected with the pattern's sign constraints. Prefixes whose sign
//! constraints are already infeasible are cut off, and the patterns below
//! them are counted as visited.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::network::{BoxSet, ControlledSystem, SequentialReluNetwork};
use crate::{Error, Matrix, Result, Vector};

/// Largest ReLU count `exact_maximize` accepts.
pub const ENUMERATION_LIMIT: usize = 24;

const LP_TOL: f64 = 1e-8;

/// `maximize objectiveᵀx subject to matrix · x ≤ rhs`, `x` free.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub objective: Vector,
    pub matrix: Matrix,
    pub rhs: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, witness: Vector },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }
}

/// Solves an LP in inequality form. The witness is checked against every
/// constraint; a violation beyond tolerance is reported as a solver failure.
pub fn lp_maximize(p: &LpProblem) -> Result<LpOutcome> {
    let n = p.objective.len();
    if p.matrix.ncols() != n {
        return Err(Error::dim("LP constraint columns", n, p.matrix.ncols()));
    }
    if p.matrix.nrows() != p.rhs.len() {
        return Err(Error::dim("LP rhs", p.matrix.nrows(), p.rhs.len()));
    }
    let bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); n];
    solve(p.objective.view(), &p.matrix, p.rhs.view(), &bounds)
}

fn solve(
    objective: ArrayView1<f64>,
    matrix: &Matrix,
    rhs: ArrayView1<f64>,
    var_bounds: &[(f64, f64)],
) -> Result<LpOutcome> {
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = objective
        .iter()
        .zip(var_bounds)
        .map(|(&c, &b)| lp.add_var(c, b))
        .collect();
    for (row, &r) in matrix.axis_iter(Axis(0)).zip(rhs.iter()) {
        let terms: Vec<_> = row
            .iter()
            .zip(&vars)
            .filter(|(&a, _)| a != 0.0)
            .map(|(&a, &v)| (v, a))
            .collect();
        if terms.is_empty() {
            if r < -LP_TOL {
                return Ok(LpOutcome::Infeasible);
            }
            continue;
        }
        lp.add_constraint(terms.as_slice(), ComparisonOp::Le, r);
    }
    match lp.solve() {
        Ok(sol) => {
            let witness = Array1::from_iter(vars.iter().map(|&v| sol[v]));
            // minilp reports some unbounded problems as an infinite optimum
            if !sol.objective().is_finite() || witness.iter().any(|x| !x.is_finite()) {
                return Ok(LpOutcome::Unbounded);
            }
            let scale = 1.0 + witness.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for (row, &r) in matrix.axis_iter(Axis(0)).zip(rhs.iter()) {
                let lhs = row.dot(&witness);
                let tol = 1e-7 * scale * (1.0 + r.abs() + row.iter().map(|a| a.abs()).sum::<f64>());
                if lhs > r + tol {
                    return Err(Error::Lp(format!(
                        "witness violates a constraint by {:.3e}",
                        lhs - r
                    )));
                }
            }
            Ok(LpOutcome::Optimal {
                value: objective.dot(&witness),
                witness,
            })
        }
        Err(minilp::Error::Infeasible) => Ok(LpOutcome::Infeasible),
        Err(minilp::Error::Unbounded) => Ok(LpOutcome::Unbounded),
    }
}

/// Exact maximum with enumeration statistics.
#[derive(Debug, Clone)]
pub struct ExactMax {
    pub value: f64,
    pub witness: Vector,
    /// Patterns accounted for; always `2^relu_count`.
    pub patterns_visited: u64,
    /// Complete patterns with a feasible region.
    pub feasible_patterns: u64,
    /// LP value of every feasible complete pattern, in visit order.
    pub pattern_values: Vec<f64>,
}

struct Search<'a> {
    net: &'a SequentialReluNetwork,
    c: ArrayView1<'a, f64>,
    var_bounds: Vec<(f64, f64)>,
    rows: Vec<Vector>,
    rhs: Vec<f64>,
    visited: u64,
    best: Option<(f64, Vector)>,
    values: Vec<f64>,
}

impl Search<'_> {
    fn feasible(&self) -> Result<bool> {
        let dim = self.var_bounds.len();
        let m = to_matrix(&self.rows, dim);
        let rhs = Array1::from(self.rhs.clone());
        let zero = Array1::zeros(dim);
        Ok(!matches!(
            solve(zero.view(), &m, rhs.view(), &self.var_bounds)?,
            LpOutcome::Infeasible
        ))
    }

    /// `pre = M x + m` are the current layer's pre-activations; `neuron`
    /// indexes into them; `active` collects the decided pattern.
    fn descend(
        &mut self,
        layer: usize,
        pre_w: &Matrix,
        pre_b: &Vector,
        neuron: usize,
        active: &mut Vec<bool>,
        remaining: u32,
    ) -> Result<()> {
        let layers = self.net.layers();
        if layer + 1 == layers.len() {
            // output layer: affine in x
            let obj_w = self.c.dot(pre_w);
            let obj_b = self.c.dot(pre_b);
            let dim = self.var_bounds.len();
            let m = to_matrix(&self.rows, dim);
            let rhs = Array1::from(self.rhs.clone());
            self.visited += 1;
            match solve(obj_w.view(), &m, rhs.view(), &self.var_bounds)? {
                LpOutcome::Optimal { value, witness } => {
                    let v = value + obj_b;
                    self.values.push(v);
                    if self.best.as_ref().is_none_or(|(b, _)| v > *b) {
                        self.best = Some((v, witness));
                    }
                }
                LpOutcome::Infeasible => {}
                LpOutcome::Unbounded => {
                    return Err(Error::Lp("pattern LP unbounded over a box".into()))
                }
            }
            return Ok(());
        }
        if neuron == pre_w.nrows() {
            // apply the layer's pattern and move to the next affine layer
            let start = active.len() - neuron;
            let mask = Array1::from_iter(active[start..].iter().map(|&a| if a { 1.0 } else { 0.0 }));
            let masked_w = pre_w * &mask.view().insert_axis(Axis(1));
            let masked_b = pre_b * &mask;
            let next = &layers[layer + 1];
            let w = next.weight.dot(&masked_w);
            let b = next.weight.dot(&masked_b) + &next.bias;
            return self.descend(layer + 1, &w, &b, 0, active, remaining);
        }
        let row = pre_w.row(neuron).to_owned();
        let offset = pre_b[neuron];
        for is_active in [true, false] {
            // active: z ≥ 0 ⇔ −row·x ≤ offset; inactive: z ≤ 0 ⇔ row·x ≤ −offset
            if is_active {
                self.rows.push(-&row);
                self.rhs.push(offset);
            } else {
                self.rows.push(row.clone());
                self.rhs.push(-offset);
            }
            if self.feasible()? {
                active.push(is_active);
                self.descend(layer, pre_w, pre_b, neuron + 1, active, remaining - 1)?;
                active.pop();
            } else {
                self.visited += 1u64 << (remaining - 1);
            }
            self.rows.pop();
            self.rhs.pop();
        }
        Ok(())
    }
}

fn to_matrix(rows: &[Vector], dim: usize) -> Matrix {
    let mut m = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).assign(r);
    }
    m
}

/// Exact `max_{x ∈ box} cᵀ net(x)` by activation-pattern enumeration.
pub fn exact_maximize(
    net: &SequentialReluNetwork,
    c: ArrayView1<f64>,
    input_box: &BoxSet,
) -> Result<ExactMax> {
    if c.len() != net.output_dim() {
        return Err(Error::dim("objective direction", net.output_dim(), c.len()));
    }
    if input_box.dim() != net.input_dim() {
        return Err(Error::dim("input box", net.input_dim(), input_box.dim()));
    }
    let neurons = net.relu_count();
    if neurons > ENUMERATION_LIMIT {
        return Err(Error::EnumerationBudget {
            neurons,
            limit: ENUMERATION_LIMIT,
        });
    }
    let var_bounds = input_box
        .lower
        .iter()
        .zip(input_box.upper.iter())
        .map(|(&l, &u)| (l, u))
        .collect();
    let mut search = Search {
        net,
        c,
        var_bounds,
        rows: Vec::new(),
        rhs: Vec::new(),
        visited: 0,
        best: None,
        values: Vec::new(),
    };
    let first = &net.layers()[0];
    let mut active = Vec::with_capacity(neurons);
    search.descend(0, &first.weight, &first.bias, 0, &mut active, neurons as u32)?;
    let feasible = search.values.len() as u64;
    let (value, witness) = search
        .best
        .ok_or_else(|| Error::Lp("no feasible activation pattern over a non-empty box".into()))?;
    Ok(ExactMax {
        value,
        witness,
        patterns_visited: search.visited,
        feasible_patterns: feasible,
        pattern_values: search.values,
    })
}

/// Simulated states grouped by time step: `states[k]` is `n_samples × n`.
#[derive(Debug, Clone)]
pub struct Trajectories {
    pub states: Vec<Matrix>,
}

impl Trajectories {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }
}

/// Samples initial states uniformly (from the box, or from the generator
/// coefficients for zonotope sets) and iterates the exact closed loop.
pub fn simulate(
    sys: &ControlledSystem,
    n_samples: usize,
    horizon: usize,
    seed: u64,
) -> Result<Trajectories> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sys.state_dim();
    let mut x0 = Array2::zeros((n_samples, n));
    match &sys.generator {
        Some(g) => {
            let zbox = BoxSet::unit(g.ncols());
            for mut row in x0.axis_iter_mut(Axis(0)) {
                row.assign(&g.dot(&zbox.sample(&mut rng)));
            }
        }
        None => {
            for mut row in x0.axis_iter_mut(Axis(0)) {
                let z = sys.initial_box.sample(&mut rng);
                row.assign(&sys.initial_state(z.view()));
            }
        }
    }
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(x0);
    for k in 0..horizon {
        let prev = &states[k];
        let rows: Vec<Vector> = (0..n_samples)
            .into_par_iter()
            .map(|i| sys.step(prev.row(i)))
            .collect();
        states.push(to_matrix(&rows, n));
    }
    Ok(Trajectories { states })
}
