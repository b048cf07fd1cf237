//! Input-splitting branch and bound for `max_{x ∈ box} cᵀ net(x)`.
//!
//! Upper bounds come from symbolic bound propagation on each sub-box, lower
//! bounds from exact evaluations at the box center, the centers of its
//! faces, and the corner maximizing the linear upper bound (which makes the
//! bound exact on boxes where the network is affine). Nodes are expanded
//! best-first on their upper bound and bisected along the widest side
//! (relative to the initial box), lowest index first on ties. Selection order is fully deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::{Array1, ArrayView1};

use crate::bounds::{objective_bound_unchecked, ObjectiveBound};
use crate::network::{BoxSet, SequentialReluNetwork};
use crate::{Error, Result, Vector};

pub const DEFAULT_NODE_CAP: usize = 1_000_000;

/// One offset computation: maximize `cᵀ net(x)` over `box` to within an
/// absolute gap `epsilon`.
#[derive(Debug, Clone)]
pub struct BnBProblem<'a> {
    pub net: &'a SequentialReluNetwork,
    pub c: Vector,
    pub input_box: BoxSet,
    pub epsilon: f64,
    pub node_cap: usize,
}

impl<'a> BnBProblem<'a> {
    pub fn new(net: &'a SequentialReluNetwork, c: Vector, input_box: BoxSet, epsilon: f64) -> Self {
        Self {
            net,
            c,
            input_box,
            epsilon,
            node_cap: DEFAULT_NODE_CAP,
        }
    }

    pub fn with_node_cap(mut self, cap: usize) -> Self {
        self.node_cap = cap;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.c.len() != self.net.output_dim() {
            return Err(Error::dim("objective direction", self.net.output_dim(), self.c.len()));
        }
        if self.input_box.dim() != self.net.input_dim() {
            return Err(Error::dim("input box", self.net.input_dim(), self.input_box.dim()));
        }
        if self.node_cap == 0 {
            return Err(Error::InvalidArgument("node cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BnBNode {
    pub input_box: BoxSet,
    pub upper: f64,
    pub lower: f64,
    seq: u64,
}

impl PartialEq for BnBNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for BnBNode {}
impl PartialOrd for BnBNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for BnBNode {
    // max-heap on upper bound; older nodes first on ties
    fn cmp(&self, other: &Self) -> Ordering {
        self.upper
            .total_cmp(&other.upper)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Certified enclosure of the maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBResult {
    pub lower: f64,
    pub upper: f64,
    pub iterations: usize,
    pub max_live_nodes: usize,
    /// Input attaining `lower`.
    pub witness: Vector,
}

impl BnBResult {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Global state after one iteration, for inspecting convergence.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub lower: f64,
    pub upper: f64,
    pub live_volume: f64,
    pub pruned_volume: f64,
}

/// Bisects `b` along the dimension with the largest width relative to
/// `scale`; ties go to the lowest index. Dimensions with zero scale are
/// never split.
pub fn branch_box(b: &BoxSet, scale: ArrayView1<f64>) -> Result<(BoxSet, BoxSet)> {
    let mut best: Option<(usize, f64)> = None;
    for j in 0..b.dim() {
        let width = b.upper[j] - b.lower[j];
        if width <= 0.0 || scale[j] <= 0.0 {
            continue;
        }
        let rel = width / scale[j];
        if best.is_none_or(|(_, r)| rel > r) {
            best = Some((j, rel));
        }
    }
    let (j, _) = best.ok_or(Error::DegenerateBox)?;
    let mid = 0.5 * (b.lower[j] + b.upper[j]);
    let mut left = b.clone();
    let mut right = b.clone();
    left.upper[j] = mid;
    right.lower[j] = mid;
    Ok((left, right))
}

/// Splits a node with unit scaling; children inherit no bounds.
pub fn branch(node: &BnBNode) -> Result<(BnBNode, BnBNode)> {
    let scale = Array1::ones(node.input_box.dim());
    let (l, r) = branch_box(&node.input_box, scale.view())?;
    let child = |b| BnBNode {
        input_box: b,
        upper: node.upper,
        lower: f64::NEG_INFINITY,
        seq: 0,
    };
    Ok((child(l), child(r)))
}

/// Best exact value of `cᵀ net(x)` over the box center and the centers of
/// its `2·dim` faces, with the point attaining it.
pub fn lower_bound_with_witness(
    net: &SequentialReluNetwork,
    c: ArrayView1<f64>,
    b: &BoxSet,
) -> (f64, Vector) {
    let center = b.center();
    let mut best_val = c.dot(&net.forward(center.view()));
    let mut best_x = center.clone();
    for j in 0..b.dim() {
        if b.lower[j] == b.upper[j] {
            continue;
        }
        for end in [b.lower[j], b.upper[j]] {
            let mut x = center.clone();
            x[j] = end;
            let v = c.dot(&net.forward(x.view()));
            if v > best_val {
                best_val = v;
                best_x = x;
            }
        }
    }
    (best_val, best_x)
}

fn node_lower(
    net: &SequentialReluNetwork,
    c: ArrayView1<f64>,
    b: &BoxSet,
    bound: &ObjectiveBound,
) -> (f64, Vector) {
    let (mut best, mut x) = lower_bound_with_witness(net, c, b);
    let corner = bound.maximizing_corner(b);
    let v = c.dot(&net.forward(corner.view()));
    if v > best {
        best = v;
        x = corner;
    }
    (best, x)
}

/// Valid lower bound on `max_{x ∈ box} cᵀ net(x)` from exact evaluations.
pub fn lower_bound(net: &SequentialReluNetwork, c: ArrayView1<f64>, b: &BoxSet) -> Result<f64> {
    if c.len() != net.output_dim() {
        return Err(Error::dim("objective direction", net.output_dim(), c.len()));
    }
    if b.dim() != net.input_dim() {
        return Err(Error::dim("input box", net.input_dim(), b.dim()));
    }
    Ok(lower_bound_with_witness(net, c, b).0)
}

/// Certified `[lower, upper]` around `max_{x ∈ box} cᵀ net(x)` with
/// `upper − lower ≤ epsilon`.
pub fn maximize(problem: &BnBProblem<'_>) -> Result<BnBResult> {
    run(problem, None)
}

/// [`maximize`] recording the global state after every iteration.
pub fn maximize_traced(problem: &BnBProblem<'_>) -> (Result<BnBResult>, Vec<TraceEntry>) {
    let mut trace = Vec::new();
    let res = run(problem, Some(&mut trace));
    (res, trace)
}

fn run(problem: &BnBProblem<'_>, mut trace: Option<&mut Vec<TraceEntry>>) -> Result<BnBResult> {
    problem.validate()?;
    let net = problem.net;
    let c = problem.c.view();
    let scale = problem.input_box.widths();

    let root_bound = objective_bound_unchecked(net, c, &problem.input_box);
    let (root_lower, root_x) = node_lower(net, c, &problem.input_box, &root_bound);
    let mut best_lower = root_lower;
    let mut witness = root_x;
    let mut seq = 0u64;

    let mut heap = BinaryHeap::new();
    heap.push(BnBNode {
        upper: root_bound.upper.max(root_lower),
        lower: root_lower,
        input_box: problem.input_box.clone(),
        seq,
    });
    let mut max_live = 1usize;
    let mut pruned_volume = 0.0;
    let total_volume = problem.input_box.volume();
    let mut iterations = 0usize;

    loop {
        iterations += 1;
        // nodes that cannot beat the incumbent are dead
        while heap.peek().is_some_and(|n| n.upper <= best_lower) {
            let n = heap.pop().expect("peeked");
            if trace.is_some() {
                pruned_volume += n.input_box.volume();
            }
        }
        let global_upper = heap.peek().map_or(best_lower, |n| n.upper);
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceEntry {
                lower: best_lower,
                upper: global_upper,
                live_volume: total_volume - pruned_volume,
                pruned_volume,
            });
        }
        if global_upper - best_lower <= problem.epsilon {
            return Ok(BnBResult {
                lower: best_lower,
                upper: global_upper,
                iterations,
                max_live_nodes: max_live,
                witness,
            });
        }
        if iterations >= problem.node_cap {
            return Err(Error::NodeCapExceeded {
                cap: problem.node_cap,
                lower: best_lower,
                upper: global_upper,
            });
        }

        let node = heap.pop().expect("gap > epsilon implies a live node");
        let (left, right) = branch_box(&node.input_box, scale.view())?;
        for child_box in [left, right] {
            let bound = objective_bound_unchecked(net, c, &child_box);
            let (lo, x) = node_lower(net, c, &child_box, &bound);
            if lo > best_lower {
                best_lower = lo;
                witness = x;
            }
            let upper = bound.upper.min(node.upper).max(lo);
            seq += 1;
            let child = BnBNode {
                input_box: child_box,
                upper,
                lower: lo,
                seq,
            };
            if child.upper > best_lower {
                heap.push(child);
            } else if trace.is_some() {
                pruned_volume += child.input_box.volume();
            }
        }
        max_live = max_live.max(heap.len());
    }
}
