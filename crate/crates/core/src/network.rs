//! Controller networks, the closed-loop plant, and the skip-free sequential
//! network that represents one closed-loop step.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use crate::linalg::{check_finite_matrix, check_finite_vector};
use crate::{Error, Matrix, Result, Vector};

/// `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub weight: Matrix,
    pub bias: Vector,
}

impl AffineLayer {
    pub fn new(weight: Matrix, bias: Vector) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::dim("affine layer bias", weight.nrows(), bias.len()));
        }
        check_finite_matrix(&weight, "affine layer weight")?;
        check_finite_vector(&bias, "affine layer bias")?;
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Vector {
        self.weight.dot(&x) + &self.bias
    }

    /// `self ∘ inner`, i.e. `x ↦ W_self (W_inner x + b_inner) + b_self`.
    pub fn compose(&self, inner: &AffineLayer) -> AffineLayer {
        AffineLayer {
            weight: self.weight.dot(&inner.weight),
            bias: self.weight.dot(&inner.bias) + &self.bias,
        }
    }
}

/// Alternating affine / ReLU network: `affine, ReLU, affine, …, affine`.
/// There is no ReLU after the last affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialReluNetwork {
    layers: Vec<AffineLayer>,
}

impl SequentialReluNetwork {
    pub fn new(layers: Vec<AffineLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument(
                "network needs at least one affine layer".into(),
            ));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::dim(
                    format!("layer {} input", i + 1),
                    pair[0].out_dim(),
                    pair[1].in_dim(),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// Network with PyTorch-style uniform initialization
    /// `U(-1/√fan_in, 1/√fan_in)` for weights and biases.
    /// `widths` lists the input width followed by every layer's output width.
    pub fn random<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "need input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                AffineLayer {
                    weight: Array2::from_shape_fn((w[1], w[0]), |_| rng.gen_range(-bound..bound)),
                    bias: Array1::from_shape_fn(w[1], |_| rng.gen_range(-bound..bound)),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Widths `(n_0, n_1, …, n_{L+1})`: input followed by each layer output.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(AffineLayer::out_dim))
            .collect()
    }

    /// Widths of the ReLU layers (every affine output except the last).
    pub fn relu_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(AffineLayer::out_dim)
            .collect()
    }

    pub fn relu_count(&self) -> usize {
        self.relu_widths().iter().sum()
    }

    pub fn evaluate(&self, x: ArrayView1<f64>) -> Result<Vector> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), x.len()));
        }
        Ok(self.forward(x))
    }

    /// Forward pass without the dimension check.
    pub(crate) fn forward(&self, x: ArrayView1<f64>) -> Vector {
        let mut h = self.layers[0].apply(x);
        for layer in &self.layers[1..] {
            h.mapv_inplace(|v| v.max(0.0));
            h = layer.apply(h.view());
        }
        h
    }

    /// Appends an affine layer after the current output, inserting a ReLU
    /// between them.
    pub fn with_output_layer(&self, layer: AffineLayer) -> Result<Self> {
        let mut layers = self.layers.clone();
        layers.push(layer);
        Self::new(layers)
    }

    /// Precomposes an affine input map, merging it into the first layer.
    pub fn compose_input(&self, map: &AffineLayer) -> Result<Self> {
        if map.out_dim() != self.input_dim() {
            return Err(Error::dim("input map output", self.input_dim(), map.out_dim()));
        }
        let mut layers = self.layers.clone();
        layers[0] = layers[0].compose(map);
        Ok(Self { layers })
    }

    /// Appends an affine map after the output, merging it into the last layer.
    pub fn compose_output(&self, map: &AffineLayer) -> Result<Self> {
        if map.in_dim() != self.output_dim() {
            return Err(Error::dim("output map input", self.output_dim(), map.in_dim()));
        }
        let mut layers = self.layers.clone();
        let last = layers.len() - 1;
        layers[last] = map.compose(&layers[last]);
        Ok(Self { layers })
    }
}

/// Axis-aligned box `{x : lower ≤ x ≤ upper}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    pub lower: Vector,
    pub upper: Vector,
}

impl BoxSet {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dim("box upper", lower.len(), upper.len()));
        }
        check_finite_vector(&lower, "box lower")?;
        check_finite_vector(&upper, "box upper")?;
        if let Some(i) = (0..lower.len()).find(|&i| lower[i] > upper[i]) {
            return Err(Error::InvalidArgument(format!(
                "box lower[{i}] = {} exceeds upper[{i}] = {}",
                lower[i], upper[i]
            )));
        }
        Ok(Self { lower, upper })
    }

    /// `[-1, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Self {
            lower: Array1::from_elem(dim, -1.0),
            upper: Array1::from_elem(dim, 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> Vector {
        (&self.lower + &self.upper) * 0.5
    }

    pub fn widths(&self) -> Vector {
        &self.upper - &self.lower
    }

    pub fn volume(&self) -> f64 {
        self.widths().product()
    }

    pub fn contains(&self, x: ArrayView1<f64>) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(v, (l, u))| l <= v && v <= u)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        Array1::from_shape_fn(self.dim(), |i| {
            let (l, u) = (self.lower[i], self.upper[i]);
            if l == u {
                l
            } else {
                rng.gen_range(l..=u)
            }
        })
    }
}

/// Closed loop `x⁺ = A x + B f(x) + e`.
///
/// The initial set is `initial_box` unless `generator` is set, in which case
/// it is the zonotope `{G z : ‖z‖∞ ≤ 1}` and `initial_box` holds its interval
/// hull. After [`absorb_zonotope`], `lift` holds `G` and `initial_box` is the
/// `z`-box `[-1, 1]^p`; the initial state is `G z`.
#[derive(Debug, Clone)]
pub struct ControlledSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub e: Vector,
    pub controller: SequentialReluNetwork,
    pub initial_box: BoxSet,
    pub generator: Option<Matrix>,
    pub lift: Option<Matrix>,
}

impl ControlledSystem {
    pub fn new(
        a: Matrix,
        b: Matrix,
        e: Vector,
        controller: SequentialReluNetwork,
        initial_box: BoxSet,
    ) -> Result<Self> {
        let sys = Self {
            a,
            b,
            e,
            controller,
            initial_box,
            generator: None,
            lift: None,
        };
        sys.validate()?;
        Ok(sys)
    }

    /// Zonotope initial set `{G z : ‖z‖∞ ≤ 1}`.
    pub fn with_zonotope(
        a: Matrix,
        b: Matrix,
        e: Vector,
        controller: SequentialReluNetwork,
        generator: Matrix,
    ) -> Result<Self> {
        check_finite_matrix(&generator, "generator")?;
        let radius = generator.mapv(f64::abs).sum_axis(Axis(1));
        let hull = BoxSet::new(-&radius, radius)?;
        let sys = Self {
            a,
            b,
            e,
            controller,
            initial_box: hull,
            generator: Some(generator),
            lift: None,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return Err(Error::dim("A columns", n, self.a.ncols()));
        }
        if self.b.nrows() != n {
            return Err(Error::dim("B rows", n, self.b.nrows()));
        }
        if self.e.len() != n {
            return Err(Error::dim("e", n, self.e.len()));
        }
        if self.controller.input_dim() != n {
            return Err(Error::dim("controller input", n, self.controller.input_dim()));
        }
        if self.controller.output_dim() != self.b.ncols() {
            return Err(Error::dim(
                "controller output",
                self.b.ncols(),
                self.controller.output_dim(),
            ));
        }
        check_finite_matrix(&self.a, "A")?;
        check_finite_matrix(&self.b, "B")?;
        check_finite_vector(&self.e, "e")?;
        if let Some(g) = &self.generator {
            if g.nrows() != n {
                return Err(Error::dim("generator rows", n, g.nrows()));
            }
        }
        match &self.lift {
            Some(g) => {
                if g.nrows() != n {
                    return Err(Error::dim("lift rows", n, g.nrows()));
                }
                if g.ncols() != self.initial_box.dim() {
                    return Err(Error::dim("initial box", g.ncols(), self.initial_box.dim()));
                }
            }
            None => {
                if self.initial_box.dim() != n {
                    return Err(Error::dim("initial box", n, self.initial_box.dim()));
                }
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    /// One exact closed-loop step.
    pub fn step(&self, x: ArrayView1<f64>) -> Vector {
        let u = self.controller.forward(x);
        self.a.dot(&x) + self.b.dot(&u) + &self.e
    }

    /// Maps a point of `initial_box` to the initial state it represents.
    pub fn initial_state(&self, z: ArrayView1<f64>) -> Vector {
        match &self.lift {
            Some(g) => g.dot(&z),
            None => z.to_owned(),
        }
    }

    /// The controller as seen from the lifted variable: first-layer weight
    /// `W_0 G`. Without a lift this is the controller itself.
    pub fn first_step_controller(&self) -> SequentialReluNetwork {
        match &self.lift {
            Some(g) => self
                .controller
                .compose_input(&AffineLayer {
                    weight: g.clone(),
                    bias: Array1::zeros(g.nrows()),
                })
                .expect("lift validated"),
            None => self.controller.clone(),
        }
    }
}

/// Builds the skip-free sequential network `F_eq` with
/// `F_eq(x) = A x + B f(x) + e`.
///
/// The state is routed through every ReLU layer as `ReLU(x) − ReLU(−x)`.
/// Layer shapes: first `[I; −I; W_0]`, middle `blockdiag(I, I, W_i)`, last
/// `[A, −A, B W_L]` with bias `B b_L + e`; ReLU layer `i` has width
/// `2n + n_i`. A controller without hidden layers collapses to the single
/// affine map `(A + B W_0) x + B b_0 + e`.
pub fn build_equivalent_step(sys: &ControlledSystem) -> Result<SequentialReluNetwork> {
    sys.validate()?;
    let n = sys.state_dim();
    let ctrl = sys.controller.layers();
    let last = ctrl.len() - 1;

    if last == 0 {
        let w0 = &ctrl[0];
        return SequentialReluNetwork::new(vec![AffineLayer::new(
            &sys.a + &sys.b.dot(&w0.weight),
            sys.b.dot(&w0.bias) + &sys.e,
        )?]);
    }

    let eye = Array2::<f64>::eye(n);
    let mut layers = Vec::with_capacity(ctrl.len());

    let first = concatenate(Axis(0), &[eye.view(), (-&eye).view(), ctrl[0].weight.view()])
        .expect("shapes agree");
    let first_bias = concatenate(
        Axis(0),
        &[Array1::zeros(2 * n).view(), ctrl[0].bias.view()],
    )
    .expect("shapes agree");
    layers.push(AffineLayer::new(first, first_bias)?);

    for layer in &ctrl[1..last] {
        let (out, inp) = layer.weight.dim();
        let mut w = Array2::<f64>::zeros((2 * n + out, 2 * n + inp));
        w.slice_mut(s![..2 * n, ..2 * n]).assign(&Array2::eye(2 * n));
        w.slice_mut(s![2 * n.., 2 * n..]).assign(&layer.weight);
        let mut b = Array1::<f64>::zeros(2 * n + out);
        b.slice_mut(s![2 * n..]).assign(&layer.bias);
        layers.push(AffineLayer::new(w, b)?);
    }

    let wl = &ctrl[last];
    let final_w = concatenate(
        Axis(1),
        &[sys.a.view(), (-&sys.a).view(), sys.b.dot(&wl.weight).view()],
    )
    .expect("shapes agree");
    let final_b = sys.b.dot(&wl.bias) + &sys.e;
    layers.push(AffineLayer::new(final_w, final_b)?);

    SequentialReluNetwork::new(layers)
}

/// `k`-fold composition of a square network, flattened so that layer
/// boundaries between copies are merged into a single affine map.
pub fn unroll(step: &SequentialReluNetwork, k: usize) -> Result<SequentialReluNetwork> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "unroll needs k >= 1; handle horizon 0 directly".into(),
        ));
    }
    if step.input_dim() != step.output_dim() {
        return Err(Error::dim("unroll output", step.input_dim(), step.output_dim()));
    }
    let base = step.layers();
    let mut layers: Vec<AffineLayer> = base.to_vec();
    for _ in 1..k {
        let boundary = layers.pop().expect("non-empty");
        let merged = base[0].compose(&boundary);
        layers.push(merged);
        layers.extend_from_slice(&base[1..]);
    }
    SequentialReluNetwork::new(layers)
}

/// Rewrites a zonotope-initialized system over the generator coefficients
/// `z ∈ [-1, 1]^p`.
///
/// `A`, `B`, `e` and the controller stay in state coordinates; the lift `G`
/// maps `z` to the initial state, so the first step is
/// `A G z + B f(G z) + e` and the controller's first layer seen from `z` is
/// `W_0 G` (see [`ControlledSystem::first_step_controller`]).
pub fn absorb_zonotope(sys: &ControlledSystem) -> Result<ControlledSystem> {
    let g = sys
        .generator
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("system has no zonotope generator".into()))?;
    if g.ncols() == 0 {
        return Err(Error::InvalidArgument("generator has zero columns".into()));
    }
    let lifted = ControlledSystem {
        a: sys.a.clone(),
        b: sys.b.clone(),
        e: sys.e.clone(),
        controller: sys.controller.clone(),
        initial_box: BoxSet::unit(g.ncols()),
        generator: None,
        lift: Some(g.clone()),
    };
    lifted.validate()?;
    Ok(lifted)
}
