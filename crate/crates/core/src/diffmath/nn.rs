//! Feedforward networks and a gated recurrent cell.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::graph::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Anything holding trainable arrays in a fixed order.
pub trait Parameters<T: Scalar> {
    fn params(&self) -> Vec<&Array2<T>>;
    fn params_mut(&mut self) -> Vec<&mut Array2<T>>;
    fn param_names(&self) -> Vec<String>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Shapes in parameter order.
    fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.params().iter().map(|p| p.dim()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
    /// `softplus(x) + floor`, used for standard deviations.
    Softplus,
}

/// Lower bound added to softplus outputs so scales stay strictly positive.
pub const SIGMA_FLOOR: f64 = 1e-4;

impl Activation {
    fn apply<T: Scalar>(self, x: &mut Array2<T>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => x.mapv_inplace(|v| v.max(T::zero())),
            Activation::Sigmoid => x.mapv_inplace(|v| T::one() / (T::one() + (-v).exp())),
            Activation::Tanh => x.mapv_inplace(|v| v.tanh()),
            Activation::Softplus => {
                let floor = T::lit(SIGMA_FLOOR);
                x.mapv_inplace(|v| v.max(T::zero()) + (-v.abs()).exp().ln_1p() + floor)
            }
        }
    }

    fn apply_graph<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Tanh => g.tanh(x),
            Activation::Softplus => {
                let sp = g.softplus(x);
                g.offset(sp, T::lit(SIGMA_FLOOR))
            }
        }
    }
}

fn uniform_init<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Array2<T> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_simple_fn((rows, cols), || T::lit(dist.sample(rng)))
}

/// A fully connected feedforward network with rectified-linear hidden layers.
#[derive(Clone, Debug)]
pub struct FeedforwardNet<T> {
    /// `(weight: in×out, bias: 1×out)` per layer.
    layers: Vec<(Array2<T>, Array2<T>)>,
    output: Activation,
}

impl<T: Scalar> FeedforwardNet<T> {
    /// `sizes` lists every layer width including input and output.
    /// Weights and biases are uniform in `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: Activation, rng: &mut R) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                (uniform_init(w[0], w[1], bound, rng), uniform_init(1, w[1], bound, rng))
            })
            .collect();
        Ok(Self { layers, output })
    }

    pub fn zeros(sizes: &[usize], output: Activation) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| (Array2::zeros((w[0], w[1])), Array2::zeros((1, w[1]))))
            .collect();
        Ok(Self { layers, output })
    }

    /// Single linear layer computing the identity map.
    pub fn identity(width: usize) -> Self {
        Self { layers: vec![(Array2::eye(width), Array2::zeros((1, width)))], output: Activation::Identity }
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(shape_err(format!("network needs at least two non-zero layer sizes, got {sizes:?}")));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].0.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().0.ncols()
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    /// Multiplies the last layer's weights and biases by `factor`.
    pub fn scale_output_layer(&mut self, factor: T) {
        let (w, b) = self.layers.last_mut().unwrap();
        w.mapv_inplace(|v| v * factor);
        b.mapv_inplace(|v| v * factor);
    }

    /// Forward pass over a batch of row vectors.
    pub fn forward(&self, x: &Array2<T>) -> Result<Array2<T>> {
        if x.ncols() != self.input_width() {
            return Err(shape_err(format!("network expects width {}, got {}", self.input_width(), x.ncols())));
        }
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = h.dot(w) + b;
            if i < last {
                Activation::Relu.apply(&mut h);
            } else {
                self.output.apply(&mut h);
            }
        }
        if !h.iter().all(|v| v.is_finite()) {
            return Err(crate::Error::NonFinite("net_forward"));
        }
        Ok(h)
    }

    /// Registers the parameters as graph leaves.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundNet {
        self.bind_with(g, true)
    }

    /// Registers the parameters as constants (no gradient).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> BoundNet {
        self.bind_with(g, false)
    }

    fn bind_with(&self, g: &mut Graph<T>, trainable: bool) -> BoundNet {
        let mut vars = Vec::with_capacity(self.layers.len() * 2);
        for (w, b) in &self.layers {
            for p in [w, b] {
                vars.push(if trainable { g.param(p.clone()) } else { g.constant(p.clone()) });
            }
        }
        BoundNet { vars, output: self.output }
    }
}

impl<T: Scalar> Parameters<T> for FeedforwardNet<T> {
    fn params(&self) -> Vec<&Array2<T>> {
        self.layers.iter().flat_map(|(w, b)| [w, b]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<T>> {
        self.layers.iter_mut().flat_map(|(w, b)| [w, b]).collect()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.layers.len()).flat_map(|i| [format!("layer{i}.weight"), format!("layer{i}.bias")]).collect()
    }
}

/// Graph handles for a network's parameters.
#[derive(Clone, Debug)]
pub struct BoundNet {
    vars: Vec<Var>,
    output: Activation,
}

impl BoundNet {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let n_layers = self.vars.len() / 2;
        let mut h = x;
        for i in 0..n_layers {
            let lin = g.matmul(h, self.vars[2 * i]);
            h = g.add(lin, self.vars[2 * i + 1]);
            h = if i + 1 < n_layers { g.relu(h) } else { self.output.apply_graph(g, h) };
        }
        h
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Gated recurrent unit: `h' = (1 - u) * n + u * h`.
#[derive(Clone, Debug)]
pub struct GruCell<T> {
    input_width: usize,
    hidden_width: usize,
    /// Input weights, recurrent weights and bias for update, reset and candidate gates.
    w: [Array2<T>; 3],
    u: [Array2<T>; 3],
    b: [Array2<T>; 3],
}

impl<T: Scalar> GruCell<T> {
    pub fn new<R: Rng + ?Sized>(input_width: usize, hidden_width: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden_width as f64).sqrt();
        let mut mk = |r, c| uniform_init(r, c, bound, rng);
        let w = [mk(input_width, hidden_width), mk(input_width, hidden_width), mk(input_width, hidden_width)];
        let u = [mk(hidden_width, hidden_width), mk(hidden_width, hidden_width), mk(hidden_width, hidden_width)];
        let b = [mk(1, hidden_width), mk(1, hidden_width), mk(1, hidden_width)];
        Self { input_width, hidden_width, w, u, b }
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_width
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn initial_state(&self, batch: usize) -> Array2<T> {
        Array2::zeros((batch, self.hidden_width))
    }

    pub fn step(&self, h: &Array2<T>, x: &Array2<T>) -> Result<Array2<T>> {
        if x.ncols() != self.input_width || h.ncols() != self.hidden_width || h.nrows() != x.nrows() {
            return Err(shape_err("gru step: input or state width mismatch"));
        }
        let sig = |v: T| T::one() / (T::one() + (-v).exp());
        let update = (x.dot(&self.w[0]) + h.dot(&self.u[0]) + &self.b[0]).mapv(sig);
        let reset = (x.dot(&self.w[1]) + h.dot(&self.u[1]) + &self.b[1]).mapv(sig);
        let cand = (x.dot(&self.w[2]) + (&reset * h).dot(&self.u[2]) + &self.b[2]).mapv(|v| v.tanh());
        let next = &update * h + &update.mapv(|v| T::one() - v) * &cand;
        Ok(next)
    }

    pub fn bind(&self, g: &mut Graph<T>) -> BoundGru {
        let mut vars = Vec::with_capacity(9);
        for k in 0..3 {
            vars.push(g.param(self.w[k].clone()));
            vars.push(g.param(self.u[k].clone()));
            vars.push(g.param(self.b[k].clone()));
        }
        BoundGru { vars }
    }
}

impl<T: Scalar> Parameters<T> for GruCell<T> {
    fn params(&self) -> Vec<&Array2<T>> {
        (0..3).flat_map(|k| [&self.w[k], &self.u[k], &self.b[k]]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<T>> {
        let [w0, w1, w2] = &mut self.w;
        let [u0, u1, u2] = &mut self.u;
        let [b0, b1, b2] = &mut self.b;
        vec![w0, u0, b0, w1, u1, b1, w2, u2, b2]
    }

    fn param_names(&self) -> Vec<String> {
        ["update", "reset", "candidate"]
            .iter()
            .flat_map(|gate| [format!("{gate}.w"), format!("{gate}.u"), format!("{gate}.b")])
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct BoundGru {
    vars: Vec<Var>,
}

impl BoundGru {
    pub fn step<T: Scalar>(&self, g: &mut Graph<T>, h: Var, x: Var) -> Var {
        let gate = |g: &mut Graph<T>, k: usize, hin: Var| {
            let a = g.matmul(x, self.vars[3 * k]);
            let b = g.matmul(hin, self.vars[3 * k + 1]);
            let s = g.add(a, b);
            g.add(s, self.vars[3 * k + 2])
        };
        let update_pre = gate(g, 0, h);
        let update = g.sigmoid(update_pre);
        let reset_pre = gate(g, 1, h);
        let reset = g.sigmoid(reset_pre);
        let gated = g.mul(reset, h);
        let cand_pre = gate(g, 2, gated);
        let cand = g.tanh(cand_pre);
        let keep = g.mul(update, h);
        let fresh_w = g.one_minus(update);
        let fresh = g.mul(fresh_w, cand);
        g.add(keep, fresh)
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Stacks row slices into a batch matrix.
pub fn rows_to_matrix<T: Scalar>(rows: &[Vec<T>]) -> Result<Array2<T>> {
    let width = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != width) {
        return Err(shape_err("ragged rows"));
    }
    let flat: Vec<T> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), width), flat).map_err(|e| shape_err(e.to_string()))
}

/// Mean of each column, as a `1×n` row.
pub fn column_mean<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0))
}
