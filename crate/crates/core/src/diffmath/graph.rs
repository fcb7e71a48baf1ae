//! Tape-based reverse-mode differentiation over 2-D arrays.
//!
//! Every value is a matrix; batches are rows. Operations append a node to
//! the tape and `backward` walks it in reverse. Batched square matrices
//! (rotations, affine maps) are stored flattened row-major, one per row.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    Offset(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Clamp(Var, T, T),
    RoundStraightThrough(Var),
    SumAll(Var),
    MeanAll(Var),
    SumCols(Var),
    Min(Var, Var),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    Slice(Var, usize, usize),
    LogSoftmax(Var),
    RowNorm(Var),
    PairwiseDist(Var),
    Skew(Var, usize),
    BatchMatMul(Var, Var, usize),
    BatchMatVec(Var, Var, usize),
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recording of a computation that can be differentiated once.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    poisoned: Option<&'static str>,
}

/// Gradients of a scalar output with respect to every node that needed one.
pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Array2<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<T> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn reduce_to<T: Scalar>(g: Array2<T>, shape: (usize, usize)) -> Array2<T> {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let dim = |x: usize, y: usize| {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn square_view<T: Scalar>(row: &[T], d: usize) -> ArrayView2<'_, T> {
    ArrayView2::from_shape((d, d), row).expect("row holds a d×d matrix")
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), poisoned: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value that gradients are not tracked for.
    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, false, "constant")
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, true, "param")
    }

    pub fn scalar_constant(&mut self, x: T) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// The single entry of a 1×1 node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[[0, 0]]
    }

    /// First operation that produced a NaN or infinity, if any.
    pub fn check(&self) -> Result<()> {
        match self.poisoned {
            Some(op) => Err(Error::NonFinite(op)),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>, requires_grad: bool, name: &'static str) -> Var {
        if self.poisoned.is_none() && !value.iter().all(|x| x.is_finite()) {
            self.poisoned = Some(name);
        }
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn unary(&mut self, x: Var, op: Op<T>, name: &'static str, f: impl Fn(T) -> T) -> Var {
        let value = self.value(x).mapv(f);
        let rg = self.rg(x);
        self.push(value, op, rg, name)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op<T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let shape = broadcast_shape(sa, sb)
            .unwrap_or_else(|| panic!("{name}: cannot broadcast {sa:?} with {sb:?}"));
        let va = self.value(a).broadcast(shape).unwrap();
        let vb = self.value(b).broadcast(shape).unwrap();
        let value = Zip::from(&va).and(&vb).map_collect(|&x, &y| f(x, y));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg, name)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a).1, self.shape(b).0, "matmul: inner dimensions differ");
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg, "matmul")
    }

    /// Elementwise sum; `b` may broadcast as a row, column or scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a, b), "div", |x, y| x / y)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::Scale(x, c), "scale", |v| v * c)
    }

    pub fn offset(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::Offset(x, c), "offset", |v| v + c)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -T::one())
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let n = self.neg(x);
        self.offset(n, T::one())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), "relu", |v| v.max(T::zero()))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), "sigmoid", sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), "tanh", |v| v.tanh())
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Op::Softplus(x), "softplus", softplus)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), "exp", |v| v.exp())
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Op::Ln(x), "ln", |v| v.ln())
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), "square", |v| v * v)
    }

    /// Clamp to `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), "clamp", |v| v.max(lo).min(hi))
    }

    /// Rounds to {0, 1} with `p >= 0.5 -> 1`; the backward pass is the identity.
    pub fn round_straight_through(&mut self, x: Var) -> Var {
        let half = T::lit(0.5);
        self.unary(x, Op::RoundStraightThrough(x), "round", |v| {
            if v >= half {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Array2::from_elem((1, 1), total), Op::SumAll(x), rg, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.sum() / T::from_usize(v.len()).unwrap();
        let rg = self.rg(x);
        self.push(Array2::from_elem((1, 1), m), Op::MeanAll(x), rg, "mean")
    }

    /// Per-row sum, giving an `m×1` column.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let value = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(x);
        self.push(value, Op::SumCols(x), rg, "sum_cols")
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "min: shapes differ");
        self.binary(a, b, Op::Min(a, b), "min", |x, y| x.min(y))
    }

    /// Column-wise concatenation of equally tall blocks.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat: row counts differ");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::Concat(parts.to_vec()), rg, "concat")
    }

    /// Row-wise stacking of equally wide blocks.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg, "concat_rows")
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let value = self.value(x).slice(s![.., start..end]).to_owned();
        let rg = self.rg(x);
        self.push(value, Op::Slice(x, start, end), rg, "slice")
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for mut row in value.rows_mut() {
            let m = row.fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        let rg = self.rg(x);
        self.push(value, Op::LogSoftmax(x), rg, "log_softmax")
    }

    /// Euclidean norm of each row as an `m×1` column.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let value = self
            .value(x)
            .map_axis(Axis(1), |r| r.iter().map(|&v| v * v).sum::<T>().sqrt())
            .insert_axis(Axis(1));
        let rg = self.rg(x);
        self.push(value, Op::RowNorm(x), rg, "row_norm")
    }

    /// `m×m` matrix of Euclidean distances between rows.
    pub fn pairwise_dist(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.nrows();
        let mut d = Array2::zeros((m, m));
        for i in 0..m {
            for j in (i + 1)..m {
                let dist = Zip::from(v.row(i))
                    .and(v.row(j))
                    .fold(T::zero(), |acc, &a, &b| acc + (a - b) * (a - b))
                    .sqrt();
                d[[i, j]] = dist;
                d[[j, i]] = dist;
            }
        }
        let rg = self.rg(x);
        self.push(d, Op::PairwiseDist(x), rg, "pairwise_dist")
    }

    /// Rows of `n(n-1)/2` parameters to rows of flattened skew-symmetric `n×n` matrices.
    pub fn skew(&mut self, params: Var, n: usize) -> Var {
        let p = self.value(params);
        assert_eq!(p.ncols(), n * (n - 1) / 2, "skew: wrong parameter count");
        let mut out = Array2::zeros((p.nrows(), n * n));
        for (prow, mut orow) in p.rows().into_iter().zip(out.rows_mut()) {
            let mut k = 0;
            for i in 0..n {
                for j in (i + 1)..n {
                    orow[i * n + j] = prow[k];
                    orow[j * n + i] = -prow[k];
                    k += 1;
                }
            }
        }
        let rg = self.rg(params);
        self.push(out, Op::Skew(params, n), rg, "skew")
    }

    /// Row-wise product of flattened `d×d` matrices.
    pub fn batch_matmul(&mut self, a: Var, b: Var, d: usize) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "batch_matmul: shapes differ");
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Array2::zeros(va.dim());
        for ((ra, rb), mut ro) in va.rows().into_iter().zip(vb.rows()).zip(out.rows_mut()) {
            let prod = square_view(ra.as_slice().unwrap(), d).dot(&square_view(rb.as_slice().unwrap(), d));
            ro.assign(&ndarray::ArrayView1::from(prod.as_slice().unwrap()));
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::BatchMatMul(a, b, d), rg, "batch_matmul")
    }

    /// Row-wise matrix-vector product `M_b z_b` with `M` flattened `d×d`.
    pub fn batch_matvec(&mut self, m: Var, z: Var, d: usize) -> Var {
        let (vm, vz) = (self.value(m), self.value(z));
        assert_eq!(vm.ncols(), d * d, "batch_matvec: matrix width");
        assert_eq!(vz.dim(), (vm.nrows(), d), "batch_matvec: vector shape");
        let mut out = Array2::zeros(vz.dim());
        for ((rm, rz), mut ro) in vm.rows().into_iter().zip(vz.rows()).zip(out.rows_mut()) {
            ro.assign(&square_view(rm.as_slice().unwrap(), d).dot(&rz));
        }
        let rg = self.rg(m) || self.rg(z);
        self.push(out, Op::BatchMatVec(m, z, d), rg, "batch_matvec")
    }

    /// Reverse pass from a 1×1 node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check()?;
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!("backward needs a scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Array2<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, g, &mut grads);
        }
        if grads.iter().flatten().any(|g| !g.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("backward"));
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Array2<T>>], v: Var, contrib: Array2<T>) {
        if !self.rg(v) {
            return;
        }
        let contrib = reduce_to(contrib, self.shape(v));
        match &mut grads[v.0] {
            Some(existing) => *existing += &contrib,
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, idx: usize, g: Array2<T>, grads: &mut [Option<Array2<T>>]) {
        let out = &self.nodes[idx].value;
        let val = |v: Var| &self.nodes[v.0].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.acc(grads, *a, g.dot(&val(*b).t()));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, val(*a).t().dot(&g));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.mapv(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.acc(grads, *a, &g * val(*b));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, &g * val(*a));
                }
            }
            Op::Div(a, b) => {
                if self.rg(*a) {
                    self.acc(grads, *a, &g / val(*b));
                }
                if self.rg(*b) {
                    // d(a/b)/db = -out / b
                    let vb = val(*b).broadcast(out.dim()).unwrap();
                    let gb = Zip::from(&g).and(out).and(&vb).map_collect(|&g, &o, &b| -g * o / b);
                    self.acc(grads, *b, gb);
                }
            }
            Op::Scale(x, c) => self.acc(grads, *x, g.mapv(|v| v * *c)),
            Op::Offset(x, _) => self.acc(grads, *x, g),
            Op::Relu(x) => {
                let gx = Zip::from(&g).and(val(*x)).map_collect(|&g, &v| if v > T::zero() { g } else { T::zero() });
                self.acc(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = Zip::from(&g).and(out).map_collect(|&g, &y| g * y * (T::one() - y));
                self.acc(grads, *x, gx);
            }
            Op::Tanh(x) => {
                let gx = Zip::from(&g).and(out).map_collect(|&g, &y| g * (T::one() - y * y));
                self.acc(grads, *x, gx);
            }
            Op::Softplus(x) => {
                let gx = Zip::from(&g).and(val(*x)).map_collect(|&g, &v| g * sigmoid(v));
                self.acc(grads, *x, gx);
            }
            Op::Exp(x) => self.acc(grads, *x, &g * out),
            Op::Ln(x) => self.acc(grads, *x, &g / val(*x)),
            Op::Square(x) => {
                let two = T::lit(2.0);
                let gx = Zip::from(&g).and(val(*x)).map_collect(|&g, &v| g * two * v);
                self.acc(grads, *x, gx);
            }
            Op::Clamp(x, lo, hi) => {
                let gx = Zip::from(&g)
                    .and(val(*x))
                    .map_collect(|&g, &v| if v >= *lo && v <= *hi { g } else { T::zero() });
                self.acc(grads, *x, gx);
            }
            Op::RoundStraightThrough(x) => self.acc(grads, *x, g),
            Op::SumAll(x) => {
                let gx = Array2::from_elem(self.shape(*x), g[[0, 0]]);
                self.acc(grads, *x, gx);
            }
            Op::MeanAll(x) => {
                let n = T::from_usize(val(*x).len()).unwrap();
                let gx = Array2::from_elem(self.shape(*x), g[[0, 0]] / n);
                self.acc(grads, *x, gx);
            }
            Op::SumCols(x) => {
                let gx = g.broadcast(self.shape(*x)).unwrap().to_owned();
                self.acc(grads, *x, gx);
            }
            Op::Min(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let ga = Zip::from(&g).and(va).and(vb).map_collect(|&g, &x, &y| if x <= y { g } else { T::zero() });
                let gb = Zip::from(&g).and(va).and(vb).map_collect(|&g, &x, &y| if x <= y { T::zero() } else { g });
                self.acc(grads, *a, ga);
                self.acc(grads, *b, gb);
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.rg(p) {
                        self.acc(grads, p, g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = self.shape(p).0;
                    if self.rg(p) {
                        self.acc(grads, p, g.slice(s![start..start + h, ..]).to_owned());
                    }
                    start += h;
                }
            }
            Op::Slice(x, start, end) => {
                let mut gx = Array2::zeros(self.shape(*x));
                gx.slice_mut(s![.., *start..*end]).assign(&g);
                self.acc(grads, *x, gx);
            }
            Op::LogSoftmax(x) => {
                let mut gx = g.clone();
                for (mut row, orow) in gx.rows_mut().into_iter().zip(out.rows()) {
                    let total = row.sum();
                    Zip::from(&mut row).and(&orow).for_each(|gv, &lp| *gv = *gv - lp.exp() * total);
                }
                self.acc(grads, *x, gx);
            }
            Op::RowNorm(x) => {
                let vx = val(*x);
                let mut gx = Array2::zeros(vx.dim());
                for ((mut grow, xrow), (&gn, &n)) in
                    gx.rows_mut().into_iter().zip(vx.rows()).zip(g.iter().zip(out.iter()))
                {
                    if n > T::zero() {
                        Zip::from(&mut grow).and(&xrow).for_each(|o, &v| *o = gn * v / n);
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::PairwiseDist(x) => {
                let vx = val(*x);
                let m = vx.nrows();
                let mut w = Array2::zeros((m, m));
                for i in 0..m {
                    for j in 0..m {
                        let d = out[[i, j]];
                        if i != j && d > T::zero() {
                            w[[i, j]] = (g[[i, j]] + g[[j, i]]) / d;
                        }
                    }
                }
                let row_sums = w.sum_axis(Axis(1)).insert_axis(Axis(1));
                let gx = &row_sums * vx - w.dot(vx);
                self.acc(grads, *x, gx);
            }
            Op::Skew(p, n) => {
                let n = *n;
                let mut gp = Array2::zeros(self.shape(*p));
                for (grow, mut prow) in g.rows().into_iter().zip(gp.rows_mut()) {
                    let mut k = 0;
                    for i in 0..n {
                        for j in (i + 1)..n {
                            prow[k] = grow[i * n + j] - grow[j * n + i];
                            k += 1;
                        }
                    }
                }
                self.acc(grads, *p, gp);
            }
            Op::BatchMatMul(a, b, d) => {
                let d = *d;
                let (va, vb) = (val(*a), val(*b));
                let mut ga = Array2::zeros(va.dim());
                let mut gb = Array2::zeros(vb.dim());
                for b_idx in 0..va.nrows() {
                    let gm = square_view(g.row(b_idx).to_slice().unwrap(), d).to_owned();
                    let am = square_view(va.row(b_idx).to_slice().unwrap(), d);
                    let bm = square_view(vb.row(b_idx).to_slice().unwrap(), d);
                    let da = gm.dot(&bm.t());
                    let db = am.t().dot(&gm);
                    ga.row_mut(b_idx).assign(&ndarray::ArrayView1::from(da.as_standard_layout().as_slice().unwrap()));
                    gb.row_mut(b_idx).assign(&ndarray::ArrayView1::from(db.as_standard_layout().as_slice().unwrap()));
                }
                self.acc(grads, *a, ga);
                self.acc(grads, *b, gb);
            }
            Op::BatchMatVec(mv, z, d) => {
                let d = *d;
                let (vm, vz) = (val(*mv), val(*z));
                let mut gm = Array2::zeros(vm.dim());
                let mut gz = Array2::zeros(vz.dim());
                for b_idx in 0..vm.nrows() {
                    let grow = g.row(b_idx);
                    let zrow = vz.row(b_idx);
                    let mut gmrow = gm.row_mut(b_idx);
                    for i in 0..d {
                        for j in 0..d {
                            gmrow[i * d + j] = grow[i] * zrow[j];
                        }
                    }
                    let m = square_view(vm.row(b_idx).to_slice().unwrap(), d);
                    gz.row_mut(b_idx).assign(&m.t().dot(&grow));
                }
                self.acc(grads, *mv, gm);
                self.acc(grads, *z, gz);
            }
        }
    }
}
