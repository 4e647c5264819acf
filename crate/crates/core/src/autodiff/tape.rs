use super::{AutodiffError, Result, Tensor};
use crate::linalg::{cholesky_jittered, gemm, solve_triangular, DenseMatrix};

/// Rows whose variance falls below this are normalized to zero instead of dividing by ~0.
pub const LAYER_NORM_MIN_VARIANCE: f64 = 1e-12;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    Relu(Var),
    EluPlusOne(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Sqrt(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumCols(Var),
    Transpose(Var),
    Concat { parts: Vec<Var>, axis: Axis },
    Slice { a: Var, axis: Axis, start: usize },
    Cholesky(Var),
    WhitenSolve { b: Var, l: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for one reverse pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    t.dims2().expect("tape values are rank <= 2")
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// Index into a broadcast operand of shape `(rb, cb)` for output position `(i, j)`.
#[inline]
fn bidx(i: usize, j: usize, rb: usize, cb: usize) -> usize {
    (if rb == 1 { 0 } else { i }) * cb + if cb == 1 { 0 } else { j }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an input. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        value.dims2()?;
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        dims(self.value(v))
    }

    // ---- products ----------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` where `op` transposes when the matching flag is set.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = dims(self.value(a));
        let (br, bc) = dims(self.value(b));
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(mismatch("matmul", self.value(a), self.value(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            ta,
            tb,
            m,
            k,
            n,
            1.0,
            self.value(a).data(),
            self.value(b).data(),
            0.0,
            &mut out,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul { a, b, ta, tb }, rg))
    }

    // ---- broadcasting arithmetic -------------------------------------------

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let av = self.value(a);
        let bv = self.value(b);
        let (r, c) = dims(av);
        let (rb, cb) = dims(bv);
        if !((rb == r || rb == 1) && (cb == c || cb == 1)) {
            return Err(mismatch(name, av, bv));
        }
        let ad = av.data();
        let bd = bv.data();
        let mut out = Vec::with_capacity(r * c);
        if rb == r && cb == c {
            out.extend(ad.iter().zip(bd).map(|(&x, &y)| f(x, y)));
        } else {
            for i in 0..r {
                for j in 0..c {
                    out.push(f(ad[i * c + j], bd[bidx(i, j, rb, cb)]));
                }
            }
        }
        Tensor::new(av.shape().to_vec(), out)
    }

    /// `a + b`, where `b` may broadcast along rows, columns or both.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// Elementwise product with broadcasting of `b`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "div", |x, y| x / y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Div(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let av = self.value(a);
        let v = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| x * s).collect())?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::Scale(a, s), rg))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let av = self.value(a);
        let v = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| x + s).collect())?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::AddScalar(a), rg))
    }

    // ---- pointwise ---------------------------------------------------------

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let av = self.value(a);
        let v = Tensor::new(av.shape().to_vec(), av.data().iter().map(|&x| f(x)).collect())?;
        let rg = self.rg(a);
        Ok(self.push(v, op, rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, gelu, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// `elu(x) + 1`, the positive feature map of linear attention.
    pub fn elu_plus_one(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| if x > 0.0 { x + 1.0 } else { x.exp() }, Op::EluPlusOne(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x < 0.0) {
            return Err(AutodiffError::InvalidArgument("sqrt of a negative value".into()));
        }
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    /// Row-wise layer normalization followed by the affine map `x̂·γ + β`.
    ///
    /// `gamma` and `beta` are `1 x features`. Rows with variance below
    /// [`LAYER_NORM_MIN_VARIANCE`] normalize to zero.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (r, c) = dims(self.value(x));
        if c == 0 {
            return Err(AutodiffError::InvalidArgument(
                "layer_norm needs at least one feature".into(),
            ));
        }
        for p in [gamma, beta] {
            if dims(self.value(p)) != (1, c) {
                return Err(mismatch("layer_norm", self.value(x), self.value(p)));
            }
        }
        let xd = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            if var >= LAYER_NORM_MIN_VARIANCE {
                let is = 1.0 / var.sqrt();
                inv_std[i] = is;
                for j in 0..c {
                    xhat[i * c + j] = (row[j] - mean) * is;
                }
            }
            for j in 0..c {
                out[i * c + j] = xhat[i * c + j] * g[j] + bt[j];
            }
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    // ---- reductions and layout ---------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.numel() == 0 {
            return Err(AutodiffError::InvalidArgument("mean of an empty tensor".into()));
        }
        let s = av.data().iter().sum::<f64>() / av.numel() as f64;
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::Mean(a), rg))
    }

    /// Sum over rows: `r x c -> 1 x c`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = dims(self.value(a));
        let d = self.value(a).data();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += d[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(1, c, out), Op::SumRows(a), rg))
    }

    /// Sum over columns: `r x c -> r x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let (r, c) = dims(self.value(a));
        let d = self.value(a).data();
        let out = (0..r).map(|i| d[i * c..(i + 1) * c].iter().sum()).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(r, 1, out), Op::SumCols(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = dims(self.value(a));
        let d = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(c, r, out), Op::Transpose(a), rg))
    }

    /// Concatenation along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let axis = match axis {
            0 => Axis::Rows,
            1 => Axis::Cols,
            _ => return Err(AutodiffError::InvalidArgument(format!("concat axis {axis}"))),
        };
        let first = *parts
            .first()
            .ok_or_else(|| AutodiffError::InvalidArgument("concat of nothing".into()))?;
        let (r0, c0) = dims(self.value(first));
        for &p in parts {
            let (r, c) = dims(self.value(p));
            let ok = match axis {
                Axis::Rows => c == c0,
                Axis::Cols => r == r0,
            };
            if !ok {
                return Err(mismatch("concat", self.value(first), self.value(p)));
            }
        }
        let out = match axis {
            Axis::Rows => {
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                    rows += dims(self.value(p)).0;
                }
                Tensor::matrix(rows, c0, data)
            }
            Axis::Cols => {
                let total: usize = parts.iter().map(|&p| dims(self.value(p)).1).sum();
                let mut data = Vec::with_capacity(r0 * total);
                for i in 0..r0 {
                    for &p in parts {
                        let (_, c) = dims(self.value(p));
                        data.extend_from_slice(&self.value(p).data()[i * c..(i + 1) * c]);
                    }
                }
                Tensor::matrix(r0, total, data)
            }
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Contiguous slice `start..start + len` along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims(self.value(a));
        let d = self.value(a).data();
        let (axis, out) = match axis {
            0 if start + len <= r => (
                Axis::Rows,
                Tensor::matrix(len, c, d[start * c..(start + len) * c].to_vec()),
            ),
            1 if start + len <= c => {
                let mut data = Vec::with_capacity(r * len);
                for i in 0..r {
                    data.extend_from_slice(&d[i * c + start..i * c + start + len]);
                }
                (Axis::Cols, Tensor::matrix(r, len, data))
            }
            _ => {
                return Err(AutodiffError::InvalidArgument(format!(
                    "slice axis {axis} [{start}, {}) out of bounds for {r}x{c}",
                    start + len
                )))
            }
        };
        let rg = self.rg(a);
        Ok(self.push(out, Op::Slice { a, axis, start }, rg))
    }

    // ---- factorizations ----------------------------------------------------

    /// Lower Cholesky factor of the symmetric part of `a`.
    pub fn cholesky(&mut self, a: Var) -> Result<Var> {
        let am = self.value(a).to_dense();
        if !am.is_square() {
            return Err(AutodiffError::InvalidArgument(format!(
                "cholesky of a {}x{} matrix",
                am.rows(),
                am.cols()
            )));
        }
        let sym = am.add(&am.transpose())?.scale(0.5);
        let f = cholesky_jittered(&sym)?;
        let rg = self.rg(a);
        Ok(self.push(Tensor::from(f.lower), Op::Cholesky(a), rg))
    }

    /// `b · l⁻ᵀ` for lower-triangular `l`, computed with triangular solves.
    pub fn whiten_solve(&mut self, b: Var, l: Var) -> Result<Var> {
        let bm = self.value(b).to_dense();
        let lm = self.value(l).to_dense();
        if !lm.is_square() || lm.rows() != bm.cols() {
            return Err(mismatch("whiten_solve", self.value(b), self.value(l)));
        }
        // X Lᵀ = B  <=>  L Xᵀ = Bᵀ
        let xt = solve_triangular(&lm, &bm.transpose(), false)?;
        let rg = self.rg(b) || self.rg(l);
        Ok(self.push(Tensor::from(xt.transpose()), Op::WhitenSolve { b, l }, rg))
    }

    // ---- reverse pass ------------------------------------------------------

    /// Propagates `d loss / d node` back to every leaf that requires a gradient.
    ///
    /// The tape can be differentiated once; a second call returns
    /// [`AutodiffError::TapeReused`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(AutodiffError::TapeReused);
        }
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(AutodiffError::NotScalarLoss(lv.shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| match (&self.nodes[i].op, g) {
                (Op::Leaf, Some(g)) if self.nodes[i].requires_grad => {
                    Some(Tensor::new(self.nodes[i].value.shape().to_vec(), g).expect("grad shape"))
                }
                (Op::Leaf, None) if self.nodes[i].requires_grad => {
                    Some(Tensor::zeros(self.nodes[i].value.shape()))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(
        &self,
        idx: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (a, b, ta, tb) = (*a, *b, *ta, *tb);
                let av = self.value(a).data();
                let bv = self.value(b).data();
                let (ar, ac) = self.shape(a);
                let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
                let n = dims(&node.value).1;
                if self.rg(a) {
                    let ga = acc(grads, a, av.len());
                    if !ta {
                        gemm(false, !tb, m, n, k, 1.0, g, bv, 1.0, ga);
                    } else {
                        gemm(tb, true, k, n, m, 1.0, bv, g, 1.0, ga);
                    }
                }
                if self.rg(b) {
                    let gb = acc(grads, b, bv.len());
                    if !tb {
                        gemm(!ta, false, k, m, n, 1.0, av, g, 1.0, gb);
                    } else {
                        gemm(true, ta, n, m, k, 1.0, g, av, 1.0, gb);
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let (a, b) = (*a, *b);
                if self.rg(a) {
                    let ga = acc(grads, a, g.len());
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                if self.rg(b) {
                    self.reduce_broadcast(&node.value, b, grads, |i| sign * g[i]);
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let (r, c) = dims(&node.value);
                let (rb, cb) = self.shape(b);
                let av = self.value(a).data();
                let bv = self.value(b).data();
                if self.rg(a) {
                    let ga = acc(grads, a, g.len());
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[i * c + j] * bv[bidx(i, j, rb, cb)];
                        }
                    }
                }
                if self.rg(b) {
                    self.reduce_broadcast(&node.value, b, grads, |i| g[i] * av[i]);
                }
            }
            Op::Div(a, b) => {
                let (a, b) = (*a, *b);
                let (r, c) = dims(&node.value);
                let (rb, cb) = self.shape(b);
                let bv = self.value(b).data();
                if self.rg(a) {
                    let ga = acc(grads, a, g.len());
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[i * c + j] / bv[bidx(i, j, rb, cb)];
                        }
                    }
                }
                if self.rg(b) {
                    // d(a/b)/db = -(a/b)/b
                    self.reduce_broadcast(&node.value, b, grads, |i| {
                        let (ii, jj) = (i / c, i % c);
                        -g[i] * out[i] / bv[bidx(ii, jj, rb, cb)]
                    });
                }
            }
            Op::Scale(a, s) => {
                let ga = acc(grads, *a, g.len());
                for (x, y) in ga.iter_mut().zip(g) {
                    *x += s * y;
                }
            }
            Op::AddScalar(a) => {
                let ga = acc(grads, *a, g.len());
                for (x, y) in ga.iter_mut().zip(g) {
                    *x += y;
                }
            }
            Op::Gelu(a) => self.pointwise_back(*a, g, out, grads, |x, _| gelu_grad(x)),
            Op::Relu(a) => {
                self.pointwise_back(*a, g, out, grads, |x, _| if x > 0.0 { 1.0 } else { 0.0 })
            }
            Op::EluPlusOne(a) => {
                self.pointwise_back(*a, g, out, grads, |x, y| if x > 0.0 { 1.0 } else { y })
            }
            Op::Tanh(a) => self.pointwise_back(*a, g, out, grads, |_, y| 1.0 - y * y),
            Op::Exp(a) => self.pointwise_back(*a, g, out, grads, |_, y| y),
            Op::Square(a) => self.pointwise_back(*a, g, out, grads, |x, _| 2.0 * x),
            Op::Sqrt(a) => self.pointwise_back(*a, g, out, grads, |_, y| 0.5 / y),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (r, c) = dims(&node.value);
                let gm = self.value(*gamma).data();
                if self.rg(*gamma) {
                    let gg = acc(grads, *gamma, c);
                    for i in 0..r {
                        for j in 0..c {
                            gg[j] += g[i * c + j] * xhat[i * c + j];
                        }
                    }
                }
                if self.rg(*beta) {
                    let gb = acc(grads, *beta, c);
                    for i in 0..r {
                        for j in 0..c {
                            gb[j] += g[i * c + j];
                        }
                    }
                }
                if self.rg(*x) {
                    let gx = acc(grads, *x, r * c);
                    let mut dxhat = vec![0.0; c];
                    for i in 0..r {
                        if inv_std[i] == 0.0 {
                            continue;
                        }
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..c {
                            dxhat[j] = g[i * c + j] * gm[j];
                            mean_d += dxhat[j];
                            mean_dx += dxhat[j] * xhat[i * c + j];
                        }
                        mean_d /= c as f64;
                        mean_dx /= c as f64;
                        for j in 0..c {
                            gx[i * c + j] +=
                                inv_std[i] * (dxhat[j] - mean_d - xhat[i * c + j] * mean_dx);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                let ga = acc(grads, *a, n);
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                let ga = acc(grads, *a, n);
                for x in ga.iter_mut() {
                    *x += g[0] / n as f64;
                }
            }
            Op::SumRows(a) => {
                let (r, c) = self.shape(*a);
                let ga = acc(grads, *a, r * c);
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[j];
                    }
                }
            }
            Op::SumCols(a) => {
                let (r, c) = self.shape(*a);
                let ga = acc(grads, *a, r * c);
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[i];
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.shape(*a);
                let ga = acc(grads, *a, r * c);
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[j * r + i];
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (_, total_c) = dims(&node.value);
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.rg(p) {
                        let gp = acc(grads, p, r * c);
                        match axis {
                            Axis::Rows => {
                                for (x, y) in gp.iter_mut().zip(&g[offset * c..(offset + r) * c]) {
                                    *x += y;
                                }
                            }
                            Axis::Cols => {
                                for i in 0..r {
                                    for j in 0..c {
                                        gp[i * c + j] += g[i * total_c + offset + j];
                                    }
                                }
                            }
                        }
                    }
                    offset += match axis {
                        Axis::Rows => r,
                        Axis::Cols => c,
                    };
                }
            }
            Op::Slice { a, axis, start } => {
                let (r, c) = self.shape(*a);
                let (or, oc) = dims(&node.value);
                let ga = acc(grads, *a, r * c);
                match axis {
                    Axis::Rows => {
                        for (x, y) in ga[start * c..(start + or) * c].iter_mut().zip(g) {
                            *x += y;
                        }
                    }
                    Axis::Cols => {
                        for i in 0..r {
                            for j in 0..oc {
                                ga[i * c + start + j] += g[i * oc + j];
                            }
                        }
                    }
                }
            }
            Op::Cholesky(a) => {
                // Ā = sym(L⁻ᵀ Φ(Lᵀ L̄) L⁻¹), Φ = lower triangle with halved diagonal
                let l = node.value.to_dense();
                let n = l.rows();
                let lbar = DenseMatrix::from_vec(n, n, g.to_vec())?;
                let mut phi = l.t_matmul(&lbar)?;
                for i in 0..n {
                    for j in 0..n {
                        if j > i {
                            phi.set(i, j, 0.0);
                        } else if i == j {
                            phi.set(i, i, 0.5 * phi.get(i, i));
                        }
                    }
                }
                // L⁻ᵀ Φ
                let left = solve_triangular(&l, &phi, true)?;
                // (L⁻ᵀ Φ) L⁻¹ = (L⁻ᵀ (L⁻ᵀ Φ)ᵀ)ᵀ
                let s = solve_triangular(&l, &left.transpose(), true)?.transpose();
                let ga = acc(grads, *a, n * n);
                for i in 0..n {
                    for j in 0..n {
                        ga[i * n + j] += 0.5 * (s.get(i, j) + s.get(j, i));
                    }
                }
            }
            Op::WhitenSolve { b, l } => {
                let lm = self.value(*l).to_dense();
                let (r, c) = dims(&node.value);
                let xbar = DenseMatrix::from_vec(r, c, g.to_vec())?;
                if self.rg(*b) {
                    // B̄ = X̄ L⁻¹  <=>  B̄ᵀ = L⁻ᵀ X̄ᵀ
                    let bbar_t = solve_triangular(&lm, &xbar.transpose(), true)?;
                    let gb = acc(grads, *b, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            gb[i * c + j] += bbar_t.get(j, i);
                        }
                    }
                }
                if self.rg(*l) {
                    // L̄ = -tril(L⁻ᵀ X̄ᵀ X)
                    let x = node.value.to_dense();
                    let inner = xbar.t_matmul(&x)?;
                    let lbar = solve_triangular(&lm, &inner, true)?;
                    let gl = acc(grads, *l, c * c);
                    for i in 0..c {
                        for j in 0..=i {
                            gl[i * c + j] -= lbar.get(i, j);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn pointwise_back(
        &self,
        a: Var,
        g: &[f64],
        y: &[f64],
        grads: &mut [Option<Vec<f64>>],
        d: impl Fn(f64, f64) -> f64,
    ) {
        let x = self.value(a).data();
        let ga = acc(grads, a, x.len());
        for i in 0..x.len() {
            ga[i] += g[i] * d(x[i], y[i]);
        }
    }

    /// Accumulates `f(i)` over the output positions into a broadcast operand.
    fn reduce_broadcast(
        &self,
        out: &Tensor,
        b: Var,
        grads: &mut [Option<Vec<f64>>],
        f: impl Fn(usize) -> f64,
    ) {
        let (r, c) = dims(out);
        let (rb, cb) = self.shape(b);
        let gb = acc(grads, b, rb * cb);
        for i in 0..r {
            for j in 0..c {
                gb[bidx(i, j, rb, cb)] += f(i * c + j);
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}
