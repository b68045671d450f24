use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Reshape(Var),
    Transpose(Var),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Ordered record of executed primitives.
///
/// Nodes are appended in execution order, so every op's inputs precede it and
/// [`Tape::backward`] can walk the record once in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn broadcast_shape(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
) -> Result<Vec<usize>, TensorError> {
    if a.shape() == b.shape() || b.is_scalar() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

/// `c[m,n] += a * b` with arbitrary strides; `beta` scales the prior contents.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the caller passes buffers whose extents cover the strided views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    /// Records a leaf; it is differentiated iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let tracked = tensor.requires_grad();
        self.push_node(tensor, Op::Leaf, tracked)
    }

    /// Records a gradient-tracked leaf.
    pub fn param(&mut self, mut tensor: Tensor) -> Var {
        tensor.set_requires_grad(true);
        self.leaf(tensor)
    }

    pub fn constant(&mut self, mut tensor: Tensor) -> Var {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Gradient of the last `backward` loss with respect to `v`, if `v` is
    /// tracked and reachable.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Copy of the value of `v` with its gradient attached.
    pub fn tensor_with_grad(&self, v: Var) -> Tensor {
        let mut t = self.nodes[v.0].value.clone();
        t.set_requires_grad(self.nodes[v.0].tracked);
        if let Some(g) = self.grad(v) {
            t.set_grad(g.to_vec()).expect("gradient length matches value");
        }
        t
    }

    fn push_node(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn push(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var, TensorError> {
        if let Some(_bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite {
                op: name,
                index: self.nodes.len(),
            });
        }
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        let value = Tensor::new(shape, data)?;
        Ok(self.push_node(value, op, tracked))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        };
        let (m, k) = ta.dims2().ok_or_else(mismatch)?;
        let (k2, n) = tb.dims2().ok_or_else(mismatch)?;
        if k != k2 {
            return Err(mismatch());
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            ta.data(),
            k as isize,
            1,
            tb.data(),
            n as isize,
            1,
            0.0,
            &mut out,
        );
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(name, ta, tb)?;
        let n: usize = shape.iter().product();
        let (da, db) = (ta.data(), tb.data());
        let out: Vec<f64> = match (da.len() == n, db.len() == n) {
            (true, true) => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            (true, false) => da.iter().map(|&x| f(x, db[0])).collect(),
            _ => db.iter().map(|&y| f(da[0], y)).collect(),
        };
        self.push(name, shape, out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x[r, c] + bias[c]` for every row `r`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let c = tx.last_dim();
        if tb.len() != c || tb.shape().iter().rev().skip(1).any(|&s| s != 1) {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let b = tb.data();
        let out: Vec<f64> = tx
            .data()
            .chunks_exact(c)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let shape = tx.shape().to_vec();
        self.push("add_row", shape, out, Op::AddRow(x, bias), &[x, bias])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        self.unary("add_scalar", x, |v| v + c, Op::AddScalar(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        self.unary("scale", x, |v| v * c, Op::Scale(x, c))
    }

    fn unary(
        &mut self,
        name: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| f(v)).collect();
        let shape = t.shape().to_vec();
        self.push(name, shape, out, op, &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("exp", x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("log", x, f64::ln, Op::Log(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(
            "gelu",
            x,
            |v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()),
            Op::Gelu(x),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let c = t.last_dim();
        let mut out = t.data().to_vec();
        for row in out.chunks_exact_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let shape = t.shape().to_vec();
        self.push("softmax", shape, out, Op::Softmax(x), &[x])
    }

    /// Layer normalisation over the last axis with optional affine `gamma`, `beta`.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        eps: f64,
    ) -> Result<Var, TensorError> {
        let t = self.value(x);
        let c = t.last_dim();
        for p in [gamma, beta].into_iter().flatten() {
            let tp = self.value(p);
            if tp.len() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: t.shape().to_vec(),
                    rhs: tp.shape().to_vec(),
                });
            }
        }
        let rows = t.len() / c;
        let mut xhat = Vec::with_capacity(t.len());
        let mut inv_std = Vec::with_capacity(rows);
        for row in t.data().chunks_exact(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            xhat.extend(row.iter().map(|v| (v - mean) * inv));
        }
        let g = gamma.map(|v| self.value(v).data());
        let b = beta.map(|v| self.value(v).data());
        let mut out = xhat.clone();
        for row in out.chunks_exact_mut(c) {
            for (j, v) in row.iter_mut().enumerate() {
                if let Some(g) = g {
                    *v *= g[j];
                }
                if let Some(b) = b {
                    *v += b[j];
                }
            }
        }
        let shape = t.shape().to_vec();
        let mut inputs = vec![x];
        inputs.extend(gamma);
        inputs.extend(beta);
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        self.push("layer_norm", shape, out, op, &inputs)
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var, TensorError> {
        let shape = shape.into();
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: t.shape().to_vec(),
                rhs: shape,
            });
        }
        let data = t.data().to_vec();
        self.push("reshape", shape, data, Op::Reshape(x), &[x])
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let (r, c) = t.dims2().ok_or_else(|| TensorError::ShapeMismatch {
            op: "transpose",
            lhs: t.shape().to_vec(),
            rhs: vec![],
        })?;
        let d = t.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        self.push("transpose", vec![c, r], out, Op::Transpose(x), &[x])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = self.value(inputs[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(TensorError::Axis {
                op: "concat",
                axis,
                shape: first,
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            let conforms = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !conforms {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        self.push("concat", shape, out, Op::Concat(inputs.to_vec(), axis), inputs)
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(
        &mut self,
        x: Var,
        axis: usize,
        start: usize,
        end: usize,
    ) -> Result<Var, TensorError> {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: "slice",
                axis,
                shape,
            });
        }
        if start >= end || end > shape[axis] {
            return Err(TensorError::Range {
                op: "slice",
                start,
                end,
                extent: shape[axis],
            });
        }
        let (outer, extent, inner) = split_axis(&shape, axis);
        let width = end - start;
        let mut out = Vec::with_capacity(outer * width * inner);
        let d = t.data();
        for o in 0..outer {
            let base = o * extent * inner;
            out.extend_from_slice(&d[base + start * inner..base + end * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = width;
        self.push(
            "slice",
            new_shape,
            out,
            Op::Slice { x, axis, start },
            &[x],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", vec![1], vec![s], Op::Mean(x), &[x])
    }

    /// Mean of squared differences, built from primitives.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    /// Populates gradients of `loss` for every tracked node reachable from it.
    ///
    /// Gradients from earlier calls are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].tracked {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        // Accumulates into the gradient buffer of `v` if it is tracked.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].tracked {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(buf);
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ta = &nodes[a.0].value;
                let tb = &nodes[b.0].value;
                let (m, k) = ta.dims2().expect("checked in forward");
                let n = tb.last_dim();
                acc(*a, &mut |da| {
                    // dA[m,k] += G[m,n] * B^T
                    gemm(
                        m,
                        n,
                        k,
                        g,
                        n as isize,
                        1,
                        tb.data(),
                        1,
                        n as isize,
                        1.0,
                        da,
                    )
                });
                acc(*b, &mut |db| {
                    // dB[k,n] += A^T * G
                    gemm(
                        k,
                        m,
                        n,
                        ta.data(),
                        1,
                        k as isize,
                        g,
                        n as isize,
                        1,
                        1.0,
                        db,
                    )
                });
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let ta = &nodes[a.0].value;
                let tb = &nodes[b.0].value;
                let n = g.len();
                let sign = if matches!(nodes[i].op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                let is_mul = matches!(nodes[i].op, Op::Mul(..));
                // local derivative of the output w.r.t. a (resp. b) at element j
                let da_local = |j: usize| {
                    if is_mul {
                        tb.data()[if tb.len() == n { j } else { 0 }]
                    } else {
                        1.0
                    }
                };
                let db_local = |j: usize| {
                    if is_mul {
                        ta.data()[if ta.len() == n { j } else { 0 }]
                    } else {
                        sign
                    }
                };
                acc(*a, &mut |da| {
                    if da.len() == n {
                        for (j, d) in da.iter_mut().enumerate() {
                            *d += g[j] * da_local(j);
                        }
                    } else {
                        da[0] += (0..n).map(|j| g[j] * da_local(j)).sum::<f64>();
                    }
                });
                acc(*b, &mut |db| {
                    if db.len() == n {
                        for (j, d) in db.iter_mut().enumerate() {
                            *d += g[j] * db_local(j);
                        }
                    } else {
                        db[0] += (0..n).map(|j| g[j] * db_local(j)).sum::<f64>();
                    }
                });
            }
            Op::AddRow(x, bias) => {
                acc(*x, &mut |dx| {
                    for (d, gv) in dx.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                let c = out.last_dim();
                acc(*bias, &mut |db| {
                    for row in g.chunks_exact(c) {
                        for (d, gv) in db.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                });
            }
            Op::AddScalar(x) | Op::Reshape(x) => acc(*x, &mut |dx| {
                for (d, gv) in dx.iter_mut().zip(g) {
                    *d += gv;
                }
            }),
            Op::Scale(x, c) => acc(*x, &mut |dx| {
                for (d, gv) in dx.iter_mut().zip(g) {
                    *d += gv * c;
                }
            }),
            Op::Exp(x) => acc(*x, &mut |dx| {
                for ((d, gv), y) in dx.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * y;
                }
            }),
            Op::Log(x) => {
                let tx = &nodes[x.0].value;
                acc(*x, &mut |dx| {
                    for ((d, gv), xv) in dx.iter_mut().zip(g).zip(tx.data()) {
                        *d += gv / xv;
                    }
                })
            }
            Op::Tanh(x) => acc(*x, &mut |dx| {
                for ((d, gv), y) in dx.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * (1.0 - y * y);
                }
            }),
            Op::Gelu(x) => {
                let tx = &nodes[x.0].value;
                acc(*x, &mut |dx| {
                    for ((d, gv), &v) in dx.iter_mut().zip(g).zip(tx.data()) {
                        let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        *d += gv * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                    }
                })
            }
            Op::Softmax(x) => {
                let c = out.last_dim();
                acc(*x, &mut |dx| {
                    for ((drow, grow), yrow) in dx
                        .chunks_exact_mut(c)
                        .zip(g.chunks_exact(c))
                        .zip(out.data().chunks_exact(c))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((d, gv), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (gv - dot);
                        }
                    }
                })
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = out.last_dim();
                let gam = gamma.map(|v| nodes[v.0].value.data());
                if let Some(gv) = gamma {
                    acc(*gv, &mut |dg| {
                        for (grow, xrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                            for ((d, a), b) in dg.iter_mut().zip(grow).zip(xrow) {
                                *d += a * b;
                            }
                        }
                    });
                }
                if let Some(bv) = beta {
                    acc(*bv, &mut |db| {
                        for grow in g.chunks_exact(c) {
                            for (d, a) in db.iter_mut().zip(grow) {
                                *d += a;
                            }
                        }
                    });
                }
                acc(*x, &mut |dx| {
                    let nf = c as f64;
                    let mut dxhat = vec![0.0; c];
                    for (r, ((drow, grow), xrow)) in dx
                        .chunks_exact_mut(c)
                        .zip(g.chunks_exact(c))
                        .zip(xhat.chunks_exact(c))
                        .enumerate()
                    {
                        for j in 0..c {
                            dxhat[j] = grow[j] * gam.map_or(1.0, |gm| gm[j]);
                        }
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(xrow).map(|(a, b)| a * b).sum();
                        let inv = inv_std[r];
                        for j in 0..c {
                            drow[j] += inv / nf * (nf * dxhat[j] - s1 - xrow[j] * s2);
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                let (r, c) = nodes[x.0].value.dims2().expect("checked in forward");
                acc(*x, &mut |dx| {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] += g[j * r + i];
                        }
                    }
                })
            }
            Op::Concat(inputs, axis) => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let ext = nodes[v.0].value.shape()[*axis];
                    let chunk = ext * inner;
                    acc(*v, &mut |dv| {
                        for o in 0..outer {
                            let src = &g[o * total * inner + offset * inner..][..chunk];
                            for (d, s) in dv[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    });
                    offset += ext;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, extent, inner) = split_axis(nodes[x.0].value.shape(), *axis);
                let width = out.shape()[*axis];
                acc(*x, &mut |dx| {
                    for o in 0..outer {
                        let dst = &mut dx[o * extent * inner + start * inner..][..width * inner];
                        let src = &g[o * width * inner..(o + 1) * width * inner];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                })
            }
            Op::Sum(x) => acc(*x, &mut |dx| {
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            }),
            Op::Mean(x) => acc(*x, &mut |dx| {
                let s = g[0] / dx.len() as f64;
                for d in dx.iter_mut() {
                    *d += s;
                }
            }),
        }
    }
}
