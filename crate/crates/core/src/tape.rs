//! Reverse-mode differentiation over a recorded operation list.
//!
//! A [`Tape`] owns an arena of value nodes. Each layer or elementwise call
//! computes its output immediately and records which operation produced it;
//! [`Tape::backward`] replays the list in reverse, accumulating vector-Jacobian
//! products into per-node gradient buffers. One tape serves one forward/backward
//! pass; trainers build a fresh tape every update.
//!
//! The tape is single-threaded by design. Independent trainers (one per seed)
//! each own their tape, so trials can run in parallel without shared state.

use crate::kernels;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Index of a value node on the tape.
pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvGeom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
}

#[derive(Debug)]
enum Op<T> {
    Conv2d { x: NodeId, w: NodeId, b: NodeId, out: NodeId, geom: ConvGeom },
    ConvT2d { x: NodeId, w: NodeId, b: NodeId, out: NodeId, geom: ConvGeom },
    Dense { x: NodeId, w: NodeId, b: NodeId, out: NodeId, batch: usize, nin: usize, nout: usize },
    Matmul { a: NodeId, b: NodeId, out: NodeId, m: usize, k: usize, n: usize },
    Add { a: NodeId, b: NodeId, out: NodeId },
    Sub { a: NodeId, b: NodeId, out: NodeId },
    Mul { a: NodeId, b: NodeId, out: NodeId },
    Div { a: NodeId, b: NodeId, out: NodeId },
    Scale { x: NodeId, c: T, out: NodeId },
    AddScalar { x: NodeId, out: NodeId },
    Relu { x: NodeId, out: NodeId },
    Tanh { x: NodeId, out: NodeId },
    Sigmoid { x: NodeId, out: NodeId },
    Abs { x: NodeId, out: NodeId },
    Log { x: NodeId, out: NodeId },
    SoftmaxRows { x: NodeId, out: NodeId, cols: usize },
    SumAll { x: NodeId, out: NodeId },
    SumRows { x: NodeId, out: NodeId, cols: usize },
    RowBroadcast { x: NodeId, out: NodeId, cols: usize },
    BroadcastRows { x: NodeId, out: NodeId, rows: usize },
    Slice { x: NodeId, out: NodeId, start: usize, len: usize },
    Concat { a: NodeId, b: NodeId, out: NodeId },
    Reshape { x: NodeId, out: NodeId },
    WeightedColSum { x: NodeId, out: NodeId, weights: Vec<T>, cols: usize },
}

/// Recording arena for one forward/backward pass.
pub struct Tape<T> {
    values: Vec<Tensor<T>>,
    grads: Vec<Option<Vec<T>>>,
    ops: Vec<Op<T>>,
    params: Vec<(String, NodeId)>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            grads: Vec::new(),
            ops: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, t: Tensor<T>) -> NodeId {
        let id = self.values.len();
        self.values.push(t);
        self.grads.push(None);
        id
    }

    /// Enter a constant (non-parameter) tensor.
    pub fn constant(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t)
    }

    /// Register a named parameter. The tape holds a copy of the data; the
    /// gradient for it is retrieved after `backward` via [`Tape::param_grads`].
    pub fn param(&mut self, name: &str, t: &Tensor<T>) -> NodeId {
        let id = self.push(t.clone());
        self.params.push((name.to_string(), id));
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.values[id]
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.values[id].shape()
    }

    /// Gradient accumulated for a node, if any reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.grads[id].as_deref()
    }

    /// Gradients for every registered parameter, in registration order.
    /// Parameters the loss never reached get zeros.
    pub fn param_grads(&self) -> Vec<(String, Vec<T>)> {
        self.params
            .iter()
            .map(|(name, id)| {
                let g = match &self.grads[*id] {
                    Some(g) => g.clone(),
                    None => vec![T::zero(); self.values[*id].len()],
                };
                (name.clone(), g)
            })
            .collect()
    }

    // ----- recorded operations -------------------------------------------

    /// Valid (no padding) strided convolution.
    /// x `[B,Cin,H,W]`, w `[Cout,Cin,kh,kw]`, b `[Cout]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || xs[2] < ws[2] || xs[3] < ws[3] {
            return Err(Error::shape(("input [B,Cin,H,W] matching weight", &ws), &xs));
        }
        let geom = ConvGeom {
            batch: xs[0],
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            cout: ws[0],
            kh: ws[2],
            kw: ws[3],
            stride,
        };
        let ho = kernels::conv_out_size(geom.h, geom.kh, stride);
        let wo = kernels::conv_out_size(geom.w, geom.kw, stride);
        let y = kernels::conv2d_forward(
            self.values[x].data(),
            self.values[w].data(),
            self.values[b].data(),
            geom.batch, geom.cin, geom.h, geom.w, geom.cout, geom.kh, geom.kw, stride,
        );
        let out = self.push(Tensor::new(vec![geom.batch, geom.cout, ho, wo], y));
        self.ops.push(Op::Conv2d { x, w, b, out, geom });
        Ok(out)
    }

    /// Transposed convolution. x `[B,Cin,H,W]`, w `[Cin,Cout,kh,kw]`, b `[Cout]`.
    pub fn convt2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[0] {
            return Err(Error::shape(("input [B,Cin,H,W] matching weight", &ws), &xs));
        }
        let geom = ConvGeom {
            batch: xs[0],
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            cout: ws[1],
            kh: ws[2],
            kw: ws[3],
            stride,
        };
        let ho = kernels::convt_out_size(geom.h, geom.kh, stride);
        let wo = kernels::convt_out_size(geom.w, geom.kw, stride);
        let y = kernels::convt2d_forward(
            self.values[x].data(),
            self.values[w].data(),
            self.values[b].data(),
            geom.batch, geom.cin, geom.h, geom.w, geom.cout, geom.kh, geom.kw, stride,
        );
        let out = self.push(Tensor::new(vec![geom.batch, geom.cout, ho, wo], y));
        self.ops.push(Op::ConvT2d { x, w, b, out, geom });
        Ok(out)
    }

    /// Fully connected layer. x `[B,in]`, w `[in,out]`, b `[out]`.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::shape(("input [B,in] matching weight", &ws), &xs));
        }
        let (batch, nin, nout) = (xs[0], ws[0], ws[1]);
        let y = kernels::dense_forward(
            self.values[x].data(),
            self.values[w].data(),
            self.values[b].data(),
            batch, nin, nout,
        );
        let out = self.push(Tensor::new(vec![batch, nout], y));
        self.ops.push(Op::Dense { x, w, b, out, batch, nin, nout });
        Ok(out)
    }

    /// Matrix product without bias. a `[M,K]`, b `[K,N]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let ash = self.shape(a).to_vec();
        let bsh = self.shape(b).to_vec();
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(Error::shape(("a [M,K] by b [K,N]", &bsh), &ash));
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let y = kernels::matmul(self.values[a].data(), self.values[b].data(), m, k, n);
        let out = self.push(Tensor::new(vec![m, n], y));
        self.ops.push(Op::Matmul { a, b, out, m, k, n });
        Ok(out)
    }

    fn binary_elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(T, T) -> T,
    ) -> Result<(NodeId, Tensor<T>)> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(self.shape(a), self.shape(b)));
        }
        let data = self.values[a]
            .data()
            .iter()
            .zip(self.values[b].data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data);
        Ok((self.push(t.clone()), t))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (out, _) = self.binary_elementwise(a, b, |x, y| x + y)?;
        self.ops.push(Op::Add { a, b, out });
        Ok(out)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (out, _) = self.binary_elementwise(a, b, |x, y| x - y)?;
        self.ops.push(Op::Sub { a, b, out });
        Ok(out)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (out, _) = self.binary_elementwise(a, b, |x, y| x * y)?;
        self.ops.push(Op::Mul { a, b, out });
        Ok(out)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (out, _) = self.binary_elementwise(a, b, |x, y| x / y)?;
        self.ops.push(Op::Div { a, b, out });
        Ok(out)
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(T) -> T) -> NodeId {
        let data = self.values[x].data().iter().map(|v| f(*v)).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data);
        self.push(t)
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> NodeId {
        let out = self.unary(x, |v| v * c);
        self.ops.push(Op::Scale { x, c, out });
        out
    }

    pub fn add_scalar(&mut self, x: NodeId, c: T) -> NodeId {
        let out = self.unary(x, |v| v + c);
        self.ops.push(Op::AddScalar { x, out });
        out
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.unary(x, |v| if v > T::zero() { v } else { T::zero() });
        self.ops.push(Op::Relu { x, out });
        out
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.unary(x, |v| v.tanh());
        self.ops.push(Op::Tanh { x, out });
        out
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.unary(x, |v| T::one() / (T::one() + (-v).exp()));
        self.ops.push(Op::Sigmoid { x, out });
        out
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let out = self.unary(x, |v| v.abs());
        self.ops.push(Op::Abs { x, out });
        out
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        let out = self.unary(x, |v| v.ln());
        self.ops.push(Op::Log { x, out });
        out
    }

    /// Softmax over the last dimension of a `[rows, cols]` tensor.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(Error::shape("[rows, cols]", &xs));
        }
        let cols = xs[1];
        let y = kernels::softmax_rows(self.values[x].data(), cols);
        let out = self.push(Tensor::new(xs, y));
        self.ops.push(Op::SoftmaxRows { x, out, cols });
        Ok(out)
    }

    /// Sum of every element, as a scalar node.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: T = self.values[x].data().iter().cloned().sum();
        let out = self.push(Tensor::scalar(s));
        self.ops.push(Op::SumAll { x, out });
        out
    }

    /// Row sums of `[M,K]` producing `[M,1]`.
    pub fn sum_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(Error::shape("[rows, cols]", &xs));
        }
        let cols = xs[1];
        let data: Vec<T> = self.values[x]
            .data()
            .chunks(cols)
            .map(|row| row.iter().cloned().sum())
            .collect();
        let out = self.push(Tensor::new(vec![xs[0], 1], data));
        self.ops.push(Op::SumRows { x, out, cols });
        Ok(out)
    }

    /// Repeat a `[M,1]` column across `cols` columns, producing `[M,cols]`.
    pub fn row_broadcast(&mut self, x: NodeId, cols: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || xs[1] != 1 {
            return Err(Error::shape("[rows, 1]", &xs));
        }
        let mut data = Vec::with_capacity(xs[0] * cols);
        for v in self.values[x].data() {
            data.extend(std::iter::repeat(*v).take(cols));
        }
        let out = self.push(Tensor::new(vec![xs[0], cols], data));
        self.ops.push(Op::RowBroadcast { x, out, cols });
        Ok(out)
    }

    /// Repeat a `[1,K]` row down `rows` rows, producing `[rows,K]`.
    pub fn broadcast_rows(&mut self, x: NodeId, rows: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || xs[0] != 1 {
            return Err(Error::shape("[1, cols]", &xs));
        }
        let mut data = Vec::with_capacity(rows * xs[1]);
        for _ in 0..rows {
            data.extend_from_slice(self.values[x].data());
        }
        let out = self.push(Tensor::new(vec![rows, xs[1]], data));
        self.ops.push(Op::BroadcastRows { x, out, rows });
        Ok(out)
    }

    /// Contiguous slice of the flat data (used for row ranges and gate splits).
    pub fn slice(&mut self, x: NodeId, start: usize, len: usize, shape: Vec<usize>) -> Result<NodeId> {
        if start + len > self.values[x].len() || shape.iter().product::<usize>() != len {
            return Err(Error::shape(
                (self.shape(x), "slice", start, len),
                &shape,
            ));
        }
        let data = self.values[x].data()[start..start + len].to_vec();
        let out = self.push(Tensor::new(shape, data));
        self.ops.push(Op::Slice { x, out, start, len });
        Ok(out)
    }

    /// Flat concatenation of two nodes; caller supplies the result shape.
    pub fn concat(&mut self, a: NodeId, b: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let total = self.values[a].len() + self.values[b].len();
        if shape.iter().product::<usize>() != total {
            return Err(Error::shape(("total elements", total), &shape));
        }
        let mut data = self.values[a].data().to_vec();
        data.extend_from_slice(self.values[b].data());
        let out = self.push(Tensor::new(shape, data));
        self.ops.push(Op::Concat { a, b, out });
        Ok(out)
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        if shape.iter().product::<usize>() != self.values[x].len() {
            return Err(Error::shape(self.shape(x), &shape));
        }
        let t = self.values[x].reshaped(shape);
        let out = self.push(t);
        self.ops.push(Op::Reshape { x, out });
        Ok(out)
    }

    /// out[k] = sum_m weights[m,k] * x[m,k] for x `[M,K]`. The weights are
    /// constants: gradient flows to `x` only.
    pub fn weighted_col_sum(&mut self, x: NodeId, weights: Vec<T>) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || weights.len() != xs[0] * xs[1] {
            return Err(Error::shape(("weights matching [M,K]", &xs), weights.len()));
        }
        let cols = xs[1];
        let mut out_data = vec![T::zero(); cols];
        for (row, wrow) in self.values[x].data().chunks(cols).zip(weights.chunks(cols)) {
            for k in 0..cols {
                out_data[k] += wrow[k] * row[k];
            }
        }
        let out = self.push(Tensor::new(vec![cols], out_data));
        self.ops.push(Op::WeightedColSum { x, out, weights, cols });
        Ok(out)
    }

    // ----- backward --------------------------------------------------------

    /// Reverse sweep from a scalar loss. Every registered parameter that the
    /// loss reaches receives a gradient; the rest read back as zeros.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.values[loss].len() != 1 {
            return Err(Error::shape("scalar loss", self.shape(loss)));
        }
        self.grads[loss] = Some(vec![T::one()]);

        for idx in (0..self.ops.len()).rev() {
            let out_id = op_output(&self.ops[idx]);
            let dy = match &self.grads[out_id] {
                Some(g) => g.clone(),
                None => continue,
            };
            let Tape { values, grads, ops, .. } = self;
            backward_op(&ops[idx], &dy, values, grads);
        }
        Ok(())
    }
}

fn op_output<T>(op: &Op<T>) -> NodeId {
    match op {
        Op::Conv2d { out, .. }
        | Op::ConvT2d { out, .. }
        | Op::Dense { out, .. }
        | Op::Matmul { out, .. }
        | Op::Add { out, .. }
        | Op::Sub { out, .. }
        | Op::Mul { out, .. }
        | Op::Div { out, .. }
        | Op::Scale { out, .. }
        | Op::AddScalar { out, .. }
        | Op::Relu { out, .. }
        | Op::Tanh { out, .. }
        | Op::Sigmoid { out, .. }
        | Op::Abs { out, .. }
        | Op::Log { out, .. }
        | Op::SoftmaxRows { out, .. }
        | Op::SumAll { out, .. }
        | Op::SumRows { out, .. }
        | Op::RowBroadcast { out, .. }
        | Op::BroadcastRows { out, .. }
        | Op::Slice { out, .. }
        | Op::Concat { out, .. }
        | Op::Reshape { out, .. }
        | Op::WeightedColSum { out, .. } => *out,
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], values: &[Tensor<T>], id: NodeId, add: &[T]) {
    match &mut grads[id] {
        Some(g) => {
            for (gi, ai) in g.iter_mut().zip(add) {
                *gi += *ai;
            }
        }
        None => {
            debug_assert_eq!(values[id].len(), add.len());
            grads[id] = Some(add.to_vec());
        }
    }
}

fn backward_op<T: Scalar>(
    op: &Op<T>,
    dy: &[T],
    values: &[Tensor<T>],
    grads: &mut [Option<Vec<T>>],
) {
    match op {
        Op::Conv2d { x, w, b, geom, .. } => {
            let (dx, dw, db) = kernels::conv2d_backward(
                dy,
                values[*x].data(),
                values[*w].data(),
                geom.batch, geom.cin, geom.h, geom.w, geom.cout, geom.kh, geom.kw, geom.stride,
            );
            accumulate(grads, values, *x, &dx);
            accumulate(grads, values, *w, &dw);
            accumulate(grads, values, *b, &db);
        }
        Op::ConvT2d { x, w, b, geom, .. } => {
            let (dx, dw, db) = kernels::convt2d_backward(
                dy,
                values[*x].data(),
                values[*w].data(),
                geom.batch, geom.cin, geom.h, geom.w, geom.cout, geom.kh, geom.kw, geom.stride,
            );
            accumulate(grads, values, *x, &dx);
            accumulate(grads, values, *w, &dw);
            accumulate(grads, values, *b, &db);
        }
        Op::Dense { x, w, b, batch, nin, nout, .. } => {
            // dx = dy . w^T ; dw = x^T . dy ; db = column sums of dy
            let xv = values[*x].data();
            let wv = values[*w].data();
            let mut dx = vec![T::zero(); batch * nin];
            for i in 0..*batch {
                for p in 0..*nin {
                    let mut acc = T::zero();
                    let wrow = p * nout;
                    let dyrow = i * nout;
                    for j in 0..*nout {
                        acc += dy[dyrow + j] * wv[wrow + j];
                    }
                    dx[i * nin + p] = acc;
                }
            }
            let mut dw = vec![T::zero(); nin * nout];
            for i in 0..*batch {
                let dyrow = i * nout;
                for p in 0..*nin {
                    let xv_ip = xv[i * nin + p];
                    if xv_ip == T::zero() {
                        continue;
                    }
                    let wrow = p * nout;
                    for j in 0..*nout {
                        dw[wrow + j] += xv_ip * dy[dyrow + j];
                    }
                }
            }
            let mut db = vec![T::zero(); *nout];
            for row in dy.chunks(*nout) {
                for (d, v) in db.iter_mut().zip(row) {
                    *d += *v;
                }
            }
            accumulate(grads, values, *x, &dx);
            accumulate(grads, values, *w, &dw);
            accumulate(grads, values, *b, &db);
        }
        Op::Matmul { a, b, m, k, n, .. } => {
            let av = values[*a].data();
            let bv = values[*b].data();
            // da = dy . b^T
            let mut da = vec![T::zero(); m * k];
            for i in 0..*m {
                for p in 0..*k {
                    let mut acc = T::zero();
                    for j in 0..*n {
                        acc += dy[i * n + j] * bv[p * n + j];
                    }
                    da[i * k + p] = acc;
                }
            }
            // db = a^T . dy
            let mut db = vec![T::zero(); k * n];
            for i in 0..*m {
                for p in 0..*k {
                    let aip = av[i * k + p];
                    if aip == T::zero() {
                        continue;
                    }
                    for j in 0..*n {
                        db[p * n + j] += aip * dy[i * n + j];
                    }
                }
            }
            accumulate(grads, values, *a, &da);
            accumulate(grads, values, *b, &db);
        }
        Op::Add { a, b, .. } => {
            accumulate(grads, values, *a, dy);
            accumulate(grads, values, *b, dy);
        }
        Op::Sub { a, b, .. } => {
            accumulate(grads, values, *a, dy);
            let neg: Vec<T> = dy.iter().map(|v| -*v).collect();
            accumulate(grads, values, *b, &neg);
        }
        Op::Mul { a, b, .. } => {
            let da: Vec<T> = dy.iter().zip(values[*b].data()).map(|(d, v)| *d * *v).collect();
            let db: Vec<T> = dy.iter().zip(values[*a].data()).map(|(d, v)| *d * *v).collect();
            accumulate(grads, values, *a, &da);
            accumulate(grads, values, *b, &db);
        }
        Op::Div { a, b, .. } => {
            let av = values[*a].data();
            let bv = values[*b].data();
            let da: Vec<T> = dy.iter().zip(bv).map(|(d, v)| *d / *v).collect();
            let db: Vec<T> = dy
                .iter()
                .zip(av.iter().zip(bv))
                .map(|(d, (x, y))| -*d * *x / (*y * *y))
                .collect();
            accumulate(grads, values, *a, &da);
            accumulate(grads, values, *b, &db);
        }
        Op::Scale { x, c, .. } => {
            let dx: Vec<T> = dy.iter().map(|d| *d * *c).collect();
            accumulate(grads, values, *x, &dx);
        }
        Op::AddScalar { x, .. } => {
            accumulate(grads, values, *x, dy);
        }
        Op::Relu { x, .. } => {
            let dx: Vec<T> = dy
                .iter()
                .zip(values[*x].data())
                .map(|(d, v)| if *v > T::zero() { *d } else { T::zero() })
                .collect();
            accumulate(grads, values, *x, &dx);
        }
        Op::Tanh { x, out } => {
            let dx: Vec<T> = dy
                .iter()
                .zip(values[*out].data())
                .map(|(d, y)| *d * (T::one() - *y * *y))
                .collect();
            accumulate(grads, values, *x, &dx);
        }
        Op::Sigmoid { x, out } => {
            let dx: Vec<T> = dy
                .iter()
                .zip(values[*out].data())
                .map(|(d, y)| *d * *y * (T::one() - *y))
                .collect();
            accumulate(grads, values, *x, &dx);
        }
        Op::Abs { x, .. } => {
            let dx: Vec<T> = dy
                .iter()
                .zip(values[*x].data())
                .map(|(d, v)| {
                    if *v > T::zero() {
                        *d
                    } else if *v < T::zero() {
                        -*d
                    } else {
                        T::zero()
                    }
                })
                .collect();
            accumulate(grads, values, *x, &dx);
        }
        Op::Log { x, .. } => {
            let dx: Vec<T> = dy.iter().zip(values[*x].data()).map(|(d, v)| *d / *v).collect();
            accumulate(grads, values, *x, &dx);
        }
        Op::SoftmaxRows { x, out, cols } => {
            let yv = values[*out].data();
            let mut dx = vec![T::zero(); yv.len()];
            for r in 0..yv.len() / cols {
                let base = r * cols;
                let mut dot = T::zero();
                for c in 0..*cols {
                    dot += dy[base + c] * yv[base + c];
                }
                for c in 0..*cols {
                    dx[base + c] = yv[base + c] * (dy[base + c] - dot);
                }
            }
            accumulate(grads, values, *x, &dx);
        }
        Op::SumAll { x, .. } => {
            let dx = vec![dy[0]; values[*x].len()];
            accumulate(grads, values, *x, &dx);
        }
        Op::SumRows { x, cols, .. } => {
            let mut dx = Vec::with_capacity(values[*x].len());
            for d in dy {
                dx.extend(std::iter::repeat(*d).take(*cols));
            }
            accumulate(grads, values, *x, &dx);
        }
        Op::RowBroadcast { x, cols, .. } => {
            let dx: Vec<T> = dy.chunks(*cols).map(|row| row.iter().cloned().sum()).collect();
            accumulate(grads, values, *x, &dx);
        }
        Op::BroadcastRows { x, rows, .. } => {
            let k = values[*x].len();
            let mut dx = vec![T::zero(); k];
            for r in 0..*rows {
                for c in 0..k {
                    dx[c] += dy[r * k + c];
                }
            }
            accumulate(grads, values, *x, &dx);
        }
        Op::Slice { x, start, len, .. } => {
            let mut dx = vec![T::zero(); values[*x].len()];
            dx[*start..*start + *len].copy_from_slice(dy);
            accumulate(grads, values, *x, &dx);
        }
        Op::Concat { a, b, .. } => {
            let na = values[*a].len();
            accumulate(grads, values, *a, &dy[..na]);
            accumulate(grads, values, *b, &dy[na..]);
        }
        Op::Reshape { x, .. } => {
            accumulate(grads, values, *x, dy);
        }
        Op::WeightedColSum { x, weights, cols, .. } => {
            let mut dx = vec![T::zero(); values[*x].len()];
            for (drow, wrow) in dx.chunks_mut(*cols).zip(weights.chunks(*cols)) {
                for k in 0..*cols {
                    drow[k] = wrow[k] * dy[k];
                }
            }
            accumulate(grads, values, *x, &dx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loss_has_unit_gradient() {
        // loss = sum(p) with p of shape (3,) -> grad = (1,1,1)
        let mut tape = Tape::<f64>::new();
        let p = tape.param("p", &Tensor::new(vec![3], vec![4.0, 5.0, 6.0]));
        let loss = tape.sum_all(p);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(p).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn quadratic_loss_gradient() {
        // loss = ||p||^2 with p = (1, -2) -> grad = (2, -4)
        let mut tape = Tape::<f64>::new();
        let p = tape.param("p", &Tensor::new(vec![2], vec![1.0, -2.0]));
        let sq = tape.mul(p, p).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(p).unwrap(), &[2.0, -4.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param("p", &Tensor::new(vec![2], vec![1.0, 2.0]));
        assert!(tape.backward(p).is_err());
    }

    #[test]
    fn unreachable_param_gets_zero_grad() {
        let mut tape = Tape::<f64>::new();
        let used = tape.param("used", &Tensor::new(vec![1], vec![2.0]));
        let _unused = tape.param("unused", &Tensor::new(vec![2], vec![1.0, 1.0]));
        let loss = tape.sum_all(used);
        tape.backward(loss).unwrap();
        let grads = tape.param_grads();
        assert_eq!(grads[0].1, vec![1.0]);
        assert_eq!(grads[1].1, vec![0.0, 0.0]);
    }

    #[test]
    fn relu_forward_matches_definition() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_handles_uniform_logits() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(vec![1, 4], vec![0.0; 4]));
        let y = tape.softmax_rows(x).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn conv_shape_mismatch_reports_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(vec![1, 2, 8, 8]));
        let w = tape.constant(Tensor::zeros(vec![4, 3, 3, 3])); // wrong cin
        let b = tape.constant(Tensor::zeros(vec![4]));
        let err = tape.conv2d(x, w, b, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 2, 8, 8]") && msg.contains("[4, 3, 3, 3]"), "{msg}");
    }

    #[test]
    fn encoder_shape_chain() {
        // 1x24x24 -> 16x11x11 -> 16x5x5 per the stride-2 valid chain.
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(vec![1, 1, 24, 24]));
        let w1 = tape.constant(Tensor::zeros(vec![16, 1, 4, 4]));
        let b1 = tape.constant(Tensor::zeros(vec![16]));
        let h1 = tape.conv2d(x, w1, b1, 2).unwrap();
        assert_eq!(tape.shape(h1), &[1, 16, 11, 11]);
        let w2 = tape.constant(Tensor::zeros(vec![16, 16, 3, 3]));
        let b2 = tape.constant(Tensor::zeros(vec![16]));
        let h2 = tape.conv2d(h1, w2, b2, 2).unwrap();
        assert_eq!(tape.shape(h2), &[1, 16, 5, 5]);
        // Mirror decoder: 5 -> 11 -> 24.
        let wt1 = tape.constant(Tensor::zeros(vec![16, 16, 3, 3]));
        let d1 = tape.convt2d(h2, wt1, b2, 2).unwrap();
        assert_eq!(tape.shape(d1), &[1, 16, 11, 11]);
        let wt2 = tape.constant(Tensor::zeros(vec![16, 1, 4, 4]));
        let bt2 = tape.constant(Tensor::zeros(vec![1]));
        let d2 = tape.convt2d(d1, wt2, bt2, 2).unwrap();
        assert_eq!(tape.shape(d2), &[1, 1, 24, 24]);
    }

    #[test]
    fn gradient_accumulates_across_consumers() {
        // out = 2a + 3a -> da = 5
        let mut tape = Tape::<f64>::new();
        let a = tape.param("a", &Tensor::new(vec![1], vec![1.0]));
        let x2 = tape.scale(a, 2.0);
        let x3 = tape.scale(a, 3.0);
        let s = tape.add(x2, x3).unwrap();
        let loss = tape.sum_all(s);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[5.0]);
    }
}
