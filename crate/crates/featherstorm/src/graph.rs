//! Reverse-mode automatic differentiation over an append-only node arena.
//!
//! Nodes are created eagerly: each constructor checks shapes, computes the
//! forward value immediately, and appends the node, so node ids are already a
//! topological order and [`Graph::backward`] can sweep them once in reverse.
//! Gradients accumulate (sum) across every use of a node, which is what makes
//! losses over intermediate feature maps work: build the full forward graph,
//! call `backward` on a scalar loss, then read any node's gradient with
//! [`Graph::grad_at`].
//!
//! Layouts: images are `[H, W, C]`, conv kernels `[kh, kw, c_in, c_out]`,
//! dense weights `[in, out]`, scalars `[1]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Zero-padding mode for [`Graph::conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding; output shrinks by `kernel - 1` per axis (stride 1).
    Valid,
    /// Zero padding chosen so the output covers `ceil(extent / stride)`.
    Same,
}

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    ScalarMul(NodeId, f64),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Conv2d {
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad_top: usize,
        pad_left: usize,
    },
    Relu(NodeId),
    MaxPool2 {
        x: NodeId,
        /// Input flat index chosen for each output element.
        argmax: Vec<usize>,
    },
    Flatten(NodeId),
    Dense {
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    SoftmaxCe {
        logits: NodeId,
        label: usize,
        /// Cached softmax probabilities for the backward rule.
        probs: Vec<f64>,
    },
    Sum(NodeId),
    Mean(NodeId),
}

/// Computation arena: values are computed at construction, gradients on
/// [`Graph::backward`].
pub struct Graph {
    ops: Vec<Op>,
    values: Vec<Tensor>,
    grads: Vec<Option<Tensor>>,
}

/// Output extents and implied top/left zero padding for a conv axis pair.
///
/// `Same` follows the usual convention: output `ceil(n / stride)`, total
/// padding `(out - 1) * stride + k - n` split evenly with the smaller half on
/// the top/left side.
pub fn conv_geometry(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize, usize, usize)> {
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
    }
    match padding {
        Padding::Valid => {
            if h < kh || w < kw {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    detail: format!("valid padding needs input {h}x{w} >= kernel {kh}x{kw}"),
                });
            }
            Ok(((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0))
        }
        Padding::Same => {
            let out_h = h.div_ceil(stride);
            let out_w = w.div_ceil(stride);
            let pad_h = ((out_h - 1) * stride + kh).saturating_sub(h);
            let pad_w = ((out_w - 1) * stride + kw).saturating_sub(w);
            Ok((out_h, out_w, pad_h / 2, pad_w / 2))
        }
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph {
            ops: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.ops.len());
        self.ops.push(op);
        self.values.push(value);
        self.grads.push(None);
        id
    }

    /// Input node (image, parameter, constant).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Cached forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.values[a.0].shape() != self.values[b.0].shape() {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!(
                    "{:?} vs {:?}",
                    self.values[a.0].shape(),
                    self.values[b.0].shape()
                ),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let v = self.values[a.0].zip_map(&self.values[b.0], |x, y| x + y);
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let v = self.values[a.0].zip_map(&self.values[b.0], |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn scalar_mul(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.values[a.0].map(|x| c * x);
        self.push(Op::ScalarMul(a, c), v)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let v = self.values[a.0].zip_map(&self.values[b.0], |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.values[a.0].shape(), self.values[b.0].shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{sa:?} x {sb:?}"),
            });
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (self.values[a.0].data(), self.values[b.0].data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let av = ad[i * k + p];
                let brow = &bd[p * m..(p + 1) * m];
                let orow = &mut out[i * m..(i + 1) * m];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        Ok(self.push(Op::MatMul(a, b), Tensor::new(&[n, m], out)))
    }

    /// 2-D convolution over an `[H, W, c_in]` input with a
    /// `[kh, kw, c_in, c_out]` kernel and optional `[c_out]` bias.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        let sx = self.values[x.0].shape().to_vec();
        let sk = self.values[kernel.0].shape().to_vec();
        if sx.len() != 3 || sk.len() != 4 || sx[2] != sk[2] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("input {sx:?} vs kernel {sk:?}"),
            });
        }
        let (h, w, cin) = (sx[0], sx[1], sx[2]);
        let (kh, kw, cout) = (sk[0], sk[1], sk[3]);
        if let Some(b) = bias {
            let sb = self.values[b.0].shape();
            if sb != [cout] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    detail: format!("bias {sb:?} vs c_out {cout}"),
                });
            }
        }
        let (out_h, out_w, pad_top, pad_left) = conv_geometry(h, w, kh, kw, stride, padding)?;

        let xd = self.values[x.0].data();
        let kd = self.values[kernel.0].data();
        let mut out = vec![0.0; out_h * out_w * cout];
        if let Some(b) = bias {
            let bd = self.values[b.0].data();
            for row in out.chunks_exact_mut(cout) {
                row.copy_from_slice(bd);
            }
        }
        for oy in 0..out_h {
            for ox in 0..out_w {
                let obase = (oy * out_w + ox) * cout;
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad_top as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad_left as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let xbase = (iy as usize * w + ix as usize) * cin;
                        for ic in 0..cin {
                            let xv = xd[xbase + ic];
                            if xv == 0.0 {
                                continue;
                            }
                            let kbase = ((ky * kw + kx) * cin + ic) * cout;
                            let krow = &kd[kbase..kbase + cout];
                            let orow = &mut out[obase..obase + cout];
                            for (o, &kv) in orow.iter_mut().zip(krow) {
                                *o += xv * kv;
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(&[out_h, out_w, cout], out);
        Ok(self.push(
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
                pad_top,
                pad_left,
            },
            value,
        ))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a.0].map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a), v)
    }

    /// 2×2 max pooling with stride 2; spatial extents must be even.
    /// Ties go to the first (row-major lowest) index in each window.
    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId> {
        let sx = self.values[x.0].shape().to_vec();
        if sx.len() != 3 || sx[0] % 2 != 0 || sx[1] % 2 != 0 {
            return Err(Error::ShapeMismatch {
                op: "maxpool2",
                detail: format!("needs [H, W, C] with even H, W, got {sx:?}"),
            });
        }
        let (h, w, c) = (sx[0], sx[1], sx[2]);
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.values[x.0].data();
        let mut out = vec![0.0; oh * ow * c];
        let mut argmax = vec![0usize; oh * ow * c];
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = ((2 * oy + dy) * w + (2 * ox + dx)) * c + ch;
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (oy * ow + ox) * c + ch;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        let value = Tensor::new(&[oh, ow, c], out);
        Ok(self.push(Op::MaxPool2 { x, argmax }, value))
    }

    pub fn flatten(&mut self, a: NodeId) -> NodeId {
        let n = self.values[a.0].len();
        let v = self.values[a.0].reshaped(&[n]);
        self.push(Op::Flatten(a), v)
    }

    /// Affine layer: `x [n] · weight [n, m] + bias [m]`.
    pub fn dense(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let sx = self.values[x.0].shape().to_vec();
        let sw = self.values[weight.0].shape().to_vec();
        let sb = self.values[bias.0].shape().to_vec();
        if sx.len() != 1 || sw.len() != 2 || sw[0] != sx[0] || sb != [sw[1]] {
            return Err(Error::ShapeMismatch {
                op: "dense",
                detail: format!("x {sx:?}, weight {sw:?}, bias {sb:?}"),
            });
        }
        let (n, m) = (sw[0], sw[1]);
        let xd = self.values[x.0].data();
        let wd = self.values[weight.0].data();
        let mut out = self.values[bias.0].data().to_vec();
        for i in 0..n {
            let xv = xd[i];
            if xv == 0.0 {
                continue;
            }
            let wrow = &wd[i * m..(i + 1) * m];
            for (o, &wv) in out.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
        Ok(self.push(Op::Dense { x, weight, bias }, Tensor::new(&[m], out)))
    }

    /// Scalar cross-entropy of softmax(logits) against an integer label.
    /// Computed with the usual max-shift so large logits stay finite.
    pub fn softmax_ce(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let s = self.values[logits.0].shape().to_vec();
        if s.len() != 1 || label >= s[0] {
            return Err(Error::ShapeMismatch {
                op: "softmax_ce",
                detail: format!("logits {s:?}, label {label}"),
            });
        }
        let z = self.values[logits.0].data();
        let zmax = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exps: Vec<f64> = z.iter().map(|&v| (v - zmax).exp()).collect();
        let total: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|&e| e / total).collect();
        let loss = total.ln() + zmax - z[label];
        Ok(self.push(
            Op::SoftmaxCe {
                logits,
                label,
                probs,
            },
            Tensor::scalar(loss),
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.values[a.0].sum());
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = &self.values[a.0];
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(Op::Mean(a), v)
    }

    fn accumulate(&mut self, id: NodeId, delta: Tensor) {
        match &mut self.grads[id.0] {
            Some(g) => g.add_scaled(&delta, 1.0),
            slot => *slot = Some(delta),
        }
    }

    /// Reverse sweep from a scalar loss; every contributing node ends up with
    /// an accumulated gradient readable via [`Graph::grad_at`]. Resets any
    /// gradients from a previous call first.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.values[loss.0].len() != 1 {
            return Err(Error::NonScalarLoss(self.values[loss.0].shape().to_vec()));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(Tensor::filled(self.values[loss.0].shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &Tensor) {
        // Ops only reference earlier nodes, so writes touch grads[j] with
        // j < i while grads[i] is parked at the call site.
        match &self.ops[i] {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.clone());
                self.accumulate(b, g.map(|v| -v));
            }
            Op::ScalarMul(a, c) => {
                let (a, c) = (*a, *c);
                self.accumulate(a, g.map(|v| c * v));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let da = g.zip_map(&self.values[b.0], |gv, bv| gv * bv);
                let db = g.zip_map(&self.values[a.0], |gv, av| gv * av);
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let sa = self.values[a.0].shape();
                let sb = self.values[b.0].shape();
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                let ad = self.values[a.0].data();
                let bd = self.values[b.0].data();
                let gd = g.data();
                // dA = G · Bᵀ
                let mut da = vec![0.0; n * k];
                for i2 in 0..n {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..m {
                            acc += gd[i2 * m + j] * bd[p * m + j];
                        }
                        da[i2 * k + p] = acc;
                    }
                }
                // dB = Aᵀ · G
                let mut db = vec![0.0; k * m];
                for p in 0..k {
                    for i2 in 0..n {
                        let av = ad[i2 * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        let grow = &gd[i2 * m..(i2 + 1) * m];
                        let drow = &mut db[p * m..(p + 1) * m];
                        for (d, &gv) in drow.iter_mut().zip(grow) {
                            *d += av * gv;
                        }
                    }
                }
                self.accumulate(a, Tensor::new(&[n, k], da));
                self.accumulate(b, Tensor::new(&[k, m], db));
            }
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
                pad_top,
                pad_left,
            } => {
                let (x, kernel, bias) = (*x, *kernel, *bias);
                let (stride, pad_top, pad_left) = (*stride, *pad_top, *pad_left);
                let sx = self.values[x.0].shape();
                let sk = self.values[kernel.0].shape();
                let (h, w, cin) = (sx[0], sx[1], sx[2]);
                let (kh, kw, cout) = (sk[0], sk[1], sk[3]);
                let so = self.values[i].shape();
                let (out_h, out_w) = (so[0], so[1]);
                let xd = self.values[x.0].data();
                let kd = self.values[kernel.0].data();
                let gd = g.data();

                let mut dx = vec![0.0; h * w * cin];
                let mut dk = vec![0.0; kh * kw * cin * cout];
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let obase = (oy * out_w + ox) * cout;
                        let grow = &gd[obase..obase + cout];
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad_top as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad_left as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xbase = (iy as usize * w + ix as usize) * cin;
                                for ic in 0..cin {
                                    let kbase = ((ky * kw + kx) * cin + ic) * cout;
                                    let krow = &kd[kbase..kbase + cout];
                                    let xv = xd[xbase + ic];
                                    let mut dxv = 0.0;
                                    let dkrow = &mut dk[kbase..kbase + cout];
                                    for ((&gv, &kv), dkv) in
                                        grow.iter().zip(krow).zip(dkrow.iter_mut())
                                    {
                                        dxv += gv * kv;
                                        *dkv += gv * xv;
                                    }
                                    dx[xbase + ic] += dxv;
                                }
                            }
                        }
                    }
                }
                self.accumulate(x, Tensor::new(&[h, w, cin], dx));
                self.accumulate(kernel, Tensor::new(&[kh, kw, cin, cout], dk));
                if let Some(b) = bias {
                    let mut db = vec![0.0; cout];
                    for row in gd.chunks_exact(cout) {
                        for (d, &gv) in db.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                    self.accumulate(b, Tensor::new(&[cout], db));
                }
            }
            Op::Relu(a) => {
                let a = *a;
                // Value > 0 passes the gradient; exactly 0 passes 0.
                let da = g.zip_map(&self.values[a.0], |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                self.accumulate(a, da);
            }
            Op::MaxPool2 { x, argmax } => {
                let x = *x;
                let mut dx = vec![0.0; self.values[x.0].len()];
                for (o, &src) in argmax.iter().enumerate() {
                    dx[src] += g.data()[o];
                }
                let shape = self.values[x.0].shape().to_vec();
                self.accumulate(x, Tensor::new(&shape, dx));
            }
            Op::Flatten(a) => {
                let a = *a;
                let shape = self.values[a.0].shape().to_vec();
                self.accumulate(a, g.reshaped(&shape));
            }
            Op::Dense { x, weight, bias } => {
                let (x, weight, bias) = (*x, *weight, *bias);
                let sw = self.values[weight.0].shape();
                let (n, m) = (sw[0], sw[1]);
                let xd = self.values[x.0].data();
                let wd = self.values[weight.0].data();
                let gd = g.data();
                let mut dx = vec![0.0; n];
                let mut dw = vec![0.0; n * m];
                for i2 in 0..n {
                    let wrow = &wd[i2 * m..(i2 + 1) * m];
                    let dwrow = &mut dw[i2 * m..(i2 + 1) * m];
                    let xv = xd[i2];
                    let mut acc = 0.0;
                    for ((&gv, &wv), dwv) in gd.iter().zip(wrow).zip(dwrow.iter_mut()) {
                        acc += gv * wv;
                        *dwv += gv * xv;
                    }
                    dx[i2] = acc;
                }
                self.accumulate(x, Tensor::new(&[n], dx));
                self.accumulate(weight, Tensor::new(&[n, m], dw));
                self.accumulate(bias, Tensor::new(&[m], gd.to_vec()));
            }
            Op::SoftmaxCe {
                logits,
                label,
                probs,
            } => {
                let (logits, label) = (*logits, *label);
                let g0 = g.data()[0];
                let dz: Vec<f64> = probs
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| g0 * (p - if j == label { 1.0 } else { 0.0 }))
                    .collect();
                let n = dz.len();
                self.accumulate(logits, Tensor::new(&[n], dz));
            }
            Op::Sum(a) => {
                let a = *a;
                let shape = self.values[a.0].shape().to_vec();
                self.accumulate(a, Tensor::filled(&shape, g.data()[0]));
            }
            Op::Mean(a) => {
                let a = *a;
                let n = self.values[a.0].len() as f64;
                let shape = self.values[a.0].shape().to_vec();
                self.accumulate(a, Tensor::filled(&shape, g.data()[0] / n));
            }
        }
    }

    /// Accumulated gradient of a node, available after [`Graph::backward`].
    pub fn grad_at(&self, id: NodeId) -> Result<&Tensor> {
        self.grads[id.0]
            .as_ref()
            .ok_or(Error::MissingGradient(id.0))
    }
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}
