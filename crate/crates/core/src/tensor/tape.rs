//! Operation tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and a record of
//! which nodes fed it. `backward` walks the nodes in reverse creation order,
//! which is automatically a reverse topological order, and applies each
//! operation's vector-Jacobian rule. Gradients accumulate by addition, so
//! shared sub-expressions and disjoint subgraphs behave correctly (leaves not
//! reachable from the loss keep a zero gradient).
//!
//! Argmax-style operations (max-pool, channel-wise max, global channel max)
//! route the upstream gradient only to the winning element; ties are broken
//! by the lowest row-major flat index so passes are deterministic.

use super::{Tensor, TensorError};

pub type ValueId = usize;

enum Op {
    Leaf,
    Conv2d { input: ValueId, kernels: ValueId, stride: usize, padding: usize },
    BiasAddChannels { input: ValueId, bias: ValueId },
    Relu { input: ValueId },
    MaxPool2 { input: ValueId },
    L2NormalizePatches { input: ValueId, epsilon: f64 },
    Transpose2 { input: ValueId },
    Reshape { input: ValueId },
    MatMul { a: ValueId, b: ValueId },
    Add { a: ValueId, b: ValueId },
    Mul { a: ValueId, b: ValueId },
    Scale { input: ValueId, factor: f64 },
    ChannelWiseMax { input: ValueId },
    GlobalMaxChannels { input: ValueId },
    LinearCombinations { cwm: ValueId, weights: ValueId },
    SumAxis { input: ValueId, axis: usize },
    SumAll { input: ValueId },
    ChannelSum { input: ValueId },
    Select { input: ValueId, index: usize },
    SoftmaxCrossEntropy { logits: ValueId, target: usize },
    NegL2Similarity { input: ValueId, prototypes: ValueId, epsilon: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recording tape. One tape per forward/backward pass; not shareable between
/// concurrent passes.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Gradient accumulated by the last `backward`. `None` if no gradient
    /// reached this node.
    pub fn grad(&self, id: ValueId) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    /// Gradient of a node, zeros if nothing flowed to it.
    pub fn grad_or_zeros(&self, id: ValueId) -> Vec<f64> {
        match self.grad(id) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.nodes[id].value.len()],
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> ValueId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, t: Tensor) -> ValueId {
        self.push(t, Op::Leaf)
    }

    // ----- operations ---------------------------------------------------

    /// 2-D cross-correlation: input [H,W,Cin] with kernels [Kh,Kw,Cin,Cout].
    pub fn conv2d(
        &mut self,
        input: ValueId,
        kernels: ValueId,
        stride: usize,
        padding: usize,
    ) -> Result<ValueId, TensorError> {
        let (x, k) = (self.value(input), self.value(kernels));
        if x.shape().len() != 3 || k.shape().len() != 4 {
            return Err(shape_err(
                "conv2d",
                format!("expected input [H,W,Cin] and kernels [Kh,Kw,Cin,Cout], got {:?} and {:?}", x.shape(), k.shape()),
            ));
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument { op: "conv2d", detail: "stride must be positive".into() });
        }
        let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kh, kw, kcin, cout) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
        if kcin != cin {
            return Err(shape_err("conv2d", format!("input has {} channels but kernels expect {}", cin, kcin)));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(shape_err(
                "conv2d",
                format!("kernel {}x{} larger than padded input {}x{}", kh, kw, h + 2 * padding, w + 2 * padding),
            ));
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let mut out = vec![0.0; oh * ow * cout];
        let (xd, kd) = (x.data(), k.data());
        for out_h in 0..oh {
            for out_w in 0..ow {
                let out_off = (out_h * ow + out_w) * cout;
                let acc = &mut out[out_off..out_off + cout];
                for dkh in 0..kh {
                    let ih = (out_h * stride + dkh) as isize - padding as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for dkw in 0..kw {
                        let iw = (out_w * stride + dkw) as isize - padding as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let in_off = (ih as usize * w + iw as usize) * cin;
                        for c in 0..cin {
                            let v = xd[in_off + c];
                            let k_off = ((dkh * kw + dkw) * cin + c) * cout;
                            let krow = &kd[k_off..k_off + cout];
                            for (a, kv) in acc.iter_mut().zip(krow) {
                                *a += v * kv;
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![oh, ow, cout], out)?;
        Ok(self.push(value, Op::Conv2d { input, kernels, stride, padding }))
    }

    /// Broadcast add of a per-channel bias: [H,W,C] + [C].
    pub fn bias_add_channels(&mut self, input: ValueId, bias: ValueId) -> Result<ValueId, TensorError> {
        let (x, b) = (self.value(input), self.value(bias));
        if x.shape().len() != 3 || b.shape().len() != 1 || b.shape()[0] != x.shape()[2] {
            return Err(shape_err(
                "bias_add_channels",
                format!("input {:?} with bias {:?}", x.shape(), b.shape()),
            ));
        }
        let c = b.len();
        let mut out = x.data().to_vec();
        for chunk in out.chunks_exact_mut(c) {
            for (o, bv) in chunk.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(value, Op::BiasAddChannels { input, bias }))
    }

    pub fn relu(&mut self, input: ValueId) -> ValueId {
        let x = self.value(input);
        let out: Vec<f64> = x.data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor { shape: x.shape().to_vec(), data: out }.into_checked();
        self.push(value, Op::Relu { input })
    }

    /// 2x2 max-pool with stride 2; odd trailing rows/columns are dropped.
    pub fn max_pool2(&mut self, input: ValueId) -> Result<ValueId, TensorError> {
        let x = self.value(input);
        if x.shape().len() != 3 {
            return Err(shape_err("max_pool2", format!("expected [H,W,C], got {:?}", x.shape())));
        }
        let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if h < 2 || w < 2 {
            return Err(shape_err("max_pool2", format!("spatial dims too small: {:?}", x.shape())));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0; oh * ow * c];
        for out_h in 0..oh {
            for out_w in 0..ow {
                for ch in 0..c {
                    let (_, v) = pool_argmax(x, out_h, out_w, ch);
                    out[(out_h * ow + out_w) * c + ch] = v;
                }
            }
        }
        let value = Tensor::new(vec![oh, ow, c], out)?;
        Ok(self.push(value, Op::MaxPool2 { input }))
    }

    /// Normalize each vector along the last axis: v -> v / max(||v||, epsilon).
    pub fn l2_normalize_patches(&mut self, input: ValueId, epsilon: f64) -> Result<ValueId, TensorError> {
        if epsilon <= 0.0 {
            return Err(TensorError::InvalidArgument {
                op: "l2_normalize_patches",
                detail: format!("epsilon must be positive, got {}", epsilon),
            });
        }
        let x = self.value(input);
        if x.shape().is_empty() {
            return Err(shape_err("l2_normalize_patches", "rank-0 tensor".into()));
        }
        let d = *x.shape().last().unwrap();
        let mut out = x.data().to_vec();
        for v in out.chunks_exact_mut(d) {
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let denom = norm.max(epsilon);
            for a in v.iter_mut() {
                *a /= denom;
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(value, Op::L2NormalizePatches { input, epsilon }))
    }

    /// Matrix transpose [R,C] -> [C,R].
    pub fn transpose2(&mut self, input: ValueId) -> Result<ValueId, TensorError> {
        let x = self.value(input);
        if x.shape().len() != 2 {
            return Err(shape_err("transpose2", format!("expected a matrix, got {:?}", x.shape())));
        }
        let (r, c) = (x.shape()[0], x.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x.data()[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], out)?;
        Ok(self.push(value, Op::Transpose2 { input }))
    }

    pub fn reshape(&mut self, input: ValueId, shape: Vec<usize>) -> Result<ValueId, TensorError> {
        let x = self.value(input);
        let n: usize = shape.iter().product();
        if n != x.len() {
            return Err(shape_err("reshape", format!("{:?} -> {:?}", x.shape(), shape)));
        }
        let value = Tensor::new(shape, x.data().to_vec())?;
        Ok(self.push(value, Op::Reshape { input }))
    }

    /// Matrix product [m,k] x [k,n] -> [m,n].
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ta.data()[i * k + p];
                let brow = &tb.data()[p * n..(p + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b }))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, input: ValueId, factor: f64) -> ValueId {
        let x = self.value(input);
        let out: Vec<f64> = x.data().iter().map(|v| v * factor).collect();
        let value = Tensor { shape: x.shape().to_vec(), data: out }.into_checked();
        self.push(value, Op::Scale { input, factor })
    }

    /// Keep each channel's maximum at its position, zero everywhere else.
    /// Input [H,W,N] -> output [H,W,N].
    pub fn channel_wise_max(&mut self, input: ValueId) -> Result<ValueId, TensorError> {
        let x = self.value(input);
        if x.shape().len() != 3 {
            return Err(shape_err("channel_wise_max", format!("expected [H,W,N], got {:?}", x.shape())));
        }
        let n = x.shape()[2];
        let mut out = vec![0.0; x.len()];
        for ch in 0..n {
            let (pos, v) = channel_argmax(x, ch);
            out[pos] = v;
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(value, Op::ChannelWiseMax { input }))
    }

    /// Per-channel global max: [H,W,N] -> [N].
    pub fn global_max_channels(&mut self, input: ValueId) -> Result<ValueId, TensorError> {
        let x = self.value(input);
        if x.shape().len() != 3 {
            return Err(shape_err("global_max_channels", format!("expected [H,W,N], got {:?}", x.shape())));
        }
        let n = x.shape()[2];
        let mut out = vec![0.0; n];
        for (ch, o) in out.iter_mut().enumerate() {
            let (_, v) = channel_argmax(x, ch);
            *o = v;
        }
        let value = Tensor::new(vec![n], out)?;
        Ok(self.push(value, Op::GlobalMaxChannels { input }))
    }

    /// Per-class linear maps over channels: cwm [H,W,N] with weights [K,M,N]
    /// -> [K,M,H,W].
    pub fn linear_combinations(&mut self, cwm: ValueId, weights: ValueId) -> Result<ValueId, TensorError> {
        let (x, wt) = (self.value(cwm), self.value(weights));
        if x.shape().len() != 3 || wt.shape().len() != 3 || wt.shape()[2] != x.shape()[2] {
            return Err(shape_err(
                "linear_combinations",
                format!("cwm {:?} with weights {:?}", x.shape(), wt.shape()),
            ));
        }
        let (h, w, n) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (k, m) = (wt.shape()[0], wt.shape()[1]);
        let mut out = vec![0.0; k * m * h * w];
        for ki in 0..k {
            for mi in 0..m {
                let wrow = &wt.data()[(ki * m + mi) * n..(ki * m + mi + 1) * n];
                let o_off = (ki * m + mi) * h * w;
                for hw in 0..h * w {
                    let xrow = &x.data()[hw * n..(hw + 1) * n];
                    out[o_off + hw] = dot(wrow, xrow);
                }
            }
        }
        let value = Tensor::new(vec![k, m, h, w], out)?;
        Ok(self.push(value, Op::LinearCombinations { cwm, weights }))
    }

    /// Sum over one axis, removing it from the shape.
    pub fn sum_axis(&mut self, input: ValueId, axis: usize) -> Result<ValueId, TensorError> {
        let x = self.value(input);
        if axis >= x.shape().len() {
            return Err(TensorError::InvalidArgument {
                op: "sum_axis",
                detail: format!("axis {} out of range for shape {:?}", axis, x.shape()),
            });
        }
        let (outer, alen, inner) = split_axis(x.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..alen {
                let src = &x.data()[(o * alen + a) * inner..(o * alen + a + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::SumAxis { input, axis }))
    }

    /// Sum of all elements -> scalar.
    pub fn sum_all(&mut self, input: ValueId) -> ValueId {
        let x = self.value(input);
        let value = Tensor::scalar(x.data().iter().sum());
        self.push(value, Op::SumAll { input })
    }

    /// Per-channel spatial sum: [C,H,W] -> [C].
    pub fn channel_sum(&mut self, input: ValueId) -> Result<ValueId, TensorError> {
        let x = self.value(input);
        if x.shape().len() != 3 {
            return Err(shape_err("channel_sum", format!("expected [C,H,W], got {:?}", x.shape())));
        }
        let (c, hw) = (x.shape()[0], x.shape()[1] * x.shape()[2]);
        let out: Vec<f64> = (0..c).map(|ci| x.data()[ci * hw..(ci + 1) * hw].iter().sum()).collect();
        let value = Tensor::new(vec![c], out)?;
        Ok(self.push(value, Op::ChannelSum { input }))
    }

    /// Pick one element by flat index -> scalar.
    pub fn select(&mut self, input: ValueId, index: usize) -> Result<ValueId, TensorError> {
        let x = self.value(input);
        if index >= x.len() {
            return Err(TensorError::InvalidArgument {
                op: "select",
                detail: format!("index {} out of range for {} elements", index, x.len()),
            });
        }
        let value = Tensor::scalar(x.data()[index]);
        Ok(self.push(value, Op::Select { input, index }))
    }

    /// Fused softmax + cross-entropy against a class index, stabilized with
    /// log-sum-exp. logits must be 1-D.
    pub fn softmax_cross_entropy(&mut self, logits: ValueId, target: usize) -> Result<ValueId, TensorError> {
        let x = self.value(logits);
        if x.shape().len() != 1 {
            return Err(shape_err("softmax_cross_entropy", format!("expected 1-D logits, got {:?}", x.shape())));
        }
        if target >= x.len() {
            return Err(TensorError::InvalidArgument {
                op: "softmax_cross_entropy",
                detail: format!("target {} out of range for {} classes", target, x.len()),
            });
        }
        let loss = log_sum_exp(x.data()) - x.data()[target];
        let value = Tensor::scalar(loss);
        Ok(self.push(value, Op::SoftmaxCrossEntropy { logits, target }))
    }

    /// ProtoPNet-style log-ratio similarity from squared L2 distances:
    /// out[h,w,i] = ln((d2+1)/(d2+eps)) with d2 = ||z_hw - p_i||^2.
    /// input [H,W,D], prototypes [N,D] -> [H,W,N].
    pub fn neg_l2_similarity(&mut self, input: ValueId, prototypes: ValueId, epsilon: f64) -> Result<ValueId, TensorError> {
        if epsilon <= 0.0 {
            return Err(TensorError::InvalidArgument {
                op: "neg_l2_similarity",
                detail: format!("epsilon must be positive, got {}", epsilon),
            });
        }
        let (x, p) = (self.value(input), self.value(prototypes));
        if x.shape().len() != 3 || p.shape().len() != 2 || p.shape()[1] != x.shape()[2] {
            return Err(shape_err(
                "neg_l2_similarity",
                format!("input {:?} with prototypes {:?}", x.shape(), p.shape()),
            ));
        }
        let (h, w, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let n = p.shape()[0];
        let mut out = vec![0.0; h * w * n];
        for hw in 0..h * w {
            let z = &x.data()[hw * d..(hw + 1) * d];
            for pi in 0..n {
                let proto = &p.data()[pi * d..(pi + 1) * d];
                let d2: f64 = z.iter().zip(proto).map(|(a, b)| (a - b) * (a - b)).sum();
                out[hw * n + pi] = ((d2 + 1.0) / (d2 + epsilon)).ln();
            }
        }
        let value = Tensor::new(vec![h, w, n], out)?;
        Ok(self.push(value, Op::NegL2Similarity { input, prototypes, epsilon }))
    }

    // ----- backward ------------------------------------------------------

    /// Accumulate d(loss)/d(node) for every node reachable from `loss`.
    pub fn backward(&mut self, loss: ValueId) -> Result<(), TensorError> {
        let lt = &self.nodes[loss].value;
        if !lt.is_scalar() {
            return Err(TensorError::NotScalar { op: "backward", shape: lt.shape().to_vec() });
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss] = Some(vec![1.0]);
        for id in (0..=loss).rev() {
            if self.grads[id].is_none() {
                continue;
            }
            self.backward_node(id);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: ValueId, delta: &[f64]) {
        match &mut self.grads[id] {
            Some(g) => {
                for (a, d) in g.iter_mut().zip(delta) {
                    *a += d;
                }
            }
            None => self.grads[id] = Some(delta.to_vec()),
        }
    }

    fn backward_node(&mut self, id: ValueId) {
        let upstream = self.grads[id].clone().expect("gradient present");
        match self.nodes[id].op {
            Op::Leaf => {}
            Op::Conv2d { input, kernels, stride, padding } => {
                let x = &self.nodes[input].value;
                let k = &self.nodes[kernels].value;
                let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (kh, kw, _, cout) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
                let out_shape = self.nodes[id].value.shape();
                let (oh, ow) = (out_shape[0], out_shape[1]);
                let mut dx = vec![0.0; x.len()];
                let mut dk = vec![0.0; k.len()];
                let (xd, kd) = (x.data(), k.data());
                for out_h in 0..oh {
                    for out_w in 0..ow {
                        let up = &upstream[(out_h * ow + out_w) * cout..(out_h * ow + out_w + 1) * cout];
                        for dkh in 0..kh {
                            let ih = (out_h * stride + dkh) as isize - padding as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for dkw in 0..kw {
                                let iw = (out_w * stride + dkw) as isize - padding as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                let in_off = (ih as usize * w + iw as usize) * cin;
                                for c in 0..cin {
                                    let k_off = ((dkh * kw + dkw) * cin + c) * cout;
                                    let krow = &kd[k_off..k_off + cout];
                                    dx[in_off + c] += dot(up, krow);
                                    let v = xd[in_off + c];
                                    let dkrow = &mut dk[k_off..k_off + cout];
                                    for (dkv, u) in dkrow.iter_mut().zip(up) {
                                        *dkv += v * u;
                                    }
                                }
                            }
                        }
                    }
                }
                self.accumulate(input, &dx);
                self.accumulate(kernels, &dk);
            }
            Op::BiasAddChannels { input, bias } => {
                let c = self.nodes[bias].value.len();
                let mut db = vec![0.0; c];
                for chunk in upstream.chunks_exact(c) {
                    for (d, u) in db.iter_mut().zip(chunk) {
                        *d += u;
                    }
                }
                self.accumulate(input, &upstream);
                self.accumulate(bias, &db);
            }
            Op::Relu { input } => {
                let x = self.nodes[input].value.data();
                let dx: Vec<f64> = x.iter().zip(&upstream).map(|(v, u)| if *v > 0.0 { *u } else { 0.0 }).collect();
                self.accumulate(input, &dx);
            }
            Op::MaxPool2 { input } => {
                let x = &self.nodes[input].value;
                let out_shape = self.nodes[id].value.shape();
                let (oh, ow, c) = (out_shape[0], out_shape[1], out_shape[2]);
                let mut dx = vec![0.0; x.len()];
                for out_h in 0..oh {
                    for out_w in 0..ow {
                        for ch in 0..c {
                            let (pos, _) = pool_argmax(x, out_h, out_w, ch);
                            dx[pos] += upstream[(out_h * ow + out_w) * c + ch];
                        }
                    }
                }
                self.accumulate(input, &dx);
            }
            Op::L2NormalizePatches { input, epsilon } => {
                let x = &self.nodes[input].value;
                let y = &self.nodes[id].value;
                let d = *x.shape().last().unwrap();
                let mut dx = vec![0.0; x.len()];
                for (i, xv) in x.data().chunks_exact(d).enumerate() {
                    let yv = &y.data()[i * d..(i + 1) * d];
                    let up = &upstream[i * d..(i + 1) * d];
                    let norm = xv.iter().map(|a| a * a).sum::<f64>().sqrt();
                    let dst = &mut dx[i * d..(i + 1) * d];
                    if norm > epsilon {
                        let proj = dot(yv, up);
                        for j in 0..d {
                            dst[j] = (up[j] - yv[j] * proj) / norm;
                        }
                    } else {
                        for j in 0..d {
                            dst[j] = up[j] / epsilon;
                        }
                    }
                }
                self.accumulate(input, &dx);
            }
            Op::Transpose2 { input } => {
                let shape = self.nodes[input].value.shape();
                let (r, c) = (shape[0], shape[1]);
                let mut dx = vec![0.0; r * c];
                for i in 0..c {
                    for j in 0..r {
                        dx[j * c + i] = upstream[i * r + j];
                    }
                }
                self.accumulate(input, &dx);
            }
            Op::Reshape { input } => {
                self.accumulate(input, &upstream);
            }
            Op::MatMul { a, b } => {
                let ta = &self.nodes[a].value;
                let tb = &self.nodes[b].value;
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let up = &upstream[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &tb.data()[p * n..(p + 1) * n];
                        da[i * k + p] = dot(up, brow);
                        let av = ta.data()[i * k + p];
                        let dbrow = &mut db[p * n..(p + 1) * n];
                        for (dv, u) in dbrow.iter_mut().zip(up) {
                            *dv += av * u;
                        }
                    }
                }
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Add { a, b } => {
                self.accumulate(a, &upstream);
                self.accumulate(b, &upstream);
            }
            Op::Mul { a, b } => {
                let da: Vec<f64> = self.nodes[b].value.data().iter().zip(&upstream).map(|(v, u)| v * u).collect();
                let db: Vec<f64> = self.nodes[a].value.data().iter().zip(&upstream).map(|(v, u)| v * u).collect();
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Scale { input, factor } => {
                let dx: Vec<f64> = upstream.iter().map(|u| u * factor).collect();
                self.accumulate(input, &dx);
            }
            Op::ChannelWiseMax { input } => {
                let x = &self.nodes[input].value;
                let n = x.shape()[2];
                let mut dx = vec![0.0; x.len()];
                for ch in 0..n {
                    let (pos, _) = channel_argmax(x, ch);
                    dx[pos] += upstream[pos];
                }
                self.accumulate(input, &dx);
            }
            Op::GlobalMaxChannels { input } => {
                let x = &self.nodes[input].value;
                let n = x.shape()[2];
                let mut dx = vec![0.0; x.len()];
                for (ch, up) in upstream.iter().enumerate().take(n) {
                    let (pos, _) = channel_argmax(x, ch);
                    dx[pos] += up;
                }
                self.accumulate(input, &dx);
            }
            Op::LinearCombinations { cwm, weights } => {
                let x = &self.nodes[cwm].value;
                let wt = &self.nodes[weights].value;
                let (h, w, n) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (k, m) = (wt.shape()[0], wt.shape()[1]);
                let mut dx = vec![0.0; x.len()];
                let mut dw = vec![0.0; wt.len()];
                for ki in 0..k {
                    for mi in 0..m {
                        let wrow = &wt.data()[(ki * m + mi) * n..(ki * m + mi + 1) * n];
                        let o_off = (ki * m + mi) * h * w;
                        let dwrow_off = (ki * m + mi) * n;
                        for hw in 0..h * w {
                            let u = upstream[o_off + hw];
                            if u == 0.0 {
                                continue;
                            }
                            let xrow = &x.data()[hw * n..(hw + 1) * n];
                            let dxrow = &mut dx[hw * n..(hw + 1) * n];
                            for j in 0..n {
                                dxrow[j] += u * wrow[j];
                                dw[dwrow_off + j] += u * xrow[j];
                            }
                        }
                    }
                }
                self.accumulate(cwm, &dx);
                self.accumulate(weights, &dw);
            }
            Op::SumAxis { input, axis } => {
                let shape = self.nodes[input].value.shape().to_vec();
                let (outer, alen, inner) = split_axis(&shape, axis);
                let mut dx = vec![0.0; self.nodes[input].value.len()];
                for o in 0..outer {
                    let up = &upstream[o * inner..(o + 1) * inner];
                    for a in 0..alen {
                        let dst = &mut dx[(o * alen + a) * inner..(o * alen + a + 1) * inner];
                        for (d, u) in dst.iter_mut().zip(up) {
                            *d += u;
                        }
                    }
                }
                self.accumulate(input, &dx);
            }
            Op::SumAll { input } => {
                let dx = vec![upstream[0]; self.nodes[input].value.len()];
                self.accumulate(input, &dx);
            }
            Op::ChannelSum { input } => {
                let shape = self.nodes[input].value.shape();
                let (c, hw) = (shape[0], shape[1] * shape[2]);
                let mut dx = vec![0.0; c * hw];
                for ci in 0..c {
                    let u = upstream[ci];
                    for d in dx[ci * hw..(ci + 1) * hw].iter_mut() {
                        *d = u;
                    }
                }
                self.accumulate(input, &dx);
            }
            Op::Select { input, index } => {
                let mut dx = vec![0.0; self.nodes[input].value.len()];
                dx[index] = upstream[0];
                self.accumulate(input, &dx);
            }
            Op::SoftmaxCrossEntropy { logits, target } => {
                let x = self.nodes[logits].value.data();
                let u = upstream[0];
                let lse = log_sum_exp(x);
                let dx: Vec<f64> = x
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let p = (v - lse).exp();
                        u * (p - if i == target { 1.0 } else { 0.0 })
                    })
                    .collect();
                self.accumulate(logits, &dx);
            }
            Op::NegL2Similarity { input, prototypes, epsilon } => {
                let x = &self.nodes[input].value;
                let p = &self.nodes[prototypes].value;
                let d = x.shape()[2];
                let n = p.shape()[0];
                let hw_total = x.shape()[0] * x.shape()[1];
                let mut dx = vec![0.0; x.len()];
                let mut dp = vec![0.0; p.len()];
                for hw in 0..hw_total {
                    let z = &x.data()[hw * d..(hw + 1) * d];
                    for pi in 0..n {
                        let u = upstream[hw * n + pi];
                        if u == 0.0 {
                            continue;
                        }
                        let proto = &p.data()[pi * d..(pi + 1) * d];
                        let d2: f64 = z.iter().zip(proto).map(|(a, b)| (a - b) * (a - b)).sum();
                        // d/d(d2) of ln((d2+1)/(d2+eps))
                        let coeff = u * (1.0 / (d2 + 1.0) - 1.0 / (d2 + epsilon));
                        let dzrow = &mut dx[hw * d..(hw + 1) * d];
                        let dprow = &mut dp[pi * d..(pi + 1) * d];
                        for j in 0..d {
                            let diff = 2.0 * (z[j] - proto[j]);
                            dzrow[j] += coeff * diff;
                            dprow[j] -= coeff * diff;
                        }
                    }
                }
                self.accumulate(input, &dx);
                self.accumulate(prototypes, &dp);
            }
        }
    }
}

impl Tensor {
    fn into_checked(self) -> Tensor {
        debug_assert_eq!(self.shape().iter().product::<usize>(), self.len());
        self
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Argmax of a 2x2 pool window; ties keep the lowest flat index.
fn pool_argmax(x: &Tensor, out_h: usize, out_w: usize, ch: usize) -> (usize, f64) {
    let (w, c) = (x.shape()[1], x.shape()[2]);
    let mut best_pos = 0;
    let mut best = f64::NEG_INFINITY;
    for dh in 0..2 {
        for dw in 0..2 {
            let pos = ((out_h * 2 + dh) * w + (out_w * 2 + dw)) * c + ch;
            let v = x.data()[pos];
            if v > best {
                best = v;
                best_pos = pos;
            }
        }
    }
    (best_pos, best)
}

/// Argmax over the spatial grid of one channel; ties keep the lowest
/// row-major flat index.
fn channel_argmax(x: &Tensor, ch: usize) -> (usize, f64) {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut best_pos = ch;
    let mut best = f64::NEG_INFINITY;
    for hw in 0..h * w {
        let pos = hw * c + ch;
        let v = x.data()[pos];
        if v > best {
            best = v;
            best_pos = pos;
        }
    }
    (best_pos, best)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
