//! Define-by-run tape: every operation appends a node, so node order is a
//! topological order by construction. A tape records one forward pass and is
//! rebuilt per pass; `backward` walks the node list in reverse exactly once.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type NodeId = usize;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Debug)]
enum OpKind {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddScalar(NodeId),
    MulScalar(NodeId, f64),
    Relu(NodeId),
    Abs(NodeId),
    Softplus(NodeId),
    Sqrt(NodeId),
    Matmul(NodeId, NodeId),
    Softmax {
        input: NodeId,
        axis: usize,
    },
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        stride: usize,
        padding: usize,
    },
    DepthwiseConv2d {
        input: NodeId,
        kernels: NodeId,
        stride: usize,
        padding: usize,
    },
    TransposedConv2d {
        input: NodeId,
        kernels: NodeId,
        stride: usize,
    },
    DepthwiseTransposedConv2d {
        input: NodeId,
        kernels: NodeId,
        stride: usize,
    },
    Crop2d {
        input: NodeId,
        y0: usize,
        x0: usize,
    },
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    Reshape(NodeId),
    Transpose(NodeId),
    GatherRows {
        input: NodeId,
        indices: Arc<Vec<usize>>,
    },
    ScatterRows {
        input: NodeId,
        indices: Arc<Vec<usize>>,
    },
    SumAxis {
        input: NodeId,
        axis: usize,
    },
    SumAll(NodeId),
    MaxAll {
        input: NodeId,
        argmax: usize,
    },
}

#[derive(Debug)]
struct Node {
    op: OpKind,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    needs_grad: bool,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    /// Test hook: name of an op whose backward rule is deliberately corrupted,
    /// used by the self-check suite's mutation test.
    corrupt_backward: Option<String>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            corrupt_backward: None,
        }
    }

    #[doc(hidden)]
    pub fn set_backward_corruption(&mut self, op_name: &str) {
        self.corrupt_backward = Some(op_name.to_string());
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Register a leaf whose gradient will be reported by `backward`.
    pub fn param(&mut self, t: &Tensor) -> Tensor {
        let id = self.push_node(OpKind::Leaf, t.shape().to_vec(), t.data_arc(), true);
        Tensor::linked(t.shape().to_vec(), t.data_arc(), true, self.id, id)
    }

    /// Node id for an operand, registering plain tensors as constant leaves.
    fn operand(&mut self, t: &Tensor) -> Result<NodeId> {
        match t.tape_node() {
            Some((tape_id, node)) => {
                if tape_id != self.id {
                    return Err(Error::Contract(
                        "tensor belongs to a different tape".into(),
                    ));
                }
                Ok(node)
            }
            None => Ok(self.push_node(OpKind::Leaf, t.shape().to_vec(), t.data_arc(), false)),
        }
    }

    fn push_node(
        &mut self,
        op: OpKind,
        shape: Vec<usize>,
        data: Arc<Vec<f64>>,
        needs_grad: bool,
    ) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            shape,
            data,
            needs_grad,
        });
        id
    }

    fn emit(&mut self, op: OpKind, shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite value produced by {}",
                op_name(&op)
            )));
        }
        let needs_grad = op_inputs(&op).iter().any(|&i| self.nodes[i].needs_grad);
        let data = Arc::new(data);
        let id = self.push_node(op, shape.clone(), Arc::clone(&data), needs_grad);
        Ok(Tensor::linked(shape, data, needs_grad, self.id, id))
    }

    fn node_data(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].data
    }

    fn node_shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    // ── Elementwise ──────────────────────────────────────────────────

    /// Shapes must be equal, or one operand must be a single-element tensor
    /// (broadcast as a scalar).
    fn binary_shapes(a: &Tensor, b: &Tensor, what: &str) -> Result<Vec<usize>> {
        if a.shape() == b.shape() {
            Ok(a.shape().to_vec())
        } else if b.len() == 1 {
            Ok(a.shape().to_vec())
        } else if a.len() == 1 {
            Ok(b.shape().to_vec())
        } else {
            Err(Error::Dim(format!(
                "{what}: shapes {:?} and {:?} are not broadcast-compatible",
                a.shape(),
                b.shape()
            )))
        }
    }

    fn binary(
        &mut self,
        a: &Tensor,
        b: &Tensor,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(NodeId, NodeId) -> OpKind,
    ) -> Result<Tensor> {
        let shape = Self::binary_shapes(a, b, what)?;
        let data = broadcast_zip(a.data(), b.data(), &f);
        let an = self.operand(a)?;
        let bn = self.operand(b)?;
        self.emit(op(an, bn), shape, data)
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, "add", |x, y| x + y, OpKind::Add)
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, "sub", |x, y| x - y, OpKind::Sub)
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, "mul", |x, y| x * y, OpKind::Mul)
    }

    pub fn div(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if b.data().iter().any(|&v| v == 0.0) {
            return Err(Error::Domain("division by exact zero".into()));
        }
        self.binary(a, b, "div", |x, y| x / y, OpKind::Div)
    }

    pub fn add_scalar(&mut self, a: &Tensor, s: f64) -> Result<Tensor> {
        let data = a.data().iter().map(|&x| x + s).collect();
        let an = self.operand(a)?;
        self.emit(OpKind::AddScalar(an), a.shape().to_vec(), data)
    }

    pub fn mul_scalar(&mut self, a: &Tensor, s: f64) -> Result<Tensor> {
        let data = a.data().iter().map(|&x| x * s).collect();
        let an = self.operand(a)?;
        self.emit(OpKind::MulScalar(an, s), a.shape().to_vec(), data)
    }

    pub fn div_scalar(&mut self, a: &Tensor, s: f64) -> Result<Tensor> {
        if s == 0.0 {
            return Err(Error::Domain("division by exact zero".into()));
        }
        self.mul_scalar(a, 1.0 / s)
    }

    pub fn neg(&mut self, a: &Tensor) -> Result<Tensor> {
        self.mul_scalar(a, -1.0)
    }

    pub fn relu(&mut self, a: &Tensor) -> Result<Tensor> {
        let data = a.data().iter().map(|&x| x.max(0.0)).collect();
        let an = self.operand(a)?;
        self.emit(OpKind::Relu(an), a.shape().to_vec(), data)
    }

    pub fn abs(&mut self, a: &Tensor) -> Result<Tensor> {
        let data = a.data().iter().map(|&x| x.abs()).collect();
        let an = self.operand(a)?;
        self.emit(OpKind::Abs(an), a.shape().to_vec(), data)
    }

    /// Numerically stable ln(1 + e^x).
    pub fn softplus(&mut self, a: &Tensor) -> Result<Tensor> {
        let data = a
            .data()
            .iter()
            .map(|&x| x.max(0.0) + (-x.abs()).exp().ln_1p())
            .collect();
        let an = self.operand(a)?;
        self.emit(OpKind::Softplus(an), a.shape().to_vec(), data)
    }

    pub fn sqrt(&mut self, a: &Tensor) -> Result<Tensor> {
        if a.data().iter().any(|&v| v < 0.0) {
            return Err(Error::Domain("sqrt of negative value".into()));
        }
        let data = a.data().iter().map(|&x| x.sqrt()).collect();
        let an = self.operand(a)?;
        self.emit(OpKind::Sqrt(an), a.shape().to_vec(), data)
    }

    // ── Linear algebra ───────────────────────────────────────────────

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.rank() != 2 || b.rank() != 2 {
            return Err(Error::Dim(format!(
                "matmul needs 2-D operands, got {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (k2, n) = (b.shape()[0], b.shape()[1]);
        if k != k2 {
            return Err(Error::Dim(format!(
                "matmul inner dimensions disagree: {k} vs {k2}"
            )));
        }
        let data = matmul_raw(a.data(), b.data(), m, k, n);
        let an = self.operand(a)?;
        let bn = self.operand(b)?;
        self.emit(OpKind::Matmul(an, bn), vec![m, n], data)
    }

    pub fn softmax(&mut self, a: &Tensor, axis: usize) -> Result<Tensor> {
        if axis >= a.rank() {
            return Err(Error::Dim(format!(
                "softmax axis {axis} out of range for shape {:?}",
                a.shape()
            )));
        }
        let mut data = a.data().to_vec();
        for_each_lane(a.shape(), axis, |base, stride, len| {
            let mut max = f64::NEG_INFINITY;
            for l in 0..len {
                max = max.max(data[base + l * stride]);
            }
            let mut sum = 0.0;
            for l in 0..len {
                let e = (data[base + l * stride] - max).exp();
                data[base + l * stride] = e;
                sum += e;
            }
            for l in 0..len {
                data[base + l * stride] /= sum;
            }
        });
        let an = self.operand(a)?;
        self.emit(OpKind::Softmax { input: an, axis }, a.shape().to_vec(), data)
    }

    // ── Convolutions ─────────────────────────────────────────────────

    /// Cross-correlation (no kernel flip) of `input` `[C_in, H, W]` with
    /// `kernels` `[C_out, C_in, kh, kw]`.
    pub fn conv2d(
        &mut self,
        input: &Tensor,
        kernels: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        if input.rank() != 3 || kernels.rank() != 4 {
            return Err(Error::Dim(format!(
                "conv2d expects [C,H,W] input and [Co,Ci,kh,kw] kernels, got {:?} / {:?}",
                input.shape(),
                kernels.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Dim("conv2d stride must be >= 1".into()));
        }
        let (cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (cout, cin2, kh, kw) = (
            kernels.shape()[0],
            kernels.shape()[1],
            kernels.shape()[2],
            kernels.shape()[3],
        );
        if cin != cin2 {
            return Err(Error::Dim(format!(
                "conv2d channel mismatch: input {cin}, kernels {cin2}"
            )));
        }
        let (oh, ow) = conv_out_size(h, w, kh, kw, stride, padding)?;
        let data = conv2d_raw(
            input.data(),
            cin,
            h,
            w,
            kernels.data(),
            cout,
            kh,
            kw,
            stride,
            padding,
            oh,
            ow,
        );
        let an = self.operand(input)?;
        let kn = self.operand(kernels)?;
        self.emit(
            OpKind::Conv2d {
                input: an,
                kernels: kn,
                stride,
                padding,
            },
            vec![cout, oh, ow],
            data,
        )
    }

    /// Per-channel spatial convolution: `input` `[C, H, W]`, `kernels`
    /// `[C, kh, kw]`, one kernel per channel.
    pub fn depthwise_conv2d(
        &mut self,
        input: &Tensor,
        kernels: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        if input.rank() != 3 || kernels.rank() != 3 {
            return Err(Error::Dim(format!(
                "depthwise_conv2d expects [C,H,W] input and [C,kh,kw] kernels, got {:?} / {:?}",
                input.shape(),
                kernels.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Dim("depthwise_conv2d stride must be >= 1".into()));
        }
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        if kernels.shape()[0] != c {
            return Err(Error::Dim(format!(
                "depthwise_conv2d channel mismatch: input {c}, kernels {}",
                kernels.shape()[0]
            )));
        }
        let (kh, kw) = (kernels.shape()[1], kernels.shape()[2]);
        let (oh, ow) = conv_out_size(h, w, kh, kw, stride, padding)?;
        let mut data = vec![0.0; c * oh * ow];
        for ch in 0..c {
            let inp = &input.data()[ch * h * w..(ch + 1) * h * w];
            let ker = &kernels.data()[ch * kh * kw..(ch + 1) * kh * kw];
            let out = &mut data[ch * oh * ow..(ch + 1) * oh * ow];
            plane_conv(inp, h, w, ker, kh, kw, stride, padding, out, oh, ow);
        }
        let an = self.operand(input)?;
        let kn = self.operand(kernels)?;
        self.emit(
            OpKind::DepthwiseConv2d {
                input: an,
                kernels: kn,
                stride,
                padding,
            },
            vec![c, oh, ow],
            data,
        )
    }

    /// Transposed convolution: `input` `[C_in, H, W]`, `kernels`
    /// `[C_in, C_out, kh, kw]`; output is `[(H-1)s+kh, (W-1)s+kw]` spatially.
    pub fn transposed_conv2d(
        &mut self,
        input: &Tensor,
        kernels: &Tensor,
        stride: usize,
    ) -> Result<Tensor> {
        if input.rank() != 3 || kernels.rank() != 4 {
            return Err(Error::Dim(format!(
                "transposed_conv2d expects [C,H,W] input and [Ci,Co,kh,kw] kernels, got {:?} / {:?}",
                input.shape(),
                kernels.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Dim("transposed_conv2d stride must be >= 1".into()));
        }
        let (cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (cin2, cout, kh, kw) = (
            kernels.shape()[0],
            kernels.shape()[1],
            kernels.shape()[2],
            kernels.shape()[3],
        );
        if cin != cin2 {
            return Err(Error::Dim(format!(
                "transposed_conv2d channel mismatch: input {cin}, kernels {cin2}"
            )));
        }
        let oh = (h - 1) * stride + kh;
        let ow = (w - 1) * stride + kw;
        let mut data = vec![0.0; cout * oh * ow];
        for ci in 0..cin {
            for co in 0..cout {
                let ker = &kernels.data()
                    [(ci * cout + co) * kh * kw..(ci * cout + co + 1) * kh * kw];
                for iy in 0..h {
                    for ix in 0..w {
                        let v = input.data()[ci * h * w + iy * w + ix];
                        if v == 0.0 {
                            continue;
                        }
                        for ky in 0..kh {
                            let oy = iy * stride + ky;
                            for kx in 0..kw {
                                let ox = ix * stride + kx;
                                data[co * oh * ow + oy * ow + ox] += v * ker[ky * kw + kx];
                            }
                        }
                    }
                }
            }
        }
        let an = self.operand(input)?;
        let kn = self.operand(kernels)?;
        self.emit(
            OpKind::TransposedConv2d {
                input: an,
                kernels: kn,
                stride,
            },
            vec![cout, oh, ow],
            data,
        )
    }

    /// Per-channel transposed convolution with `kernels` `[C, kh, kw]`.
    pub fn depthwise_transposed_conv2d(
        &mut self,
        input: &Tensor,
        kernels: &Tensor,
        stride: usize,
    ) -> Result<Tensor> {
        if input.rank() != 3 || kernels.rank() != 3 {
            return Err(Error::Dim(format!(
                "depthwise_transposed_conv2d expects [C,H,W] and [C,kh,kw], got {:?} / {:?}",
                input.shape(),
                kernels.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Dim("stride must be >= 1".into()));
        }
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        if kernels.shape()[0] != c {
            return Err(Error::Dim(format!(
                "depthwise_transposed_conv2d channel mismatch: input {c}, kernels {}",
                kernels.shape()[0]
            )));
        }
        let (kh, kw) = (kernels.shape()[1], kernels.shape()[2]);
        let oh = (h - 1) * stride + kh;
        let ow = (w - 1) * stride + kw;
        let mut data = vec![0.0; c * oh * ow];
        for ch in 0..c {
            let ker = &kernels.data()[ch * kh * kw..(ch + 1) * kh * kw];
            for iy in 0..h {
                for ix in 0..w {
                    let v = input.data()[ch * h * w + iy * w + ix];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            data[ch * oh * ow + (iy * stride + ky) * ow + (ix * stride + kx)] +=
                                v * ker[ky * kw + kx];
                        }
                    }
                }
            }
        }
        let an = self.operand(input)?;
        let kn = self.operand(kernels)?;
        self.emit(
            OpKind::DepthwiseTransposedConv2d {
                input: an,
                kernels: kn,
                stride,
            },
            vec![c, oh, ow],
            data,
        )
    }

    /// Spatial crop of a `[C, H, W]` tensor starting at `(y0, x0)`.
    pub fn crop2d(
        &mut self,
        input: &Tensor,
        y0: usize,
        x0: usize,
        out_h: usize,
        out_w: usize,
    ) -> Result<Tensor> {
        if input.rank() != 3 {
            return Err(Error::Dim("crop2d expects a [C,H,W] tensor".into()));
        }
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        if y0 + out_h > h || x0 + out_w > w {
            return Err(Error::Dim(format!(
                "crop2d region {y0}+{out_h} x {x0}+{out_w} exceeds {h}x{w}"
            )));
        }
        let mut data = vec![0.0; c * out_h * out_w];
        for ch in 0..c {
            for y in 0..out_h {
                for x in 0..out_w {
                    data[ch * out_h * out_w + y * out_w + x] =
                        input.data()[ch * h * w + (y0 + y) * w + (x0 + x)];
                }
            }
        }
        let an = self.operand(input)?;
        self.emit(
            OpKind::Crop2d {
                input: an,
                y0,
                x0,
            },
            vec![c, out_h, out_w],
            data,
        )
    }

    // ── Shape manipulation ───────────────────────────────────────────

    pub fn concat(&mut self, tensors: &[&Tensor], axis: usize) -> Result<Tensor> {
        if tensors.is_empty() {
            return Err(Error::Dim("concat of zero tensors".into()));
        }
        let rank = tensors[0].rank();
        if axis >= rank {
            return Err(Error::Dim(format!("concat axis {axis} out of range")));
        }
        for t in tensors {
            if t.rank() != rank {
                return Err(Error::Dim("concat rank mismatch".into()));
            }
            for d in 0..rank {
                if d != axis && t.shape()[d] != tensors[0].shape()[d] {
                    return Err(Error::Dim(format!(
                        "concat non-axis dimension mismatch: {:?} vs {:?}",
                        t.shape(),
                        tensors[0].shape()
                    )));
                }
            }
        }
        let mut shape = tensors[0].shape().to_vec();
        shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = vec![0.0; shape.iter().product()];
        let out_block = shape[axis] * inner;
        for o in 0..outer {
            let mut off = 0;
            for t in tensors {
                let block = t.shape()[axis] * inner;
                let src = &t.data()[o * block..(o + 1) * block];
                data[o * out_block + off..o * out_block + off + block].copy_from_slice(src);
                off += block;
            }
        }
        let inputs: Result<Vec<NodeId>> = tensors.iter().map(|t| self.operand(t)).collect();
        self.emit(
            OpKind::Concat {
                inputs: inputs?,
                axis,
            },
            shape,
            data,
        )
    }

    pub fn reshape(&mut self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != a.len() {
            return Err(Error::Dim(format!(
                "reshape {:?} -> {:?} changes element count",
                a.shape(),
                shape
            )));
        }
        let an = self.operand(a)?;
        // Shares the data; only the shape changes.
        let data = a.data_arc();
        let needs_grad = self.nodes[an].needs_grad;
        let id = self.push_node(
            OpKind::Reshape(an),
            shape.to_vec(),
            Arc::clone(&data),
            needs_grad,
        );
        Ok(Tensor::linked(
            shape.to_vec(),
            data,
            needs_grad,
            self.id,
            id,
        ))
    }

    pub fn transpose(&mut self, a: &Tensor) -> Result<Tensor> {
        if a.rank() != 2 {
            return Err(Error::Dim(format!(
                "transpose expects a 2-D tensor, got {:?}",
                a.shape()
            )));
        }
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = a.data()[i * c + j];
            }
        }
        let an = self.operand(a)?;
        self.emit(OpKind::Transpose(an), vec![c, r], data)
    }

    /// Select rows of a 2-D tensor; backward scatter-adds into the source.
    pub fn gather_rows(&mut self, a: &Tensor, indices: &[usize]) -> Result<Tensor> {
        if a.rank() != 2 {
            return Err(Error::Dim("gather_rows expects a 2-D tensor".into()));
        }
        let (r, c) = (a.shape()[0], a.shape()[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::Index(format!(
                "gather_rows index {bad} out of range for {r} rows"
            )));
        }
        let mut data = vec![0.0; indices.len() * c];
        for (k, &i) in indices.iter().enumerate() {
            data[k * c..(k + 1) * c].copy_from_slice(&a.data()[i * c..(i + 1) * c]);
        }
        let an = self.operand(a)?;
        self.emit(
            OpKind::GatherRows {
                input: an,
                indices: Arc::new(indices.to_vec()),
            },
            vec![indices.len(), c],
            data,
        )
    }

    /// Adjoint of `gather_rows`: rows of `a` are added into `rows` output
    /// rows at `indices`; duplicate indices accumulate, untouched rows are 0.
    pub fn scatter_rows(&mut self, a: &Tensor, indices: &[usize], rows: usize) -> Result<Tensor> {
        if a.rank() != 2 {
            return Err(Error::Dim("scatter_rows expects a 2-D tensor".into()));
        }
        let (n, c) = (a.shape()[0], a.shape()[1]);
        if indices.len() != n {
            return Err(Error::Dim(format!(
                "scatter_rows: {} indices for {n} rows",
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Index(format!(
                "scatter_rows index {bad} out of range for {rows} rows"
            )));
        }
        let mut data = vec![0.0; rows * c];
        for (k, &i) in indices.iter().enumerate() {
            for j in 0..c {
                data[i * c + j] += a.data()[k * c + j];
            }
        }
        let an = self.operand(a)?;
        self.emit(
            OpKind::ScatterRows {
                input: an,
                indices: Arc::new(indices.to_vec()),
            },
            vec![rows, c],
            data,
        )
    }

    // ── Reductions ───────────────────────────────────────────────────

    pub fn sum_axis(&mut self, a: &Tensor, axis: usize) -> Result<Tensor> {
        if axis >= a.rank() {
            return Err(Error::Dim(format!("sum_axis axis {axis} out of range")));
        }
        let mut shape: Vec<usize> = a.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let mut data = vec![0.0; shape.iter().product()];
        let inner: usize = a.shape()[axis + 1..].iter().product();
        let lane = a.shape()[axis];
        let outer: usize = a.shape()[..axis].iter().product();
        for o in 0..outer {
            for l in 0..lane {
                for i in 0..inner {
                    data[o * inner + i] += a.data()[(o * lane + l) * inner + i];
                }
            }
        }
        let an = self.operand(a)?;
        self.emit(OpKind::SumAxis { input: an, axis }, shape, data)
    }

    pub fn sum_all(&mut self, a: &Tensor) -> Result<Tensor> {
        let s: f64 = a.data().iter().sum();
        let an = self.operand(a)?;
        self.emit(OpKind::SumAll(an), vec![1], vec![s])
    }

    /// Maximum over all elements; gradient flows to the first argmax.
    pub fn max_all(&mut self, a: &Tensor) -> Result<Tensor> {
        let mut argmax = 0;
        let mut max = a.data()[0];
        for (i, &v) in a.data().iter().enumerate() {
            if v > max {
                max = v;
                argmax = i;
            }
        }
        let an = self.operand(a)?;
        self.emit(OpKind::MaxAll { input: an, argmax }, vec![1], vec![max])
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse-topological gradient accumulation from a scalar loss.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        let (tape_id, root) = loss
            .tape_node()
            .ok_or_else(|| Error::Contract("loss tensor is not on a tape".into()))?;
        if tape_id != self.id {
            return Err(Error::Contract("loss belongs to a different tape".into()));
        }
        if loss.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(vec![1.0]);
        for i in (0..=root).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = grads[i].take().unwrap();
            self.propagate(i, &g, &mut grads);
            // Leaves keep their accumulated gradient as the result.
            if matches!(self.nodes[i].op, OpKind::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients {
            tape_id: self.id,
            grads,
        })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    fn corrupted(&self, name: &str) -> bool {
        self.corrupt_backward.as_deref() == Some(name)
    }

    #[allow(clippy::too_many_lines)]
    fn propagate(&self, id: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            OpKind::Leaf => {}

            OpKind::Add(a, b) => {
                self.acc_broadcast(grads, *a, g, |_, gi| gi);
                self.acc_broadcast(grads, *b, g, |_, gi| gi);
            }
            OpKind::Sub(a, b) => {
                self.acc_broadcast(grads, *a, g, |_, gi| gi);
                self.acc_broadcast(grads, *b, g, |_, gi| -gi);
            }
            OpKind::Mul(a, b) => {
                let (ad, bd) = (self.node_data(*a), self.node_data(*b));
                self.acc_broadcast(grads, *a, g, |i, gi| gi * pick(bd, i));
                self.acc_broadcast(grads, *b, g, |i, gi| gi * pick(ad, i));
            }
            OpKind::Div(a, b) => {
                let (ad, bd) = (self.node_data(*a), self.node_data(*b));
                self.acc_broadcast(grads, *a, g, |i, gi| gi / pick(bd, i));
                self.acc_broadcast(grads, *b, g, |i, gi| {
                    let bv = pick(bd, i);
                    -gi * pick(ad, i) / (bv * bv)
                });
            }
            OpKind::AddScalar(a) => {
                self.acc_map(grads, *a, g, |_, gi| gi);
            }
            OpKind::MulScalar(a, s) => {
                let s = *s;
                self.acc_map(grads, *a, g, move |_, gi| gi * s);
            }
            OpKind::Relu(a) => {
                let ad = self.node_data(*a);
                // Subgradient at exactly 0 is 0.
                self.acc_map(grads, *a, g, |i, gi| if ad[i] > 0.0 { gi } else { 0.0 });
            }
            OpKind::Abs(a) => {
                let ad = self.node_data(*a);
                self.acc_map(grads, *a, g, |i, gi| {
                    if ad[i] > 0.0 {
                        gi
                    } else if ad[i] < 0.0 {
                        -gi
                    } else {
                        0.0
                    }
                });
            }
            OpKind::Softplus(a) => {
                let ad = self.node_data(*a);
                self.acc_map(grads, *a, g, |i, gi| gi / (1.0 + (-ad[i]).exp()));
            }
            OpKind::Sqrt(a) => {
                let out = &node.data;
                self.acc_map(grads, *a, g, |i, gi| {
                    if gi == 0.0 {
                        0.0
                    } else {
                        gi * 0.5 / out[i].max(1e-150)
                    }
                });
            }

            OpKind::Matmul(a, b) => {
                let (m, k) = (self.node_shape(*a)[0], self.node_shape(*a)[1]);
                let n = self.node_shape(*b)[1];
                let (ad, bd) = (self.node_data(*a), self.node_data(*b));
                if self.wants(*a) {
                    // dA = g . B^T
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gv = g[i * n + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] += gv * bd[p * n + j];
                            }
                        }
                    }
                    if self.corrupted("matmul") {
                        for v in &mut da {
                            *v *= 1.001;
                        }
                    }
                    accumulate(&mut grads[*a], m * k, &da);
                }
                if self.wants(*b) {
                    // dB = A^T . g
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = ad[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += av * g[i * n + j];
                            }
                        }
                    }
                    accumulate(&mut grads[*b], k * n, &db);
                }
            }

            OpKind::Softmax { input, axis } => {
                let s = &node.data;
                let mut da = vec![0.0; s.len()];
                for_each_lane(&node.shape, *axis, |base, stride, len| {
                    let mut dot = 0.0;
                    for l in 0..len {
                        let idx = base + l * stride;
                        dot += g[idx] * s[idx];
                    }
                    for l in 0..len {
                        let idx = base + l * stride;
                        da[idx] = s[idx] * (g[idx] - dot);
                    }
                });
                if self.wants(*input) {
                    accumulate(&mut grads[*input], da.len(), &da);
                }
            }

            OpKind::Conv2d {
                input,
                kernels,
                stride,
                padding,
            } => {
                let ishp = self.node_shape(*input);
                let kshp = self.node_shape(*kernels);
                let (cin, h, w) = (ishp[0], ishp[1], ishp[2]);
                let (cout, kh, kw) = (kshp[0], kshp[2], kshp[3]);
                let (oh, ow) = (node.shape[1], node.shape[2]);
                let (id_, kd) = (self.node_data(*input), self.node_data(*kernels));
                let mut din = vec![0.0; cin * h * w];
                let mut dker = vec![0.0; cout * cin * kh * kw];
                let corrupt = self.corrupted("conv2d");
                for co in 0..cout {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = g[co * oh * ow + oy * ow + ox];
                            if gv == 0.0 {
                                continue;
                            }
                            for ci in 0..cin {
                                for ky in 0..kh {
                                    let iy = (oy * stride + ky) as isize - *padding as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (ox * stride + kx) as isize - *padding as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let ii = ci * h * w + iy as usize * w + ix as usize;
                                        let ki = ((co * cin + ci) * kh + ky) * kw + kx;
                                        din[ii] += gv * kd[ki];
                                        dker[ki] += gv * id_[ii];
                                    }
                                }
                            }
                        }
                    }
                }
                if corrupt {
                    for v in &mut dker {
                        *v *= 1.001;
                    }
                }
                if self.wants(*input) {
                    accumulate(&mut grads[*input], din.len(), &din);
                }
                if self.wants(*kernels) {
                    accumulate(&mut grads[*kernels], dker.len(), &dker);
                }
            }

            OpKind::DepthwiseConv2d {
                input,
                kernels,
                stride,
                padding,
            } => {
                let ishp = self.node_shape(*input);
                let (c, h, w) = (ishp[0], ishp[1], ishp[2]);
                let kshp = self.node_shape(*kernels);
                let (kh, kw) = (kshp[1], kshp[2]);
                let (oh, ow) = (node.shape[1], node.shape[2]);
                let (id_, kd) = (self.node_data(*input), self.node_data(*kernels));
                let mut din = vec![0.0; c * h * w];
                let mut dker = vec![0.0; c * kh * kw];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = g[ch * oh * ow + oy * ow + ox];
                            if gv == 0.0 {
                                continue;
                            }
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - *padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - *padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let ii = ch * h * w + iy as usize * w + ix as usize;
                                    let ki = (ch * kh + ky) * kw + kx;
                                    din[ii] += gv * kd[ki];
                                    dker[ki] += gv * id_[ii];
                                }
                            }
                        }
                    }
                }
                if self.wants(*input) {
                    accumulate(&mut grads[*input], din.len(), &din);
                }
                if self.wants(*kernels) {
                    accumulate(&mut grads[*kernels], dker.len(), &dker);
                }
            }

            OpKind::TransposedConv2d {
                input,
                kernels,
                stride,
            } => {
                let ishp = self.node_shape(*input);
                let kshp = self.node_shape(*kernels);
                let (cin, h, w) = (ishp[0], ishp[1], ishp[2]);
                let (cout, kh, kw) = (kshp[1], kshp[2], kshp[3]);
                let (oh, ow) = (node.shape[1], node.shape[2]);
                let (id_, kd) = (self.node_data(*input), self.node_data(*kernels));
                let mut din = vec![0.0; cin * h * w];
                let mut dker = vec![0.0; cin * cout * kh * kw];
                for ci in 0..cin {
                    for co in 0..cout {
                        for iy in 0..h {
                            for ix in 0..w {
                                let ii = ci * h * w + iy * w + ix;
                                let iv = id_[ii];
                                for ky in 0..kh {
                                    let oy = iy * stride + ky;
                                    for kx in 0..kw {
                                        let ox = ix * stride + kx;
                                        let gv = g[co * oh * ow + oy * ow + ox];
                                        if gv == 0.0 {
                                            continue;
                                        }
                                        let ki = ((ci * cout + co) * kh + ky) * kw + kx;
                                        din[ii] += gv * kd[ki];
                                        dker[ki] += gv * iv;
                                    }
                                }
                            }
                        }
                    }
                }
                if self.wants(*input) {
                    accumulate(&mut grads[*input], din.len(), &din);
                }
                if self.wants(*kernels) {
                    accumulate(&mut grads[*kernels], dker.len(), &dker);
                }
            }

            OpKind::DepthwiseTransposedConv2d {
                input,
                kernels,
                stride,
            } => {
                let ishp = self.node_shape(*input);
                let (c, h, w) = (ishp[0], ishp[1], ishp[2]);
                let kshp = self.node_shape(*kernels);
                let (kh, kw) = (kshp[1], kshp[2]);
                let (oh, ow) = (node.shape[1], node.shape[2]);
                let (id_, kd) = (self.node_data(*input), self.node_data(*kernels));
                let mut din = vec![0.0; c * h * w];
                let mut dker = vec![0.0; c * kh * kw];
                for ch in 0..c {
                    for iy in 0..h {
                        for ix in 0..w {
                            let ii = ch * h * w + iy * w + ix;
                            let iv = id_[ii];
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let gv = g[ch * oh * ow
                                        + (iy * stride + ky) * ow
                                        + (ix * stride + kx)];
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    let ki = (ch * kh + ky) * kw + kx;
                                    din[ii] += gv * kd[ki];
                                    dker[ki] += gv * iv;
                                }
                            }
                        }
                    }
                }
                if self.wants(*input) {
                    accumulate(&mut grads[*input], din.len(), &din);
                }
                if self.wants(*kernels) {
                    accumulate(&mut grads[*kernels], dker.len(), &dker);
                }
            }

            OpKind::Crop2d { input, y0, x0 } => {
                if self.wants(*input) {
                    let ishp = self.node_shape(*input);
                    let (c, h, w) = (ishp[0], ishp[1], ishp[2]);
                    let (oh, ow) = (node.shape[1], node.shape[2]);
                    let mut din = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for y in 0..oh {
                            for x in 0..ow {
                                din[ch * h * w + (y0 + y) * w + (x0 + x)] =
                                    g[ch * oh * ow + y * ow + x];
                            }
                        }
                    }
                    accumulate(&mut grads[*input], din.len(), &din);
                }
            }

            OpKind::Concat { inputs, axis } => {
                let outer: usize = node.shape[..*axis].iter().product();
                let inner: usize = node.shape[*axis + 1..].iter().product();
                let out_block = node.shape[*axis] * inner;
                let mut off = 0;
                for &inp in inputs {
                    let block = self.node_shape(inp)[*axis] * inner;
                    if self.wants(inp) {
                        let mut di = vec![0.0; self.node_data(inp).len()];
                        for o in 0..outer {
                            di[o * block..(o + 1) * block].copy_from_slice(
                                &g[o * out_block + off..o * out_block + off + block],
                            );
                        }
                        accumulate(&mut grads[inp], di.len(), &di);
                    }
                    off += block;
                }
            }

            OpKind::Reshape(a) => {
                if self.wants(*a) {
                    accumulate(&mut grads[*a], g.len(), g);
                }
            }

            OpKind::Transpose(a) => {
                if self.wants(*a) {
                    let (c, r) = (node.shape[0], node.shape[1]);
                    let mut da = vec![0.0; r * c];
                    for i in 0..c {
                        for j in 0..r {
                            da[j * c + i] = g[i * r + j];
                        }
                    }
                    accumulate(&mut grads[*a], da.len(), &da);
                }
            }

            OpKind::GatherRows { input, indices } => {
                if self.wants(*input) {
                    let c = node.shape[1];
                    let mut da = vec![0.0; self.node_data(*input).len()];
                    for (k, &i) in indices.iter().enumerate() {
                        for j in 0..c {
                            da[i * c + j] += g[k * c + j];
                        }
                    }
                    accumulate(&mut grads[*input], da.len(), &da);
                }
            }

            OpKind::ScatterRows { input, indices } => {
                if self.wants(*input) {
                    let c = node.shape[1];
                    let mut da = vec![0.0; indices.len() * c];
                    for (k, &i) in indices.iter().enumerate() {
                        da[k * c..(k + 1) * c].copy_from_slice(&g[i * c..(i + 1) * c]);
                    }
                    accumulate(&mut grads[*input], da.len(), &da);
                }
            }

            OpKind::SumAxis { input, axis } => {
                if self.wants(*input) {
                    let ishp = self.node_shape(*input);
                    let inner: usize = ishp[*axis + 1..].iter().product();
                    let lane = ishp[*axis];
                    let outer: usize = ishp[..*axis].iter().product();
                    let mut da = vec![0.0; self.node_data(*input).len()];
                    for o in 0..outer {
                        for l in 0..lane {
                            for i in 0..inner {
                                da[(o * lane + l) * inner + i] = g[o * inner + i];
                            }
                        }
                    }
                    accumulate(&mut grads[*input], da.len(), &da);
                }
            }

            OpKind::SumAll(a) => {
                if self.wants(*a) {
                    let da = vec![g[0]; self.node_data(*a).len()];
                    accumulate(&mut grads[*a], da.len(), &da);
                }
            }

            OpKind::MaxAll { input, argmax } => {
                if self.wants(*input) {
                    let mut da = vec![0.0; self.node_data(*input).len()];
                    da[*argmax] = g[0];
                    accumulate(&mut grads[*input], da.len(), &da);
                }
            }
        }
    }

    /// Accumulate an elementwise-mapped gradient into input `a` (same shape).
    fn acc_map(
        &self,
        grads: &mut [Option<Vec<f64>>],
        a: NodeId,
        g: &[f64],
        f: impl Fn(usize, f64) -> f64,
    ) {
        if !self.wants(a) {
            return;
        }
        let da: Vec<f64> = g.iter().enumerate().map(|(i, &gi)| f(i, gi)).collect();
        accumulate(&mut grads[a], da.len(), &da);
    }

    /// Accumulate into input `a` of a broadcasting binary op: if `a` was a
    /// single-element operand, contributions sum into that element.
    fn acc_broadcast(
        &self,
        grads: &mut [Option<Vec<f64>>],
        a: NodeId,
        g: &[f64],
        f: impl Fn(usize, f64) -> f64,
    ) {
        if !self.wants(a) {
            return;
        }
        let alen = self.node_data(a).len();
        if alen == g.len() {
            let da: Vec<f64> = g.iter().enumerate().map(|(i, &gi)| f(i, gi)).collect();
            accumulate(&mut grads[a], alen, &da);
        } else {
            debug_assert_eq!(alen, 1);
            let s: f64 = g.iter().enumerate().map(|(i, &gi)| f(i, gi)).sum();
            accumulate(&mut grads[a], 1, &[s]);
        }
    }
}

/// Gradient map produced by `Tape::backward`, indexed by node id.
pub struct Gradients {
    tape_id: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to a tensor registered via `Tape::param`.
    pub fn wrt(&self, t: &Tensor) -> Option<&[f64]> {
        let (tape_id, node) = t.tape_node()?;
        if tape_id != self.tape_id {
            return None;
        }
        self.grads.get(node)?.as_deref()
    }

    pub fn wrt_tensor(&self, t: &Tensor) -> Option<Tensor> {
        self.wrt(t)
            .map(|g| Tensor::new(t.shape(), g.to_vec()).expect("gradient shape"))
    }
}

fn op_name(op: &OpKind) -> &'static str {
    match op {
        OpKind::Leaf => "leaf",
        OpKind::Add(..) => "add",
        OpKind::Sub(..) => "sub",
        OpKind::Mul(..) => "mul",
        OpKind::Div(..) => "div",
        OpKind::AddScalar(_) => "add_scalar",
        OpKind::MulScalar(..) => "mul_scalar",
        OpKind::Relu(_) => "relu",
        OpKind::Abs(_) => "abs",
        OpKind::Softplus(_) => "softplus",
        OpKind::Sqrt(_) => "sqrt",
        OpKind::Matmul(..) => "matmul",
        OpKind::Softmax { .. } => "softmax",
        OpKind::Conv2d { .. } => "conv2d",
        OpKind::DepthwiseConv2d { .. } => "depthwise_conv2d",
        OpKind::TransposedConv2d { .. } => "transposed_conv2d",
        OpKind::DepthwiseTransposedConv2d { .. } => "depthwise_transposed_conv2d",
        OpKind::Crop2d { .. } => "crop2d",
        OpKind::Concat { .. } => "concat",
        OpKind::Reshape(_) => "reshape",
        OpKind::Transpose(_) => "transpose",
        OpKind::GatherRows { .. } => "gather_rows",
        OpKind::ScatterRows { .. } => "scatter_rows",
        OpKind::SumAxis { .. } => "sum_axis",
        OpKind::SumAll(_) => "sum_all",
        OpKind::MaxAll { .. } => "max_all",
    }
}

fn op_inputs(op: &OpKind) -> Vec<NodeId> {
    match op {
        OpKind::Leaf => vec![],
        OpKind::Add(a, b)
        | OpKind::Sub(a, b)
        | OpKind::Mul(a, b)
        | OpKind::Div(a, b)
        | OpKind::Matmul(a, b) => vec![*a, *b],
        OpKind::AddScalar(a)
        | OpKind::MulScalar(a, _)
        | OpKind::Relu(a)
        | OpKind::Abs(a)
        | OpKind::Softplus(a)
        | OpKind::Sqrt(a)
        | OpKind::Reshape(a)
        | OpKind::Transpose(a)
        | OpKind::SumAll(a) => vec![*a],
        OpKind::Softmax { input, .. }
        | OpKind::Crop2d { input, .. }
        | OpKind::GatherRows { input, .. }
        | OpKind::ScatterRows { input, .. }
        | OpKind::SumAxis { input, .. }
        | OpKind::MaxAll { input, .. } => vec![*input],
        OpKind::Conv2d { input, kernels, .. }
        | OpKind::DepthwiseConv2d { input, kernels, .. }
        | OpKind::TransposedConv2d { input, kernels, .. }
        | OpKind::DepthwiseTransposedConv2d { input, kernels, .. } => vec![*input, *kernels],
        OpKind::Concat { inputs, .. } => inputs.clone(),
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, contrib: &[f64]) {
    debug_assert_eq!(len, contrib.len());
    match slot {
        Some(g) => {
            for (gi, &c) in g.iter_mut().zip(contrib) {
                *gi += c;
            }
        }
        None => *slot = Some(contrib.to_vec()),
    }
}

/// Index into a possibly single-element operand.
fn pick(data: &[f64], i: usize) -> f64 {
    if data.len() == 1 {
        data[0]
    } else {
        data[i]
    }
}

fn broadcast_zip(a: &[f64], b: &[f64], f: &impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if a.len() == b.len() {
        a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
    } else if b.len() == 1 {
        a.iter().map(|&x| f(x, b[0])).collect()
    } else {
        b.iter().map(|&y| f(a[0], y)).collect()
    }
}

/// Iterate all lanes along `axis`: calls `f(base, stride, len)` per lane.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(usize, usize, usize)) {
    let lane = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    for o in 0..outer {
        for i in 0..inner {
            f(o * lane * inner + i, inner, lane);
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn conv_out_size(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    if kh > h + 2 * padding || kw > w + 2 * padding {
        return Err(Error::Dim(format!(
            "kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * padding,
            w + 2 * padding
        )));
    }
    Ok((
        (h + 2 * padding - kh) / stride + 1,
        (w + 2 * padding - kw) / stride + 1,
    ))
}

fn plane_conv(
    inp: &[f64],
    h: usize,
    w: usize,
    ker: &[f64],
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out: &mut [f64],
    oh: usize,
    ow: usize,
) {
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0;
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - padding as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    acc += inp[iy as usize * w + ix as usize] * ker[ky * kw + kx];
                }
            }
            out[oy * ow + ox] = acc;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_raw(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kernels: &[f64],
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; cout * oh * ow];
    let mut plane = vec![0.0; oh * ow];
    for co in 0..cout {
        let orow = &mut out[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..cin {
            let inp = &input[ci * h * w..(ci + 1) * h * w];
            let ker = &kernels[((co * cin + ci) * kh * kw)..((co * cin + ci + 1) * kh * kw)];
            plane_conv(inp, h, w, ker, kh, kw, stride, padding, &mut plane, oh, ow);
            for (o, &p) in orow.iter_mut().zip(plane.iter()) {
                *o += p;
            }
        }
    }
    out
}
