use super::kernels::{self, ConvGeom};
use super::{numel, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::DropoutKey;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    BiasAdd {
        x: Var,
        bias: Var,
        inner: usize,
    },
    ScaleShift {
        x: Var,
        gamma: Var,
        beta: Var,
        inner: usize,
    },
    Relu(Var),
    Gelu(Var),
    Log(Var),
    Softmax {
        x: Var,
        outer: usize,
        dim: usize,
        inner: usize,
    },
    Normalize {
        x: Var,
        group: usize,
        inv_std: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Concat {
        a: Var,
        b: Var,
        outer: usize,
        a_block: usize,
        b_block: usize,
    },
    Slice {
        x: Var,
        outer: usize,
        src_block: usize,
        start: usize,
        len: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
        width: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
        batch: usize,
        c_out: usize,
        cols: Vec<T>,
    },
    GlobalAvgPool {
        x: Var,
        plane: usize,
    },
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

impl<T> Op<T> {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | BatchMatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            Scale(x, _) | Relu(x) | Gelu(x) | Log(x) | Reshape(x) | Sum(x) | Mean(x) => vec![*x],
            BiasAdd { x, bias, .. } => vec![*x, *bias],
            ScaleShift { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Softmax { x, .. }
            | Normalize { x, .. }
            | Dropout { x, .. }
            | Slice { x, .. }
            | Permute { x, .. }
            | GatherRows { x, .. }
            | GlobalAvgPool { x, .. } => vec![*x],
            Concat { a, b, .. } => vec![*a, *b],
            Conv2d { x, w, .. } => vec![*x, *w],
            CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
}

/// Attention result: the mixed values and the post-softmax weights.
#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Var,
}

/// Records operations in execution order so gradients can be replayed in
/// reverse. A tape is used by a single thread for a single step.
pub struct Tape<T: Scalar = f32> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dim_err(msg: String) -> Error {
    Error::Dimension(msg)
}

/// Splits `shape` around `axis` into `(outer, dim, inner)` extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Gradient recorded by the last [`Tape::backward`] call, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|&i| self.requires(i));
        #[cfg(debug_assertions)]
        {
            // inputs this large can overflow to ±inf and then NaN legitimately
            let moderate = T::max_value().sqrt() / T::of(1e4);
            if data.iter().any(|v| v.is_nan()) {
                let inputs_moderate = op
                    .inputs()
                    .iter()
                    .all(|&i| self.data(i).iter().all(|v| v.abs() < moderate));
                assert!(!inputs_moderate, "NaN produced from finite inputs");
            }
        }
        debug_assert_eq!(numel(&shape), data.len());
        let value = Tensor {
            shape,
            data,
            grad: None,
            requires_grad,
        };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; its `requires_grad` flag is taken from the tensor.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let mut tensor = tensor;
        tensor.grad = None;
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err(format!("matmul of {sa:?} and {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_acc(self.data(a), self.data(b), &mut out, m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b)))
    }

    /// Batched product of `[b×m×k]` and `[b×k×n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(dim_err(format!("batched matmul of {sa:?} and {sb:?}")));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); bs * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for i in 0..bs {
            kernels::matmul_acc(
                &da[i * m * k..(i + 1) * m * k],
                &db[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        Ok(self.push(vec![bs, m, n], out, Op::BatchMatMul(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(format!(
                "{what} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.data(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Scale(x, c))
    }

    fn channel_layout(&self, x: Var, n: usize, axis: usize, what: &str) -> Result<usize> {
        let shape = self.shape(x);
        if axis >= shape.len() || shape[axis] != n {
            return Err(dim_err(format!(
                "{what}: parameter of length {n} does not match axis {axis} of {shape:?}"
            )));
        }
        Ok(shape[axis + 1..].iter().product())
    }

    /// Adds `bias[c]` to every element whose index along `axis` is `c`.
    pub fn bias_add(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let n = self.value(bias).numel();
        let inner = self.channel_layout(x, n, axis, "bias add")?;
        let b = self.data(bias);
        let out = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[(i / inner) % n])
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::BiasAdd { x, bias, inner }))
    }

    /// `gamma[c] * x + beta[c]` with the channel `c` taken along `axis`.
    pub fn scale_shift(&mut self, x: Var, gamma: Var, beta: Var, axis: usize) -> Result<Var> {
        let n = self.value(gamma).numel();
        if self.value(beta).numel() != n {
            return Err(dim_err(format!(
                "scale/shift parameters of lengths {n} and {}",
                self.value(beta).numel()
            )));
        }
        let inner = self.channel_layout(x, n, axis, "scale/shift")?;
        let (g, b) = (self.data(gamma), self.data(beta));
        let out = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = (i / inner) % n;
                g[c] * v + b[c]
            })
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            out,
            Op::ScaleShift {
                x,
                gamma,
                beta,
                inner,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self
            .data(x)
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Relu(x))
    }

    /// Which inputs of every recorded ReLU are positive, in tape order.
    /// Two evaluations with equal patterns lie on the same linear piece.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.data(x).iter().map(|&v| v > T::zero()))
            .collect()
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|&v| gelu(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Gelu(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|&v| v.ln()).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Log(x))
    }

    /// Numerically stable softmax along `axis`; denominators accumulate in f64.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(dim_err(format!(
                "softmax axis {axis} out of range for {shape:?}"
            )));
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let src = self.data(x);
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |d: usize| (o * dim + d) * inner + i;
                let mut max = f64::NEG_INFINITY;
                for d in 0..dim {
                    max = max.max(src[at(d)].as_f64());
                }
                let mut total = 0.0f64;
                for d in 0..dim {
                    let e = (src[at(d)].as_f64() - max).exp();
                    out[at(d)] = T::of(e);
                    total += e;
                }
                for d in 0..dim {
                    out[at(d)] = T::of(out[at(d)].as_f64() / total);
                }
            }
        }
        Ok(self.push(
            shape,
            out,
            Op::Softmax {
                x,
                outer,
                dim,
                inner,
            },
        ))
    }

    /// Standardizes every trailing block starting at `from_axis` to zero mean
    /// and unit variance.
    pub fn normalize(&mut self, x: Var, from_axis: usize, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if from_axis >= shape.len() {
            return Err(dim_err(format!(
                "normalize axis {from_axis} out of range for {shape:?}"
            )));
        }
        let group: usize = shape[from_axis..].iter().product();
        let src = self.data(x);
        let mut out = vec![T::zero(); src.len()];
        let mut inv_std = Vec::with_capacity(src.len() / group.max(1));
        for (chunk, dst) in src.chunks(group).zip(out.chunks_mut(group)) {
            let mean = chunk.iter().map(|v| v.as_f64()).sum::<f64>() / group as f64;
            let var = chunk
                .iter()
                .map(|v| (v.as_f64() - mean).powi(2))
                .sum::<f64>()
                / group as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (d, s) in dst.iter_mut().zip(chunk) {
                *d = T::of((s.as_f64() - mean) * inv);
            }
            inv_std.push(T::of(inv));
        }
        Ok(self.push(shape, out, Op::Normalize { x, group, inv_std }))
    }

    /// Layer normalization over the last axis with learned gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let last = self.shape(x).len().saturating_sub(1);
        let n = self.normalize(x, last, eps)?;
        self.scale_shift(n, gamma, beta, last)
    }

    /// Inverted dropout. Identity when not training or when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, key: DropoutKey) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let mask = key.mask(self.value(x).numel(), rate);
        self.dropout_with_mask(x, mask)
    }

    /// Dropout with an explicit, already-scaled mask.
    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return Err(dim_err(format!(
                "dropout mask of length {} for {:?}",
                mask.len(),
                self.shape(x)
            )));
        }
        let out = self.data(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::Dropout { x, mask }))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let compatible = sa.len() == sb.len()
            && axis < sa.len()
            && sa
                .iter()
                .zip(&sb)
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(dim_err(format!(
                "concat of {sa:?} and {sb:?} along axis {axis}"
            )));
        }
        let (outer, _, inner) = split_axis(&sa, axis);
        let a_block = sa[axis] * inner;
        let b_block = sb[axis] * inner;
        let (da, db) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(da.len() + db.len());
        for o in 0..outer {
            out.extend_from_slice(&da[o * a_block..(o + 1) * a_block]);
            out.extend_from_slice(&db[o * b_block..(o + 1) * b_block]);
        }
        let mut shape = sa.clone();
        shape[axis] += sb[axis];
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                a,
                b,
                outer,
                a_block,
                b_block,
            },
        ))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(dim_err(format!(
                "slice [{start}, {}) along axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let src_block = dim * inner;
        let src = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * src_block + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(
            out_shape,
            out,
            Op::Slice {
                x,
                outer,
                src_block,
                start: start * inner,
                len: len * inner,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).numel() {
            return Err(dim_err(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(x)
            )));
        }
        let data = self.data(x).to_vec();
        Ok(self.push(shape.to_vec(), data, Op::Reshape(x)))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = perm.len() == shape.len()
            && perm.iter().all(|&p| p < shape.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(dim_err(format!("permutation {perm:?} for {shape:?}")));
        }
        let (out, out_shape) = kernels::permute(self.data(x), &shape, perm);
        Ok(self.push(
            out_shape,
            out,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return Err(dim_err(format!("transpose of {:?}", self.shape(x))));
        }
        self.permute(x, &[1, 0])
    }

    /// Selects rows of a `[n×w]` matrix; used for embedding lookup and pooling.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(dim_err(format!("row gather from {shape:?}")));
        }
        let (n, width) = (shape[0], shape[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Data(format!("row index {bad} out of range for {n} rows")));
        }
        let src = self.data(x);
        let mut out = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            out.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        Ok(self.push(
            vec![idx.len(), width],
            out,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
                width,
            },
        ))
    }

    /// 2-D cross-correlation of `[C×H×W]` or `[N×C×H×W]` input with
    /// `[C_out×C×kh×kw]` kernels.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (batch, c_in, h, wd) = match sx.as_slice() {
            [c, h, w] => (1, *c, *h, *w),
            [n, c, h, w] => (*n, *c, *h, *w),
            _ => return Err(dim_err(format!("conv2d input must be rank 3 or 4, got {sx:?}"))),
        };
        if sw.len() != 4 || sw[1] != c_in {
            return Err(dim_err(format!("conv2d kernels {sw:?} for input {sx:?}")));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        let (c_out, kh, kw) = (sw[0], sw[2], sw[3]);
        if kh > h + 2 * padding || kw > wd + 2 * padding || kh == 0 || kw == 0 {
            return Err(dim_err(format!(
                "conv2d kernel {kh}×{kw} larger than padded input {}×{}",
                h + 2 * padding,
                wd + 2 * padding
            )));
        }
        let geom = ConvGeom {
            c_in,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad: padding,
            h_out: (h + 2 * padding - kh) / stride + 1,
            w_out: (wd + 2 * padding - kw) / stride + 1,
        };
        let (patch, plane) = (geom.patch(), geom.out_plane());
        let mut cols = vec![T::zero(); batch * patch * plane];
        let mut out = vec![T::zero(); batch * c_out * plane];
        let (dx, dw) = (self.data(x), self.data(w));
        let in_size = c_in * h * wd;
        for n in 0..batch {
            let col = &mut cols[n * patch * plane..(n + 1) * patch * plane];
            kernels::im2col(&dx[n * in_size..(n + 1) * in_size], &geom, col);
            kernels::matmul_acc(
                dw,
                col,
                &mut out[n * c_out * plane..(n + 1) * c_out * plane],
                c_out,
                patch,
                plane,
            );
        }
        let shape = if sx.len() == 3 {
            vec![c_out, geom.h_out, geom.w_out]
        } else {
            vec![batch, c_out, geom.h_out, geom.w_out]
        };
        Ok(self.push(
            shape,
            out,
            Op::Conv2d {
                x,
                w,
                geom,
                batch,
                c_out,
                cols,
            },
        ))
    }

    /// Mean over each spatial plane: `[C×H×W] → [C]`, `[N×C×H×W] → [N×C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (lead, plane) = match shape.as_slice() {
            [c, h, w] => (vec![*c], h * w),
            [n, c, h, w] => (vec![*n, *c], h * w),
            _ => return Err(dim_err(format!("global average pool of {shape:?}"))),
        };
        if plane == 0 {
            return Err(dim_err(format!("global average pool of empty plane {shape:?}")));
        }
        let out = self
            .data(x)
            .chunks(plane)
            .map(|c| T::of(c.iter().map(|v| v.as_f64()).sum::<f64>() / plane as f64))
            .collect();
        Ok(self.push(lead, out, Op::GlobalAvgPool { x, plane }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().map(|v| v.as_f64()).sum::<f64>();
        self.push(vec![1], vec![T::of(s)], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().map(|v| v.as_f64()).sum::<f64>() / d.len().max(1) as f64;
        self.push(vec![1], vec![T::of(s)], Op::Mean(x))
    }

    /// Mean categorical cross-entropy of `[B×C]` logits against class labels,
    /// computed through log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() || shape[0] == 0 {
            return Err(dim_err(format!(
                "cross entropy of logits {shape:?} against {} labels",
                labels.len()
            )));
        }
        let c = shape[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Data(format!("label {bad} out of range for {c} classes")));
        }
        let src = self.data(logits);
        let mut probs = vec![T::zero(); src.len()];
        let mut total = 0.0f64;
        for (b, &label) in labels.iter().enumerate() {
            let row = &src[b * c..(b + 1) * c];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
            let z: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
            let lse = max + z.ln();
            total += lse - row[label].as_f64();
            for (p, v) in probs[b * c..(b + 1) * c].iter_mut().zip(row) {
                *p = T::of((v.as_f64() - lse).exp());
            }
        }
        let loss = total / labels.len() as f64;
        Ok(self.push(
            vec![1],
            vec![T::of(loss)],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Scaled dot-product attention over `[L×d_k]` or `[b×L×d_k]` inputs.
    ///
    /// `key_mask` marks real positions with 1 and padding with 0; it is either
    /// one mask of length `L` shared by every batch entry or one per entry.
    /// Padding keys receive a −1e9 bias before the softmax.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        key_mask: Option<&[u8]>,
    ) -> Result<AttentionOutput> {
        let sq = self.shape(q).to_vec();
        if sq.len() != 2 && sq.len() != 3 {
            return Err(dim_err(format!("attention query {sq:?}")));
        }
        if self.shape(k) != sq.as_slice() || self.shape(v).len() != sq.len() {
            return Err(dim_err(format!(
                "attention q {sq:?}, k {:?}, v {:?}",
                self.shape(k),
                self.shape(v)
            )));
        }
        let batched = sq.len() == 3;
        let (bs, len, dk) = if batched {
            (sq[0], sq[1], sq[2])
        } else {
            (1, sq[0], sq[1])
        };
        let lift = |tape: &mut Self, x: Var| -> Result<Var> {
            if batched {
                Ok(x)
            } else {
                let s = tape.shape(x).to_vec();
                tape.reshape(x, &[1, s[0], s[1]])
            }
        };
        let (q3, k3, v3) = (lift(self, q)?, lift(self, k)?, lift(self, v)?);
        if self.shape(v3)[1] != len {
            return Err(dim_err(format!(
                "attention value length {:?} for key length {len}",
                self.shape(v)
            )));
        }
        let kt = self.permute(k3, &[0, 2, 1])?;
        let raw = self.bmm(q3, kt)?;
        let mut scores = self.scale(raw, T::of(1.0 / (dk as f64).sqrt()));
        if let Some(mask) = key_mask {
            if mask.len() != len && mask.len() != bs * len {
                return Err(dim_err(format!(
                    "attention mask of length {} for batch {bs} × length {len}",
                    mask.len()
                )));
            }
            let mut bias = vec![T::zero(); bs * len * len];
            for b in 0..bs {
                let m = if mask.len() == len {
                    mask
                } else {
                    &mask[b * len..(b + 1) * len]
                };
                for i in 0..len {
                    for (j, &keep) in m.iter().enumerate() {
                        if keep == 0 {
                            bias[(b * len + i) * len + j] = T::of(-1e9);
                        }
                    }
                }
            }
            let bias = self.constant(Tensor::new(&[bs, len, len], bias)?);
            scores = self.add(scores, bias)?;
        }
        let weights = self.softmax(scores, 2)?;
        let mixed = self.bmm(weights, v3)?;
        let output = if batched {
            mixed
        } else {
            let dv = self.shape(mixed)[2];
            self.reshape(mixed, &[len, dv])?
        };
        Ok(AttentionOutput { output, weights })
    }
}

pub(crate) fn gelu<T: Scalar>(v: T) -> T {
    let x = v.as_f64();
    let u = GELU_C * (x + 0.044715 * x * x * x);
    T::of(0.5 * x * (1.0 + u.tanh()))
}

pub(crate) fn gelu_grad<T: Scalar>(v: T) -> T {
    let x = v.as_f64();
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    T::of(0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
