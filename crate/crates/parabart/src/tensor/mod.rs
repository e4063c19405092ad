//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Forward calls append nodes to a [`Tape`]; [`Tape::backward`] walks the
//! nodes in reverse and accumulates gradients into every node that requires
//! them, so a value used twice receives the sum of both contributions.
//!
//! All tape values are row-major matrices (scalars are `1×1`, vectors `1×n`).
//! The element type is generic: training runs in `f32`, gradient checking
//! re-runs the same graph code in `f64` (see [`gradcheck`]). There is no
//! implicit broadcasting; the one deliberate exception is [`Tape::add_bias`],
//! which broadcasts a `1×n` bias over rows.
//!
//! Shape or index violations are programmer errors and panic. In debug
//! builds every op additionally asserts that its output is finite.

mod adamw;
mod checkpoint;
pub mod gradcheck;

pub use adamw::{clip_global_norm, AdamW, AdamWConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, MAGIC};

/// Element type of tape values: `f32` for training, `f64` for checking.
pub trait Scalar:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn from_f32(v: f32) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    fn maximum(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn from_f32(v: f32) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn tanh(self) -> Self {
                self.tanh()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn is_finite(self) -> bool {
                self.is_finite()
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// A dense row-major tensor used for parameter storage and checkpoints.
///
/// Tape nodes hold their own buffers; this type is the at-rest form. `grad`
/// is scratch space the training loop fills after a backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor shape {:?} implies {} elements, got {}",
            shape,
            numel,
            data.len()
        );
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![T::ZERO; numel])
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// View the tensor as a matrix: rank 0 is `1×1`, rank 1 is `1×n`,
    /// rank 2 is as-is. Higher ranks are not used on the tape.
    pub fn matrix_shape(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            r => panic!("rank-{r} tensor cannot be viewed as a matrix"),
        }
    }

    pub fn map_to<U: Scalar>(&self) -> Tensor<U> {
        let mut out = Tensor::new(
            self.shape.clone(),
            self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        );
        out.requires_grad = self.requires_grad;
        out
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add {
        a: TensorId,
        b: TensorId,
    },
    AddBias {
        x: TensorId,
        b: TensorId,
    },
    Mul {
        a: TensorId,
        b: TensorId,
    },
    Scale {
        x: TensorId,
        c: T,
    },
    Matmul {
        a: TensorId,
        b: TensorId,
    },
    MatmulBt {
        a: TensorId,
        b: TensorId,
    },
    Softmax {
        x: TensorId,
        axis: usize,
    },
    LayerNorm {
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
    },
    Gelu {
        x: TensorId,
    },
    Relu {
        x: TensorId,
    },
    Embed {
        table: TensorId,
        ids: Vec<u32>,
    },
    ConcatRows {
        parts: Vec<TensorId>,
    },
    ConcatCols {
        parts: Vec<TensorId>,
    },
    SliceCols {
        x: TensorId,
        start: usize,
    },
    MeanRows {
        x: TensorId,
        keep: Vec<bool>,
    },
    CrossEntropy {
        logits: TensorId,
        targets: Vec<u32>,
        keep: Vec<bool>,
    },
    DistCrossEntropy {
        logits: TensorId,
        target: Vec<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add { .. } => "add",
            Op::AddBias { .. } => "add_bias",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Matmul { .. } => "matmul",
            Op::MatmulBt { .. } => "matmul_bt",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu { .. } => "gelu",
            Op::Relu { .. } => "relu",
            Op::Embed { .. } => "embed",
            Op::ConcatRows { .. } => "concat_rows",
            Op::ConcatCols { .. } => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::MeanRows { .. } => "mean_rows",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::DistCrossEntropy { .. } => "dist_cross_entropy",
        }
    }
}

struct Node<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Computation tape. Build one per forward pass, call ops to extend it, then
/// [`Tape::backward`] once on a scalar loss.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

const EPS_LAYER_NORM: f64 = 1e-5;
const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<T>, op: Op<T>, requires_grad: bool) -> TensorId {
        assert_eq!(rows * cols, data.len(), "{}: output buffer size mismatch", op.name());
        if cfg!(debug_assertions) {
            if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
                panic!("{}: non-finite output at element {pos}", op.name());
            }
        }
        self.nodes.push(Node {
            rows,
            cols,
            data,
            op,
            requires_grad,
        });
        self.grads.push(None);
        TensorId(self.nodes.len() - 1)
    }

    /// Add an input node.
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<T>, requires_grad: bool) -> TensorId {
        self.push(rows, cols, data, Op::Leaf, requires_grad)
    }

    /// Add a non-differentiable input node (masks, position tables, ...).
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<T>) -> TensorId {
        self.leaf(rows, cols, data, false)
    }

    /// Add a leaf from a stored tensor, converting the element type.
    pub fn leaf_tensor<U: Scalar>(&mut self, t: &Tensor<U>, requires_grad: bool) -> TensorId {
        let (rows, cols) = t.matrix_shape();
        let data = t.data.iter().map(|&v| T::from_f64(v.to_f64())).collect();
        self.leaf(rows, cols, data, requires_grad)
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, id: TensorId) -> &[T] {
        &self.nodes[id.0].data
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, id: TensorId) -> T {
        let n = &self.nodes[id.0];
        assert_eq!((n.rows, n.cols), (1, 1), "scalar() on a {}×{} node", n.rows, n.cols);
        n.data[0]
    }

    /// Gradient buffer of a node, if it required one and backward has run.
    pub fn grad(&self, id: TensorId) -> Option<&[T]> {
        self.grads[id.0].as_deref()
    }

    // ---- ops ------------------------------------------------------------

    /// Elementwise sum of two same-shape values.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(
            (ar, ac),
            (br, bc),
            "add: dimension mismatch {ar}×{ac} vs {br}×{bc}"
        );
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        self.push(ar, ac, data, Op::Add { a, b }, rg)
    }

    /// Add a `1×n` bias to every row of an `m×n` value. The one deliberate
    /// broadcast in the op set.
    pub fn add_bias(&mut self, x: TensorId, b: TensorId) -> TensorId {
        let (rows, cols) = self.shape(x);
        let (br, bc) = self.shape(b);
        assert_eq!(
            (br, bc),
            (1, cols),
            "add_bias: bias must be 1×{cols}, got {br}×{bc}"
        );
        let xv = &self.nodes[x.0].data;
        let bv = &self.nodes[b.0].data;
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(xv[i * cols + j] + bv[j]);
            }
        }
        let rg = self.nodes[x.0].requires_grad || self.nodes[b.0].requires_grad;
        self.push(rows, cols, data, Op::AddBias { x, b }, rg)
    }

    /// Elementwise (Hadamard) product of two same-shape values.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(
            (ar, ac),
            (br, bc),
            "mul: dimension mismatch {ar}×{ac} vs {br}×{bc}"
        );
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        self.push(ar, ac, data, Op::Mul { a, b }, rg)
    }

    /// Multiply by a compile-time-known scalar constant.
    pub fn scale(&mut self, x: TensorId, c: T) -> TensorId {
        let (rows, cols) = self.shape(x);
        let data = self.nodes[x.0].data.iter().map(|&v| v * c).collect();
        let rg = self.nodes[x.0].requires_grad;
        self.push(rows, cols, data, Op::Scale { x, c }, rg)
    }

    /// `A · B` for `A: m×k`, `B: k×n`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(
            k, k2,
            "matmul: dimension mismatch {m}×{k} · {k2}×{n}"
        );
        let av = &self.nodes[a.0].data;
        let bv = &self.nodes[b.0].data;
        let mut data = vec![T::ZERO; m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            let orow = &mut data[i * n..(i + 1) * n];
            for (kk, &aik) in arow.iter().enumerate() {
                let brow = &bv[kk * n..(kk + 1) * n];
                for j in 0..n {
                    orow[j] += aik * brow[j];
                }
            }
        }
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        self.push(m, n, data, Op::Matmul { a, b }, rg)
    }

    /// `A · Bᵀ` for `A: m×k`, `B: n×k`. Used for attention scores and the
    /// tied output projection; avoids materializing transposes.
    pub fn matmul_bt(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(
            k, k2,
            "matmul_bt: dimension mismatch {m}×{k} · ({n}×{k2})ᵀ"
        );
        let av = &self.nodes[a.0].data;
        let bv = &self.nodes[b.0].data;
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &bv[j * k..(j + 1) * k];
                let mut acc = T::ZERO;
                for kk in 0..k {
                    acc += arow[kk] * brow[kk];
                }
                data.push(acc);
            }
        }
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        self.push(m, n, data, Op::MatmulBt { a, b }, rg)
    }

    /// Softmax along `axis` (0 = down columns, 1 = along rows) with
    /// max-subtraction for stability.
    pub fn softmax(&mut self, x: TensorId, axis: usize) -> TensorId {
        assert!(axis <= 1, "softmax: axis must be 0 or 1, got {axis}");
        let (rows, cols) = self.shape(x);
        let xv = &self.nodes[x.0].data;
        let mut data = vec![T::ZERO; rows * cols];
        for lane in lanes(rows, cols, axis) {
            let mut max = T::from_f64(f64::NEG_INFINITY);
            for idx in lane.clone() {
                max = max.maximum(xv[idx]);
            }
            let mut sum = T::ZERO;
            for idx in lane.clone() {
                let e = (xv[idx] - max).exp();
                data[idx] = e;
                sum += e;
            }
            for idx in lane {
                data[idx] = data[idx] / sum;
            }
        }
        let rg = self.nodes[x.0].requires_grad;
        self.push(rows, cols, data, Op::Softmax { x, axis }, rg)
    }

    /// Layer normalization over the last axis with learned gain and bias
    /// (both `1×n`); epsilon sits inside the square root.
    pub fn layer_norm(&mut self, x: TensorId, gain: TensorId, bias: TensorId) -> TensorId {
        let (rows, cols) = self.shape(x);
        assert_eq!(
            self.shape(gain),
            (1, cols),
            "layer_norm: gain must be 1×{cols}"
        );
        assert_eq!(
            self.shape(bias),
            (1, cols),
            "layer_norm: bias must be 1×{cols}"
        );
        let eps = T::from_f64(EPS_LAYER_NORM);
        let nrecip = T::from_f64(1.0 / cols as f64);
        let xv = &self.nodes[x.0].data;
        let gv = &self.nodes[gain.0].data;
        let bv = &self.nodes[bias.0].data;
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let row = &xv[i * cols..(i + 1) * cols];
            let mut mean = T::ZERO;
            for &v in row {
                mean += v;
            }
            mean = mean * nrecip;
            let mut var = T::ZERO;
            for &v in row {
                let d = v - mean;
                var += d * d;
            }
            var = var * nrecip;
            let inv = T::ONE / (var + eps).sqrt();
            for j in 0..cols {
                let xhat = (row[j] - mean) * inv;
                data.push(gv[j] * xhat + bv[j]);
            }
        }
        let rg = self.nodes[x.0].requires_grad
            || self.nodes[gain.0].requires_grad
            || self.nodes[bias.0].requires_grad;
        self.push(rows, cols, data, Op::LayerNorm { x, gain, bias }, rg)
    }

    /// GELU activation (tanh approximation).
    pub fn gelu(&mut self, x: TensorId) -> TensorId {
        let (rows, cols) = self.shape(x);
        let c0 = T::from_f64(GELU_C0);
        let c1 = T::from_f64(GELU_C1);
        let half = T::from_f64(0.5);
        let data = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| {
                let u = c0 * (v + c1 * v * v * v);
                half * v * (T::ONE + u.tanh())
            })
            .collect();
        let rg = self.nodes[x.0].requires_grad;
        self.push(rows, cols, data, Op::Gelu { x }, rg)
    }

    /// ReLU activation.
    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let (rows, cols) = self.shape(x);
        let data = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| if v > T::ZERO { v } else { T::ZERO })
            .collect();
        let rg = self.nodes[x.0].requires_grad;
        self.push(rows, cols, data, Op::Relu { x }, rg)
    }

    /// Gather rows of `table` by id: output row `i` is `table[ids[i]]`.
    pub fn embed(&mut self, table: TensorId, ids: &[u32]) -> TensorId {
        let (vocab, dim) = self.shape(table);
        let tv = &self.nodes[table.0].data;
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            let id = id as usize;
            assert!(
                id < vocab,
                "embed: id {id} out of range for table with {vocab} rows"
            );
            data.extend_from_slice(&tv[id * dim..(id + 1) * dim]);
        }
        let rg = self.nodes[table.0].requires_grad;
        self.push(
            ids.len(),
            dim,
            data,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Stack values vertically; all parts must share a column count.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty(), "concat_rows: empty part list");
        let cols = self.shape(parts[0]).1;
        let mut rows = 0;
        let mut data = Vec::new();
        let mut rg = false;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            assert_eq!(pc, cols, "concat_rows: column mismatch {pc} vs {cols}");
            rows += pr;
            data.extend_from_slice(&self.nodes[p.0].data);
            rg |= self.nodes[p.0].requires_grad;
        }
        self.push(
            rows,
            cols,
            data,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            rg,
        )
    }

    /// Concatenate values side by side; all parts must share a row count.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty(), "concat_cols: empty part list");
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        let mut rg = false;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            assert_eq!(pr, rows, "concat_cols: row mismatch {pr} vs {rows}");
            cols += pc;
            rg |= self.nodes[p.0].requires_grad;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                let pc = self.shape(p).1;
                let pv = &self.nodes[p.0].data;
                data.extend_from_slice(&pv[i * pc..(i + 1) * pc]);
            }
        }
        self.push(
            rows,
            cols,
            data,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            rg,
        )
    }

    /// Columns `start..start+len` of a value.
    pub fn slice_cols(&mut self, x: TensorId, start: usize, len: usize) -> TensorId {
        let (rows, cols) = self.shape(x);
        assert!(
            start + len <= cols,
            "slice_cols: range {start}..{} out of {cols} columns",
            start + len
        );
        let xv = &self.nodes[x.0].data;
        let mut data = Vec::with_capacity(rows * len);
        for i in 0..rows {
            data.extend_from_slice(&xv[i * cols + start..i * cols + start + len]);
        }
        let rg = self.nodes[x.0].requires_grad;
        self.push(rows, len, data, Op::SliceCols { x, start }, rg)
    }

    /// Mean over the rows flagged in `keep`, producing a `1×n` value.
    /// At least one row must be kept.
    pub fn mean_rows(&mut self, x: TensorId, keep: &[bool]) -> TensorId {
        let (rows, cols) = self.shape(x);
        assert_eq!(keep.len(), rows, "mean_rows: keep mask length mismatch");
        let count = keep.iter().filter(|&&k| k).count();
        assert!(count > 0, "mean_rows: no rows kept");
        let recip = T::from_f64(1.0 / count as f64);
        let xv = &self.nodes[x.0].data;
        let mut data = vec![T::ZERO; cols];
        for i in 0..rows {
            if keep[i] {
                for j in 0..cols {
                    data[j] += xv[i * cols + j];
                }
            }
        }
        for v in &mut data {
            *v = *v * recip;
        }
        let rg = self.nodes[x.0].requires_grad;
        self.push(
            1,
            cols,
            data,
            Op::MeanRows {
                x,
                keep: keep.to_vec(),
            },
            rg,
        )
    }

    /// Token-level cross-entropy summed over the rows flagged in `keep`:
    /// `Σ_i (logsumexp(z_i) − z_i[targets[i]])`. Targets of dropped rows are
    /// ignored. Produces a `1×1` value.
    pub fn cross_entropy(&mut self, logits: TensorId, targets: &[u32], keep: &[bool]) -> TensorId {
        let (rows, cols) = self.shape(logits);
        assert_eq!(targets.len(), rows, "cross_entropy: target length mismatch");
        assert_eq!(keep.len(), rows, "cross_entropy: keep mask length mismatch");
        let zv = &self.nodes[logits.0].data;
        let mut total = T::ZERO;
        for i in 0..rows {
            if !keep[i] {
                continue;
            }
            let t = targets[i] as usize;
            assert!(
                t < cols,
                "cross_entropy: target {t} out of range for {cols} classes"
            );
            let row = &zv[i * cols..(i + 1) * cols];
            total += lse(row) - row[t];
        }
        let rg = self.nodes[logits.0].requires_grad;
        self.push(
            1,
            1,
            vec![total],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                keep: keep.to_vec(),
            },
            rg,
        )
    }

    /// Cross-entropy of a `1×n` logit row against a fixed target
    /// distribution: `−Σ_j target[j] · log softmax(z)[j]`, evaluated in
    /// log-sum-exp form. Produces a `1×1` value.
    pub fn dist_cross_entropy(&mut self, logits: TensorId, target: &[T]) -> TensorId {
        let (rows, cols) = self.shape(logits);
        assert_eq!(rows, 1, "dist_cross_entropy: logits must be a single row");
        assert_eq!(
            target.len(),
            cols,
            "dist_cross_entropy: target length mismatch"
        );
        let zv = &self.nodes[logits.0].data;
        let mut dot = T::ZERO;
        let mut mass = T::ZERO;
        for j in 0..cols {
            dot += target[j] * zv[j];
            mass += target[j];
        }
        // For a normalized target, −Σ t·log p = logsumexp(z)·Σt − Σ t·z.
        let total = lse(zv) * mass - dot;
        let rg = self.nodes[logits.0].requires_grad;
        self.push(
            1,
            1,
            vec![total],
            Op::DistCrossEntropy {
                logits,
                target: target.to_vec(),
            },
            rg,
        )
    }

    // ---- backward -------------------------------------------------------

    /// Accumulate `d loss / d node` for every node that requires gradients.
    /// `loss` must be `1×1`.
    pub fn backward(&mut self, loss: TensorId) {
        let n = &self.nodes[loss.0];
        assert_eq!(
            (n.rows, n.cols),
            (1, 1),
            "backward: loss must be scalar, got {}×{}",
            n.rows,
            n.cols
        );
        assert!(
            n.requires_grad,
            "backward: loss does not depend on any gradient-tracked input"
        );
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && self.grads[i].is_none() {
                self.grads[i] = Some(vec![T::ZERO; node.data.len()]);
            }
        }
        if let Some(g) = self.grads[loss.0].as_mut() {
            g[0] += T::ONE;
        }
        for i in (0..self.nodes.len()).rev() {
            if self.grads[i].is_none() {
                continue;
            }
            let g = self.grads[i].take().expect("grad buffer present");
            self.backward_node(i, &g);
            self.grads[i] = Some(g);
        }
    }

    fn backward_node(&mut self, i: usize, g: &[T]) {
        let op = self.nodes[i].op.clone();
        let (rows, cols) = (self.nodes[i].rows, self.nodes[i].cols);
        match op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                self.accumulate(a, |_, ga| {
                    for (gv, &gi) in ga.iter_mut().zip(g) {
                        *gv += gi;
                    }
                });
                self.accumulate(b, |_, gb| {
                    for (gv, &gi) in gb.iter_mut().zip(g) {
                        *gv += gi;
                    }
                });
            }
            Op::AddBias { x, b } => {
                self.accumulate(x, |_, gx| {
                    for (gv, &gi) in gx.iter_mut().zip(g) {
                        *gv += gi;
                    }
                });
                self.accumulate(b, |_, gb| {
                    for i in 0..rows {
                        for j in 0..cols {
                            gb[j] += g[i * cols + j];
                        }
                    }
                });
            }
            Op::Mul { a, b } => {
                let bv = self.nodes[b.0].data.clone();
                self.accumulate(a, |_, ga| {
                    for ((gv, &gi), &bi) in ga.iter_mut().zip(g).zip(&bv) {
                        *gv += gi * bi;
                    }
                });
                let av = self.nodes[a.0].data.clone();
                self.accumulate(b, |_, gb| {
                    for ((gv, &gi), &ai) in gb.iter_mut().zip(g).zip(&av) {
                        *gv += gi * ai;
                    }
                });
            }
            Op::Scale { x, c } => {
                self.accumulate(x, |_, gx| {
                    for (gv, &gi) in gx.iter_mut().zip(g) {
                        *gv += c * gi;
                    }
                });
            }
            Op::Matmul { a, b } => {
                let (m, k) = self.shape(a);
                let n = cols;
                // dA = g · Bᵀ
                let bv = self.nodes[b.0].data.clone();
                self.accumulate(a, |_, ga| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let brow = &bv[kk * n..(kk + 1) * n];
                            let mut acc = T::ZERO;
                            for j in 0..n {
                                acc += grow[j] * brow[j];
                            }
                            ga[i * k + kk] += acc;
                        }
                    }
                });
                // dB = Aᵀ · g
                let av = self.nodes[a.0].data.clone();
                self.accumulate(b, |_, gb| {
                    for i in 0..m {
                        let arow = &av[i * k..(i + 1) * k];
                        let grow = &g[i * n..(i + 1) * n];
                        for (kk, &aik) in arow.iter().enumerate() {
                            let gbrow = &mut gb[kk * n..(kk + 1) * n];
                            for j in 0..n {
                                gbrow[j] += aik * grow[j];
                            }
                        }
                    }
                });
            }
            Op::MatmulBt { a, b } => {
                let (m, k) = self.shape(a);
                let n = cols;
                // dA = g · B
                let bv = self.nodes[b.0].data.clone();
                self.accumulate(a, |_, ga| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let garow = &mut ga[i * k..(i + 1) * k];
                        for (j, &gij) in grow.iter().enumerate() {
                            let brow = &bv[j * k..(j + 1) * k];
                            for kk in 0..k {
                                garow[kk] += gij * brow[kk];
                            }
                        }
                    }
                });
                // dB = gᵀ · A
                let av = self.nodes[a.0].data.clone();
                self.accumulate(b, |_, gb| {
                    for i in 0..m {
                        let arow = &av[i * k..(i + 1) * k];
                        let grow = &g[i * n..(i + 1) * n];
                        for (j, &gij) in grow.iter().enumerate() {
                            let gbrow = &mut gb[j * k..(j + 1) * k];
                            for kk in 0..k {
                                gbrow[kk] += gij * arow[kk];
                            }
                        }
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let sv = self.nodes[i].data.clone();
                self.accumulate(x, |_, gx| {
                    for lane in lanes(rows, cols, axis) {
                        let mut dot = T::ZERO;
                        for idx in lane.clone() {
                            dot += g[idx] * sv[idx];
                        }
                        for idx in lane {
                            gx[idx] += sv[idx] * (g[idx] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias } => {
                let eps = T::from_f64(EPS_LAYER_NORM);
                let nrecip = T::from_f64(1.0 / cols as f64);
                let xv = self.nodes[x.0].data.clone();
                let gv = self.nodes[gain.0].data.clone();
                // Recompute per-row statistics; cheaper than caching them on
                // the node for every forward pass.
                let mut xhat = vec![T::ZERO; rows * cols];
                let mut inv = vec![T::ZERO; rows];
                for r in 0..rows {
                    let row = &xv[r * cols..(r + 1) * cols];
                    let mut mean = T::ZERO;
                    for &v in row {
                        mean += v;
                    }
                    mean = mean * nrecip;
                    let mut var = T::ZERO;
                    for &v in row {
                        let d = v - mean;
                        var += d * d;
                    }
                    var = var * nrecip;
                    inv[r] = T::ONE / (var + eps).sqrt();
                    for j in 0..cols {
                        xhat[r * cols + j] = (row[j] - mean) * inv[r];
                    }
                }
                self.accumulate(gain, |_, gg| {
                    for r in 0..rows {
                        for j in 0..cols {
                            gg[j] += g[r * cols + j] * xhat[r * cols + j];
                        }
                    }
                });
                self.accumulate(bias, |_, gb| {
                    for r in 0..rows {
                        for j in 0..cols {
                            gb[j] += g[r * cols + j];
                        }
                    }
                });
                self.accumulate(x, |_, gx| {
                    for r in 0..rows {
                        let mut s1 = T::ZERO;
                        let mut s2 = T::ZERO;
                        for j in 0..cols {
                            let dxh = g[r * cols + j] * gv[j];
                            s1 += dxh;
                            s2 += dxh * xhat[r * cols + j];
                        }
                        s1 = s1 * nrecip;
                        s2 = s2 * nrecip;
                        for j in 0..cols {
                            let dxh = g[r * cols + j] * gv[j];
                            gx[r * cols + j] += inv[r] * (dxh - s1 - xhat[r * cols + j] * s2);
                        }
                    }
                });
            }
            Op::Gelu { x } => {
                let c0 = T::from_f64(GELU_C0);
                let c1 = T::from_f64(GELU_C1);
                let half = T::from_f64(0.5);
                let three = T::from_f64(3.0);
                let xv = self.nodes[x.0].data.clone();
                self.accumulate(x, |_, gx| {
                    for (idx, &v) in xv.iter().enumerate() {
                        let u = c0 * (v + c1 * v * v * v);
                        let t = u.tanh();
                        let du = c0 * (T::ONE + three * c1 * v * v);
                        let d = half * (T::ONE + t) + half * v * (T::ONE - t * t) * du;
                        gx[idx] += g[idx] * d;
                    }
                });
            }
            Op::Relu { x } => {
                let xv = self.nodes[x.0].data.clone();
                self.accumulate(x, |_, gx| {
                    for (idx, &v) in xv.iter().enumerate() {
                        if v > T::ZERO {
                            gx[idx] += g[idx];
                        }
                    }
                });
            }
            Op::Embed { table, ids } => {
                let dim = cols;
                self.accumulate(table, |_, gt| {
                    for (i, &id) in ids.iter().enumerate() {
                        let dst = &mut gt[id as usize * dim..(id as usize + 1) * dim];
                        let src = &g[i * dim..(i + 1) * dim];
                        for j in 0..dim {
                            dst[j] += src[j];
                        }
                    }
                });
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for p in parts {
                    let (pr, pc) = self.shape(p);
                    let span = pr * pc;
                    self.accumulate(p, |_, gp| {
                        for (gv, &gi) in gp.iter_mut().zip(&g[offset..offset + span]) {
                            *gv += gi;
                        }
                    });
                    offset += span;
                }
            }
            Op::ConcatCols { parts } => {
                let mut col_offset = 0;
                for p in parts {
                    let (pr, pc) = self.shape(p);
                    self.accumulate(p, |_, gp| {
                        for r in 0..pr {
                            for j in 0..pc {
                                gp[r * pc + j] += g[r * cols + col_offset + j];
                            }
                        }
                    });
                    col_offset += pc;
                }
            }
            Op::SliceCols { x, start } => {
                let xcols = self.shape(x).1;
                self.accumulate(x, |_, gx| {
                    for r in 0..rows {
                        for j in 0..cols {
                            gx[r * xcols + start + j] += g[r * cols + j];
                        }
                    }
                });
            }
            Op::MeanRows { x, keep } => {
                let count = keep.iter().filter(|&&k| k).count();
                let recip = T::from_f64(1.0 / count as f64);
                let (xr, xc) = self.shape(x);
                self.accumulate(x, |_, gx| {
                    for r in 0..xr {
                        if keep[r] {
                            for j in 0..xc {
                                gx[r * xc + j] += g[j] * recip;
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                keep,
            } => {
                let up = g[0];
                let (lr, lc) = self.shape(logits);
                let zv = self.nodes[logits.0].data.clone();
                self.accumulate(logits, |_, gz| {
                    for r in 0..lr {
                        if !keep[r] {
                            continue;
                        }
                        let row = &zv[r * lc..(r + 1) * lc];
                        let m = lse(row);
                        for j in 0..lc {
                            let p = (row[j] - m).exp();
                            let indicator = if j == targets[r] as usize {
                                T::ONE
                            } else {
                                T::ZERO
                            };
                            gz[r * lc + j] += up * (p - indicator);
                        }
                    }
                });
            }
            Op::DistCrossEntropy { logits, target } => {
                let up = g[0];
                let lc = self.shape(logits).1;
                let zv = self.nodes[logits.0].data.clone();
                self.accumulate(logits, |_, gz| {
                    let m = lse(&zv);
                    for j in 0..lc {
                        let p = (zv[j] - m).exp();
                        gz[j] += up * (p - target[j]);
                    }
                });
            }
        }
    }

    /// Run `f` on the gradient buffer of `id` if that node tracks gradients.
    fn accumulate<F>(&mut self, id: TensorId, f: F)
    where
        F: FnOnce(&Tape<T>, &mut [T]),
    {
        if self.nodes[id.0].requires_grad {
            let mut buf = self.grads[id.0].take().expect("grad buffer allocated");
            f(self, &mut buf);
            self.grads[id.0] = Some(buf);
        }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Tape::new()
    }
}

/// `log Σ exp` with max-subtraction (and, as a byproduct, the stabilized
/// softmax denominator used in the cross-entropy backward passes).
fn lse<T: Scalar>(row: &[T]) -> T {
    let mut max = T::from_f64(f64::NEG_INFINITY);
    for &v in row {
        max = max.maximum(v);
    }
    let mut sum = T::ZERO;
    for &v in row {
        sum += (v - max).exp();
    }
    max + sum.ln()
}

/// Index ranges of the lanes softmax normalizes over: rows for axis 1,
/// columns for axis 0.
fn lanes(rows: usize, cols: usize, axis: usize) -> Vec<LaneIter> {
    if axis == 1 {
        (0..rows)
            .map(|r| LaneIter {
                next: r * cols,
                step: 1,
                remaining: cols,
            })
            .collect()
    } else {
        (0..cols)
            .map(|c| LaneIter {
                next: c,
                step: cols,
                remaining: rows,
            })
            .collect()
    }
}

#[derive(Clone)]
struct LaneIter {
    next: usize,
    step: usize,
    remaining: usize,
}

impl Iterator for LaneIter {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.remaining == 0 {
            return None;
        }
        let idx = self.next;
        self.next += self.step;
        self.remaining -= 1;
        Some(idx)
    }
}
