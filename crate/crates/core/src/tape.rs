//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] owns every value of one forward computation as a node and
//! records one entry per produced node, so the record is already in
//! topological order. [`Tape::backward`] replays the record in reverse and
//! accumulates adjoints by addition: a node consumed by several downstream
//! ops receives the sum of their gradients. Given the same graph built in
//! the same order, gradients are bitwise identical run to run.
//!
//! Every forward op validates operand shapes and checks its output for
//! NaN/Inf, so a diverging computation fails at the op that produced the
//! bad value instead of poisoning the rest of the pass.

use crate::scalar::Scalar;
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor, TensorError};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(usize);

struct Node<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
}

impl<T> Node<T> {
    fn numel(&self) -> usize {
        self.data.len()
    }
}

enum Record<T> {
    Add { a: usize, b: usize, out: usize },
    Mul { a: usize, b: usize, out: usize },
    Scale { a: usize, c: T, out: usize },
    MatMul { a: usize, b: usize, out: usize, m: usize, k: usize, n: usize },
    MatMulNT { a: usize, b: usize, out: usize, m: usize, k: usize, n: usize },
    GatherRows { a: usize, indices: Vec<usize>, out: usize, cols: usize },
    AddBiasRow { a: usize, bias: usize, out: usize },
    Softmax { a: usize, out: usize, cols: usize },
    LayerNorm { a: usize, gamma: usize, beta: usize, out: usize, xhat: Vec<T>, inv_std: Vec<T> },
    Gelu { a: usize, out: usize },
    CrossEntropy { logits: usize, out: usize, targets: Vec<usize>, probs: Vec<T> },
    Sum { a: usize, out: usize },
    SliceRows { a: usize, start: usize, out: usize, cols: usize },
    ConcatRows { parts: Vec<usize>, out: usize },
    SliceCols { a: usize, start: usize, out: usize, in_cols: usize, out_cols: usize },
    ConcatCols { parts: Vec<usize>, out: usize },
}

/// One forward computation: nodes, the op record, and (after
/// [`Tape::backward`]) one gradient buffer per node.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    records: Vec<Record<T>>,
    grads: Option<Vec<Vec<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), records: Vec::new(), grads: None }
    }

    /// Copies a tensor onto the tape as a leaf. The tensor's
    /// `requires_grad` flag decides whether [`Tape::grad`] reports a
    /// gradient for it.
    pub fn leaf(&mut self, t: &Tensor<T>) -> TensorRef {
        self.push(t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    /// A leaf that never reports a gradient (masks, position ids, ...).
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<TensorRef, TensorError> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, r: TensorRef) -> &[usize] {
        &self.nodes[r.0].shape
    }

    pub fn data(&self, r: TensorRef) -> &[T] {
        &self.nodes[r.0].data
    }

    /// Snapshot of a node as a plain tensor.
    pub fn value(&self, r: TensorRef) -> Tensor<T> {
        let node = &self.nodes[r.0];
        let mut t = Tensor::new(node.shape.clone(), node.data.clone()).expect("node is consistent");
        t.set_requires_grad(node.requires_grad);
        t
    }

    /// The single element of a one-element node, e.g. a loss.
    pub fn scalar_value(&self, r: TensorRef) -> Result<T, TensorError> {
        let node = self.check(r)?;
        if node.numel() != 1 {
            return Err(TensorError::NonScalarSeed { shape: node.shape.clone() });
        }
        Ok(node.data[0])
    }

    /// Gradient of the last [`Tape::backward`] seed with respect to node
    /// `r`. `None` before backward runs and for nodes flagged as not
    /// requiring gradients.
    pub fn grad(&self, r: TensorRef) -> Option<&[T]> {
        let grads = self.grads.as_ref()?;
        if !self.nodes[r.0].requires_grad {
            return None;
        }
        Some(&grads[r.0])
    }

    pub fn grad_tensor(&self, r: TensorRef) -> Option<Tensor<T>> {
        self.grad(r)
            .map(|g| Tensor::new(self.nodes[r.0].shape.clone(), g.to_vec()).expect("grad is consistent"))
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> TensorRef {
        self.nodes.push(Node { shape, data, requires_grad });
        TensorRef(self.nodes.len() - 1)
    }

    fn check(&self, r: TensorRef) -> Result<&Node<T>, TensorError> {
        self.nodes.get(r.0).ok_or(TensorError::InvalidRef { index: r.0, len: self.nodes.len() })
    }

    fn finite(op: &'static str, data: &[T]) -> Result<(), TensorError> {
        if data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    fn dims_2d(node: &Node<T>, op: &'static str) -> Result<(usize, usize), TensorError> {
        match node.shape.len() {
            1 => Ok((1, node.shape[0])),
            2 => Ok((node.shape[0], node.shape[1])),
            _ => Err(TensorError::ShapeMismatch {
                op,
                details: format!("expected rank <= 2, got {:?}", node.shape),
            }),
        }
    }

    /// Elementwise sum of two same-shape nodes.
    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef, TensorError> {
        let (na, nb) = (self.check(a)?, self.check(b)?);
        if na.shape != nb.shape {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                details: format!("{:?} vs {:?}", na.shape, nb.shape),
            });
        }
        let data: Vec<T> = na.data.iter().zip(&nb.data).map(|(&x, &y)| x + y).collect();
        Self::finite("add", &data)?;
        let rg = na.requires_grad || nb.requires_grad;
        let shape = na.shape.clone();
        let out = self.push(shape, data, rg);
        self.records.push(Record::Add { a: a.0, b: b.0, out: out.0 });
        Ok(out)
    }

    /// Elementwise (Hadamard) product of two same-shape nodes.
    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef, TensorError> {
        let (na, nb) = (self.check(a)?, self.check(b)?);
        if na.shape != nb.shape {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                details: format!("{:?} vs {:?}", na.shape, nb.shape),
            });
        }
        let data: Vec<T> = na.data.iter().zip(&nb.data).map(|(&x, &y)| x * y).collect();
        Self::finite("mul", &data)?;
        let rg = na.requires_grad || nb.requires_grad;
        let shape = na.shape.clone();
        let out = self.push(shape, data, rg);
        self.records.push(Record::Mul { a: a.0, b: b.0, out: out.0 });
        Ok(out)
    }

    /// Multiplies every element by a compile-time constant.
    pub fn scale(&mut self, a: TensorRef, c: T) -> Result<TensorRef, TensorError> {
        let na = self.check(a)?;
        let data: Vec<T> = na.data.iter().map(|&x| x * c).collect();
        Self::finite("scale", &data)?;
        let (shape, rg) = (na.shape.clone(), na.requires_grad);
        let out = self.push(shape, data, rg);
        self.records.push(Record::Scale { a: a.0, c, out: out.0 });
        Ok(out)
    }

    /// Matrix product `a[m x k] * b[k x n]`.
    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef, TensorError> {
        let (na, nb) = (self.check(a)?, self.check(b)?);
        let (m, k) = Self::dims_2d(na, "matmul")?;
        let (k2, n) = Self::dims_2d(nb, "matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                details: format!("inner dims {} vs {}", k, k2),
            });
        }
        let data = matmul_nn(&na.data, &nb.data, m, k, n);
        Self::finite("matmul", &data)?;
        let rg = na.requires_grad || nb.requires_grad;
        let out = self.push(vec![m, n], data, rg);
        self.records.push(Record::MatMul { a: a.0, b: b.0, out: out.0, m, k, n });
        Ok(out)
    }

    /// Matrix product against a transposed right operand:
    /// `a[m x k] * b[n x k]^T`. Serves both attention scores (`Q * K^T`)
    /// and projections whose weights are stored `[out x in]`.
    pub fn matmul_nt(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef, TensorError> {
        let (na, nb) = (self.check(a)?, self.check(b)?);
        let (m, k) = Self::dims_2d(na, "matmul_nt")?;
        let (n, k2) = Self::dims_2d(nb, "matmul_nt")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_nt",
                details: format!("inner dims {} vs {}", k, k2),
            });
        }
        let data = matmul_nt(&na.data, &nb.data, m, k, n);
        Self::finite("matmul_nt", &data)?;
        let rg = na.requires_grad || nb.requires_grad;
        let out = self.push(vec![m, n], data, rg);
        self.records.push(Record::MatMulNT { a: a.0, b: b.0, out: out.0, m, k, n });
        Ok(out)
    }

    /// Selects rows of `a` by index, duplicates allowed. Backward
    /// accumulates into the source row once per occurrence, which is what
    /// embedding lookup needs.
    pub fn gather_rows(&mut self, a: TensorRef, indices: &[usize]) -> Result<TensorRef, TensorError> {
        let na = self.check(a)?;
        let (rows, cols) = Self::dims_2d(na, "gather_rows")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::ShapeMismatch {
                op: "gather_rows",
                details: format!("row index {} out of range for {} rows", bad, rows),
            });
        }
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(&na.data[i * cols..(i + 1) * cols]);
        }
        let rg = na.requires_grad;
        let out = self.push(vec![indices.len(), cols], data, rg);
        self.records.push(Record::GatherRows { a: a.0, indices: indices.to_vec(), out: out.0, cols });
        Ok(out)
    }

    /// Adds a length-`n` vector to every row of `a[m x n]`.
    pub fn add_bias_row(&mut self, a: TensorRef, bias: TensorRef) -> Result<TensorRef, TensorError> {
        let (na, nb) = (self.check(a)?, self.check(bias)?);
        let (m, n) = Self::dims_2d(na, "add_bias_row")?;
        if nb.numel() != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias_row",
                details: format!("bias len {} vs {} cols", nb.numel(), n),
            });
        }
        let mut data = na.data.clone();
        for r in 0..m {
            for c in 0..n {
                data[r * n + c] += nb.data[c];
            }
        }
        Self::finite("add_bias_row", &data)?;
        let rg = na.requires_grad || nb.requires_grad;
        let out = self.push(vec![m, n], data, rg);
        self.records.push(Record::AddBiasRow { a: a.0, bias: bias.0, out: out.0 });
        Ok(out)
    }

    /// Row-wise softmax with the max subtracted before exponentiation.
    pub fn softmax(&mut self, a: TensorRef) -> Result<TensorRef, TensorError> {
        let na = self.check(a)?;
        let (m, n) = Self::dims_2d(na, "softmax")?;
        if n == 0 {
            return Err(TensorError::ShapeMismatch { op: "softmax", details: "empty rows".into() });
        }
        let mut data = vec![T::zero(); m * n];
        for r in 0..m {
            let row = &na.data[r * n..(r + 1) * n];
            let max = row.iter().cloned().fold(row[0], T::max);
            let mut denom = T::zero();
            for c in 0..n {
                let e = (row[c] - max).exp();
                data[r * n + c] = e;
                denom += e;
            }
            for c in 0..n {
                data[r * n + c] = data[r * n + c] / denom;
            }
        }
        Self::finite("softmax", &data)?;
        let (shape, rg) = (na.shape.clone(), na.requires_grad);
        let out = self.push(shape, data, rg);
        self.records.push(Record::Softmax { a: a.0, out: out.0, cols: n });
        Ok(out)
    }

    /// Per-row layer normalization with learned scale and shift:
    /// `gamma * (x - mean) / sqrt(var + eps) + beta`, population variance,
    /// eps = 1e-5.
    pub fn layer_norm(
        &mut self,
        a: TensorRef,
        gamma: TensorRef,
        beta: TensorRef,
    ) -> Result<TensorRef, TensorError> {
        let eps = T::from_f64(1e-5);
        let (na, ng, nb) = (self.check(a)?, self.check(gamma)?, self.check(beta)?);
        let (m, n) = Self::dims_2d(na, "layer_norm")?;
        if ng.numel() != n || nb.numel() != n {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                details: format!("gamma/beta len {}/{} vs {} cols", ng.numel(), nb.numel(), n),
            });
        }
        let inv_n = T::one() / T::from_usize(n);
        let mut data = vec![T::zero(); m * n];
        let mut xhat = vec![T::zero(); m * n];
        let mut inv_std = vec![T::zero(); m];
        for r in 0..m {
            let row = &na.data[r * n..(r + 1) * n];
            let mut mean = T::zero();
            for &v in row {
                mean += v;
            }
            mean = mean * inv_n;
            let mut var = T::zero();
            for &v in row {
                let d = v - mean;
                var += d * d;
            }
            var = var * inv_n;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let xh = (row[c] - mean) * is;
                xhat[r * n + c] = xh;
                data[r * n + c] = ng.data[c] * xh + nb.data[c];
            }
        }
        Self::finite("layer_norm", &data)?;
        let rg = na.requires_grad || ng.requires_grad || nb.requires_grad;
        let out = self.push(vec![m, n], data, rg);
        self.records.push(Record::LayerNorm {
            a: a.0,
            gamma: gamma.0,
            beta: beta.0,
            out: out.0,
            xhat,
            inv_std,
        });
        Ok(out)
    }

    /// GELU with the tanh approximation:
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&mut self, a: TensorRef) -> Result<TensorRef, TensorError> {
        let na = self.check(a)?;
        let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
        let k = T::from_f64(0.044715);
        let half = T::from_f64(0.5);
        let data: Vec<T> = na
            .data
            .iter()
            .map(|&x| {
                let u = c * (x + k * x * x * x);
                half * x * (T::one() + u.tanh())
            })
            .collect();
        Self::finite("gelu", &data)?;
        let (shape, rg) = (na.shape.clone(), na.requires_grad);
        let out = self.push(shape, data, rg);
        self.records.push(Record::Gelu { a: a.0, out: out.0 });
        Ok(out)
    }

    /// Mean cross-entropy between `logits[b x c]` and integer targets,
    /// computed through a stable log-softmax.
    pub fn cross_entropy(&mut self, logits: TensorRef, targets: &[usize]) -> Result<TensorRef, TensorError> {
        let nl = self.check(logits)?;
        let (b, c) = Self::dims_2d(nl, "cross_entropy")?;
        if targets.len() != b {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                details: format!("{} targets vs {} rows", targets.len(), b),
            });
        }
        if b == 0 {
            return Err(TensorError::ShapeMismatch { op: "cross_entropy", details: "empty batch".into() });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(TensorError::ClassOutOfRange { index: bad, num_classes: c });
        }
        let mut probs = vec![T::zero(); b * c];
        let mut total = T::zero();
        for r in 0..b {
            let row = &nl.data[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(row[0], T::max);
            let mut denom = T::zero();
            for &v in row {
                denom += (v - max).exp();
            }
            let log_denom = denom.ln();
            for j in 0..c {
                probs[r * c + j] = (row[j] - max - log_denom).exp();
            }
            let log_p = row[targets[r]] - max - log_denom;
            total -= log_p;
        }
        let loss = total / T::from_usize(b);
        Self::finite("cross_entropy", &[loss])?;
        let rg = nl.requires_grad;
        let out = self.push(vec![1], vec![loss], rg);
        self.records.push(Record::CrossEntropy {
            logits: logits.0,
            out: out.0,
            targets: targets.to_vec(),
            probs,
        });
        Ok(out)
    }

    /// Sum of all elements, as a one-element node.
    pub fn sum(&mut self, a: TensorRef) -> Result<TensorRef, TensorError> {
        let na = self.check(a)?;
        let mut total = T::zero();
        for &v in &na.data {
            total += v;
        }
        Self::finite("sum", &[total])?;
        let rg = na.requires_grad;
        let out = self.push(vec![1], vec![total], rg);
        self.records.push(Record::Sum { a: a.0, out: out.0 });
        Ok(out)
    }

    /// Contiguous row block `a[start .. start + rows]`.
    pub fn slice_rows(&mut self, a: TensorRef, start: usize, rows: usize) -> Result<TensorRef, TensorError> {
        let na = self.check(a)?;
        let (m, n) = Self::dims_2d(na, "slice_rows")?;
        if start + rows > m {
            return Err(TensorError::ShapeMismatch {
                op: "slice_rows",
                details: format!("rows {}..{} out of range for {} rows", start, start + rows, m),
            });
        }
        let data = na.data[start * n..(start + rows) * n].to_vec();
        let rg = na.requires_grad;
        let out = self.push(vec![rows, n], data, rg);
        self.records.push(Record::SliceRows { a: a.0, start, out: out.0, cols: n });
        Ok(out)
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[TensorRef]) -> Result<TensorRef, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::ShapeMismatch { op: "concat_rows", details: "no parts".into() });
        }
        let mut cols = None;
        let mut total_rows = 0;
        for &p in parts {
            let np = self.check(p)?;
            let (m, n) = Self::dims_2d(np, "concat_rows")?;
            match cols {
                None => cols = Some(n),
                Some(c) if c != n => {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat_rows",
                        details: format!("column counts differ: {} vs {}", c, n),
                    })
                }
                _ => {}
            }
            total_rows += m;
        }
        let cols = cols.unwrap();
        let mut data = Vec::with_capacity(total_rows * cols);
        let mut rg = false;
        for &p in parts {
            let np = &self.nodes[p.0];
            data.extend_from_slice(&np.data);
            rg |= np.requires_grad;
        }
        let out = self.push(vec![total_rows, cols], data, rg);
        self.records.push(Record::ConcatRows { parts: parts.iter().map(|p| p.0).collect(), out: out.0 });
        Ok(out)
    }

    /// Contiguous column block `a[:, start .. start + cols]`.
    pub fn slice_cols(&mut self, a: TensorRef, start: usize, cols: usize) -> Result<TensorRef, TensorError> {
        let na = self.check(a)?;
        let (m, n) = Self::dims_2d(na, "slice_cols")?;
        if start + cols > n {
            return Err(TensorError::ShapeMismatch {
                op: "slice_cols",
                details: format!("cols {}..{} out of range for {} cols", start, start + cols, n),
            });
        }
        let mut data = Vec::with_capacity(m * cols);
        for r in 0..m {
            data.extend_from_slice(&na.data[r * n + start..r * n + start + cols]);
        }
        let rg = na.requires_grad;
        let out = self.push(vec![m, cols], data, rg);
        self.records.push(Record::SliceCols { a: a.0, start, out: out.0, in_cols: n, out_cols: cols });
        Ok(out)
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[TensorRef]) -> Result<TensorRef, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::ShapeMismatch { op: "concat_cols", details: "no parts".into() });
        }
        let mut rows = None;
        let mut total_cols = 0;
        for &p in parts {
            let np = self.check(p)?;
            let (m, n) = Self::dims_2d(np, "concat_cols")?;
            match rows {
                None => rows = Some(m),
                Some(r) if r != m => {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat_cols",
                        details: format!("row counts differ: {} vs {}", r, m),
                    })
                }
                _ => {}
            }
            total_cols += n;
        }
        let rows = rows.unwrap();
        let mut data = vec![T::zero(); rows * total_cols];
        let mut rg = false;
        let mut offset = 0;
        for &p in parts {
            let np = &self.nodes[p.0];
            let n = np.numel() / rows;
            for r in 0..rows {
                data[r * total_cols + offset..r * total_cols + offset + n]
                    .copy_from_slice(&np.data[r * n..(r + 1) * n]);
            }
            offset += n;
            rg |= np.requires_grad;
        }
        let out = self.push(vec![rows, total_cols], data, rg);
        self.records.push(Record::ConcatCols { parts: parts.iter().map(|p| p.0).collect(), out: out.0 });
        Ok(out)
    }

    /// Reverse sweep from a one-element seed node. Runs at most once per
    /// tape; gradients are then available through [`Tape::grad`].
    pub fn backward(&mut self, seed: TensorRef) -> Result<(), TensorError> {
        if self.grads.is_some() {
            return Err(TensorError::BackwardTwice);
        }
        let seed_node = self.check(seed)?;
        if seed_node.numel() != 1 {
            return Err(TensorError::NonScalarSeed { shape: seed_node.shape.clone() });
        }
        let mut grads: Vec<Vec<T>> = self.nodes.iter().map(|n| vec![T::zero(); n.numel()]).collect();
        grads[seed.0][0] = T::one();

        for rec in self.records.iter().rev() {
            match rec {
                Record::Add { a, b, out } => {
                    let g = std::mem::take(&mut grads[*out]);
                    for (dst, &gv) in grads[*a].iter_mut().zip(&g) {
                        *dst += gv;
                    }
                    for (dst, &gv) in grads[*b].iter_mut().zip(&g) {
                        *dst += gv;
                    }
                    grads[*out] = g;
                }
                Record::Mul { a, b, out } => {
                    let g = std::mem::take(&mut grads[*out]);
                    {
                        let bdata = &self.nodes[*b].data;
                        for i in 0..g.len() {
                            grads[*a][i] += g[i] * bdata[i];
                        }
                    }
                    {
                        let adata = &self.nodes[*a].data;
                        for i in 0..g.len() {
                            grads[*b][i] += g[i] * adata[i];
                        }
                    }
                    grads[*out] = g;
                }
                Record::Scale { a, c, out } => {
                    let g = std::mem::take(&mut grads[*out]);
                    for (dst, &gv) in grads[*a].iter_mut().zip(&g) {
                        *dst += gv * *c;
                    }
                    grads[*out] = g;
                }
                Record::MatMul { a, b, out, m, k, n } => {
                    let g = std::mem::take(&mut grads[*out]);
                    // dA = g * B^T, dB = A^T * g
                    let da = matmul_nt(&g, &self.nodes[*b].data, *m, *n, *k);
                    for (dst, gv) in grads[*a].iter_mut().zip(da) {
                        *dst += gv;
                    }
                    let db = matmul_tn(&self.nodes[*a].data, &g, *k, *m, *n);
                    for (dst, gv) in grads[*b].iter_mut().zip(db) {
                        *dst += gv;
                    }
                    grads[*out] = g;
                }
                Record::MatMulNT { a, b, out, m, k, n } => {
                    let g = std::mem::take(&mut grads[*out]);
                    // out = A * B^T with A[m x k], B[n x k]:
                    // dA = g * B, dB = g^T * A
                    let da = matmul_nn(&g, &self.nodes[*b].data, *m, *n, *k);
                    for (dst, gv) in grads[*a].iter_mut().zip(da) {
                        *dst += gv;
                    }
                    let db = matmul_tn(&g, &self.nodes[*a].data, *n, *m, *k);
                    for (dst, gv) in grads[*b].iter_mut().zip(db) {
                        *dst += gv;
                    }
                    grads[*out] = g;
                }
                Record::GatherRows { a, indices, out, cols } => {
                    let g = std::mem::take(&mut grads[*out]);
                    for (r, &src) in indices.iter().enumerate() {
                        let dst = &mut grads[*a][src * cols..(src + 1) * cols];
                        for (d, &gv) in dst.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                            *d += gv;
                        }
                    }
                    grads[*out] = g;
                }
                Record::AddBiasRow { a, bias, out } => {
                    let g = std::mem::take(&mut grads[*out]);
                    for (dst, &gv) in grads[*a].iter_mut().zip(&g) {
                        *dst += gv;
                    }
                    let n = self.nodes[*bias].numel();
                    for (i, &gv) in g.iter().enumerate() {
                        grads[*bias][i % n] += gv;
                    }
                    grads[*out] = g;
                }
                Record::Softmax { a, out, cols } => {
                    let g = std::mem::take(&mut grads[*out]);
                    let y = &self.nodes[*out].data;
                    let rows = y.len() / cols;
                    for r in 0..rows {
                        let off = r * cols;
                        let mut dot = T::zero();
                        for c in 0..*cols {
                            dot += g[off + c] * y[off + c];
                        }
                        for c in 0..*cols {
                            grads[*a][off + c] += y[off + c] * (g[off + c] - dot);
                        }
                    }
                    grads[*out] = g;
                }
                Record::LayerNorm { a, gamma, beta, out, xhat, inv_std } => {
                    let g = std::mem::take(&mut grads[*out]);
                    let n = self.nodes[*gamma].numel();
                    let rows = g.len() / n;
                    let inv_n = T::one() / T::from_usize(n);
                    let gdata = &self.nodes[*gamma].data;
                    for r in 0..rows {
                        let off = r * n;
                        let mut mean_h = T::zero();
                        let mut mean_hx = T::zero();
                        for c in 0..n {
                            let h = gdata[c] * g[off + c];
                            mean_h += h;
                            mean_hx += h * xhat[off + c];
                        }
                        mean_h = mean_h * inv_n;
                        mean_hx = mean_hx * inv_n;
                        for c in 0..n {
                            let h = gdata[c] * g[off + c];
                            grads[*a][off + c] += inv_std[r] * (h - mean_h - xhat[off + c] * mean_hx);
                            grads[*gamma][c] += g[off + c] * xhat[off + c];
                            grads[*beta][c] += g[off + c];
                        }
                    }
                    grads[*out] = g;
                }
                Record::Gelu { a, out } => {
                    let g = std::mem::take(&mut grads[*out]);
                    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
                    let k = T::from_f64(0.044715);
                    let half = T::from_f64(0.5);
                    let three = T::from_f64(3.0);
                    let x = &self.nodes[*a].data;
                    for i in 0..g.len() {
                        let xi = x[i];
                        let u = c * (xi + k * xi * xi * xi);
                        let t = u.tanh();
                        let du = c * (T::one() + three * k * xi * xi);
                        let dy = half * (T::one() + t) + half * xi * (T::one() - t * t) * du;
                        grads[*a][i] += g[i] * dy;
                    }
                    grads[*out] = g;
                }
                Record::CrossEntropy { logits, out, targets, probs } => {
                    let g = grads[*out][0];
                    let b = targets.len();
                    let c = probs.len() / b;
                    let inv_b = T::one() / T::from_usize(b);
                    for r in 0..b {
                        for j in 0..c {
                            let indicator = if j == targets[r] { T::one() } else { T::zero() };
                            grads[*logits][r * c + j] += g * (probs[r * c + j] - indicator) * inv_b;
                        }
                    }
                }
                Record::Sum { a, out } => {
                    let g = grads[*out][0];
                    for dst in grads[*a].iter_mut() {
                        *dst += g;
                    }
                }
                Record::SliceRows { a, start, out, cols } => {
                    let g = std::mem::take(&mut grads[*out]);
                    let dst = &mut grads[*a][start * cols..start * cols + g.len()];
                    for (d, &gv) in dst.iter_mut().zip(&g) {
                        *d += gv;
                    }
                    grads[*out] = g;
                }
                Record::ConcatRows { parts, out } => {
                    let g = std::mem::take(&mut grads[*out]);
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p].numel();
                        for (d, &gv) in grads[p].iter_mut().zip(&g[offset..offset + len]) {
                            *d += gv;
                        }
                        offset += len;
                    }
                    grads[*out] = g;
                }
                Record::SliceCols { a, start, out, in_cols, out_cols } => {
                    let g = std::mem::take(&mut grads[*out]);
                    let rows = g.len() / out_cols;
                    for r in 0..rows {
                        let src = &g[r * out_cols..(r + 1) * out_cols];
                        let dst = &mut grads[*a][r * in_cols + start..r * in_cols + start + out_cols];
                        for (d, &gv) in dst.iter_mut().zip(src) {
                            *d += gv;
                        }
                    }
                    grads[*out] = g;
                }
                Record::ConcatCols { parts, out } => {
                    let g = std::mem::take(&mut grads[*out]);
                    let total_cols = *self.nodes[*out].shape.last().unwrap();
                    let rows = g.len() / total_cols;
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.nodes[p].numel() / rows;
                        for r in 0..rows {
                            let src = &g[r * total_cols + offset..r * total_cols + offset + n];
                            let dst = &mut grads[p][r * n..(r + 1) * n];
                            for (d, &gv) in dst.iter_mut().zip(src) {
                                *d += gv;
                            }
                        }
                        offset += n;
                    }
                    grads[*out] = g;
                }
            }
        }
        self.grads = Some(grads);
        Ok(())
    }
}
