//! Recording tape for reverse-mode differentiation.

use rand::Rng;

use super::optim::Param;
use super::value::Tensor;
use super::{Result, TensorError};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Running batch-norm statistics, updated in training mode.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    pub fn new(features: usize) -> Self {
        BnStats {
            mean: vec![0.0; features],
            var: vec![1.0; features],
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, f64),
    ConcatLastAxis(Vec<Var>),
    Narrow {
        input: Var,
        start: usize,
        len: usize,
    },
    Reshape(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Log(Var),
    GatherRows(Var, Vec<usize>),
    SegmentSum {
        input: Var,
        segments: Vec<usize>,
    },
    SegmentSoftmax {
        input: Var,
        segments: Vec<usize>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        // Saved forward intermediates; in eval mode the normalisation is a
        // fixed affine map and `train` is false.
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    SumAll(Var),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Single-use computation record. Forward methods build values and remember
/// how to differentiate them; [`Tape::backward`] replays the record in
/// reverse and deposits gradients on every `requires_grad` leaf, including
/// any [`Param`] registered through [`Tape::param`]. After backward the tape
/// refuses further forward work.
pub struct Tape<'p> {
    nodes: Vec<Node>,
    links: Vec<(usize, &'p Param)>,
    consumed: bool,
}

impl<'p> Default for Tape<'p> {
    fn default() -> Self {
        Self::new()
    }
}

// Canonical (rows, cols) view used by the limited broadcasting rules: a
// vector `[n]` acts as a single row, `[1]` as a scalar.
fn canon(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => (1, 1),
    }
}

fn broadcast_shapes(
    op: &'static str,
    lhs: &[usize],
    rhs: &[usize],
) -> Result<(usize, usize, Vec<usize>)> {
    let (lr, lc) = canon(lhs);
    let (rr, rc) = canon(rhs);
    let rows_ok = lr == rr || lr == 1 || rr == 1;
    let cols_ok = lc == rc || lc == 1 || rc == 1;
    let out_r = lr.max(rr);
    let out_c = lc.max(rc);
    // One operand must already carry the full output extent; outer-product
    // style broadcasts are not supported.
    let lhs_full = (lr, lc) == (out_r, out_c);
    let rhs_full = (rr, rc) == (out_r, out_c);
    if !rows_ok || !cols_ok || !(lhs_full || rhs_full) {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        });
    }
    let out_shape = if lhs_full { lhs.to_vec() } else { rhs.to_vec() };
    Ok((out_r, out_c, out_shape))
}

// Element of `data` (with canonical shape (r, c)) seen at broadcast
// position (i, j).
#[inline]
fn bcast_at(data: &[f64], r: usize, c: usize, i: usize, j: usize) -> f64 {
    let ii = if r == 1 { 0 } else { i };
    let jj = if c == 1 { 0 } else { j };
    data[ii * c + jj]
}

// Fold a gradient over the broadcast output (out_r, out_c) back onto an
// operand with canonical shape (r, c), summing collapsed axes.
fn reduce_grad(grad: &[f64], out_r: usize, out_c: usize, r: usize, c: usize) -> Vec<f64> {
    if (r, c) == (out_r, out_c) {
        return grad.to_vec();
    }
    let mut out = vec![0.0; r * c];
    for i in 0..out_r {
        for j in 0..out_c {
            let ii = if r == 1 { 0 } else { i };
            let jj = if c == 1 { 0 } else { j };
            out[ii * c + jj] += grad[i * out_c + j];
        }
    }
    out
}

fn validate_segments(op: &'static str, segments: &[usize], axis_len: usize) -> Result<usize> {
    if segments.len() != axis_len {
        return Err(TensorError::SegmentLength {
            op,
            ids: segments.len(),
            axis: axis_len,
        });
    }
    if segments.is_empty() {
        return Err(TensorError::InvalidArgument {
            op,
            message: "no segments (a neighborhood is never empty)".into(),
        });
    }
    let mut prev = 0usize;
    for (idx, &s) in segments.iter().enumerate() {
        if s < prev {
            return Err(TensorError::UnsortedSegments { op, index: idx });
        }
        if s > prev + 1 || (idx == 0 && s > 0) {
            let missing = if idx == 0 { 0 } else { prev + 1 };
            return Err(TensorError::EmptySegment {
                op,
                segment: missing,
            });
        }
        prev = s;
    }
    Ok(prev + 1)
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            links: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        debug_assert!(
            value.all_finite(),
            "non-finite tensor produced on the tape"
        );
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_live(&self, op: &'static str) -> Result<()> {
        if self.consumed {
            let _ = op;
            return Err(TensorError::TapeConsumed);
        }
        Ok(())
    }

    /// Record an input tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Record a non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Register a parameter: its current value enters as a differentiable
    /// leaf and its gradient is accumulated into the parameter on backward.
    pub fn param(&mut self, p: &'p Param) -> Var {
        let v = self.push(p.value.clone(), true, Op::Leaf);
        self.links.push((v.0, p));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass with respect to `v`, if any.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ── forward primitives ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_live("matmul")?;
        let (m, ka) = self.value(a).dims2("matmul")?;
        let (kb, n) = self.value(b).dims2("matmul")?;
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &av[i * ka..(i + 1) * ka];
            let crow = &mut out[i * n..(i + 1) * n];
            for (p, &apv) in arow.iter().enumerate() {
                if apv != 0.0 {
                    let brow = &bv[p * n..(p + 1) * n];
                    for (cj, &bj) in crow.iter_mut().zip(brow) {
                        *cj += apv * bj;
                    }
                }
            }
        }
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, rg, Op::MatMul(a, b)))
    }

    fn elementwise(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.check_live(op_name)?;
        let (out_r, out_c, out_shape) =
            broadcast_shapes(op_name, self.value(a).shape(), self.value(b).shape())?;
        let (ar, ac) = canon(self.value(a).shape());
        let (br, bc) = canon(self.value(b).shape());
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(out_r * out_c);
        for i in 0..out_r {
            for j in 0..out_c {
                out.push(f(bcast_at(av, ar, ac, i, j), bcast_at(bv, br, bc, i, j)));
            }
        }
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(out_shape, out)?, rg, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Result<Var> {
        self.check_live("scalar_mul")?;
        let data = self.value(a).data().iter().map(|x| c * x).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a);
        Ok(self.push(Tensor::new(shape, data)?, rg, Op::ScalarMul(a, c)))
    }

    pub fn concat_last_axis(&mut self, parts: &[Var]) -> Result<Var> {
        self.check_live("concat_last_axis")?;
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "concat_last_axis",
                message: "no inputs".into(),
            });
        }
        let rank = self.value(parts[0]).shape().len();
        let rows = canon(self.value(parts[0]).shape()).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let shape = self.value(p).shape();
            let (r, c) = canon(shape);
            if shape.len() != rank || r != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_last_axis",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                let data = self.value(p).data();
                out.extend_from_slice(&data[i * w..(i + 1) * w]);
            }
        }
        let shape = if rank == 1 {
            vec![total]
        } else {
            vec![rows, total]
        };
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::ConcatLastAxis(parts.to_vec()),
        ))
    }

    /// Contiguous slice along the first axis (elements of a vector, rows of
    /// a matrix).
    pub fn narrow(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.check_live("narrow")?;
        let shape = self.value(a).shape().to_vec();
        let (axis, width) = match shape.as_slice() {
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            _ => {
                return Err(TensorError::NotMatrix {
                    op: "narrow",
                    shape,
                })
            }
        };
        if start + len > axis {
            return Err(TensorError::InvalidArgument {
                op: "narrow",
                message: format!("range {start}..{} exceeds axis {axis}", start + len),
            });
        }
        let data = self.value(a).data()[start * width..(start + len) * width].to_vec();
        let out_shape = if shape.len() == 1 {
            vec![len]
        } else {
            vec![len, width]
        };
        let rg = self.requires(a);
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            rg,
            Op::Narrow {
                input: a,
                start,
                len,
            },
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check_live("reshape")?;
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.value(a).shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = self.value(a).data().to_vec();
        let rg = self.requires(a);
        Ok(self.push(Tensor::new(shape.to_vec(), data)?, rg, Op::Reshape(a)))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.check_live("leaky_relu")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a);
        Ok(self.push(Tensor::new(shape, data)?, rg, Op::LeakyRelu(a, slope)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.leaky_relu(a, 0.0)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.check_live("exp")?;
        let data = self.value(a).data().iter().map(|x| x.exp()).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a);
        Ok(self.push(Tensor::new(shape, data)?, rg, Op::Exp(a)))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.check_live("log")?;
        let data = self.value(a).data().iter().map(|x| x.ln()).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a);
        Ok(self.push(Tensor::new(shape, data)?, rg, Op::Log(a)))
    }

    /// Select rows of a matrix (or elements of a vector) by index, with
    /// repetition allowed.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        self.check_live("gather_rows")?;
        let shape = self.value(a).shape().to_vec();
        let (rows, width) = match shape.as_slice() {
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            _ => {
                return Err(TensorError::NotMatrix {
                    op: "gather_rows",
                    shape,
                })
            }
        };
        let mut out = Vec::with_capacity(indices.len() * width);
        let data = self.value(a).data();
        for &i in indices {
            if i >= rows {
                return Err(TensorError::InvalidArgument {
                    op: "gather_rows",
                    message: format!("index {i} out of range for axis {rows}"),
                });
            }
            out.extend_from_slice(&data[i * width..(i + 1) * width]);
        }
        let out_shape = if shape.len() == 1 {
            vec![indices.len()]
        } else {
            vec![indices.len(), width]
        };
        let rg = self.requires(a);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            rg,
            Op::GatherRows(a, indices.to_vec()),
        ))
    }

    /// Sum rows (or elements) sharing a segment id. Ids must be sorted,
    /// start at 0 and leave no segment empty.
    pub fn segment_sum(&mut self, a: Var, segments: &[usize]) -> Result<Var> {
        self.check_live("segment_sum")?;
        let shape = self.value(a).shape().to_vec();
        let (rows, width) = match shape.as_slice() {
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            _ => {
                return Err(TensorError::NotMatrix {
                    op: "segment_sum",
                    shape,
                })
            }
        };
        let num_segments = validate_segments("segment_sum", segments, rows)?;
        let data = self.value(a).data();
        let mut out = vec![0.0; num_segments * width];
        for (row, &seg) in segments.iter().enumerate() {
            let dst = &mut out[seg * width..(seg + 1) * width];
            let src = &data[row * width..(row + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        let out_shape = if shape.len() == 1 {
            vec![num_segments]
        } else {
            vec![num_segments, width]
        };
        let rg = self.requires(a);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            rg,
            Op::SegmentSum {
                input: a,
                segments: segments.to_vec(),
            },
        ))
    }

    /// Softmax normalisation within each segment of a vector of scores.
    pub fn segment_softmax(&mut self, a: Var, segments: &[usize]) -> Result<Var> {
        self.check_live("segment_softmax")?;
        let shape = self.value(a).shape().to_vec();
        let n = match shape.as_slice() {
            [n] => *n,
            _ => {
                return Err(TensorError::InvalidArgument {
                    op: "segment_softmax",
                    message: format!("expected a vector, got shape {shape:?}"),
                })
            }
        };
        let num_segments = validate_segments("segment_softmax", segments, n)?;
        let data = self.value(a).data();
        let mut maxes = vec![f64::NEG_INFINITY; num_segments];
        for (i, &seg) in segments.iter().enumerate() {
            maxes[seg] = maxes[seg].max(data[i]);
        }
        let mut out: Vec<f64> = segments
            .iter()
            .zip(data)
            .map(|(&seg, &x)| (x - maxes[seg]).exp())
            .collect();
        let mut sums = vec![0.0; num_segments];
        for (i, &seg) in segments.iter().enumerate() {
            sums[seg] += out[i];
        }
        for (i, &seg) in segments.iter().enumerate() {
            out[i] /= sums[seg];
        }
        let rg = self.requires(a);
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::SegmentSoftmax {
                input: a,
                segments: segments.to_vec(),
            },
        ))
    }

    /// Batch normalisation over the first axis with learnable scale/shift.
    /// Training mode uses batch statistics and folds them into `stats` with
    /// the given momentum; eval mode normalises by the running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BnStats,
        train: bool,
        momentum: f64,
        eps: f64,
    ) -> Result<Var> {
        self.check_live("batch_norm")?;
        let (rows, cols) = self.value(x).dims2("batch_norm")?;
        if self.value(gamma).numel() != cols || self.value(beta).numel() != cols {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(gamma).shape().to_vec(),
            });
        }
        if stats.mean.len() != cols {
            return Err(TensorError::InvalidArgument {
                op: "batch_norm",
                message: format!(
                    "running stats track {} features, input has {cols}",
                    stats.mean.len()
                ),
            });
        }
        let data = self.value(x).data();
        let (mean, var) = if train {
            let mut mean = vec![0.0; cols];
            for row in data.chunks(cols) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= rows as f64;
            }
            let mut var = vec![0.0; cols];
            for row in data.chunks(cols) {
                for ((vv, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    let d = v - m;
                    *vv += d * d;
                }
            }
            for v in &mut var {
                *v /= rows as f64;
            }
            for c in 0..cols {
                stats.mean[c] = (1.0 - momentum) * stats.mean[c] + momentum * mean[c];
                stats.var[c] = (1.0 - momentum) * stats.var[c] + momentum * var[c];
            }
            (mean, var)
        } else {
            (stats.mean.clone(), stats.var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = Vec::with_capacity(rows * cols);
        for row in data.chunks(cols) {
            for ((v, m), s) in row.iter().zip(&mean).zip(&inv_std) {
                xhat.push((v - m) * s);
            }
        }
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        let mut out = Vec::with_capacity(rows * cols);
        for row in xhat.chunks(cols) {
            for ((h, g), b) in row.iter().zip(&gv).zip(&bv) {
                out.push(h * g + b);
            }
        }
        let rg = self.requires(x) || self.requires(gamma) || self.requires(beta);
        Ok(self.push(
            Tensor::new(vec![rows, cols], out)?,
            rg,
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        ))
    }

    /// Inverted dropout driven by an explicit RNG; `rate == 0` is identity.
    pub fn dropout<R: Rng>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        self.check_live("dropout")?;
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                message: format!("rate {rate} outside [0, 1)"),
            });
        }
        let shape = self.value(a).shape().to_vec();
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(a).numel())
            .map(|_| {
                if rate == 0.0 || rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let rg = self.requires(a);
        Ok(self.push(
            Tensor::new(shape, data)?,
            rg,
            Op::Dropout { input: a, mask },
        ))
    }

    /// Mean cross-entropy of row-wise softmax against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check_live("cross_entropy")?;
        let (rows, cols) = self.value(logits).dims2("cross_entropy")?;
        if labels.len() != rows {
            return Err(TensorError::InvalidArgument {
                op: "cross_entropy",
                message: format!("{} labels for {rows} rows", labels.len()),
            });
        }
        let data = self.value(logits).data();
        let mut probs = Vec::with_capacity(rows * cols);
        let mut loss = 0.0;
        for (row, &label) in data.chunks(cols).zip(labels) {
            if label >= cols {
                return Err(TensorError::InvalidArgument {
                    op: "cross_entropy",
                    message: format!("label {label} out of range for {cols} classes"),
                });
            }
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            loss -= (exps[label] / sum).ln();
            probs.extend(exps.iter().map(|e| e / sum));
        }
        loss /= rows as f64;
        let rg = self.requires(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.check_live("sum_all")?;
        let total: f64 = self.value(a).data().iter().sum();
        let rg = self.requires(a);
        Ok(self.push(Tensor::scalar(total), rg, Op::SumAll(a)))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Every `requires_grad` node receives
    /// its gradient and registered parameters accumulate theirs; the tape is
    /// consumed afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check_live("backward")?;
        let shape = self.value(loss).shape();
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: shape.to_vec(),
            });
        }
        self.consumed = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for k in (0..=loss.0).rev() {
            if self.nodes[k].grad.is_none() || !self.nodes[k].requires_grad {
                continue;
            }
            let grad = self.nodes[k].grad.clone().expect("grad present");
            self.backprop_node(k, &grad);
        }
        for (node, param) in &self.links {
            if let Some(g) = &self.nodes[*node].grad {
                param.accumulate_grad(self.nodes[*node].value.shape(), g);
            }
        }
        Ok(())
    }

    fn accum(&mut self, v: Var, delta: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let numel = self.nodes[v.0].value.numel();
        let slot = self.nodes[v.0]
            .grad
            .get_or_insert_with(|| vec![0.0; numel]);
        for (g, d) in slot.iter_mut().zip(delta) {
            *g += d;
        }
    }

    fn backprop_node(&mut self, k: usize, grad: &[f64]) {
        // Take the op out of the node so the rules can re-borrow the tape;
        // backward consumes the tape, so the node never needs it again.
        let op = std::mem::replace(&mut self.nodes[k].op, Op::Leaf);
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, kk) = self.value(a).dims2("matmul").expect("recorded");
                let n = self.value(b).shape()[1];
                let av = self.value(a).data().to_vec();
                let bv = self.value(b).data().to_vec();
                if self.requires(a) {
                    let mut da = vec![0.0; m * kk];
                    for i in 0..m {
                        for p in 0..kk {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += grad[i * n + j] * bv[p * n + j];
                            }
                            da[i * kk + p] = acc;
                        }
                    }
                    self.accum(a, &da);
                }
                if self.requires(b) {
                    let mut db = vec![0.0; kk * n];
                    for i in 0..m {
                        let grow = &grad[i * n..(i + 1) * n];
                        for p in 0..kk {
                            let apv = av[i * kk + p];
                            if apv != 0.0 {
                                let drow = &mut db[p * n..(p + 1) * n];
                                for (d, g) in drow.iter_mut().zip(grow) {
                                    *d += apv * g;
                                }
                            }
                        }
                    }
                    self.accum(b, &db);
                }
            }
            Op::Add(a, b) => {
                self.backprop_addsub(k, grad, a, b, false);
            }
            Op::Sub(a, b) => {
                self.backprop_addsub(k, grad, a, b, true);
            }
            Op::Mul(a, b) => {
                let (out_r, out_c) = canon(self.nodes[k].value.shape());
                let (ar, ac) = canon(self.value(a).shape());
                let (br, bc) = canon(self.value(b).shape());
                let av = self.value(a).data().to_vec();
                let bv = self.value(b).data().to_vec();
                if self.requires(a) {
                    let mut expanded = vec![0.0; out_r * out_c];
                    for i in 0..out_r {
                        for j in 0..out_c {
                            expanded[i * out_c + j] =
                                grad[i * out_c + j] * bcast_at(&bv, br, bc, i, j);
                        }
                    }
                    let da = reduce_grad(&expanded, out_r, out_c, ar, ac);
                    self.accum(a, &da);
                }
                if self.requires(b) {
                    let mut expanded = vec![0.0; out_r * out_c];
                    for i in 0..out_r {
                        for j in 0..out_c {
                            expanded[i * out_c + j] =
                                grad[i * out_c + j] * bcast_at(&av, ar, ac, i, j);
                        }
                    }
                    let db = reduce_grad(&expanded, out_r, out_c, br, bc);
                    self.accum(b, &db);
                }
            }
            Op::ScalarMul(a, c) => {
                let da: Vec<f64> = grad.iter().map(|g| c * g).collect();
                self.accum(a, &da);
            }
            Op::ConcatLastAxis(parts) => {
                let rows = canon(self.nodes[k].value.shape()).0;
                let total = canon(self.nodes[k].value.shape()).1;
                let mut offset = 0;
                for p in parts {
                    let w = canon(self.value(p).shape()).1;
                    if self.requires(p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            dp.extend_from_slice(&grad[i * total + offset..i * total + offset + w]);
                        }
                        self.accum(p, &dp);
                    }
                    offset += w;
                }
            }
            Op::Narrow { input, start, len } => {
                let (rows, width) = {
                    let s = self.value(input).shape();
                    match s {
                        [n] => (*n, 1),
                        [r, c] => (*r, *c),
                        _ => unreachable!(),
                    }
                };
                let mut da = vec![0.0; rows * width];
                da[start * width..(start + len) * width].copy_from_slice(grad);
                self.accum(input, &da);
            }
            Op::Reshape(a) => {
                self.accum(a, grad);
            }
            Op::LeakyRelu(a, slope) => {
                let av = self.value(a).data();
                let da: Vec<f64> = av
                    .iter()
                    .zip(grad)
                    .map(|(&x, g)| if x > 0.0 { *g } else { slope * g })
                    .collect();
                self.accum(a, &da);
            }
            Op::Exp(a) => {
                let yv = self.nodes[k].value.data().to_vec();
                let da: Vec<f64> = yv.iter().zip(grad).map(|(y, g)| y * g).collect();
                self.accum(a, &da);
            }
            Op::Log(a) => {
                let av = self.value(a).data().to_vec();
                let da: Vec<f64> = av.iter().zip(grad).map(|(x, g)| g / x).collect();
                self.accum(a, &da);
            }
            Op::GatherRows(a, indices) => {
                let (rows, width) = {
                    let s = self.value(a).shape();
                    match s {
                        [n] => (*n, 1),
                        [r, c] => (*r, *c),
                        _ => unreachable!(),
                    }
                };
                let mut da = vec![0.0; rows * width];
                for (e, &i) in indices.iter().enumerate() {
                    let src = &grad[e * width..(e + 1) * width];
                    let dst = &mut da[i * width..(i + 1) * width];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
                self.accum(a, &da);
            }
            Op::SegmentSum { input, segments } => {
                let width = canon(self.value(input).shape()).1;
                let mut da = Vec::with_capacity(segments.len() * width);
                for &seg in &segments {
                    da.extend_from_slice(&grad[seg * width..(seg + 1) * width]);
                }
                self.accum(input, &da);
            }
            Op::SegmentSoftmax { input, segments } => {
                let y = self.nodes[k].value.data().to_vec();
                let num_segments = segments.last().map(|s| s + 1).unwrap_or(0);
                let mut dot = vec![0.0; num_segments];
                for (i, &seg) in segments.iter().enumerate() {
                    dot[seg] += grad[i] * y[i];
                }
                let da: Vec<f64> = segments
                    .iter()
                    .enumerate()
                    .map(|(i, &seg)| y[i] * (grad[i] - dot[seg]))
                    .collect();
                self.accum(input, &da);
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let cols = inv_std.len();
                let rows = xhat.len() / cols;
                let gv = self.value(gamma).data().to_vec();
                if self.requires(gamma) {
                    let mut dg = vec![0.0; cols];
                    for (row, grow) in xhat.chunks(cols).zip(grad.chunks(cols)) {
                        for ((d, h), g) in dg.iter_mut().zip(row).zip(grow) {
                            *d += h * g;
                        }
                    }
                    self.accum(gamma, &dg);
                }
                if self.requires(beta) {
                    let mut db = vec![0.0; cols];
                    for grow in grad.chunks(cols) {
                        for (d, g) in db.iter_mut().zip(grow) {
                            *d += g;
                        }
                    }
                    self.accum(beta, &db);
                }
                if self.requires(input) {
                    let mut da = vec![0.0; rows * cols];
                    if train {
                        // dx = (gamma * inv_std / N) *
                        //      (N*g - sum(g) - xhat * sum(g*xhat))  per feature
                        let mut sum_g = vec![0.0; cols];
                        let mut sum_gh = vec![0.0; cols];
                        for (grow, hrow) in grad.chunks(cols).zip(xhat.chunks(cols)) {
                            for c in 0..cols {
                                sum_g[c] += grow[c];
                                sum_gh[c] += grow[c] * hrow[c];
                            }
                        }
                        let n = rows as f64;
                        for i in 0..rows {
                            for c in 0..cols {
                                let g = grad[i * cols + c];
                                let h = xhat[i * cols + c];
                                da[i * cols + c] = gv[c] * inv_std[c] / n
                                    * (n * g - sum_g[c] - h * sum_gh[c]);
                            }
                        }
                    } else {
                        for i in 0..rows {
                            for c in 0..cols {
                                da[i * cols + c] = grad[i * cols + c] * gv[c] * inv_std[c];
                            }
                        }
                    }
                    self.accum(input, &da);
                }
            }
            Op::Dropout { input, mask } => {
                let da: Vec<f64> = mask.iter().zip(grad).map(|(m, g)| m * g).collect();
                self.accum(input, &da);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let rows = labels.len();
                let cols = probs.len() / rows;
                let scale = grad[0] / rows as f64;
                let mut da = probs;
                for (r, &label) in labels.iter().enumerate() {
                    da[r * cols + label] -= 1.0;
                }
                for v in &mut da {
                    *v *= scale;
                }
                self.accum(logits, &da);
            }
            Op::SumAll(a) => {
                let n = self.value(a).numel();
                let da = vec![grad[0]; n];
                self.accum(a, &da);
            }
        }
    }

    fn backprop_addsub(&mut self, k: usize, grad: &[f64], a: Var, b: Var, negate: bool) {
        let (out_r, out_c) = canon(self.nodes[k].value.shape());
        let (ar, ac) = canon(self.value(a).shape());
        let (br, bc) = canon(self.value(b).shape());
        if self.requires(a) {
            let da = reduce_grad(grad, out_r, out_c, ar, ac);
            self.accum(a, &da);
        }
        if self.requires(b) {
            let mut db = reduce_grad(grad, out_r, out_c, br, bc);
            if negate {
                for v in &mut db {
                    *v = -*v;
                }
            }
            self.accum(b, &db);
        }
    }
}
