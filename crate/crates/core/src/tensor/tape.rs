//! Reverse-mode tape: op recording, forward kernels, backward pass.

use super::Tensor;
use crate::error::{Result, VagError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Bin {
        a: TensorId,
        b: TensorId,
        kind: BinKind,
    },
    AddScalar {
        a: TensorId,
    },
    MulScalar {
        a: TensorId,
        c: f64,
    },
    PowScalar {
        a: TensorId,
        p: f64,
    },
    Relu {
        a: TensorId,
    },
    Sigmoid {
        a: TensorId,
    },
    Log {
        a: TensorId,
    },
    Exp {
        a: TensorId,
    },
    Sqrt {
        a: TensorId,
    },
    Clamp {
        a: TensorId,
        lo: f64,
        hi: f64,
    },
    Matmul {
        a: TensorId,
        b: TensorId,
        m: usize,
        k: usize,
        n: usize,
    },
    /// out[m,n] = A[k,m]^T · B[k,n]
    MatmulAt {
        a: TensorId,
        b: TensorId,
        k: usize,
        m: usize,
        n: usize,
    },
    /// out[m,k] = A[m,n] · B[k,n]^T
    MatmulBt {
        a: TensorId,
        b: TensorId,
        m: usize,
        n: usize,
        k: usize,
    },
    SumAll {
        a: TensorId,
    },
    MeanAll {
        a: TensorId,
    },
    SumAxis {
        a: TensorId,
        axis: usize,
    },
    MaxAxis {
        a: TensorId,
        argmax: Vec<usize>,
    },
    Softmax {
        a: TensorId,
        axis: usize,
        scale: f64,
    },
    Transpose {
        a: TensorId,
        m: usize,
        n: usize,
    },
    Reshape {
        a: TensorId,
    },
    Concat {
        parts: Vec<TensorId>,
        axis: usize,
    },
    Slice {
        a: TensorId,
        axis: usize,
        start: usize,
        len: usize,
    },
    Unfold {
        a: TensorId,
        c: usize,
        h: usize,
        w: usize,
    },
    Fold {
        a: TensorId,
        c: usize,
        h: usize,
        w: usize,
        normalize: bool,
    },
    BatchNormTrain {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        mean: Vec<f64>,
        var: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        running_mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherCols {
        a: TensorId,
        idx: Vec<usize>,
    },
    /// Fixed linear mixture of source columns: out[:, j] = sum_t w[j,t] * src[:, idx[j,t]].
    GatherMix {
        a: TensorId,
        idx: Vec<usize>,
        w: Vec<f64>,
        k: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only computation tape. Backward traverses nodes in reverse append
/// order exactly once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

// ── raw kernels ──────────────────────────────────────────────────────
//
// All three layouts tile the output rows so the streamed operand passes
// through cache once per tile group instead of once per row; operands at
// these problem sizes otherwise thrash L2.

const MM_TILE: usize = 8;

/// C[m,n] = A[m,k] · B[k,n]
pub(crate) fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let mut i0 = 0;
    while i0 < m {
        let ie = (i0 + MM_TILE).min(m);
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            for i in i0..ie {
                let av = a[i * k + p];
                let c_row = &mut c[i * n..(i + 1) * n];
                for j in 0..n {
                    c_row[j] += av * b_row[j];
                }
            }
        }
        i0 = ie;
    }
    c
}

/// C[m,k] = A[m,n] · B[k,n]^T  (rows of A dotted with rows of B)
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    let mut p0 = 0;
    while p0 < k {
        let pe = (p0 + MM_TILE).min(k);
        for i in 0..m {
            let a_row = &a[i * n..(i + 1) * n];
            for p in p0..pe {
                let b_row = &b[p * n..(p + 1) * n];
                let mut s = 0.0;
                for j in 0..n {
                    s += a_row[j] * b_row[j];
                }
                c[i * k + p] = s;
            }
        }
        p0 = pe;
    }
    c
}

/// C[k,n] = A[m,k]^T · B[m,n]
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    let mut i0 = 0;
    while i0 < k {
        let ie = (i0 + MM_TILE).min(k);
        for p in 0..m {
            let b_row = &b[p * n..(p + 1) * n];
            for i in i0..ie {
                let av = a[p * k + i];
                let c_row = &mut c[i * n..(i + 1) * n];
                for j in 0..n {
                    c_row[j] += av * b_row[j];
                }
            }
        }
        i0 = ie;
    }
    c
}

fn broadcast_shape(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0usize; r];
    for i in 0..r {
        let da = if i < r - a.len() { 1 } else { a[i - (r - a.len())] };
        let db = if i < r - b.len() { 1 } else { b[i - (r - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(VagError::DimMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

fn pad_shape(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut p = vec![1usize; rank];
    p[rank - shape.len()..].copy_from_slice(shape);
    p
}

/// Expand `data` of `shape` to `out_shape` (numpy broadcast semantics).
fn expand(data: &[f64], shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    if shape == out_shape {
        return data.to_vec();
    }
    let rank = out_shape.len();
    let padded = pad_shape(shape, rank);
    let numel: usize = out_shape.iter().product();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for d in (0..rank).rev() {
        strides[d] = if padded[d] == 1 { 0 } else { s };
        s *= padded[d];
    }
    let mut out = vec![0.0; numel];
    let mut coords = vec![0usize; rank];
    let mut src = 0usize;
    for slot in out.iter_mut() {
        *slot = data[src];
        for d in (0..rank).rev() {
            coords[d] += 1;
            src += strides[d];
            if coords[d] < out_shape[d] {
                break;
            }
            src -= strides[d] * out_shape[d];
            coords[d] = 0;
        }
    }
    out
}

/// Sum `grad` of `grad_shape` down to `target_shape` (inverse of broadcast).
fn reduce_to_shape(grad: &[f64], grad_shape: &[usize], target_shape: &[usize]) -> Vec<f64> {
    if grad_shape == target_shape {
        return grad.to_vec();
    }
    let rank = grad_shape.len();
    let padded = pad_shape(target_shape, rank);
    let target_numel: usize = target_shape.iter().product();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for d in (0..rank).rev() {
        strides[d] = if padded[d] == 1 { 0 } else { s };
        s *= padded[d];
    }
    let mut out = vec![0.0; target_numel];
    let mut coords = vec![0usize; rank];
    let mut dst = 0usize;
    for &g in grad.iter() {
        out[dst] += g;
        for d in (0..rank).rev() {
            coords[d] += 1;
            dst += strides[d];
            if coords[d] < grad_shape[d] {
                break;
            }
            dst -= strides[d] * grad_shape[d];
            coords[d] = 0;
        }
    }
    out
}

/// (outer, len, inner) decomposition of `shape` around `axis`.
fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn unfold_raw(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let l = h * w;
    let row_len = 9 * c;
    let mut out = vec![0.0; l * row_len];
    for y in 0..h {
        for xx in 0..w {
            let r = y * w + xx;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let sy = y as i64 + dy;
                    let sx = xx as i64 + dx;
                    if sy < 0 || sy >= h as i64 || sx < 0 || sx >= w as i64 {
                        continue;
                    }
                    let tap = ((dy + 1) * 3 + (dx + 1)) as usize;
                    for ch in 0..c {
                        out[r * row_len + tap * c + ch] =
                            x[ch * h * w + sy as usize * w + sx as usize];
                    }
                }
            }
        }
    }
    out
}

fn fold_raw(rows: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let row_len = 9 * c;
    let mut out = vec![0.0; c * h * w];
    for y in 0..h {
        for xx in 0..w {
            let r = y * w + xx;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let sy = y as i64 + dy;
                    let sx = xx as i64 + dx;
                    if sy < 0 || sy >= h as i64 || sx < 0 || sx >= w as i64 {
                        continue;
                    }
                    let tap = ((dy + 1) * 3 + (dx + 1)) as usize;
                    for ch in 0..c {
                        out[ch * h * w + sy as usize * w + sx as usize] +=
                            rows[r * row_len + tap * c + ch];
                    }
                }
            }
        }
    }
    out
}

/// Overlap count per grid cell for the 3x3 / stride 1 / pad 1 patching.
fn fold_counts(h: usize, w: usize) -> Vec<f64> {
    let mut counts = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let sy = y + dy;
                    let sx = x + dx;
                    if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                        counts[(sy * w as i64 + sx) as usize] += 1.0;
                    }
                }
            }
        }
    }
    counts
}

// ── tape ─────────────────────────────────────────────────────────────

#[cfg(target_os = "linux")]
fn tune_allocator() {
    use std::sync::Once;
    static ONCE: Once = Once::new();
    // The tape allocates and frees hundreds of 100KB..1MB buffers per
    // forward pass; glibc's default mmap threshold turns each into an
    // mmap/munmap cycle with fresh-page faults, which dominates runtime.
    // Keeping them on the heap is a ~2x end-to-end speedup.
    ONCE.call_once(|| unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    });
}

#[cfg(not(target_os = "linux"))]
fn tune_allocator() {}

impl Tape {
    pub fn new() -> Self {
        tune_allocator();
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, op: Op, needs_grad: bool) -> TensorId {
        let id = self.nodes.len();
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            value: Tensor {
                shape,
                data,
                requires_grad: false,
                grad: None,
                tape_id: Some(id),
            },
            op,
            needs_grad,
        });
        TensorId(id)
    }

    /// Inserts a leaf node copying the tensor's data.
    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> TensorId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value: Tensor {
                shape: t.shape.clone(),
                data: t.data.clone(),
                requires_grad,
                grad: None,
                tape_id: Some(id),
            },
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        TensorId(id)
    }

    pub fn constant(&mut self, data: Vec<f64>, shape: &[usize]) -> Result<TensorId> {
        let t = Tensor::new(data, shape)?;
        Ok(self.leaf(&t, false))
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        let t = Tensor::scalar(v);
        self.leaf(&t, false)
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].value.data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].value.shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].value.grad.as_deref()
    }

    /// Copies the node's value out as a detached tensor.
    pub fn detach(&self, id: TensorId) -> Tensor {
        let n = &self.nodes[id.0];
        Tensor {
            shape: n.value.shape.clone(),
            data: n.value.data.clone(),
            requires_grad: false,
            grad: None,
            tape_id: None,
        }
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ── elementwise binary (broadcasting) ────────────────────────────

    fn bin(&mut self, a: TensorId, b: TensorId, kind: BinKind, name: &'static str) -> Result<TensorId> {
        let out_shape = broadcast_shape(self.shape(a), self.shape(b), name)?;
        let va_owned;
        let va: &[f64] = if self.shape(a) == out_shape {
            self.data(a)
        } else {
            va_owned = expand(self.data(a), self.shape(a), &out_shape);
            &va_owned
        };
        let vb_owned;
        let vb: &[f64] = if self.shape(b) == out_shape {
            self.data(b)
        } else {
            vb_owned = expand(self.data(b), self.shape(b), &out_shape);
            &vb_owned
        };
        let data: Vec<f64> = match kind {
            BinKind::Add => va.iter().zip(vb).map(|(x, y)| x + y).collect(),
            BinKind::Sub => va.iter().zip(vb).map(|(x, y)| x - y).collect(),
            BinKind::Mul => va.iter().zip(vb).map(|(x, y)| x * y).collect(),
            BinKind::Div => va.iter().zip(vb).map(|(x, y)| x / y).collect(),
        };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(data, out_shape, Op::Bin { a, b, kind }, ng))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.bin(a, b, BinKind::Add, "add")
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.bin(a, b, BinKind::Sub, "sub")
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.bin(a, b, BinKind::Mul, "mul")
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.bin(a, b, BinKind::Div, "div")
    }

    // ── scalar / unary ───────────────────────────────────────────────

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|x| x + c).collect();
        let (shape, ng) = (self.shape(a).to_vec(), self.needs(a));
        self.push(data, shape, Op::AddScalar { a }, ng)
    }

    pub fn mul_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|x| x * c).collect();
        let (shape, ng) = (self.shape(a).to_vec(), self.needs(a));
        self.push(data, shape, Op::MulScalar { a, c }, ng)
    }

    pub fn pow_scalar(&mut self, a: TensorId, p: f64) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|x| x.powf(p)).collect();
        let (shape, ng) = (self.shape(a).to_vec(), self.needs(a));
        self.push(data, shape, Op::PowScalar { a, p }, ng)
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|x| x.max(0.0)).collect();
        let (shape, ng) = (self.shape(a).to_vec(), self.needs(a));
        self.push(data, shape, Op::Relu { a }, ng)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .map(|&x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let (shape, ng) = (self.shape(a).to_vec(), self.needs(a));
        self.push(data, shape, Op::Sigmoid { a }, ng)
    }

    pub fn log(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|x| x.ln()).collect();
        let (shape, ng) = (self.shape(a).to_vec(), self.needs(a));
        self.push(data, shape, Op::Log { a }, ng)
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|x| x.exp()).collect();
        let (shape, ng) = (self.shape(a).to_vec(), self.needs(a));
        self.push(data, shape, Op::Exp { a }, ng)
    }

    pub fn sqrt(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|x| x.sqrt()).collect();
        let (shape, ng) = (self.shape(a).to_vec(), self.needs(a));
        self.push(data, shape, Op::Sqrt { a }, ng)
    }

    /// Clamp to [lo, hi]; gradient passes only strictly inside the interval.
    pub fn clamp(&mut self, a: TensorId, lo: f64, hi: f64) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|x| x.clamp(lo, hi)).collect();
        let (shape, ng) = (self.shape(a).to_vec(), self.needs(a));
        self.push(data, shape, Op::Clamp { a, lo, hi }, ng)
    }

    // ── matmul / transpose / reshape ─────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(VagError::DimMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_nn(self.data(a), self.data(b), m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(data, vec![m, n], Op::Matmul { a, b, m, k, n }, ng))
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(VagError::contract(
                "transpose",
                format!("expected rank 2, got shape {s:?}"),
            ));
        }
        let (m, n) = (s[0], s[1]);
        let src = self.data(a);
        let mut data = Vec::with_capacity(m * n);
        for j in 0..n {
            for i in 0..m {
                data.push(src[i * n + j]);
            }
        }
        let ng = self.needs(a);
        Ok(self.push(data, vec![n, m], Op::Transpose { a, m, n }, ng))
    }

    pub fn reshape(&mut self, a: TensorId, shape: &[usize]) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.data(a).len() {
            return Err(VagError::contract(
                "reshape",
                format!(
                    "cannot reshape {:?} ({} elements) to {:?}",
                    self.shape(a),
                    self.data(a).len(),
                    shape
                ),
            ));
        }
        let data = self.data(a).to_vec();
        let ng = self.needs(a);
        Ok(self.push(data, shape.to_vec(), Op::Reshape { a }, ng))
    }

    // ── reductions ───────────────────────────────────────────────────

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.data(a).iter().sum();
        let ng = self.needs(a);
        self.push(vec![s], vec![1], Op::SumAll { a }, ng)
    }

    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let n = self.data(a).len() as f64;
        let s: f64 = self.data(a).iter().sum::<f64>() / n;
        let ng = self.needs(a);
        self.push(vec![s], vec![1], Op::MeanAll { a }, ng)
    }

    pub fn sum_axis(&mut self, a: TensorId, axis: usize, keepdim: bool) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(VagError::bounds(
                "sum_axis",
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let (outer, len, inner) = lanes(&shape, axis);
        let src = self.data(a);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let base = (o * len + j) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[base + i];
                }
            }
        }
        let mut out_shape = shape.clone();
        if keepdim {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
            if out_shape.is_empty() {
                out_shape.push(1);
            }
        }
        let ng = self.needs(a);
        Ok(self.push(data, out_shape, Op::SumAxis { a, axis }, ng))
    }

    pub fn mean_axis(&mut self, a: TensorId, axis: usize, keepdim: bool) -> Result<TensorId> {
        let len = self.shape(a)[axis] as f64;
        let s = self.sum_axis(a, axis, keepdim)?;
        Ok(self.mul_scalar(s, 1.0 / len))
    }

    /// Max along `axis` (axis removed). Ties route the gradient to the
    /// lowest index.
    pub fn max_axis(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(VagError::bounds(
                "max_axis",
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let (outer, len, inner) = lanes(&shape, axis);
        let src = self.data(a);
        let mut data = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let base = (o * len + j) * inner;
                for i in 0..inner {
                    let v = src[base + i];
                    let slot = o * inner + i;
                    if v > data[slot] {
                        data[slot] = v;
                        argmax[slot] = base + i;
                    }
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let ng = self.needs(a);
        Ok(self.push(data, out_shape, Op::MaxAxis { a, argmax }, ng))
    }

    /// Numerically stabilized softmax along `axis`.
    pub fn softmax(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        self.softmax_scaled(a, axis, 1.0)
    }

    /// softmax(scale · x) along `axis`, with the scaling fused in.
    pub fn softmax_scaled(&mut self, a: TensorId, axis: usize, scale: f64) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(VagError::bounds(
                "softmax",
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let (outer, len, inner) = lanes(&shape, axis);
        let src = self.data(a);
        let mut data;
        if inner == 1 {
            // contiguous lanes: single allocation, sequential writes
            data = Vec::with_capacity(src.len());
            for o in 0..outer {
                let lane = &src[o * len..(o + 1) * len];
                let mut mx = f64::NEG_INFINITY;
                for &v in lane {
                    mx = mx.max(scale * v);
                }
                let base = data.len();
                let mut denom = 0.0;
                for &v in lane {
                    let e = (scale * v - mx).exp();
                    data.push(e);
                    denom += e;
                }
                for slot in &mut data[base..] {
                    *slot /= denom;
                }
            }
        } else {
            data = vec![0.0; src.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * len + j) * inner + i;
                    let mut mx = f64::NEG_INFINITY;
                    for j in 0..len {
                        mx = mx.max(scale * src[at(j)]);
                    }
                    let mut denom = 0.0;
                    for j in 0..len {
                        let e = (scale * src[at(j)] - mx).exp();
                        data[at(j)] = e;
                        denom += e;
                    }
                    for j in 0..len {
                        data[at(j)] /= denom;
                    }
                }
            }
        }
        let ng = self.needs(a);
        Ok(self.push(data, shape, Op::Softmax { a, axis, scale }, ng))
    }

    /// out = A^T · B for A of shape [k, m] and B of shape [k, n]; saves the
    /// explicit transpose on attention queries.
    pub fn matmul_at(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(VagError::DimMismatch {
                op: "matmul_at",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (k, m, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_tn(self.data(a), self.data(b), k, m, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(data, vec![m, n], Op::MatmulAt { a, b, k, m, n }, ng))
    }

    /// out = A · B^T for A of shape [m, n] and B of shape [k, n]; saves the
    /// explicit transpose on attention keys/values.
    pub fn matmul_bt(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(VagError::DimMismatch {
                op: "matmul_bt",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, n, k) = (sa[0], sa[1], sb[0]);
        let data = matmul_nt(self.data(a), self.data(b), m, n, k);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(data, vec![m, k], Op::MatmulBt { a, b, m, n, k }, ng))
    }

    // ── structure ────────────────────────────────────────────────────

    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(VagError::contract("concat", "empty part list"));
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(VagError::bounds(
                "concat",
                format!("axis {axis} out of range for shape {first:?}"),
            ));
        }
        let mut total = 0usize;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(d, (x, y))| d != axis && x != y)
            {
                return Err(VagError::DimMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = lanes(&out_shape, axis);
        let numel: usize = out_shape.iter().product();
        let mut data = vec![0.0; numel];
        let mut offset = 0usize;
        for &p in parts {
            let len_p = self.shape(p)[axis];
            let src = self.data(p);
            for o in 0..outer {
                let dst_base = (o * total + offset) * inner;
                let src_base = o * len_p * inner;
                data[dst_base..dst_base + len_p * inner]
                    .copy_from_slice(&src[src_base..src_base + len_p * inner]);
            }
            offset += len_p;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            data,
            out_shape,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            ng,
        ))
    }

    pub fn slice(&mut self, a: TensorId, axis: usize, start: usize, len: usize) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(VagError::bounds(
                "slice",
                format!("slice [{start}, {}) on axis {axis} of shape {shape:?}", start + len),
            ));
        }
        let (outer, full, inner) = lanes(&shape, axis);
        let src = self.data(a);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let src_base = (o * full + start) * inner;
            data.extend_from_slice(&src[src_base..src_base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let ng = self.needs(a);
        Ok(self.push(data, out_shape, Op::Slice { a, axis, start, len }, ng))
    }

    // ── patch ops ────────────────────────────────────────────────────

    /// 3x3 / stride 1 / pad 1 sliding patches of a C×H×W map, flattened to
    /// L×(9C) rows in raster order with (dy, dx, channel) entry layout.
    /// Other configurations are rejected.
    pub fn unfold(
        &mut self,
        a: TensorId,
        patch: usize,
        stride: usize,
        pad: usize,
    ) -> Result<TensorId> {
        if (patch, stride, pad) != (3, 1, 1) {
            return Err(VagError::unsupported(
                "unfold",
                format!("only patch 3 / stride 1 / pad 1 is supported, got ({patch}, {stride}, {pad})"),
            ));
        }
        let shape = self.shape(a).to_vec();
        if shape.len() != 3 {
            return Err(VagError::contract(
                "unfold",
                format!("expected rank-3 C×H×W input, got shape {shape:?}"),
            ));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let data = unfold_raw(self.data(a), c, h, w);
        let ng = self.needs(a);
        Ok(self.push(data, vec![h * w, 9 * c], Op::Unfold { a, c, h, w }, ng))
    }

    /// Reassembles L×(9C) patch rows into a C×H×W map, summing overlaps;
    /// with `normalize`, each cell is divided by its overlap count.
    pub fn fold(
        &mut self,
        a: TensorId,
        h: usize,
        w: usize,
        normalize: bool,
    ) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || shape[1] % 9 != 0 {
            return Err(VagError::contract(
                "fold",
                format!("expected L×(9C) rows, got shape {shape:?}"),
            ));
        }
        let c = shape[1] / 9;
        if shape[0] != h * w {
            return Err(VagError::DimMismatch {
                op: "fold",
                lhs: shape.clone(),
                rhs: vec![h * w, 9 * c],
            });
        }
        let mut data = fold_raw(self.data(a), c, h, w);
        if normalize {
            let counts = fold_counts(h, w);
            for ch in 0..c {
                for (cell, &cnt) in counts.iter().enumerate() {
                    data[ch * h * w + cell] /= cnt;
                }
            }
        }
        let ng = self.needs(a);
        Ok(self.push(data, vec![c, h, w], Op::Fold { a, c, h, w, normalize }, ng))
    }

    // ── batch norm ───────────────────────────────────────────────────

    /// Training-mode batch norm over the M axis of a C×M map. Returns the
    /// normalized output; the observed per-channel (mean, var) are stored on
    /// the node and retrievable via [`Tape::batchnorm_observed`] for running
    /// stat updates. Degenerate variance is floored by `eps`.
    pub fn batchnorm_train(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(VagError::contract(
                "batchnorm",
                format!("expected C×M input, got shape {shape:?}"),
            ));
        }
        let (c, m) = (shape[0], shape[1]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(VagError::DimMismatch {
                op: "batchnorm",
                lhs: shape,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let src = self.data(x);
        let g = self.data(gamma).to_vec();
        let b = self.data(beta).to_vec();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let row = &src[ch * m..(ch + 1) * m];
            let mu = row.iter().sum::<f64>() / m as f64;
            let v = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / m as f64;
            mean[ch] = mu;
            var[ch] = v;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut data = vec![0.0; c * m];
        for ch in 0..c {
            for j in 0..m {
                let xhat = (src[ch * m + j] - mean[ch]) * inv_std[ch];
                data[ch * m + j] = g[ch] * xhat + b[ch];
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            data,
            vec![c, m],
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                mean,
                var,
                inv_std,
            },
            ng,
        ))
    }

    /// The (mean, var) observed by a `batchnorm_train` node.
    pub fn batchnorm_observed(&self, id: TensorId) -> Option<(&[f64], &[f64])> {
        match &self.nodes[id.0].op {
            Op::BatchNormTrain { mean, var, .. } => Some((mean, var)),
            _ => None,
        }
    }

    /// Eval-mode batch norm: normalizes with externally supplied running
    /// statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(VagError::contract(
                "batchnorm",
                format!("expected C×M input, got shape {shape:?}"),
            ));
        }
        let (c, m) = (shape[0], shape[1]);
        if running_mean.len() != c || running_var.len() != c {
            return Err(VagError::contract(
                "batchnorm",
                format!("running stats length {} != channels {c}", running_mean.len()),
            ));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let src = self.data(x);
        let g = self.data(gamma).to_vec();
        let b = self.data(beta).to_vec();
        let mut data = vec![0.0; c * m];
        for ch in 0..c {
            for j in 0..m {
                let xhat = (src[ch * m + j] - running_mean[ch]) * inv_std[ch];
                data[ch * m + j] = g[ch] * xhat + b[ch];
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            data,
            vec![c, m],
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                running_mean: running_mean.to_vec(),
                inv_std,
            },
            ng,
        ))
    }

    // ── gathers ──────────────────────────────────────────────────────

    /// out[:, j] = src[:, idx[j]] for a C×M source.
    pub fn gather_cols(&mut self, a: TensorId, idx: &[usize]) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(VagError::contract(
                "gather_cols",
                format!("expected C×M input, got shape {shape:?}"),
            ));
        }
        let (c, m) = (shape[0], shape[1]);
        if let Some(&bad) = idx.iter().find(|&&j| j >= m) {
            return Err(VagError::bounds(
                "gather_cols",
                format!("column index {bad} out of range for {m} columns"),
            ));
        }
        let src = self.data(a);
        let n = idx.len();
        let mut data = Vec::with_capacity(c * n);
        for ch in 0..c {
            let row = &src[ch * m..(ch + 1) * m];
            for &s in idx {
                data.push(row[s]);
            }
        }
        let ng = self.needs(a);
        Ok(self.push(data, vec![c, n], Op::GatherCols { a, idx: idx.to_vec() }, ng))
    }

    /// Fixed-weight mixture of source columns: with idx/w of shape n×k
    /// (flattened), out[:, j] = Σ_t w[j,t] · src[:, idx[j,t]].
    pub fn gather_mix(
        &mut self,
        a: TensorId,
        idx: &[usize],
        w: &[f64],
        k: usize,
    ) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(VagError::contract(
                "gather_mix",
                format!("expected C×M input, got shape {shape:?}"),
            ));
        }
        if idx.len() != w.len() || idx.len() % k != 0 {
            return Err(VagError::contract(
                "gather_mix",
                format!("idx/w lengths {}/{} not a multiple of k={k}", idx.len(), w.len()),
            ));
        }
        let (c, m) = (shape[0], shape[1]);
        if let Some(&bad) = idx.iter().find(|&&j| j >= m) {
            return Err(VagError::bounds(
                "gather_mix",
                format!("column index {bad} out of range for {m} columns"),
            ));
        }
        let n = idx.len() / k;
        let src = self.data(a);
        let mut data = Vec::with_capacity(c * n);
        for ch in 0..c {
            let row = &src[ch * m..(ch + 1) * m];
            for j in 0..n {
                let mut s = 0.0;
                for t in 0..k {
                    s += w[j * k + t] * row[idx[j * k + t]];
                }
                data.push(s);
            }
        }
        let ng = self.needs(a);
        Ok(self.push(
            data,
            vec![c, n],
            Op::GatherMix {
                a,
                idx: idx.to_vec(),
                w: w.to_vec(),
                k,
            },
            ng,
        ))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Gradients accumulate into the
    /// `grad` buffer of every `requires_grad` ancestor; repeated calls
    /// without resetting keep accumulating.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.data(loss).len() != 1 {
            return Err(VagError::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let n = self.nodes.len();
        let mut work: Vec<Option<Vec<f64>>> = vec![None; n];
        work[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = match work[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut work);
            if self.nodes[i].value.requires_grad {
                let slot = self.nodes[i]
                    .value
                    .grad
                    .get_or_insert_with(|| vec![0.0; g.len()]);
                for (s, gv) in slot.iter_mut().zip(&g) {
                    *s += gv;
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], work: &mut [Option<Vec<f64>>]) {
        let acc = |work: &mut [Option<Vec<f64>>], id: TensorId, contribution: Vec<f64>| {
            match &mut work[id.0] {
                Some(buf) => {
                    for (b, c) in buf.iter_mut().zip(&contribution) {
                        *b += c;
                    }
                }
                slot @ None => *slot = Some(contribution),
            }
        };
        let needs = |id: TensorId| self.nodes[id.0].needs_grad;
        let out_shape = self.nodes[i].value.shape.clone();
        let out_data = &self.nodes[i].value.data;

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Bin { a, b, kind } => {
                let (a, b, kind) = (*a, *b, *kind);
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                match kind {
                    BinKind::Add => {
                        if needs(a) {
                            acc(work, a, reduce_to_shape(g, &out_shape, &sa));
                        }
                        if needs(b) {
                            acc(work, b, reduce_to_shape(g, &out_shape, &sb));
                        }
                    }
                    BinKind::Sub => {
                        if needs(a) {
                            acc(work, a, reduce_to_shape(g, &out_shape, &sa));
                        }
                        if needs(b) {
                            let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                            acc(work, b, reduce_to_shape(&neg, &out_shape, &sb));
                        }
                    }
                    BinKind::Mul => {
                        if needs(a) {
                            let ga: Vec<f64> = if sb == out_shape {
                                g.iter().zip(self.data(b)).map(|(x, y)| x * y).collect()
                            } else {
                                let vb = expand(self.data(b), &sb, &out_shape);
                                g.iter().zip(&vb).map(|(x, y)| x * y).collect()
                            };
                            acc(work, a, reduce_to_shape(&ga, &out_shape, &sa));
                        }
                        if needs(b) {
                            let gb: Vec<f64> = if sa == out_shape {
                                g.iter().zip(self.data(a)).map(|(x, y)| x * y).collect()
                            } else {
                                let va = expand(self.data(a), &sa, &out_shape);
                                g.iter().zip(&va).map(|(x, y)| x * y).collect()
                            };
                            acc(work, b, reduce_to_shape(&gb, &out_shape, &sb));
                        }
                    }
                    BinKind::Div => {
                        let vb_owned;
                        let vb: &[f64] = if sb == out_shape {
                            self.data(b)
                        } else {
                            vb_owned = expand(self.data(b), &sb, &out_shape);
                            &vb_owned
                        };
                        if needs(a) {
                            let ga: Vec<f64> = g.iter().zip(vb).map(|(x, y)| x / y).collect();
                            acc(work, a, reduce_to_shape(&ga, &out_shape, &sa));
                        }
                        if needs(b) {
                            let va_owned;
                            let va: &[f64] = if sa == out_shape {
                                self.data(a)
                            } else {
                                va_owned = expand(self.data(a), &sa, &out_shape);
                                &va_owned
                            };
                            let gb: Vec<f64> = g
                                .iter()
                                .zip(va.iter().zip(vb))
                                .map(|(x, (av, bv))| -x * av / (bv * bv))
                                .collect();
                            acc(work, b, reduce_to_shape(&gb, &out_shape, &sb));
                        }
                    }
                }
            }
            Op::AddScalar { a } => {
                if needs(*a) {
                    acc(work, *a, g.to_vec());
                }
            }
            Op::MulScalar { a, c } => {
                if needs(*a) {
                    acc(work, *a, g.iter().map(|x| x * c).collect());
                }
            }
            Op::PowScalar { a, p } => {
                if needs(*a) {
                    let src = self.data(*a);
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(src)
                        .map(|(gv, &x)| gv * p * x.powf(p - 1.0))
                        .collect();
                    acc(work, *a, ga);
                }
            }
            Op::Relu { a } => {
                if needs(*a) {
                    let src = self.data(*a);
                    acc(
                        work,
                        *a,
                        g.iter()
                            .zip(src)
                            .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                            .collect(),
                    );
                }
            }
            Op::Sigmoid { a } => {
                if needs(*a) {
                    acc(
                        work,
                        *a,
                        g.iter()
                            .zip(out_data)
                            .map(|(gv, &y)| gv * y * (1.0 - y))
                            .collect(),
                    );
                }
            }
            Op::Log { a } => {
                if needs(*a) {
                    let src = self.data(*a);
                    acc(work, *a, g.iter().zip(src).map(|(gv, &x)| gv / x).collect());
                }
            }
            Op::Exp { a } => {
                if needs(*a) {
                    acc(
                        work,
                        *a,
                        g.iter().zip(out_data).map(|(gv, &y)| gv * y).collect(),
                    );
                }
            }
            Op::Sqrt { a } => {
                if needs(*a) {
                    acc(
                        work,
                        *a,
                        g.iter()
                            .zip(out_data)
                            .map(|(gv, &y)| gv / (2.0 * y))
                            .collect(),
                    );
                }
            }
            Op::Clamp { a, lo, hi } => {
                if needs(*a) {
                    let src = self.data(*a);
                    acc(
                        work,
                        *a,
                        g.iter()
                            .zip(src)
                            .map(|(gv, &x)| if x > *lo && x < *hi { *gv } else { 0.0 })
                            .collect(),
                    );
                }
            }
            Op::Matmul { a, b, m, k, n } => {
                let (a, b, m, k, n) = (*a, *b, *m, *k, *n);
                if needs(a) {
                    acc(work, a, matmul_nt(g, self.data(b), m, n, k));
                }
                if needs(b) {
                    acc(work, b, matmul_tn(self.data(a), g, m, k, n));
                }
            }
            Op::MatmulAt { a, b, k, m, n } => {
                // out = A^T B; dA = B·g^T, dB = A·g
                let (a, b, k, m, n) = (*a, *b, *k, *m, *n);
                if needs(a) {
                    acc(work, a, matmul_nt(self.data(b), g, k, n, m));
                }
                if needs(b) {
                    acc(work, b, matmul_nn(self.data(a), g, k, m, n));
                }
            }
            Op::MatmulBt { a, b, m, n, k } => {
                // out = A·B^T; dA = g·B, dB = g^T·A
                let (a, b, m, n, k) = (*a, *b, *m, *n, *k);
                if needs(a) {
                    acc(work, a, matmul_nn(g, self.data(b), m, k, n));
                }
                if needs(b) {
                    acc(work, b, matmul_tn(g, self.data(a), m, k, n));
                }
            }
            Op::SumAll { a } => {
                if needs(*a) {
                    acc(work, *a, vec![g[0]; self.data(*a).len()]);
                }
            }
            Op::MeanAll { a } => {
                if needs(*a) {
                    let n = self.data(*a).len();
                    acc(work, *a, vec![g[0] / n as f64; n]);
                }
            }
            Op::SumAxis { a, axis } => {
                if needs(*a) {
                    let shape = self.shape(*a).to_vec();
                    let (outer, len, inner) = lanes(&shape, *axis);
                    let mut ga = vec![0.0; self.data(*a).len()];
                    for o in 0..outer {
                        for j in 0..len {
                            let base = (o * len + j) * inner;
                            for i in 0..inner {
                                ga[base + i] = g[o * inner + i];
                            }
                        }
                    }
                    acc(work, *a, ga);
                }
            }
            Op::MaxAxis { a, argmax } => {
                if needs(*a) {
                    let mut ga = vec![0.0; self.data(*a).len()];
                    for (slot, &src_idx) in argmax.iter().enumerate() {
                        ga[src_idx] += g[slot];
                    }
                    acc(work, *a, ga);
                }
            }
            Op::Softmax { a, axis, scale } => {
                if needs(*a) {
                    let shape = out_shape.clone();
                    let (outer, len, inner) = lanes(&shape, *axis);
                    let y = out_data;
                    let mut ga = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * len + j) * inner + i;
                            let mut dot = 0.0;
                            for j in 0..len {
                                dot += g[at(j)] * y[at(j)];
                            }
                            for j in 0..len {
                                ga[at(j)] = scale * y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                    acc(work, *a, ga);
                }
            }
            Op::Transpose { a, m, n } => {
                if needs(*a) {
                    // g has shape n×m; transpose back to m×n
                    let (m, n) = (*m, *n);
                    let mut ga = vec![0.0; m * n];
                    for j in 0..n {
                        for i in 0..m {
                            ga[i * n + j] = g[j * m + i];
                        }
                    }
                    acc(work, *a, ga);
                }
            }
            Op::Reshape { a } => {
                if needs(*a) {
                    acc(work, *a, g.to_vec());
                }
            }
            Op::Concat { parts, axis } => {
                let parts = parts.clone();
                let axis = *axis;
                let (outer, total, inner) = lanes(&out_shape, axis);
                let mut offset = 0usize;
                for &p in &parts {
                    let len_p = self.shape(p)[axis];
                    if needs(p) {
                        let mut gp = vec![0.0; self.data(p).len()];
                        for o in 0..outer {
                            let src_base = (o * total + offset) * inner;
                            let dst_base = o * len_p * inner;
                            gp[dst_base..dst_base + len_p * inner]
                                .copy_from_slice(&g[src_base..src_base + len_p * inner]);
                        }
                        acc(work, p, gp);
                    }
                    offset += len_p;
                }
            }
            Op::Slice { a, axis, start, len } => {
                if needs(*a) {
                    let shape = self.shape(*a).to_vec();
                    let (outer, full, inner) = lanes(&shape, *axis);
                    let mut ga = vec![0.0; self.data(*a).len()];
                    for o in 0..outer {
                        let dst_base = (o * full + start) * inner;
                        let src_base = o * len * inner;
                        ga[dst_base..dst_base + len * inner]
                            .copy_from_slice(&g[src_base..src_base + len * inner]);
                    }
                    acc(work, *a, ga);
                }
            }
            Op::Unfold { a, c, h, w } => {
                if needs(*a) {
                    acc(work, *a, fold_raw(g, *c, *h, *w));
                }
            }
            Op::Fold { a, c, h, w, normalize } => {
                if needs(*a) {
                    let (c, h, w) = (*c, *h, *w);
                    let gin = if *normalize {
                        let counts = fold_counts(h, w);
                        let mut scaled = g.to_vec();
                        for ch in 0..c {
                            for (cell, &cnt) in counts.iter().enumerate() {
                                scaled[ch * h * w + cell] /= cnt;
                            }
                        }
                        unfold_raw(&scaled, c, h, w)
                    } else {
                        unfold_raw(g, c, h, w)
                    };
                    acc(work, *a, gin);
                }
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                ..
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let c = mean.len();
                let m = self.shape(x)[1];
                let src = self.data(x);
                let gm = self.data(gamma);
                if needs(beta) {
                    let mut gb = vec![0.0; c];
                    for ch in 0..c {
                        gb[ch] = g[ch * m..(ch + 1) * m].iter().sum();
                    }
                    acc(work, beta, gb);
                }
                if needs(gamma) {
                    let mut gg = vec![0.0; c];
                    for ch in 0..c {
                        for j in 0..m {
                            let xhat = (src[ch * m + j] - mean[ch]) * inv_std[ch];
                            gg[ch] += g[ch * m + j] * xhat;
                        }
                    }
                    acc(work, gamma, gg);
                }
                if needs(x) {
                    let mut gx = vec![0.0; c * m];
                    for ch in 0..c {
                        let mut sum_dy = 0.0;
                        let mut sum_dy_xhat = 0.0;
                        for j in 0..m {
                            let dxhat = g[ch * m + j] * gm[ch];
                            let xhat = (src[ch * m + j] - mean[ch]) * inv_std[ch];
                            sum_dy += dxhat;
                            sum_dy_xhat += dxhat * xhat;
                        }
                        let mf = m as f64;
                        for j in 0..m {
                            let dxhat = g[ch * m + j] * gm[ch];
                            let xhat = (src[ch * m + j] - mean[ch]) * inv_std[ch];
                            gx[ch * m + j] =
                                inv_std[ch] / mf * (mf * dxhat - sum_dy - xhat * sum_dy_xhat);
                        }
                    }
                    acc(work, x, gx);
                }
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                running_mean,
                inv_std,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let c = running_mean.len();
                let m = self.shape(x)[1];
                let src = self.data(x);
                let gm = self.data(gamma);
                if needs(beta) {
                    let mut gb = vec![0.0; c];
                    for ch in 0..c {
                        gb[ch] = g[ch * m..(ch + 1) * m].iter().sum();
                    }
                    acc(work, beta, gb);
                }
                if needs(gamma) {
                    let mut gg = vec![0.0; c];
                    for ch in 0..c {
                        for j in 0..m {
                            let xhat = (src[ch * m + j] - running_mean[ch]) * inv_std[ch];
                            gg[ch] += g[ch * m + j] * xhat;
                        }
                    }
                    acc(work, gamma, gg);
                }
                if needs(x) {
                    let mut gx = vec![0.0; c * m];
                    for ch in 0..c {
                        for j in 0..m {
                            gx[ch * m + j] = g[ch * m + j] * gm[ch] * inv_std[ch];
                        }
                    }
                    acc(work, x, gx);
                }
            }
            Op::GatherCols { a, idx } => {
                if needs(*a) {
                    let shape = self.shape(*a).to_vec();
                    let (c, m) = (shape[0], shape[1]);
                    let n = idx.len();
                    let mut ga = vec![0.0; c * m];
                    for ch in 0..c {
                        for (j, &s) in idx.iter().enumerate() {
                            ga[ch * m + s] += g[ch * n + j];
                        }
                    }
                    acc(work, *a, ga);
                }
            }
            Op::GatherMix { a, idx, w, k } => {
                if needs(*a) {
                    let shape = self.shape(*a).to_vec();
                    let (c, m) = (shape[0], shape[1]);
                    let n = idx.len() / k;
                    let mut ga = vec![0.0; c * m];
                    for ch in 0..c {
                        for j in 0..n {
                            let gv = g[ch * n + j];
                            for t in 0..*k {
                                ga[ch * m + idx[j * k + t]] += w[j * k + t] * gv;
                            }
                        }
                    }
                    acc(work, *a, ga);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{fd_check, project_to_scalar, rand_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
        }
    }

    #[test]
    fn matmul_identity_passthrough() {
        let mut tape = Tape::new();
        let eye = tape.constant(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let x = tape.constant(vec![3.0, -1.0, 2.5, 0.0, 7.0, 4.0], &[2, 3]).unwrap();
        let y = tape.matmul(eye, x).unwrap();
        assert_eq!(tape.data(y), tape.data(x));
    }

    #[test]
    fn matmul_hand_arithmetic() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = tape.constant(vec![1.0, 1.0], &[2, 1]).unwrap();
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.data(c), &[3.0, 7.0]);
        assert_eq!(tape.shape(c), &[2, 1]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![0.0; 6], &[2, 3]).unwrap();
        let b = tape.constant(vec![0.0; 8], &[4, 2]).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = rand_tensor(&mut rng, &[5, 7]);
        let b = rand_tensor(&mut rng, &[7, 3]);
        let rep = fd_check(&[a, b], 50, 9, &|t, ids| {
            let c = t.matmul(ids[0], ids[1])?;
            project_to_scalar(t, c, 33)
        })
        .unwrap();
        assert!(rep.max_rel_err <= 1e-6, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn softmax_uniform_on_equal_inputs() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![0.0, 0.0, 0.0], &[1, 3]).unwrap();
        let y = tape.softmax(x, 1).unwrap();
        assert_close(tape.data(y), &[1.0 / 3.0; 3], 1e-15);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![1000.0, 0.0], &[1, 2]).unwrap();
        let y = tape.softmax(x, 1).unwrap();
        let d = tape.data(y);
        assert!(d[0] > 1.0 - 1e-12 && d[1] < 1e-12);
        assert!(d.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[4, 6]);
        let mut shifted = x.clone();
        for v in shifted.data.iter_mut() {
            *v += 7.25;
        }
        let mut tape = Tape::new();
        let a = tape.leaf(&x, false);
        let b = tape.leaf(&shifted, false);
        let ya = tape.softmax(a, 1).unwrap();
        let yb = tape.softmax(b, 1).unwrap();
        for r in 0..4 {
            let row = &tape.data(ya)[r * 6..(r + 1) * 6];
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() <= 1e-9);
        }
        assert_close(tape.data(ya), tape.data(yb), 1e-9);
    }

    #[test]
    fn softmax_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, &[4, 6]);
        let rep = fd_check(&[x], 30, 5, &|t, ids| {
            let y = t.softmax(ids[0], 1)?;
            project_to_scalar(t, y, 34)
        })
        .unwrap();
        assert!(rep.max_rel_err <= 1e-5, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn unfold_all_ones_2x2_rows_sum_to_in_bounds_taps() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![1.0; 4], &[1, 2, 2]).unwrap();
        let rows = tape.unfold(x, 3, 1, 1).unwrap();
        assert_eq!(tape.shape(rows), &[4, 9]);
        for r in 0..4 {
            let s: f64 = tape.data(rows)[r * 9..(r + 1) * 9].iter().sum();
            assert_eq!(s, 4.0);
        }
    }

    #[test]
    fn unfold_single_pixel_center_tap() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![2.5], &[1, 1, 1]).unwrap();
        let rows = tape.unfold(x, 3, 1, 1).unwrap();
        assert_eq!(
            tape.data(rows),
            &[0.0, 0.0, 0.0, 0.0, 2.5, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn unfold_rejects_other_configs() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![0.0; 4], &[1, 2, 2]).unwrap();
        assert!(matches!(
            tape.unfold(x, 3, 2, 1),
            Err(VagError::UnsupportedConfig { .. })
        ));
    }

    #[test]
    fn fold_unfold_roundtrip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (c, h, w) in [(1, 1, 1), (2, 3, 5), (4, 8, 8), (3, 1, 7)] {
            let x = rand_tensor(&mut rng, &[c, h, w]);
            let mut tape = Tape::new();
            let a = tape.leaf(&x, false);
            let rows = tape.unfold(a, 3, 1, 1).unwrap();
            let back = tape.fold(rows, h, w, true).unwrap();
            assert_close(tape.data(back), &x.data, 1e-12);
        }
    }

    #[test]
    fn fold_single_row_stamps_top_left() {
        let mut tape = Tape::new();
        let mut rows = vec![0.0; 9 * 9]; // 3x3 grid, C=1
        for tap in 0..9 {
            rows[tap] = 1.0; // patch 0 only
        }
        let a = tape.constant(rows, &[9, 9]).unwrap();
        let y = tape.fold(a, 3, 3, false).unwrap();
        // patch 0 is centered at (0,0); in-bounds taps cover the 2x2 corner
        assert_eq!(
            tape.data(y),
            &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn fold_length_mismatch_is_dimension_error() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![0.0; 4 * 9], &[4, 9]).unwrap();
        assert!(matches!(
            tape.fold(a, 3, 3, false),
            Err(VagError::DimMismatch { .. })
        ));
    }

    #[test]
    fn fold_unfold_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor(&mut rng, &[2, 4, 5]);
        let rep = fd_check(&[x], 40, 21, &|t, ids| {
            let rows = t.unfold(ids[0], 3, 1, 1)?;
            let back = t.fold(rows, 4, 5, true)?;
            project_to_scalar(t, back, 35)
        })
        .unwrap();
        assert!(rep.max_rel_err <= 1e-5, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn batchnorm_standardized_input_is_fixed_point() {
        // per-channel zero mean / unit variance input, gamma=1, beta=0
        let m = 8;
        let mut data = Vec::new();
        for ch in 0..2 {
            let raw: Vec<f64> = (0..m).map(|j| (j as f64) + (ch as f64) * 0.37).collect();
            let mu = raw.iter().sum::<f64>() / m as f64;
            let var = raw.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / m as f64;
            data.extend(raw.iter().map(|x| (x - mu) / var.sqrt()));
        }
        let mut tape = Tape::new();
        let x = tape.constant(data.clone(), &[2, m]).unwrap();
        let gamma = tape.constant(vec![1.0, 1.0], &[2]).unwrap();
        let beta = tape.constant(vec![0.0, 0.0], &[2]).unwrap();
        let y = tape.batchnorm_train(x, gamma, beta, 1e-5).unwrap();
        assert_close(tape.data(y), &data, 1e-4);
    }

    #[test]
    fn batchnorm_constant_channel_outputs_beta() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![3.5; 6], &[1, 6]).unwrap();
        let gamma = tape.constant(vec![2.0], &[1]).unwrap();
        let beta = tape.constant(vec![-0.75], &[1]).unwrap();
        let y = tape.batchnorm_train(x, gamma, beta, 1e-5).unwrap();
        assert_close(tape.data(y), &[-0.75; 6], 1e-9);
        // M = 1 degenerate case also passes through the eps floor
        let x1 = tape.constant(vec![9.0], &[1, 1]).unwrap();
        let y1 = tape.batchnorm_train(x1, gamma, beta, 1e-5).unwrap();
        assert_close(tape.data(y1), &[-0.75], 1e-9);
    }

    #[test]
    fn batchnorm_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor(&mut rng, &[3, 16]);
        let gamma = rand_tensor(&mut rng, &[3]);
        let beta = rand_tensor(&mut rng, &[3]);
        let rep = fd_check(&[x, gamma, beta], 40, 13, &|t, ids| {
            let y = t.batchnorm_train(ids[0], ids[1], ids[2], 1e-5)?;
            project_to_scalar(t, y, 36)
        })
        .unwrap();
        assert!(rep.max_rel_err <= 1e-4, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = Tape::new();
        let x = Tensor::new(vec![1.0, -2.0, 0.5], &[3]).unwrap();
        let xid = tape.leaf(&x, true);
        let loss = tape.sum_all(xid);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(xid).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_elementwise_square_hand_derivative() {
        let mut tape = Tape::new();
        let x = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        let xid = tape.leaf(&x, true);
        let sq = tape.mul(xid, xid).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(xid).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        let xid = tape.leaf(&x, true);
        assert!(matches!(
            tape.backward(xid),
            Err(VagError::Contract { .. })
        ));
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let mut tape = Tape::new();
        let x = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        let xid = tape.leaf(&x, true);
        let loss = tape.sum_all(xid);
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(xid).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn tape_replay_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let x = rand_tensor(&mut rng, &[4, 4]);
            let w = rand_tensor(&mut rng, &[4, 4]);
            let mut tape = Tape::new();
            let xid = tape.leaf(&x, true);
            let wid = tape.leaf(&w, true);
            let h = tape.matmul(wid, xid).unwrap();
            let h = tape.relu(h);
            let s = tape.softmax(h, 1).unwrap();
            let loss = tape.mean_all(s);
            tape.backward(loss).unwrap();
            (
                tape.grad(xid).unwrap().to_vec(),
                tape.grad(wid).unwrap().to_vec(),
            )
        };
        let (g1x, g1w) = run();
        let (g2x, g2w) = run();
        assert!(g1x.iter().zip(&g2x).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(g1w.iter().zip(&g2w).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn all_primitive_gradients_pass() {
        for report in crate::gradcheck::tensor_op_checks().unwrap() {
            assert!(
                report.passed(),
                "{}: rel err {} > tol {}",
                report.name,
                report.max_rel_err,
                report.tol
            );
        }
    }

    #[test]
    fn max_axis_breaks_ties_toward_lowest_index() {
        let mut tape = Tape::new();
        let x = Tensor::new(vec![1.0, 3.0, 3.0, 2.0], &[1, 4]).unwrap();
        let xid = tape.leaf(&x, true);
        let y = tape.max_axis(xid, 1).unwrap();
        let loss = tape.sum_all(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(xid).unwrap(), &[0.0, 1.0, 0.0, 0.0]);
    }
}
