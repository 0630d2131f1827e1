use super::linalg::{col2im, gemm, im2col, ConvGeom, View, ViewMut};
use super::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// A contiguous block of rows `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn new(start: usize, len: usize) -> Self {
        Self { start, len }
    }

    /// Consecutive segments of the given lengths starting at row 0.
    pub fn tile(lengths: impl IntoIterator<Item = usize>) -> Vec<Segment> {
        let mut start = 0;
        lengths
            .into_iter()
            .map(|len| {
                let s = Segment { start, len };
                start += len;
                s
            })
            .collect()
    }
}

const PROB_CLAMP: f64 = 1e-7;
const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

enum Op {
    Input,
    Param(ParamId),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Tensor),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, rstd: Vec<f64> },
    L2NormRows { x: Var, norms: Vec<f64> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, idx: Vec<usize> },
    SegmentMean { x: Var, segments: Vec<Segment> },
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom, n: usize },
    GlobalAvgPool { x: Var, hw: usize },
    Attention(Box<AttentionCache>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    BinaryFocal { p: Var, y: Tensor, w: Vec<f64>, gamma: f64 },
    CategoricalFocal { p: Var, target: Vec<usize>, w: Vec<f64>, gamma: f64 },
    MarginRank { s: Var, y: Tensor },
}

struct AttentionCache {
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    seg_q: Vec<Segment>,
    seg_k: Vec<Segment>,
    scale: f64,
    /// Softmax weights per (segment, head), concatenated.
    probs: Vec<f64>,
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass and differentiates them.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(shape_err(format!("{what}: expected a matrix, got shape {s:?}"))),
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("only parameter nodes borrow their value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Matrix product with optional transposition of either operand.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = dims2(self.value(a), "matmul lhs")?;
        let (br, bc) = dims2(self.value(b), "matmul rhs")?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(shape_err(format!("matmul inner dims {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            let va = if ta { View::rm_t(av, ac) } else { View::rm(av, ac) };
            let vb = if tb { View::rm_t(bv, bc) } else { View::rm(bv, bc) };
            gemm(m, k, n, 1.0, va, vb, 0.0, ViewMut::rm(&mut out, n));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b, ta, tb }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `[m, n] + [n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, n) = dims2(self.value(a), "add_row")?;
        if self.value(row).len() != n {
            return Err(shape_err(format!("add_row: bias of {} for {n} columns", self.value(row).len())));
        }
        let bias = self.value(row).data();
        let data: Vec<f64> = self
            .value(a)
            .data()
            .chunks(n)
            .flat_map(|r| r.iter().zip(bias).map(|(x, b)| x + b))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(t, Op::AddRow(a, row), rg))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.value(a).data().iter().map(|x| f(*x)).collect(),
        };
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.map(a, Op::Scale(a, factor), |x| x * factor)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        if c.shape() != self.shape(a) {
            return Err(shape_err("mul_const: shape mismatch"));
        }
        let data = self.value(a).data().iter().zip(c.data()).map(|(x, m)| x * m).collect();
        let t = Tensor {
            shape: c.shape().to_vec(),
            data,
        };
        let rg = self.rg(a);
        Ok(self.push(t, Op::MulConst(a, c), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, Op::Gelu(a), |x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (_, n) = dims2(self.value(a), "softmax")?;
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::SoftmaxRows(a), rg))
    }

    /// Row-wise layer normalization with affine parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "layer_norm")?;
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(shape_err("layer_norm: affine parameters do not match width"));
        }
        let mut out = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        {
            let xv = self.value(x).data();
            let g = self.value(gamma).data();
            let b = self.value(beta).data();
            for r in 0..m {
                let row = &xv[r * n..(r + 1) * n];
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let rs = 1.0 / (var + LN_EPS).sqrt();
                rstd[r] = rs;
                for c in 0..n {
                    out[r * n + c] = (row[c] - mean) * rs * g[c] + b[c];
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::LayerNorm { x, gamma, beta, rstd }, rg))
    }

    /// Scale each row to unit L2 norm; all-zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "l2_normalize")?;
        let mut out = self.value(x).data().to_vec();
        let mut norms = vec![0.0; m];
        for (r, row) in out.chunks_mut(n).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms[r] = norm;
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::L2NormRows { x, norms }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = dims2(self.value(parts[0]), "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = dims2(self.value(p), "concat_cols")?;
            if r != m {
                return Err(shape_err(format!("concat_cols: {r} rows vs {m}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; m * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..m {
                out[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![m, total], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = dims2(self.value(parts[0]), "concat_rows")?.1;
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (r, c) = dims2(self.value(p), "concat_rows")?;
            if c != n {
                return Err(shape_err(format!("concat_rows: {c} columns vs {n}")));
            }
            out.extend_from_slice(self.value(p).data());
            m += r;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "slice_cols")?;
        if start + len > n {
            return Err(shape_err(format!("slice_cols: {start}+{len} exceeds {n}")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![m, len], out)?, Op::SliceCols { x, start }, rg))
    }

    /// Rows of `x` in the order given by `idx` (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "gather_rows")?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(shape_err(format!("gather_rows: row {i} of {m}")));
            }
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![idx.len(), n], out)?,
            Op::GatherRows { x, idx: idx.to_vec() },
            rg,
        ))
    }

    /// Mean of each row segment, one output row per segment.
    pub fn segment_mean(&mut self, x: Var, segments: &[Segment]) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "segment_mean")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; segments.len() * n];
        for (s, seg) in segments.iter().enumerate() {
            if seg.len == 0 || seg.start + seg.len > m {
                return Err(shape_err("segment_mean: empty or out-of-range segment"));
            }
            for r in seg.start..seg.start + seg.len {
                for c in 0..n {
                    out[s * n + c] += src[r * n + c];
                }
            }
            let inv = 1.0 / seg.len as f64;
            out[s * n..(s + 1) * n].iter_mut().for_each(|v| *v *= inv);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![segments.len(), n], out)?,
            Op::SegmentMean {
                x,
                segments: segments.to_vec(),
            },
            rg,
        ))
    }

    /// Unpadded convolution of `[N, C, H, W]` by weights `[C_out, C*k*k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, kernel: usize, stride: usize) -> Result<Var> {
        let (n, c, h, wd) = match self.shape(x) {
            [n, c, h, w] => (*n, *c, *h, *w),
            s => return Err(shape_err(format!("conv2d: expected [N,C,H,W], got {s:?}"))),
        };
        if h < kernel || wd < kernel {
            return Err(shape_err("conv2d: kernel larger than input"));
        }
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: wd,
            kernel,
            stride,
        };
        let (cout, plen) = dims2(self.value(w), "conv2d weights")?;
        if plen != geom.patch_len() || self.value(b).len() != cout {
            return Err(shape_err("conv2d: weight shape does not match input channels"));
        }
        let npos = geom.out_h() * geom.out_w();
        let mut out = vec![0.0; n * cout * npos];
        let mut cols = vec![0.0; plen * npos];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = self.value(b).data();
            let img_len = c * h * wd;
            for s in 0..n {
                im2col(&xv[s * img_len..(s + 1) * img_len], &geom, &mut cols);
                let dst = &mut out[s * cout * npos..(s + 1) * cout * npos];
                for (o, chunk) in dst.chunks_mut(npos).enumerate() {
                    chunk.iter_mut().for_each(|v| *v = bv[o]);
                }
                gemm(cout, plen, npos, 1.0, View::rm(wv, plen), View::rm(&cols, npos), 1.0, ViewMut::rm(dst, npos));
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let t = Tensor::new(vec![n, cout, geom.out_h(), geom.out_w()], out)?;
        Ok(self.push(t, Op::Conv2d { x, w, b, geom, n }, rg))
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, hw) = match self.shape(x) {
            [n, c, h, w] => (*n, *c, h * w),
            s => return Err(shape_err(format!("global_avg_pool: expected rank 4, got {s:?}"))),
        };
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|ch| ch.iter().sum::<f64>() / hw as f64)
            .collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n, c], out)?, Op::GlobalAvgPool { x, hw }, rg))
    }

    /// Multi-head scaled dot-product attention over row segments.
    ///
    /// `q` is `[Nq, heads*dk]`, `k` is `[Nk, heads*dk]`, `v` is
    /// `[Nk, heads*dv]`. Query segment `i` attends only to key segment `i`;
    /// head `h` uses columns `h*dk..(h+1)*dk`. Rows outside every query
    /// segment produce zeros.
    pub fn segment_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seg_q: &[Segment],
        seg_k: &[Segment],
    ) -> Result<Var> {
        let (nq, qc) = dims2(self.value(q), "attention queries")?;
        let (nk, kc) = dims2(self.value(k), "attention keys")?;
        let (nv, vc) = dims2(self.value(v), "attention values")?;
        if heads == 0 || qc != kc || qc % heads != 0 || vc % heads != 0 || nk != nv {
            return Err(shape_err(format!(
                "attention: q {nq}x{qc}, k {nk}x{kc}, v {nv}x{vc}, heads {heads}"
            )));
        }
        if seg_q.len() != seg_k.len() {
            return Err(shape_err("attention: segment lists differ in length"));
        }
        for (a, b) in seg_q.iter().zip(seg_k) {
            if a.start + a.len > nq || b.start + b.len > nk || b.len == 0 {
                return Err(shape_err("attention: segment out of range"));
            }
        }
        let dk = qc / heads;
        let dv = vc / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut out = vec![0.0; nq * vc];
        let mut probs = Vec::new();
        {
            let qv = self.value(q).data();
            let kv = self.value(k).data();
            let vv = self.value(v).data();
            for (sq, sk) in seg_q.iter().zip(seg_k) {
                for h in 0..heads {
                    let base = probs.len();
                    probs.resize(base + sq.len * sk.len, 0.0);
                    let p = &mut probs[base..];
                    let qa = View {
                        data: qv,
                        off: sq.start * qc + h * dk,
                        rs: qc,
                        cs: 1,
                    };
                    let kt = View {
                        data: kv,
                        off: sk.start * kc + h * dk,
                        rs: kc,
                        cs: 1,
                    }
                    .t();
                    gemm(sq.len, dk, sk.len, scale, qa, kt, 0.0, ViewMut::rm(p, sk.len));
                    for row in p.chunks_mut(sk.len) {
                        softmax_in_place(row);
                    }
                    let vb = View {
                        data: vv,
                        off: sk.start * vc + h * dv,
                        rs: vc,
                        cs: 1,
                    };
                    let dst = ViewMut {
                        data: &mut out,
                        off: sq.start * vc + h * dv,
                        rs: vc,
                        cs: 1,
                    };
                    gemm(sq.len, sk.len, dv, 1.0, View::rm(p, sk.len), vb, 0.0, dst);
                }
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        let cache = AttentionCache {
            q,
            k,
            v,
            heads,
            seg_q: seg_q.to_vec(),
            seg_k: seg_k.to_vec(),
            scale,
            probs,
        };
        Ok(self.push(Tensor::new(vec![nq, vc], out)?, Op::Attention(Box::new(cache)), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Class-weighted binary focal loss averaged over every entry of `p`.
    ///
    /// Per entry: `-w[c] * (1 - p_t)^gamma * ln(p_t)` with `p_t = p` for
    /// positives and `1 - p` otherwise; `p` is clamped to `[1e-7, 1 - 1e-7]`.
    pub fn binary_focal(&mut self, p: Var, y: Tensor, w: &[f64], gamma: f64) -> Result<Var> {
        let (_, c) = dims2(self.value(p), "binary_focal")?;
        if y.shape() != self.shape(p) || w.len() != c {
            return Err(shape_err("binary_focal: target or weight shape mismatch"));
        }
        let pv = self.value(p).data();
        let total: f64 = pv
            .iter()
            .zip(y.data())
            .enumerate()
            .map(|(i, (&pi, &yi))| {
                let pt = if yi > 0.5 { clamp_prob(pi) } else { 1.0 - clamp_prob(pi) };
                -w[i % c] * (1.0 - pt).powf(gamma) * pt.ln()
            })
            .sum();
        let loss = total / pv.len() as f64;
        let rg = self.rg(p);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BinaryFocal {
                p,
                y,
                w: w.to_vec(),
                gamma,
            },
            rg,
        ))
    }

    /// Class-weighted focal loss on a row-stochastic `p`, one target class
    /// per row, averaged over rows.
    pub fn categorical_focal(&mut self, p: Var, target: &[usize], w: &[f64], gamma: f64) -> Result<Var> {
        let (m, c) = dims2(self.value(p), "categorical_focal")?;
        if target.len() != m || w.len() != c || target.iter().any(|&t| t >= c) {
            return Err(shape_err("categorical_focal: target or weight mismatch"));
        }
        let pv = self.value(p).data();
        let total: f64 = target
            .iter()
            .enumerate()
            .map(|(r, &t)| {
                let pt = clamp_prob(pv[r * c + t]);
                -w[t] * (1.0 - pt).powf(gamma) * pt.ln()
            })
            .sum();
        let rg = self.rg(p);
        Ok(self.push(
            Tensor::scalar(total / m as f64),
            Op::CategoricalFocal {
                p,
                target: target.to_vec(),
                w: w.to_vec(),
                gamma,
            },
            rg,
        ))
    }

    /// Multi-label margin loss: per row, the mean over (positive, negative)
    /// class pairs of `max(0, 1 - s_pos + s_neg)`; averaged over rows. Rows
    /// without positives or without negatives contribute zero.
    pub fn margin_rank(&mut self, s: Var, y: Tensor) -> Result<Var> {
        let (m, c) = dims2(self.value(s), "margin_rank")?;
        if y.shape() != self.shape(s) {
            return Err(shape_err("margin_rank: target shape mismatch"));
        }
        let sv = self.value(s).data();
        let mut total = 0.0;
        for r in 0..m {
            let (row, yr) = (&sv[r * c..(r + 1) * c], &y.data()[r * c..(r + 1) * c]);
            total += margin_row(row, yr, None);
        }
        let rg = self.rg(s);
        Ok(self.push(Tensor::scalar(total / m as f64), Op::MarginRank { s, y }, rg))
    }

    /// Reverse pass from a scalar. Fails on non-finite values.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(shape_err("backward needs a scalar"));
        }
        if !lv.is_finite() {
            return Err(Error::non_finite("loss is not finite"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut param_grads: Vec<Option<Tensor>> = (0..self.params.len()).map(|_| None).collect();
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, gout, &mut grads, &mut param_grads)?;
        }
        for (id, g) in param_grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::non_finite(format!(
                        "gradient of {}",
                        self.params.name(ParamId(id))
                    )));
                }
            }
        }
        Ok(Gradients::new(param_grads))
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut [f64]> {
        if !self.rg(v) {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.shape(v)));
        }
        slot.as_mut().map(|t| t.data_mut())
    }

    fn backprop_node(
        &self,
        i: usize,
        gout: Tensor,
        grads: &mut [Option<Tensor>],
        param_grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let node = &self.nodes[i];
        let out = node.value.as_ref();
        let g = gout.data();
        match &node.op {
            Op::Input => {}
            Op::Param(id) => match &mut param_grads[id.0] {
                Some(acc) => acc.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b),
                slot => *slot = Some(gout),
            },
            Op::MatMul { a, b, ta, tb } => {
                let (a, b, ta, tb) = (*a, *b, *ta, *tb);
                let (ar, ac) = dims2(self.value(a), "")?;
                let (br, bc) = dims2(self.value(b), "")?;
                let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
                let n = if tb { br } else { bc };
                let av = self.value(a).data();
                let bv = self.value(b).data();
                let gv = View::rm(g, n);
                if let Some(da) = self.buf(grads, a) {
                    // op(B)^T as a (n x k) view
                    let bt = if tb { View::rm(bv, bc) } else { View::rm_t(bv, bc) };
                    if ta {
                        // dA (k x m) = op(B) (k x n) * dOut^T (n x m)
                        gemm(k, n, m, 1.0, bt.t(), gv.t(), 1.0, ViewMut::rm(da, m));
                    } else {
                        gemm(m, n, k, 1.0, gv, bt, 1.0, ViewMut::rm(da, k));
                    }
                }
                if let Some(db) = self.buf(grads, b) {
                    // op(A)^T as a (k x m) view
                    let at = if ta { View::rm(av, ac) } else { View::rm_t(av, ac) };
                    if tb {
                        // dB (n x k) = dOut^T (n x m) * op(A) (m x k)
                        gemm(n, m, k, 1.0, gv.t(), at.t(), 1.0, ViewMut::rm(db, k));
                    } else {
                        gemm(k, m, n, 1.0, at, gv, 1.0, ViewMut::rm(db, n));
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.buf(grads, v) {
                        d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.buf(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(d) = self.buf(grads, *b) {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let bv = self.value(b).data().to_vec();
                if let Some(d) = self.buf(grads, a) {
                    for ((x, gy), bb) in d.iter_mut().zip(g).zip(&bv) {
                        *x += gy * bb;
                    }
                }
                let av = self.value(a).data();
                if let Some(d) = self.buf(grads, b) {
                    for ((x, gy), aa) in d.iter_mut().zip(g).zip(av) {
                        *x += gy * aa;
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(d) = self.buf(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                let n = self.value(*row).len();
                if let Some(d) = self.buf(grads, *row) {
                    for r in g.chunks(n) {
                        d.iter_mut().zip(r).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(d) = self.buf(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x += y * f);
                }
            }
            Op::MulConst(a, c) => {
                if let Some(d) = self.buf(grads, *a) {
                    for ((x, y), m) in d.iter_mut().zip(g).zip(c.data()) {
                        *x += y * m;
                    }
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                if let Some(d) = self.buf(grads, *a) {
                    for ((x, y), v) in d.iter_mut().zip(g).zip(av) {
                        if *v > 0.0 {
                            *x += y;
                        }
                    }
                }
            }
            Op::Gelu(a) => {
                let av = self.value(*a).data();
                if let Some(d) = self.buf(grads, *a) {
                    for ((x, y), v) in d.iter_mut().zip(g).zip(av) {
                        let u = GELU_C * (v + 0.044715 * v * v * v);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                        *x += y * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                    }
                }
            }
            Op::Sigmoid(a) => {
                let ov = out.expect("computed").data();
                if let Some(d) = self.buf(grads, *a) {
                    for ((x, y), s) in d.iter_mut().zip(g).zip(ov) {
                        *x += y * s * (1.0 - s);
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let ov = out.expect("computed");
                let n = ov.cols();
                let ov = ov.data();
                if let Some(d) = self.buf(grads, *a) {
                    for ((dr, gr), yr) in d.chunks_mut(n).zip(g.chunks(n)).zip(ov.chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            dr[c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, rstd } => {
                let (m, n) = dims2(self.value(*x), "")?;
                let xv = self.value(*x).data();
                let gm = self.value(*gamma).data();
                let mut xhat = vec![0.0; m * n];
                for r in 0..m {
                    let row = &xv[r * n..(r + 1) * n];
                    let mean = row.iter().sum::<f64>() / n as f64;
                    for c in 0..n {
                        xhat[r * n + c] = (row[c] - mean) * rstd[r];
                    }
                }
                if let Some(d) = self.buf(grads, *gamma) {
                    for r in 0..m {
                        for c in 0..n {
                            d[c] += g[r * n + c] * xhat[r * n + c];
                        }
                    }
                }
                if let Some(d) = self.buf(grads, *beta) {
                    for r in 0..m {
                        for c in 0..n {
                            d[c] += g[r * n + c];
                        }
                    }
                }
                if let Some(d) = self.buf(grads, *x) {
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        let xh = &xhat[r * n..(r + 1) * n];
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..n {
                            let dxh = gr[c] * gm[c];
                            mean_d += dxh;
                            mean_dx += dxh * xh[c];
                        }
                        mean_d /= n as f64;
                        mean_dx /= n as f64;
                        for c in 0..n {
                            let dxh = gr[c] * gm[c];
                            d[r * n + c] += rstd[r] * (dxh - mean_d - xh[c] * mean_dx);
                        }
                    }
                }
            }
            Op::L2NormRows { x, norms } => {
                let ov = out.expect("computed");
                let n = ov.cols();
                let ov = ov.data();
                if let Some(d) = self.buf(grads, *x) {
                    for (r, &norm) in norms.iter().enumerate() {
                        if norm == 0.0 {
                            continue;
                        }
                        let yr = &ov[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            d[r * n + c] += (gr[c] - yr[c] * dot) / norm;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.expect("computed").cols();
                let m = out.expect("computed").rows();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(d) = self.buf(grads, p) {
                        for r in 0..m {
                            let src = &g[r * total + off..r * total + off + w];
                            d[r * w..(r + 1) * w].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(d) = self.buf(grads, p) {
                        d.iter_mut().zip(&g[off..off + len]).for_each(|(x, y)| *x += y);
                    }
                    off += len;
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = dims2(self.value(*x), "")?;
                let len = out.expect("computed").cols();
                if let Some(d) = self.buf(grads, *x) {
                    for r in 0..m {
                        for c in 0..len {
                            d[r * n + start + c] += g[r * len + c];
                        }
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let n = self.value(*x).cols();
                if let Some(d) = self.buf(grads, *x) {
                    for (o, &src) in idx.iter().enumerate() {
                        for c in 0..n {
                            d[src * n + c] += g[o * n + c];
                        }
                    }
                }
            }
            Op::SegmentMean { x, segments } => {
                let n = self.value(*x).cols();
                if let Some(d) = self.buf(grads, *x) {
                    for (s, seg) in segments.iter().enumerate() {
                        let inv = 1.0 / seg.len as f64;
                        for r in seg.start..seg.start + seg.len {
                            for c in 0..n {
                                d[r * n + c] += g[s * n + c] * inv;
                            }
                        }
                    }
                }
            }
            Op::Conv2d { x, w, b, geom, n } => {
                let npos = geom.out_h() * geom.out_w();
                let (cout, plen) = dims2(self.value(*w), "")?;
                let img_len = geom.channels * geom.height * geom.width;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut cols = vec![0.0; plen * npos];
                let mut dcols = vec![0.0; plen * npos];
                if let Some(db) = self.buf(grads, *b) {
                    for s in 0..*n {
                        for o in 0..cout {
                            let base = (s * cout + o) * npos;
                            db[o] += g[base..base + npos].iter().sum::<f64>();
                        }
                    }
                }
                let need_w = self.rg(*w);
                let need_x = self.rg(*x);
                for s in 0..*n {
                    let gs = &g[s * cout * npos..(s + 1) * cout * npos];
                    if need_w {
                        im2col(&xv[s * img_len..(s + 1) * img_len], geom, &mut cols);
                        let dw = self.buf(grads, *w).expect("requires grad");
                        gemm(cout, npos, plen, 1.0, View::rm(gs, npos), View::rm_t(&cols, npos), 1.0, ViewMut::rm(dw, plen));
                    }
                    if need_x {
                        gemm(plen, cout, npos, 1.0, View::rm_t(wv, plen), View::rm(gs, npos), 0.0, ViewMut::rm(&mut dcols, npos));
                        let dx = self.buf(grads, *x).expect("requires grad");
                        col2im(&dcols, geom, &mut dx[s * img_len..(s + 1) * img_len]);
                    }
                }
            }
            Op::GlobalAvgPool { x, hw } => {
                if let Some(d) = self.buf(grads, *x) {
                    let inv = 1.0 / *hw as f64;
                    for (ch, gv) in d.chunks_mut(*hw).zip(g) {
                        ch.iter_mut().for_each(|v| *v += gv * inv);
                    }
                }
            }
            Op::Attention(cache) => self.backprop_attention(cache, g, grads)?,
            Op::Reshape(x) => {
                if let Some(d) = self.buf(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::Sum(x) => {
                if let Some(d) = self.buf(grads, *x) {
                    d.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Mean(x) => {
                let len = self.value(*x).len() as f64;
                if let Some(d) = self.buf(grads, *x) {
                    d.iter_mut().for_each(|v| *v += g[0] / len);
                }
            }
            Op::BinaryFocal { p, y, w, gamma } => {
                let pv = self.value(*p).data();
                let c = w.len();
                let scale = g[0] / pv.len() as f64;
                if let Some(d) = self.buf(grads, *p) {
                    for (i, (&pi, &yi)) in pv.iter().zip(y.data()).enumerate() {
                        let clamped = clamp_prob(pi);
                        if clamped != pi {
                            continue;
                        }
                        let (pt, sign) = if yi > 0.5 { (pi, 1.0) } else { (1.0 - pi, -1.0) };
                        d[i] += scale * sign * focal_dpt(pt, w[i % c], *gamma);
                    }
                }
            }
            Op::CategoricalFocal { p, target, w, gamma } => {
                let c = w.len();
                let pv = self.value(*p).data();
                let scale = g[0] / target.len() as f64;
                if let Some(d) = self.buf(grads, *p) {
                    for (r, &t) in target.iter().enumerate() {
                        let pt = pv[r * c + t];
                        if clamp_prob(pt) != pt {
                            continue;
                        }
                        d[r * c + t] += scale * focal_dpt(pt, w[t], *gamma);
                    }
                }
            }
            Op::MarginRank { s, y } => {
                let c = self.value(*s).cols();
                let sv = self.value(*s).data();
                let m = sv.len() / c;
                let scale = g[0] / m as f64;
                if let Some(d) = self.buf(grads, *s) {
                    for r in 0..m {
                        let rng = r * c..(r + 1) * c;
                        margin_row(&sv[rng.clone()], &y.data()[rng.clone()], Some((&mut d[rng], scale)));
                    }
                }
            }
        }
        Ok(())
    }

    fn backprop_attention(&self, cache: &AttentionCache, g: &[f64], grads: &mut [Option<Tensor>]) -> Result<()> {
        let (q, k, v) = (cache.q, cache.k, cache.v);
        let qc = self.value(q).cols();
        let vc = self.value(v).cols();
        let heads = cache.heads;
        let (dk, dv) = (qc / heads, vc / heads);
        let qv = self.value(q).data();
        let kv = self.value(k).data();
        let vv = self.value(v).data();
        let mut dq = self.rg(q).then(|| vec![0.0; qv.len()]);
        let mut dkb = self.rg(k).then(|| vec![0.0; kv.len()]);
        let mut dvb = self.rg(v).then(|| vec![0.0; vv.len()]);
        let mut off = 0;
        for (sq, sk) in cache.seg_q.iter().zip(&cache.seg_k) {
            for h in 0..heads {
                let n = sq.len * sk.len;
                let p = &cache.probs[off..off + n];
                off += n;
                let go = View {
                    data: g,
                    off: sq.start * vc + h * dv,
                    rs: vc,
                    cs: 1,
                };
                if let Some(dvb) = dvb.as_mut() {
                    let dst = ViewMut {
                        data: dvb,
                        off: sk.start * vc + h * dv,
                        rs: vc,
                        cs: 1,
                    };
                    gemm(sk.len, sq.len, dv, 1.0, View::rm_t(p, sk.len), go, 1.0, dst);
                }
                if dq.is_none() && dkb.is_none() {
                    continue;
                }
                // dP = dO V^T, then dS = P * (dP - rowsum(dP * P))
                let mut ds = vec![0.0; n];
                let vt = View {
                    data: vv,
                    off: sk.start * vc + h * dv,
                    rs: vc,
                    cs: 1,
                }
                .t();
                gemm(sq.len, dv, sk.len, 1.0, go, vt, 0.0, ViewMut::rm(&mut ds, sk.len));
                for (drow, prow) in ds.chunks_mut(sk.len).zip(p.chunks(sk.len)) {
                    let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
                    for (dval, pval) in drow.iter_mut().zip(prow) {
                        *dval = pval * (*dval - dot);
                    }
                }
                if let Some(dq) = dq.as_mut() {
                    let kb = View {
                        data: kv,
                        off: sk.start * qc + h * dk,
                        rs: qc,
                        cs: 1,
                    };
                    let dst = ViewMut {
                        data: dq,
                        off: sq.start * qc + h * dk,
                        rs: qc,
                        cs: 1,
                    };
                    gemm(sq.len, sk.len, dk, cache.scale, View::rm(&ds, sk.len), kb, 1.0, dst);
                }
                if let Some(dkb) = dkb.as_mut() {
                    let qa = View {
                        data: qv,
                        off: sq.start * qc + h * dk,
                        rs: qc,
                        cs: 1,
                    };
                    let dst = ViewMut {
                        data: dkb,
                        off: sk.start * qc + h * dk,
                        rs: qc,
                        cs: 1,
                    };
                    gemm(sk.len, sq.len, dk, cache.scale, View::rm_t(&ds, sk.len), qa, 1.0, dst);
                }
            }
        }
        for (var, buf) in [(q, dq), (k, dkb), (v, dvb)] {
            if let Some(b) = buf {
                let d = self.buf(grads, var).expect("requires grad");
                d.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        // every logit masked out: fall back to uniform weights
        let u = 1.0 / row.len() as f64;
        row.iter_mut().for_each(|v| *v = u);
        return;
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// d/dp_t of `-w (1 - p_t)^gamma ln(p_t)`.
fn focal_dpt(pt: f64, w: f64, gamma: f64) -> f64 {
    let mut d = -w * (1.0 - pt).powf(gamma) / pt;
    if gamma != 0.0 {
        d += w * gamma * (1.0 - pt).powf(gamma - 1.0) * pt.ln();
    }
    d
}

/// Margin loss of one row; optionally accumulates its gradient.
fn margin_row(s: &[f64], y: &[f64], grad: Option<(&mut [f64], f64)>) -> f64 {
    let pos: Vec<usize> = (0..s.len()).filter(|&i| y[i] > 0.5).collect();
    let neg: Vec<usize> = (0..s.len()).filter(|&i| y[i] <= 0.5).collect();
    if pos.is_empty() || neg.is_empty() {
        return 0.0;
    }
    let pairs = (pos.len() * neg.len()) as f64;
    let mut total = 0.0;
    let mut grad = grad;
    for &i in &pos {
        for &j in &neg {
            let h = 1.0 - s[i] + s[j];
            if h > 0.0 {
                total += h;
                if let Some((d, scale)) = grad.as_mut() {
                    d[i] -= *scale / pairs;
                    d[j] += *scale / pairs;
                }
            }
        }
    }
    total / pairs
}
