//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! the adjoint of every leaf that was registered with `requires_grad`.
//!
//! The op set is deliberately narrow: exactly the primitives the encoder,
//! classifier and losses in this crate are composed from. Several of them are
//! fused (attention, GAT scoring, NT-Xent, cross-entropy) with hand-derived
//! adjoints; every one is covered by the finite-difference checker.

use rand::Rng;

use super::real::{gemm, Real};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Geometry of a 1-D convolution applied along the time axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn output_len(&self, len: usize) -> usize {
        let padded = len + 2 * self.padding;
        if padded < self.kernel {
            0
        } else {
            (padded - self.kernel) / self.stride + 1
        }
    }
}

/// Bin `[start, end)` of adaptive average pooling: `floor(b*F/n)..ceil((b+1)*F/n)`.
pub fn adaptive_bin(bin: usize, len: usize, bins: usize) -> (usize, usize) {
    let start = bin * len / bins;
    let end = ((bin + 1) * len).div_ceil(bins);
    (start, end)
}

/// Linear-interpolation taps for resampling `crop_len` points onto `out_len`
/// points, mapping output grid `[0, out_len-1]` affinely onto `[0, crop_len-1]`.
///
/// Each entry is `(lower index, weight of upper neighbour)`.
pub fn interp_taps(crop_len: usize, out_len: usize) -> Vec<(usize, f64)> {
    assert!(crop_len >= 1 && out_len >= 1);
    if out_len == 1 || crop_len == 1 {
        return vec![(0, 0.0); out_len];
    }
    let scale = (crop_len - 1) as f64 / (out_len - 1) as f64;
    (0..out_len)
        .map(|j| {
            let pos = j as f64 * scale;
            let lo = (pos.floor() as usize).min(crop_len - 1);
            if lo == crop_len - 1 || j == out_len - 1 {
                (crop_len - 1, 0.0)
            } else {
                (lo, pos - lo as f64)
            }
        })
        .collect()
}

enum Op<T> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        k: usize,
        n: usize,
    },
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    MulConst {
        x: Var,
        mask: Vec<T>,
    },
    /// `x[..., i] + y[i mod |y|]`
    AddTiled {
        x: Var,
        y: Var,
    },
    /// `x[b, s, :] + y[b, :]`
    AddPerItem {
        x: Var,
        y: Var,
        items: usize,
        seq: usize,
        d: usize,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
        width: usize,
    },
    Concat {
        parts: Vec<Var>,
    },
    Reshape {
        x: Var,
    },
    Relu {
        x: Var,
    },
    Elu {
        x: Var,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
        d: usize,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        cols: Vec<T>,
        geo: ConvGeometry,
        batch: usize,
        len_in: usize,
        len_out: usize,
        c_in: usize,
        c_out: usize,
    },
    AdaptivePool {
        x: Var,
        batch: usize,
        len: usize,
        ch: usize,
        bins: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        batch: usize,
        seq: usize,
        d: usize,
        probs: Vec<T>,
    },
    MeanSeq {
        x: Var,
        batch: usize,
        seq: usize,
        d: usize,
    },
    GatAttention {
        wh: Var,
        a: Var,
        heads: usize,
        batch: usize,
        nodes: usize,
        d: usize,
        slope: T,
        scores: Vec<T>,
        probs: Vec<T>,
    },
    NodeMix {
        h: Var,
        adj: Vec<T>,
        batch: usize,
        nodes: usize,
        d: usize,
    },
    Softmax {
        x: Var,
        d: usize,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
        classes: usize,
    },
    NtXent {
        z: Var,
        tau: T,
        units: Vec<T>,
        norms: Vec<T>,
        probs: Vec<T>,
        views: usize,
        d: usize,
    },
    Resample {
        x: Var,
        len_in: usize,
        start: usize,
        taps: Vec<(usize, T)>,
    },
    Sum {
        x: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Adjoints of the leaves that requested gradients.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`] but yields zeros for leaves the loss never reached.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// Computation tape. Values are evaluated eagerly as ops are added.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: &Tensor<T>) -> Var {
        self.leaf(value.clone(), true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Attention weights recorded by an attention node.
    ///
    /// Layout `[batch, heads, rows, cols]`, each row a probability
    /// distribution. `None` for any other node kind.
    pub fn attention_weights(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } | Op::GatAttention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// `x @ w + b` over the last axis of `x`; `w` is `[k, n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w);
        assert_eq!(ws.len(), 2, "linear weight must be 2-D");
        let (k, n) = (ws[0], ws[1]);
        assert_eq!(*xs.last().unwrap(), k, "linear: input width {xs:?} vs weight {ws:?}");
        let rows = self.value(x).numel() / k;
        let mut out = vec![T::zero(); rows * n];
        if let Some(b) = b {
            let bias = self.data(b);
            assert_eq!(bias.len(), n);
            for r in out.chunks_exact_mut(n) {
                r.copy_from_slice(bias);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        gemm(rows, k, n, self.data(x), false, self.data(w), false, beta, &mut out);
        let mut shape = xs;
        *shape.last_mut().unwrap() = n;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(Tensor::from_vec(&shape, out), Op::Linear { x, w, b, k, n }, &inputs)
    }

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = dims2(self.shape(a));
        let (k2, n) = dims2(self.shape(b));
        assert_eq!(k, k2, "matmul inner dimensions");
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), false, T::zero(), &mut out);
        self.push(Tensor::from_vec(&[m, n], out), Op::MatMul { a, b, m, k, n }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let out: Vec<T> = self.data(a).iter().zip(self.data(b)).map(|(&p, &q)| p + q).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_vec(&shape, out), Op::Add { a, b }, &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let out: Vec<T> = self.data(a).iter().zip(self.data(b)).map(|(&p, &q)| p * q).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_vec(&shape, out), Op::Mul { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out: Vec<T> = self.data(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_vec(&shape, out), Op::Scale { x, c }, &[x])
    }

    /// Elementwise product with a constant of the same size.
    pub fn mul_const(&mut self, x: Var, mask: Vec<T>) -> Var {
        assert_eq!(mask.len(), self.value(x).numel());
        let out: Vec<T> = self.data(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_vec(&shape, out), Op::MulConst { x, mask }, &[x])
    }

    /// Inverted dropout; the identity when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        self.mul_const(x, mask)
    }

    /// Adds `y` repeated along every leading axis of `x` (e.g. positional table).
    pub fn add_tiled(&mut self, x: Var, y: Var) -> Var {
        let period = self.value(y).numel();
        assert_eq!(self.value(x).numel() % period, 0, "add_tiled: size mismatch");
        let yd = self.data(y);
        let out: Vec<T> = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + yd[i % period])
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_vec(&shape, out), Op::AddTiled { x, y }, &[x, y])
    }

    /// `x: [B, S, D]`, `y: [B, D]` broadcast over `S`.
    pub fn add_per_item(&mut self, x: Var, y: Var) -> Var {
        let (items, seq, d) = dims3(self.shape(x));
        assert_eq!(self.shape(y), &[items, d], "add_per_item: shape mismatch");
        let mut out = self.data(x).to_vec();
        let yd = self.data(y);
        for b in 0..items {
            for s in 0..seq {
                let o = &mut out[(b * seq + s) * d..(b * seq + s + 1) * d];
                for (v, &a) in o.iter_mut().zip(&yd[b * d..(b + 1) * d]) {
                    *v += a;
                }
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(
            Tensor::from_vec(&shape, out),
            Op::AddPerItem { x, y, items, seq, d },
            &[x, y],
        )
    }

    /// Selects items along axis 0: `out[i] = table[ids[i]]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let ts = self.shape(table).to_vec();
        let rows = ts[0];
        let width = self.value(table).numel() / rows.max(1);
        let td = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * width);
        for &i in ids {
            assert!(i < rows, "gather_rows: index {i} out of {rows}");
            out.extend_from_slice(&td[i * width..(i + 1) * width]);
        }
        let mut shape = ts;
        shape[0] = ids.len();
        self.push(
            Tensor::from_vec(&shape, out),
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
                width,
            },
            &[table],
        )
    }

    /// Concatenation along axis 0.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let tail = self.shape(parts[0])[1..].to_vec();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            assert_eq!(&self.shape(p)[1..], &tail[..], "concat: trailing shape mismatch");
            rows += self.shape(p)[0];
            out.extend_from_slice(self.data(p));
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        self.push(
            Tensor::from_vec(&shape, out),
            Op::Concat { parts: parts.to_vec() },
            parts,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.value(x).clone().reshaped(shape);
        self.push(v, Op::Reshape { x }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), |x| Op::Relu { x })
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { v.exp_m1() }, |x| Op::Elu { x })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.unary(
            x,
            move |v| if v > T::zero() { v } else { v * slope },
            move |x| Op::LeakyRelu { x, slope },
        )
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: impl FnOnce(Var) -> Op<T>) -> Var {
        let out: Vec<T> = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_vec(&shape, out), op(x), &[x])
    }

    /// LayerNorm over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let d = self.value(x).last_dim();
        assert_eq!(self.value(gamma).numel(), d);
        assert_eq!(self.value(beta).numel(), d);
        let eps = T::of(eps);
        let n = T::of(d as f64);
        let xd = self.data(x);
        let g = self.data(gamma);
        let bt = self.data(beta);
        let rows = xd.len() / d;
        let mut xhat = vec![T::zero(); xd.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for i in 0..d {
                let h = (row[i] - mean) * rs;
                xhat[r * d + i] = h;
                out[r * d + i] = h * g[i] + bt[i];
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(
            Tensor::from_vec(&shape, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                d,
            },
            &[x, gamma, beta],
        )
    }

    /// 1-D convolution over `x: [B, L, C_in]` with `w: [kernel * C_in, C_out]`
    /// (row index `tap * C_in + c`) and bias `[C_out]`. Zero padding.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, geo: ConvGeometry) -> Var {
        let (batch, len_in, c_in) = dims3(self.shape(x));
        let (kc, c_out) = dims2(self.shape(w));
        assert_eq!(kc, geo.kernel * c_in, "conv1d: weight rows");
        assert_eq!(self.value(b).numel(), c_out);
        let len_out = geo.output_len(len_in);
        let xd = self.data(x);
        let mut cols = vec![T::zero(); batch * len_out * kc];
        for bi in 0..batch {
            for t in 0..len_out {
                let dst = &mut cols[(bi * len_out + t) * kc..(bi * len_out + t + 1) * kc];
                for tap in 0..geo.kernel {
                    let pos = (t * geo.stride + tap) as isize - geo.padding as isize;
                    if pos < 0 || pos as usize >= len_in {
                        continue;
                    }
                    let src = (bi * len_in + pos as usize) * c_in;
                    dst[tap * c_in..(tap + 1) * c_in].copy_from_slice(&xd[src..src + c_in]);
                }
            }
        }
        let rows = batch * len_out;
        let mut out = vec![T::zero(); rows * c_out];
        let bias = self.data(b);
        for r in out.chunks_exact_mut(c_out) {
            r.copy_from_slice(bias);
        }
        gemm(rows, kc, c_out, &cols, false, self.data(w), false, T::one(), &mut out);
        self.push(
            Tensor::from_vec(&[batch, len_out, c_out], out),
            Op::Conv1d {
                x,
                w,
                b,
                cols,
                geo,
                batch,
                len_in,
                len_out,
                c_in,
                c_out,
            },
            &[x, w, b],
        )
    }

    /// Adaptive average pooling along axis 1 of `x: [B, F, C]` to `bins` outputs.
    pub fn adaptive_avg_pool(&mut self, x: Var, bins: usize) -> Var {
        let (batch, len, ch) = dims3(self.shape(x));
        assert!(bins >= 1 && len >= 1);
        let xd = self.data(x);
        let mut out = vec![T::zero(); batch * bins * ch];
        for b in 0..batch {
            for p in 0..bins {
                let (s, e) = adaptive_bin(p, len, bins);
                let inv = T::one() / T::of((e - s) as f64);
                let o = &mut out[(b * bins + p) * ch..(b * bins + p + 1) * ch];
                for t in s..e {
                    let src = &xd[(b * len + t) * ch..(b * len + t + 1) * ch];
                    for (v, &a) in o.iter_mut().zip(src) {
                        *v += a;
                    }
                }
                for v in o.iter_mut() {
                    *v *= inv;
                }
            }
        }
        self.push(
            Tensor::from_vec(&[batch, bins, ch], out),
            Op::AdaptivePool {
                x,
                batch,
                len,
                ch,
                bins,
            },
            &[x],
        )
    }

    /// Multi-head scaled dot-product attention core on `[B, S, D]` inputs,
    /// heads being contiguous column blocks of width `D / heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (batch, seq, d) = dims3(self.shape(q));
        assert_eq!(self.shape(k), self.shape(q));
        assert_eq!(self.shape(v), self.shape(q));
        assert_eq!(d % heads, 0, "attention: width not divisible by heads");
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut probs = vec![T::zero(); batch * heads * seq * seq];
        let mut out = vec![T::zero(); batch * seq * d];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                let pb = &mut probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                for i in 0..seq {
                    let qi = &qd[(b * seq + i) * d + off..(b * seq + i) * d + off + dh];
                    let row = &mut pb[i * seq..(i + 1) * seq];
                    for j in 0..seq {
                        let kj = &kd[(b * seq + j) * d + off..(b * seq + j) * d + off + dh];
                        row[j] = dot(qi, kj) * scale;
                    }
                    softmax_in_place(row);
                    let oi = &mut out[(b * seq + i) * d + off..(b * seq + i) * d + off + dh];
                    for j in 0..seq {
                        let p = row[j];
                        let vj = &vd[(b * seq + j) * d + off..(b * seq + j) * d + off + dh];
                        for (o, &a) in oi.iter_mut().zip(vj) {
                            *o += p * a;
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::from_vec(&[batch, seq, d], out),
            Op::Attention {
                q,
                k,
                v,
                heads,
                batch,
                seq,
                d,
                probs,
            },
            &[q, k, v],
        )
    }

    /// Mean over axis 1 of `[B, S, D]`.
    pub fn mean_seq(&mut self, x: Var) -> Var {
        let (batch, seq, d) = dims3(self.shape(x));
        let xd = self.data(x);
        let inv = T::one() / T::of(seq as f64);
        let mut out = vec![T::zero(); batch * d];
        for b in 0..batch {
            let o = &mut out[b * d..(b + 1) * d];
            for s in 0..seq {
                for (v, &a) in o.iter_mut().zip(&xd[(b * seq + s) * d..(b * seq + s + 1) * d]) {
                    *v += a;
                }
            }
            for v in o.iter_mut() {
                *v *= inv;
            }
        }
        self.push(
            Tensor::from_vec(&[batch, d], out),
            Op::MeanSeq { x, batch, seq, d },
            &[x],
        )
    }

    /// Graph-attention aggregation over a fully connected node set (self
    /// loops included).
    ///
    /// `wh: [B, C, heads * dh]` holds the already transformed node features,
    /// `a: [heads, 2 * dh]` the per-head scoring vectors. For every head,
    /// `e_ij = LeakyReLU(a_src . wh_i + a_dst . wh_j)`, `alpha_i = softmax_j(e_i)`
    /// and the output row is `sum_j alpha_ij wh_j` (no activation applied).
    pub fn gat_attention(&mut self, wh: Var, a: Var, heads: usize, slope: T) -> Var {
        let (batch, nodes, d) = dims3(self.shape(wh));
        assert_eq!(d % heads, 0);
        let dh = d / heads;
        assert_eq!(self.shape(a), &[heads, 2 * dh], "gat: attention vector shape");
        let (wd, ad) = (self.data(wh), self.data(a));
        let mut scores = vec![T::zero(); batch * heads * nodes * nodes];
        let mut probs = vec![T::zero(); batch * heads * nodes * nodes];
        let mut out = vec![T::zero(); batch * nodes * d];
        let mut src = vec![T::zero(); nodes];
        let mut dst = vec![T::zero(); nodes];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                let (a_src, a_dst) = ad[h * 2 * dh..(h + 1) * 2 * dh].split_at(dh);
                for i in 0..nodes {
                    let g = &wd[(b * nodes + i) * d + off..(b * nodes + i) * d + off + dh];
                    src[i] = dot(a_src, g);
                    dst[i] = dot(a_dst, g);
                }
                let base = (b * heads + h) * nodes * nodes;
                for i in 0..nodes {
                    let row = &mut probs[base + i * nodes..base + (i + 1) * nodes];
                    for j in 0..nodes {
                        let pre = src[i] + dst[j];
                        scores[base + i * nodes + j] = pre;
                        row[j] = if pre > T::zero() { pre } else { pre * slope };
                    }
                    softmax_in_place(row);
                    let oi = &mut out[(b * nodes + i) * d + off..(b * nodes + i) * d + off + dh];
                    for j in 0..nodes {
                        let p = row[j];
                        let gj = &wd[(b * nodes + j) * d + off..(b * nodes + j) * d + off + dh];
                        for (o, &v) in oi.iter_mut().zip(gj) {
                            *o += p * v;
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::from_vec(&[batch, nodes, d], out),
            Op::GatAttention {
                wh,
                a,
                heads,
                batch,
                nodes,
                d,
                slope,
                scores,
                probs,
            },
            &[wh, a],
        )
    }

    /// `out[b] = adj @ h[b]` for `h: [B, C, D]` and a constant `adj: [C, C]`.
    pub fn node_mix(&mut self, h: Var, adj: &Tensor<T>) -> Var {
        let (batch, nodes, d) = dims3(self.shape(h));
        assert_eq!(adj.shape(), &[nodes, nodes]);
        let hd = self.data(h);
        let mut out = vec![T::zero(); batch * nodes * d];
        for b in 0..batch {
            gemm(
                nodes,
                nodes,
                d,
                adj.data(),
                false,
                &hd[b * nodes * d..(b + 1) * nodes * d],
                false,
                T::zero(),
                &mut out[b * nodes * d..(b + 1) * nodes * d],
            );
        }
        self.push(
            Tensor::from_vec(&[batch, nodes, d], out),
            Op::NodeMix {
                h,
                adj: adj.data().to_vec(),
                batch,
                nodes,
                d,
            },
            &[h],
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let d = self.value(x).last_dim();
        let mut out = self.data(x).to_vec();
        for row in out.chunks_exact_mut(d) {
            softmax_in_place(row);
        }
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_vec(&shape, out), Op::Softmax { x, d }, &[x])
    }

    /// Mean softmax cross-entropy of `logits: [B, K]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (batch, classes) = dims2(self.shape(logits));
        if labels.len() != batch {
            return Err(Error::Shape(format!(
                "cross_entropy: {} labels for {batch} rows",
                labels.len()
            )));
        }
        let mut probs = self.data(logits).to_vec();
        let mut loss = T::zero();
        for (r, row) in probs.chunks_exact_mut(classes).enumerate() {
            let y = labels[r];
            if y >= classes {
                return Err(Error::Shape(format!("label {y} out of {classes} classes")));
            }
            let lse = log_sum_exp(row);
            loss += lse - row[y];
            softmax_in_place(row);
        }
        loss /= T::of(batch as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                classes,
            },
            &[logits],
        ))
    }

    /// NT-Xent over `z: [2N, D]` laid out `[a_1..a_N, b_1..b_N]`.
    ///
    /// Every one of the 2N rows is an anchor; its positive is the other view
    /// of the same sample and the denominator runs over all other rows.
    /// Returns the mean over anchors.
    pub fn nt_xent(&mut self, z: Var, tau: f64) -> Result<Var> {
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
        }
        let (views, d) = dims2(self.shape(z));
        if views < 2 || views % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "nt_xent needs an even number (>= 2) of views, got {views}"
            )));
        }
        let half = views / 2;
        let zd = self.data(z);
        let mut units = vec![T::zero(); views * d];
        let mut norms = vec![T::zero(); views];
        for i in 0..views {
            let row = &zd[i * d..(i + 1) * d];
            let nrm = dot(row, row).sqrt();
            if !(nrm > T::zero() && nrm.is_finite()) {
                return Err(Error::NonFinite(format!("nt_xent: latent vector {i} has zero norm")));
            }
            norms[i] = nrm;
            for (u, &v) in units[i * d..(i + 1) * d].iter_mut().zip(row) {
                *u = v / nrm;
            }
        }
        let inv_tau = T::one() / T::of(tau);
        let mut sims = vec![T::zero(); views * views];
        gemm(views, d, views, &units, false, &units, true, T::zero(), &mut sims);
        let mut probs = vec![T::zero(); views * views];
        let mut loss = T::zero();
        for i in 0..views {
            let pos = (i + half) % views;
            let row = &mut probs[i * views..(i + 1) * views];
            let mut mx = T::neg_infinity();
            for k in 0..views {
                if k != i {
                    row[k] = sims[i * views + k] * inv_tau;
                    mx = mx.max(row[k]);
                }
            }
            let mut total = T::zero();
            for k in 0..views {
                if k != i {
                    row[k] = (row[k] - mx).exp();
                    total += row[k];
                }
            }
            for k in 0..views {
                row[k] = if k == i { T::zero() } else { row[k] / total };
            }
            let lse = mx + total.ln();
            loss += lse - sims[i * views + pos] * inv_tau;
        }
        loss /= T::of(views as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::NtXent {
                z,
                tau: T::of(tau),
                units,
                norms,
                probs,
                views,
                d,
            },
            &[z],
        ))
    }

    /// Crops `[start, start + crop_len)` from every row of `x: [B, L]` and
    /// resamples it to `out_len` points by linear interpolation.
    pub fn resample_linear(&mut self, x: Var, start: usize, crop_len: usize, out_len: usize) -> Var {
        let (batch, len_in) = dims2(self.shape(x));
        assert!(start + crop_len <= len_in && crop_len >= 1);
        let taps: Vec<(usize, T)> = interp_taps(crop_len, out_len)
            .into_iter()
            .map(|(i, w)| (i, T::of(w)))
            .collect();
        let xd = self.data(x);
        let mut out = vec![T::zero(); batch * out_len];
        for b in 0..batch {
            let row = &xd[b * len_in + start..b * len_in + start + crop_len];
            for (j, &(lo, w)) in taps.iter().enumerate() {
                let hi = (lo + 1).min(crop_len - 1);
                out[b * out_len + j] = row[lo] + (row[hi] - row[lo]) * w;
            }
        }
        self.push(
            Tensor::from_vec(&[batch, out_len], out),
            Op::Resample { x, len_in, start, taps },
            &[x],
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum(x);
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.data()[0].is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(idx, &g, &mut grads);
        }
        let out = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| match (&n.op, g) {
                (Op::Leaf, Some(g)) if n.requires_grad => Some(Tensor::from_vec(n.value.shape(), g)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    fn backprop(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b, k, n } => {
                let rows = g.len() / n;
                if self.requires_grad(*x) {
                    let dx = self.grad_buf(grads, *x);
                    gemm(rows, *n, *k, g, false, self.data(*w), true, T::one(), dx);
                }
                if self.requires_grad(*w) {
                    let xd = self.data(*x);
                    let dw = self.grad_buf(grads, *w);
                    gemm(*k, rows, *n, xd, true, g, false, T::one(), dw);
                }
                if let Some(b) = b {
                    if self.requires_grad(*b) {
                        let db = self.grad_buf(grads, *b);
                        for r in g.chunks_exact(*n) {
                            for (d, &v) in db.iter_mut().zip(r) {
                                *d += v;
                            }
                        }
                    }
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                if self.requires_grad(*a) {
                    let da = self.grad_buf(grads, *a);
                    gemm(*m, *n, *k, g, false, self.data(*b), true, T::one(), da);
                }
                if self.requires_grad(*b) {
                    let ad = self.data(*a);
                    let db = self.grad_buf(grads, *b);
                    gemm(*k, *m, *n, ad, true, g, false, T::one(), db);
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.requires_grad(v) {
                        add_into(self.grad_buf(grads, v), g);
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.requires_grad(*a) {
                    let bd = self.data(*b);
                    for ((d, &v), &o) in self.grad_buf(grads, *a).iter_mut().zip(g).zip(bd) {
                        *d += v * o;
                    }
                }
                if self.requires_grad(*b) {
                    let ad = self.data(*a);
                    for ((d, &v), &o) in self.grad_buf(grads, *b).iter_mut().zip(g).zip(ad) {
                        *d += v * o;
                    }
                }
            }
            Op::Scale { x, c } => {
                if self.requires_grad(*x) {
                    for (d, &v) in self.grad_buf(grads, *x).iter_mut().zip(g) {
                        *d += v * *c;
                    }
                }
            }
            Op::MulConst { x, mask } => {
                if self.requires_grad(*x) {
                    let dx = self.grad_buf(grads, *x);
                    for ((d, &v), &m) in dx.iter_mut().zip(g).zip(mask) {
                        *d += v * m;
                    }
                }
            }
            Op::AddTiled { x, y } => {
                if self.requires_grad(*x) {
                    add_into(self.grad_buf(grads, *x), g);
                }
                if self.requires_grad(*y) {
                    let dy = self.grad_buf(grads, *y);
                    let period = dy.len();
                    for chunk in g.chunks_exact(period) {
                        add_into(dy, chunk);
                    }
                }
            }
            Op::AddPerItem { x, y, items, seq, d } => {
                if self.requires_grad(*x) {
                    add_into(self.grad_buf(grads, *x), g);
                }
                if self.requires_grad(*y) {
                    let dy = self.grad_buf(grads, *y);
                    for b in 0..*items {
                        for s in 0..*seq {
                            let off = (b * seq + s) * d;
                            add_into(&mut dy[b * d..(b + 1) * d], &g[off..off + d]);
                        }
                    }
                }
            }
            Op::GatherRows { table, ids, width } => {
                if self.requires_grad(*table) {
                    let dt = self.grad_buf(grads, *table);
                    for (r, &i) in ids.iter().enumerate() {
                        add_into(&mut dt[i * width..(i + 1) * width], &g[r * width..(r + 1) * width]);
                    }
                }
            }
            Op::Concat { parts } => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if self.requires_grad(p) {
                        add_into(self.grad_buf(grads, p), &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::Reshape { x } => {
                if self.requires_grad(*x) {
                    add_into(self.grad_buf(grads, *x), g);
                }
            }
            Op::Relu { x } => self.unary_back(grads, *x, g, node.value.data(), |xv, _| {
                if xv > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }),
            Op::Elu { x } => self.unary_back(grads, *x, g, node.value.data(), |xv, yv| {
                if xv > T::zero() {
                    T::one()
                } else {
                    yv + T::one()
                }
            }),
            Op::LeakyRelu { x, slope } => {
                let s = *slope;
                self.unary_back(grads, *x, g, node.value.data(), move |xv, _| {
                    if xv > T::zero() {
                        T::one()
                    } else {
                        s
                    }
                })
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                d,
            } => {
                let d = *d;
                let gm = self.data(*gamma);
                if self.requires_grad(*gamma) {
                    let dg = self.grad_buf(grads, *gamma);
                    for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for i in 0..d {
                            dg[i] += gr[i] * hr[i];
                        }
                    }
                }
                if self.requires_grad(*beta) {
                    let db = self.grad_buf(grads, *beta);
                    for gr in g.chunks_exact(d) {
                        add_into(db, gr);
                    }
                }
                if self.requires_grad(*x) {
                    let n = T::of(d as f64);
                    let dx = self.grad_buf(grads, *x);
                    let mut dxh = vec![T::zero(); d];
                    for (r, (gr, hr)) in g.chunks_exact(d).zip(xhat.chunks_exact(d)).enumerate() {
                        for i in 0..d {
                            dxh[i] = gr[i] * gm[i];
                        }
                        let m1 = dxh.iter().copied().sum::<T>() / n;
                        let m2 = dxh.iter().zip(hr).map(|(&a, &h)| a * h).sum::<T>() / n;
                        let out = &mut dx[r * d..(r + 1) * d];
                        for i in 0..d {
                            out[i] += rstd[r] * (dxh[i] - m1 - hr[i] * m2);
                        }
                    }
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                cols,
                geo,
                batch,
                len_in,
                len_out,
                c_in,
                c_out,
            } => {
                let rows = batch * len_out;
                let kc = geo.kernel * c_in;
                if self.requires_grad(*w) {
                    let dw = self.grad_buf(grads, *w);
                    gemm(kc, rows, *c_out, cols, true, g, false, T::one(), dw);
                }
                if self.requires_grad(*b) {
                    let db = self.grad_buf(grads, *b);
                    for r in g.chunks_exact(*c_out) {
                        add_into(db, r);
                    }
                }
                if self.requires_grad(*x) {
                    let mut dcols = vec![T::zero(); rows * kc];
                    gemm(rows, *c_out, kc, g, false, self.data(*w), true, T::zero(), &mut dcols);
                    let dx = self.grad_buf(grads, *x);
                    for bi in 0..*batch {
                        for t in 0..*len_out {
                            let src = &dcols[(bi * len_out + t) * kc..(bi * len_out + t + 1) * kc];
                            for tap in 0..geo.kernel {
                                let pos = (t * geo.stride + tap) as isize - geo.padding as isize;
                                if pos < 0 || pos as usize >= *len_in {
                                    continue;
                                }
                                let dst = (bi * len_in + pos as usize) * c_in;
                                add_into(&mut dx[dst..dst + c_in], &src[tap * c_in..(tap + 1) * c_in]);
                            }
                        }
                    }
                }
            }
            Op::AdaptivePool {
                x,
                batch,
                len,
                ch,
                bins,
            } => {
                if self.requires_grad(*x) {
                    let dx = self.grad_buf(grads, *x);
                    for b in 0..*batch {
                        for p in 0..*bins {
                            let (s, e) = adaptive_bin(p, *len, *bins);
                            let inv = T::one() / T::of((e - s) as f64);
                            let gi = &g[(b * bins + p) * ch..(b * bins + p + 1) * ch];
                            for t in s..e {
                                let o = &mut dx[(b * len + t) * ch..(b * len + t + 1) * ch];
                                for (d, &v) in o.iter_mut().zip(gi) {
                                    *d += v * inv;
                                }
                            }
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                batch,
                seq,
                d,
                probs,
            } => self.attention_back(grads, g, [*q, *k, *v], *heads, *batch, *seq, *d, probs),
            Op::MeanSeq { x, batch, seq, d } => {
                if self.requires_grad(*x) {
                    let inv = T::one() / T::of(*seq as f64);
                    let dx = self.grad_buf(grads, *x);
                    for b in 0..*batch {
                        for s in 0..*seq {
                            let o = &mut dx[(b * seq + s) * d..(b * seq + s + 1) * d];
                            for (dv, &v) in o.iter_mut().zip(&g[b * d..(b + 1) * d]) {
                                *dv += v * inv;
                            }
                        }
                    }
                }
            }
            Op::GatAttention {
                wh,
                a,
                heads,
                batch,
                nodes,
                d,
                slope,
                scores,
                probs,
            } => self.gat_back(grads, g, *wh, *a, *heads, *batch, *nodes, *d, *slope, scores, probs),
            Op::NodeMix {
                h,
                adj,
                batch,
                nodes,
                d,
            } => {
                if self.requires_grad(*h) {
                    let dh = self.grad_buf(grads, *h);
                    let span = nodes * d;
                    for b in 0..*batch {
                        gemm(
                            *nodes,
                            *nodes,
                            *d,
                            adj,
                            true,
                            &g[b * span..(b + 1) * span],
                            false,
                            T::one(),
                            &mut dh[b * span..(b + 1) * span],
                        );
                    }
                }
            }
            Op::Softmax { x, d } => {
                if self.requires_grad(*x) {
                    let y = node.value.data();
                    let dx = self.grad_buf(grads, *x);
                    for ((dr, gr), yr) in dx.chunks_exact_mut(*d).zip(g.chunks_exact(*d)).zip(y.chunks_exact(*d)) {
                        let s = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>();
                        for i in 0..*d {
                            dr[i] += yr[i] * (gr[i] - s);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
                classes,
            } => {
                if self.requires_grad(*logits) {
                    let scale = g[0] / T::of(labels.len() as f64);
                    let dl = self.grad_buf(grads, *logits);
                    for (r, &y) in labels.iter().enumerate() {
                        for c in 0..*classes {
                            let onehot = if c == y { T::one() } else { T::zero() };
                            dl[r * classes + c] += (probs[r * classes + c] - onehot) * scale;
                        }
                    }
                }
            }
            Op::NtXent {
                z,
                tau,
                units,
                norms,
                probs,
                views,
                d,
            } => {
                if self.requires_grad(*z) {
                    let (views, d) = (*views, *d);
                    let half = views / 2;
                    // dL/dS (S = scaled similarity), symmetrised.
                    let scale = g[0] / (T::of(views as f64) * *tau);
                    let mut gs = vec![T::zero(); views * views];
                    for i in 0..views {
                        let pos = (i + half) % views;
                        for k in 0..views {
                            let mut v = probs[i * views + k];
                            if k == pos {
                                v -= T::one();
                            }
                            gs[i * views + k] += v * scale;
                            gs[k * views + i] += v * scale;
                        }
                    }
                    let mut du = vec![T::zero(); views * d];
                    gemm(views, views, d, &gs, false, units, false, T::zero(), &mut du);
                    let dz = self.grad_buf(grads, *z);
                    for i in 0..views {
                        let u = &units[i * d..(i + 1) * d];
                        let gu = &du[i * d..(i + 1) * d];
                        let proj = dot(u, gu);
                        for c in 0..d {
                            dz[i * d + c] += (gu[c] - proj * u[c]) / norms[i];
                        }
                    }
                }
            }
            Op::Resample { x, len_in, start, taps } => {
                if self.requires_grad(*x) {
                    let out_len = taps.len();
                    let dx = self.grad_buf(grads, *x);
                    let batch = g.len() / out_len;
                    for b in 0..batch {
                        let row = &mut dx[b * len_in + start..];
                        for (j, &(lo, w)) in taps.iter().enumerate() {
                            let gv = g[b * out_len + j];
                            row[lo] += gv * (T::one() - w);
                            if w != T::zero() {
                                row[lo + 1] += gv * w;
                            }
                        }
                    }
                }
            }
            Op::Sum { x } => {
                if self.requires_grad(*x) {
                    let gv = g[0];
                    for dv in self.grad_buf(grads, *x).iter_mut() {
                        *dv += gv;
                    }
                }
            }
        }
    }

    fn grad_buf<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> &'a mut [T] {
        let n = self.value(v).numel();
        grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
    }

    fn unary_back(&self, grads: &mut [Option<Vec<T>>], x: Var, g: &[T], y: &[T], deriv: impl Fn(T, T) -> T) {
        if !self.requires_grad(x) {
            return;
        }
        let xd = self.data(x);
        let dx = self.grad_buf(grads, x);
        for i in 0..g.len() {
            dx[i] += g[i] * deriv(xd[i], y[i]);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_back(
        &self,
        grads: &mut [Option<Vec<T>>],
        g: &[T],
        qkv: [Var; 3],
        heads: usize,
        batch: usize,
        seq: usize,
        d: usize,
        probs: &[T],
    ) {
        let [q, k, v] = qkv;
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut dq = vec![T::zero(); batch * seq * d];
        let mut dk = vec![T::zero(); batch * seq * d];
        let mut dv = vec![T::zero(); batch * seq * d];
        let mut dp = vec![T::zero(); seq];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                let pb = &probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                let at = |i: usize| (b * seq + i) * d + off;
                for i in 0..seq {
                    let gi = &g[at(i)..at(i) + dh];
                    let prow = &pb[i * seq..(i + 1) * seq];
                    for j in 0..seq {
                        dp[j] = dot(gi, &vd[at(j)..at(j) + dh]);
                        let p = prow[j];
                        for (o, &gv) in dv[at(j)..at(j) + dh].iter_mut().zip(gi) {
                            *o += p * gv;
                        }
                    }
                    let s = prow.iter().zip(&dp).map(|(&p, &x)| p * x).sum::<T>();
                    for j in 0..seq {
                        let ds = prow[j] * (dp[j] - s) * scale;
                        if ds == T::zero() {
                            continue;
                        }
                        for c in 0..dh {
                            dq[at(i) + c] += ds * kd[at(j) + c];
                            dk[at(j) + c] += ds * qd[at(i) + c];
                        }
                    }
                }
            }
        }
        for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
            if self.requires_grad(var) {
                add_into(self.grad_buf(grads, var), &buf);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn gat_back(
        &self,
        grads: &mut [Option<Vec<T>>],
        g: &[T],
        wh: Var,
        a: Var,
        heads: usize,
        batch: usize,
        nodes: usize,
        d: usize,
        slope: T,
        scores: &[T],
        probs: &[T],
    ) {
        let dh = d / heads;
        let (wd, ad) = (self.data(wh), self.data(a));
        let mut dwh = vec![T::zero(); wd.len()];
        let mut da = vec![T::zero(); ad.len()];
        let mut dalpha = vec![T::zero(); nodes];
        let mut dsrc = vec![T::zero(); nodes];
        let mut ddst = vec![T::zero(); nodes];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                let (a_src, a_dst) = ad[h * 2 * dh..(h + 1) * 2 * dh].split_at(dh);
                let base = (b * heads + h) * nodes * nodes;
                let at = |i: usize| (b * nodes + i) * d + off;
                dsrc.iter_mut().for_each(|v| *v = T::zero());
                ddst.iter_mut().for_each(|v| *v = T::zero());
                for i in 0..nodes {
                    let gi = &g[at(i)..at(i) + dh];
                    let prow = &probs[base + i * nodes..base + (i + 1) * nodes];
                    for j in 0..nodes {
                        dalpha[j] = dot(gi, &wd[at(j)..at(j) + dh]);
                        let p = prow[j];
                        for (o, &gv) in dwh[at(j)..at(j) + dh].iter_mut().zip(gi) {
                            *o += p * gv;
                        }
                    }
                    let s = prow.iter().zip(&dalpha).map(|(&p, &x)| p * x).sum::<T>();
                    for j in 0..nodes {
                        let de = prow[j] * (dalpha[j] - s);
                        let pre = scores[base + i * nodes + j];
                        let dpre = if pre > T::zero() { de } else { de * slope };
                        dsrc[i] += dpre;
                        ddst[j] += dpre;
                    }
                }
                for i in 0..nodes {
                    let gi = &wd[at(i)..at(i) + dh];
                    for c in 0..dh {
                        dwh[at(i) + c] += dsrc[i] * a_src[c] + ddst[i] * a_dst[c];
                        da[h * 2 * dh + c] += dsrc[i] * gi[c];
                        da[h * 2 * dh + dh + c] += ddst[i] * gi[c];
                    }
                }
            }
        }
        if self.requires_grad(wh) {
            add_into(self.grad_buf(grads, wh), &dwh);
        }
        if self.requires_grad(a) {
            add_into(self.grad_buf(grads, a), &da);
        }
    }
}

fn dims2(s: &[usize]) -> (usize, usize) {
    assert_eq!(s.len(), 2, "expected a 2-D tensor, got {s:?}");
    (s[0], s[1])
}

fn dims3(s: &[usize]) -> (usize, usize, usize) {
    assert_eq!(s.len(), 3, "expected a 3-D tensor, got {s:?}");
    (s[0], s[1], s[2])
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln()
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
