//! Parameterized building blocks shared by the encoder and the classifier.
//!
//! Each block registers its tensors in a [`ParamSet`] at construction and
//! later reads them back through the [`Bound`] handles of one graph.

use rand::Rng;

use crate::numerics::params::{normal, xavier_uniform};
use crate::numerics::{Bound, Graph, ParamId, ParamSet, Real, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        ps: &mut ParamSet<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = ps.add(format!("{name}.w"), xavier_uniform(rng, &[d_in, d_out], d_in, d_out));
        let b = bias.then(|| ps.add(format!("{name}.b"), Tensor::zeros(&[d_out])));
        Self { w, b }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        g.linear(x, p[self.w], self.b.map(|b| p[b]))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, d: usize) -> Self {
        Self {
            gamma: ps.add(format!("{name}.gamma"), Tensor::full(&[d], T::one())),
            beta: ps.add(format!("{name}.beta"), Tensor::zeros(&[d])),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        g.layer_norm(x, p[self.gamma], p[self.beta], LAYER_NORM_EPS)
    }
}

/// Embedding table initialized from `Normal(0, 0.02)`.
pub fn embedding<T: Real, R: Rng + ?Sized>(
    ps: &mut ParamSet<T>,
    name: &str,
    rows: usize,
    d: usize,
    rng: &mut R,
) -> ParamId {
    ps.add(name, normal(rng, &[rows, d], 0.02))
}

/// Multi-head self-attention with output projection.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(
        ps: &mut ParamSet<T>,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert_eq!(d % heads, 0, "width {d} not divisible by {heads} heads");
        Self {
            q: Linear::new(ps, &format!("{name}.q"), d, d, true, rng),
            k: Linear::new(ps, &format!("{name}.k"), d, d, true, rng),
            v: Linear::new(ps, &format!("{name}.v"), d, d, true, rng),
            o: Linear::new(ps, &format!("{name}.o"), d, d, true, rng),
            heads,
        }
    }

    /// Returns the projected output and the raw attention node.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> (Var, Var) {
        let q = self.q.forward(g, p, x);
        let k = self.k.forward(g, p, x);
        let v = self.v.forward(g, p, x);
        let att = g.attention(q, k, v, self.heads);
        (self.o.forward(g, p, att), att)
    }
}

/// Post-norm encoder layer: `h = LN(x + MHA(x))`, `out = LN(h + FFN(h))`,
/// with a ReLU feed-forward block.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub attn: SelfAttention,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
}

impl TransformerLayer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        ps: &mut ParamSet<T>,
        name: &str,
        d: usize,
        heads: usize,
        d_ff: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            attn: SelfAttention::new(ps, &format!("{name}.attn"), d, heads, rng),
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), d),
            ff1: Linear::new(ps, &format!("{name}.ff1"), d, d_ff, true, rng),
            ff2: Linear::new(ps, &format!("{name}.ff2"), d_ff, d, true, rng),
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), d),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> (Var, Var) {
        let (a, att) = self.attn.forward(g, p, x);
        let r = g.add(x, a);
        let h = self.ln1.forward(g, p, r);
        let f = self.ff1.forward(g, p, h);
        let f = g.relu(f);
        let f = self.ff2.forward(g, p, f);
        let r = g.add(h, f);
        (self.ln2.forward(g, p, r), att)
    }
}

#[derive(Clone, Debug)]
pub struct TransformerStack {
    pub layers: Vec<TransformerLayer>,
}

impl TransformerStack {
    pub fn new<T: Real, R: Rng + ?Sized>(
        ps: &mut ParamSet<T>,
        name: &str,
        n_layers: usize,
        d: usize,
        heads: usize,
        d_ff: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            layers: (0..n_layers)
                .map(|i| TransformerLayer::new(ps, &format!("{name}.{i}"), d, heads, d_ff, rng))
                .collect(),
        }
    }

    /// Runs every layer over `x: [B, S, D]`; also returns each layer's
    /// attention node.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, mut x: Var) -> (Var, Vec<Var>) {
        let mut atts = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, att) = layer.forward(g, p, x);
            atts.push(att);
            x = y;
        }
        (x, atts)
    }
}
