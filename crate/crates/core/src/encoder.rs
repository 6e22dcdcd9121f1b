//! The univariate temporal encoder.
//!
//! A single-channel signal of any supported length is turned into a fixed
//! number of patch tokens (conv stack plus adaptive average pooling, or the
//! fixed-patch alternative), summed with positional, channel-identity and
//! sampling-rate embeddings, passed through a post-norm Transformer, and read
//! out by averaging the tokens.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{window_samples, EPOCH_SECONDS};
use crate::error::{Error, Result};
use crate::layers::{embedding, Linear, TransformerStack};
use crate::numerics::params::xavier_uniform;
use crate::numerics::{Bound, ConvGeometry, Graph, ParamId, ParamSet, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerMode {
    /// Conv feature extractor followed by adaptive average pooling.
    Adaptive,
    /// Contiguous equal-length patches, each linearly projected.
    FixedPatch,
}

/// One conv layer with "same" padding (`kernel / 2`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvLayerSpec {
    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry {
            kernel: self.kernel,
            stride: self.stride,
            padding: self.kernel / 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtConfig {
    pub n_patches: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub conv: Vec<ConvLayerSpec>,
    pub channel_vocab_size: usize,
    /// Rate vocabulary: the position of a rate is its id.
    pub rates: Vec<u32>,
    pub tokenizer: TokenizerMode,
    /// Longest input the fixed-patch tokenizer accepts.
    pub max_len: usize,
    /// Adds a 2-layer MLP after the read-out, used only for the contrastive
    /// latent.
    pub projection_head: bool,
}

impl ArtConfig {
    /// Full-size configuration for the given vocabulary size and sampling
    /// rates.
    pub fn new(channel_vocab_size: usize, rates: &[u32]) -> Self {
        let mut rates = rates.to_vec();
        rates.sort_unstable();
        rates.dedup();
        let max_len = rates
            .iter()
            .map(|&r| window_samples(EPOCH_SECONDS, r))
            .max()
            .unwrap_or(0);
        Self {
            n_patches: 16,
            d_model: 128,
            n_layers: 3,
            n_heads: 8,
            d_ff: 256,
            conv: vec![
                ConvLayerSpec {
                    out_channels: 32,
                    kernel: 7,
                    stride: 2,
                },
                ConvLayerSpec {
                    out_channels: 64,
                    kernel: 5,
                    stride: 2,
                },
                ConvLayerSpec {
                    out_channels: 64,
                    kernel: 3,
                    stride: 1,
                },
            ],
            channel_vocab_size,
            rates,
            tokenizer: TokenizerMode::Adaptive,
            max_len,
            projection_head: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.n_heads
            ));
        }
        if self.n_patches == 0 || self.channel_vocab_size == 0 || self.rates.is_empty() {
            return bad("need patches, a channel vocabulary and at least one rate".into());
        }
        if self.conv.is_empty()
            || self
                .conv
                .iter()
                .any(|c| c.kernel == 0 || c.stride == 0 || c.out_channels == 0)
        {
            return bad("conv stack needs at least one layer with positive sizes".into());
        }
        if self.tokenizer == TokenizerMode::FixedPatch && self.max_len == 0 {
            return bad("fixed-patch tokenizer needs max_len".into());
        }
        Ok(())
    }

    pub fn rate_id(&self, rate_hz: u32) -> Result<usize> {
        self.rates
            .iter()
            .position(|&r| r == rate_hz)
            .ok_or(Error::UnknownRate(rate_hz))
    }

    /// Feature positions left after the conv stack for an input of `len`.
    pub fn feature_len(&self, len: usize) -> usize {
        self.conv.iter().fold(len, |l, c| c.geometry().output_len(l))
    }

    /// Width of one fixed patch.
    pub fn patch_len(&self) -> usize {
        self.max_len.div_ceil(self.n_patches)
    }

    fn conv_description(&self) -> String {
        let parts: Vec<String> = self
            .conv
            .iter()
            .map(|c| format!("{}ch k{} s{}", c.out_channels, c.kernel, c.stride))
            .collect();
        format!("[{}]", parts.join(", "))
    }
}

/// One univariate input with its vocabulary tags.
#[derive(Clone, Copy, Debug)]
pub struct SignalRef<'a, T> {
    pub samples: &'a [T],
    pub channel_id: usize,
    pub rate_id: usize,
}

/// Graph handles produced by one encoder pass.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `[n, d_model]` mean of the token outputs.
    pub repr: Var,
    /// `[n, n_patches, d_model]` token outputs.
    pub tokens: Var,
    /// Attention node of every Transformer layer.
    pub attention: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct ArtEncoder<T> {
    config: ArtConfig,
    params: ParamSet<T>,
    conv: Vec<(ParamId, ParamId)>,
    patch: Linear,
    e_pos: ParamId,
    e_chan: ParamId,
    e_rate: ParamId,
    stack: TransformerStack,
    head: Option<(Linear, Linear)>,
}

impl<T: Real> ArtEncoder<T> {
    pub fn new<R: Rng + ?Sized>(config: ArtConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamSet::new();
        let mut conv = Vec::new();
        let mut c_in = 1;
        for (i, c) in config.conv.iter().enumerate() {
            let rows = c.kernel * c_in;
            let w = ps.add(
                format!("conv{i}.w"),
                xavier_uniform(rng, &[rows, c.out_channels], rows, c.kernel * c.out_channels),
            );
            let b = ps.add(format!("conv{i}.b"), Tensor::zeros(&[c.out_channels]));
            conv.push((w, b));
            c_in = c.out_channels;
        }
        let d = config.d_model;
        let patch_in = match config.tokenizer {
            TokenizerMode::Adaptive => c_in,
            TokenizerMode::FixedPatch => config.patch_len(),
        };
        let patch = Linear::new(&mut ps, "patch", patch_in, d, true, rng);
        let e_pos = embedding(&mut ps, "e_pos", config.n_patches, d, rng);
        let e_chan = embedding(&mut ps, "e_chan", config.channel_vocab_size, d, rng);
        let e_rate = embedding(&mut ps, "e_rate", config.rates.len(), d, rng);
        let stack = TransformerStack::new(&mut ps, "layer", config.n_layers, d, config.n_heads, config.d_ff, rng);
        let head = config.projection_head.then(|| {
            (
                Linear::new(&mut ps, "proj.0", d, d, true, rng),
                Linear::new(&mut ps, "proj.1", d, d / 2, true, rng),
            )
        });
        Ok(Self {
            config,
            params: ps,
            conv,
            patch,
            e_pos,
            e_chan,
            e_rate,
            stack,
            head,
        })
    }

    pub fn config(&self) -> &ArtConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> ArtEncoder<U> {
        ArtEncoder {
            config: self.config.clone(),
            params: self.params.cast(),
            conv: self.conv.clone(),
            patch: self.patch.clone(),
            e_pos: self.e_pos,
            e_chan: self.e_chan,
            e_rate: self.e_rate,
            stack: self.stack.clone(),
            head: self.head.clone(),
        }
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        self.params.bind(g, trainable)
    }

    /// Patch tokens `[n, n_patches, d_model]` for signals of any mix of
    /// lengths; inputs of equal length share one batched pass.
    pub fn tokenize(&self, g: &mut Graph<T>, p: &Bound, signals: &[&[T]]) -> Result<Var> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in signals.iter().enumerate() {
            groups.entry(s.len()).or_default().push(i);
        }
        let mut parts = Vec::with_capacity(groups.len());
        let mut order = Vec::with_capacity(signals.len());
        for (&len, idx) in &groups {
            let batch: Vec<&[T]> = idx.iter().map(|&i| signals[i]).collect();
            parts.push(match self.config.tokenizer {
                TokenizerMode::Adaptive => self.tokenize_adaptive(g, p, &batch, len)?,
                TokenizerMode::FixedPatch => self.tokenize_fixed(g, p, &batch, len)?,
            });
            order.extend_from_slice(idx);
        }
        if parts.is_empty() {
            return Err(Error::InvalidArgument("no signals to encode".into()));
        }
        let stacked = if parts.len() == 1 { parts[0] } else { g.concat(&parts) };
        if order.iter().enumerate().all(|(k, &i)| k == i) {
            return Ok(stacked);
        }
        let mut inverse = vec![0; order.len()];
        for (k, &i) in order.iter().enumerate() {
            inverse[i] = k;
        }
        Ok(g.gather_rows(stacked, &inverse))
    }

    fn tokenize_adaptive(&self, g: &mut Graph<T>, p: &Bound, batch: &[&[T]], len: usize) -> Result<Var> {
        let features = self.config.feature_len(len);
        if features < self.config.n_patches {
            return Err(Error::InputTooShort {
                len,
                features,
                needed: self.config.n_patches,
                conv: self.config.conv_description(),
            });
        }
        let data: Vec<T> = batch.iter().flat_map(|s| s.iter().copied()).collect();
        let mut h = g.constant(Tensor::from_vec(&[batch.len(), len, 1], data));
        let last = self.conv.len() - 1;
        for (i, (spec, &(w, b))) in self.config.conv.iter().zip(&self.conv).enumerate() {
            h = g.conv1d(h, p[w], p[b], spec.geometry());
            if i < last {
                h = g.relu(h);
            }
        }
        let pooled = g.adaptive_avg_pool(h, self.config.n_patches);
        Ok(self.patch.forward(g, p, pooled))
    }

    fn tokenize_fixed(&self, g: &mut Graph<T>, p: &Bound, batch: &[&[T]], len: usize) -> Result<Var> {
        if len > self.config.max_len || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "fixed-patch tokenizer accepts 1..={} samples, got {len}",
                self.config.max_len
            )));
        }
        let n = self.config.n_patches;
        let width = self.config.patch_len();
        let seg = len.div_ceil(n);
        let mut data = vec![T::zero(); batch.len() * n * width];
        for (b, s) in batch.iter().enumerate() {
            for (t, &v) in s.iter().enumerate() {
                let (patch, off) = (t / seg, t % seg);
                data[(b * n + patch) * width + off] = v;
            }
        }
        let x = g.constant(Tensor::from_vec(&[batch.len(), n, width], data));
        Ok(self.patch.forward(g, p, x))
    }

    /// `x_in = patches + E_pos + E_chan[channel] + E_rate[rate]`.
    pub fn embed(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        patches: Var,
        channel_ids: &[usize],
        rate_ids: &[usize],
    ) -> Result<Var> {
        let size = self.config.channel_vocab_size;
        if let Some(&id) = channel_ids.iter().find(|&&id| id >= size) {
            return Err(Error::ChannelIdOutOfRange { id, size });
        }
        if let Some(&id) = rate_ids.iter().find(|&&id| id >= self.config.rates.len()) {
            return Err(Error::InvalidArgument(format!(
                "rate id {id} out of range for {} rates",
                self.config.rates.len()
            )));
        }
        let x = g.add_tiled(patches, p[self.e_pos]);
        let chan = g.gather_rows(p[self.e_chan], channel_ids);
        let rate = g.gather_rows(p[self.e_rate], rate_ids);
        let tags = g.add(chan, rate);
        Ok(g.add_per_item(x, tags))
    }

    /// Runs the Transformer stack over `[n, n_patches, d_model]`.
    pub fn encode(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> (Var, Vec<Var>) {
        self.stack.forward(g, p, x)
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, inputs: &[SignalRef<'_, T>]) -> Result<EncoderOutput> {
        let signals: Vec<&[T]> = inputs.iter().map(|s| s.samples).collect();
        let channels: Vec<usize> = inputs.iter().map(|s| s.channel_id).collect();
        let rates: Vec<usize> = inputs.iter().map(|s| s.rate_id).collect();
        let patches = self.tokenize(g, p, &signals)?;
        let x = self.embed(g, p, patches, &channels, &rates)?;
        let (tokens, attention) = self.encode(g, p, x);
        let repr = g.mean_seq(tokens);
        Ok(EncoderOutput {
            repr,
            tokens,
            attention,
        })
    }

    /// `[n, d_model]` representations.
    pub fn represent(&self, g: &mut Graph<T>, p: &Bound, inputs: &[SignalRef<'_, T>]) -> Result<Var> {
        Ok(self.forward(g, p, inputs)?.repr)
    }

    /// Contrastive latent: the projection head output when configured,
    /// otherwise the representation itself.
    pub fn project(&self, g: &mut Graph<T>, p: &Bound, repr: Var) -> Var {
        match &self.head {
            Some((l0, l1)) => {
                let h = l0.forward(g, p, repr);
                let h = g.relu(h);
                l1.forward(g, p, h)
            }
            None => repr,
        }
    }

    /// Parameter indices of the embedding tables `(pos, chan, rate)`.
    pub fn embedding_ids(&self) -> (ParamId, ParamId, ParamId) {
        (self.e_pos, self.e_chan, self.e_rate)
    }

    /// Parameter indices of the conv layers `(weight, bias)`.
    pub fn conv_ids(&self) -> &[(ParamId, ParamId)] {
        &self.conv
    }

    pub fn patch_projection(&self) -> &Linear {
        &self.patch
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::graph::adaptive_bin;

    fn encoder(tokenizer: TokenizerMode) -> ArtEncoder<f64> {
        let mut cfg = ArtConfig::new(8, &[128, 200]);
        cfg.tokenizer = tokenizer;
        ArtEncoder::new(cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
    }

    fn signal(len: usize, phase: f64) -> Vec<f64> {
        (0..len)
            .map(|t| (t as f64 * 0.21 + phase).sin() + 0.3 * (t as f64 * 0.05).cos())
            .collect()
    }

    #[test]
    fn both_rates_give_sixteen_tokens_and_one_vector() {
        let enc = encoder(TokenizerMode::Adaptive);
        let (a, b) = (signal(256, 0.0), signal(400, 1.0));
        let mut g = Graph::new();
        let p = enc.bind(&mut g, false);
        let out = enc
            .forward(
                &mut g,
                &p,
                &[
                    SignalRef {
                        samples: &a,
                        channel_id: 0,
                        rate_id: 0,
                    },
                    SignalRef {
                        samples: &b,
                        channel_id: 3,
                        rate_id: 1,
                    },
                ],
            )
            .unwrap();
        assert_eq!(g.shape(out.tokens), &[2, 16, 128]);
        assert_eq!(g.shape(out.repr), &[2, 128]);
        assert_eq!(enc.config().feature_len(256), 64);
        assert_eq!(enc.config().feature_len(400), 100);
    }

    #[test]
    fn mixed_lengths_keep_input_order() {
        let enc = encoder(TokenizerMode::Adaptive);
        let sigs = [signal(400, 0.1), signal(256, 0.2), signal(400, 0.3)];
        let mut g = Graph::new();
        let p = enc.bind(&mut g, false);
        let refs: Vec<&[f64]> = sigs.iter().map(|s| s.as_slice()).collect();
        let joint = enc.tokenize(&mut g, &p, &refs).unwrap();
        let joint = g.value(joint).data().to_vec();
        let width = 16 * 128;
        for (i, s) in sigs.iter().enumerate() {
            let single = enc.tokenize(&mut g, &p, &[s.as_slice()]).unwrap();
            assert_eq!(&joint[i * width..(i + 1) * width], g.value(single).data());
        }
    }

    #[test]
    fn short_input_is_rejected() {
        let enc = encoder(TokenizerMode::Adaptive);
        let x = signal(40, 0.0);
        let mut g = Graph::new();
        let p = enc.bind(&mut g, false);
        let err = enc.tokenize(&mut g, &p, &[&x]).unwrap_err();
        assert!(
            matches!(
                err,
                Error::InputTooShort {
                    len: 40,
                    features: 10,
                    needed: 16,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn divisible_feature_map_pools_exact_means() {
        for p in 0..16 {
            assert_eq!(adaptive_bin(p, 64, 16), (4 * p, 4 * p + 4));
        }
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..64).map(|v| v as f64).collect();
        let x = g.constant(Tensor::from_vec(&[1, 64, 1], data));
        let y = g.adaptive_avg_pool(x, 16);
        let expect: Vec<f64> = (0..16).map(|p| 4.0 * p as f64 + 1.5).collect();
        assert_eq!(g.value(y).data(), &expect[..]);
    }

    #[test]
    fn constant_input_with_delta_kernels_gives_equal_patches() {
        let mut enc = encoder(TokenizerMode::Adaptive);
        let mut c_in = 1;
        for (spec, &(w, _)) in enc.config.conv.clone().iter().zip(&enc.conv.clone()) {
            let t = enc.params.get_mut(w);
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            let centre = spec.kernel / 2;
            for o in 0..spec.out_channels {
                t.data_mut()[(centre * c_in + o % c_in) * spec.out_channels + o] = 1.0;
            }
            c_in = spec.out_channels;
        }
        let x = vec![0.7; 256];
        let mut g = Graph::new();
        let p = enc.bind(&mut g, false);
        let tok = enc.tokenize(&mut g, &p, &[&x]).unwrap();
        let rows: Vec<&[f64]> = g.value(tok).data().chunks_exact(128).collect();
        assert!(rows.iter().all(|r| r == &rows[0]));
    }

    #[test]
    fn embedding_is_additive() {
        let mut enc = encoder(TokenizerMode::Adaptive);
        let (pos, chan, rate) = enc.embedding_ids();
        let x = signal(256, 0.4);
        let run = |enc: &ArtEncoder<f64>, ch: usize| {
            let mut g = Graph::new();
            let p = enc.bind(&mut g, false);
            let patches = enc.tokenize(&mut g, &p, &[&x]).unwrap();
            let xin = enc.embed(&mut g, &p, patches, &[ch], &[0]).unwrap();
            (g.value(patches).data().to_vec(), g.value(xin).data().to_vec())
        };
        let (patches, x2) = run(&enc, 2);
        let (_, x5) = run(&enc, 5);
        let e = enc.params().get(chan).data().to_vec();
        for (i, (a, b)) in x2.iter().zip(&x5).enumerate() {
            let k = i % 128;
            assert!(((a - b) - (e[2 * 128 + k] - e[5 * 128 + k])).abs() < 1e-12);
        }
        for id in [pos, chan, rate] {
            enc.params_mut()
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        assert_eq!(run(&enc, 2).1, patches);
    }

    #[test]
    fn zero_patches_expose_embeddings() {
        let enc = encoder(TokenizerMode::Adaptive);
        let (pos, chan, rate) = enc.embedding_ids();
        let mut g = Graph::new();
        let p = enc.bind(&mut g, false);
        let zeros = g.constant(Tensor::zeros(&[1, 16, 128]));
        let xin = enc.embed(&mut g, &p, zeros, &[7], &[1]).unwrap();
        let (ep, ec, er) = (
            enc.params().get(pos).data(),
            enc.params().get(chan).data(),
            enc.params().get(rate).data(),
        );
        for (i, &v) in g.value(xin).data().iter().enumerate() {
            let (t, k) = (i / 128, i % 128);
            assert_eq!(v, ep[t * 128 + k] + (ec[7 * 128 + k] + er[128 + k]));
        }
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        let enc = encoder(TokenizerMode::Adaptive);
        let mut g = Graph::new();
        let p = enc.bind(&mut g, false);
        let zeros = g.constant(Tensor::zeros(&[1, 16, 128]));
        assert!(matches!(
            enc.embed(&mut g, &p, zeros, &[8], &[0]),
            Err(Error::ChannelIdOutOfRange { id: 8, size: 8 })
        ));
        assert!(enc.embed(&mut g, &p, zeros, &[0], &[2]).is_err());
        assert!(matches!(enc.config().rate_id(250), Err(Error::UnknownRate(250))));
    }

    #[test]
    fn attention_rows_sum_to_one_and_layer_norm_standardizes() {
        let enc = encoder(TokenizerMode::Adaptive);
        let x = signal(400, 0.0);
        let mut g = Graph::new();
        let p = enc.bind(&mut g, false);
        let out = enc
            .forward(
                &mut g,
                &p,
                &[SignalRef {
                    samples: &x,
                    channel_id: 1,
                    rate_id: 1,
                }],
            )
            .unwrap();
        assert_eq!(out.attention.len(), 3);
        for &a in &out.attention {
            for row in g.attention_weights(a).unwrap().chunks_exact(16) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        // Fresh LayerNorm has unit scale and zero offset, so the token outputs
        // are the normalized values themselves.
        for row in g.value(out.tokens).data().chunks_exact(128) {
            let mean = row.iter().sum::<f64>() / 128.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 128.0;
            assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-3, "mean {mean} var {var}");
        }
    }

    #[test]
    fn transformer_is_permutation_equivariant() {
        let enc = encoder(TokenizerMode::Adaptive);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..16 * 128).map(|_| rng.random_range(-1.0..1.0)).collect();
        let perm: Vec<usize> = vec![3, 0, 15, 7, 1, 2, 4, 5, 6, 14, 8, 9, 10, 11, 12, 13];
        let xp: Vec<f64> = perm.iter().flat_map(|&i| x[i * 128..(i + 1) * 128].to_vec()).collect();
        let run = |data: Vec<f64>| {
            let mut g = Graph::new();
            let p = enc.bind(&mut g, false);
            let v = g.constant(Tensor::from_vec(&[1, 16, 128], data));
            let (y, _) = enc.encode(&mut g, &p, v);
            g.value(y).data().to_vec()
        };
        let (y, yp) = (run(x), run(xp));
        for (k, &i) in perm.iter().enumerate() {
            for c in 0..128 {
                assert!((yp[k * 128 + c] - y[i * 128 + c]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn represent_is_deterministic_and_channel_aware() {
        let enc = encoder(TokenizerMode::Adaptive);
        let x = signal(256, 0.5);
        let run = |ch: usize| {
            let mut g = Graph::new();
            let p = enc.bind(&mut g, false);
            let r = enc
                .represent(
                    &mut g,
                    &p,
                    &[SignalRef {
                        samples: &x,
                        channel_id: ch,
                        rate_id: 0,
                    }],
                )
                .unwrap();
            g.value(r).data().to_vec()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }

    #[test]
    fn fixed_patch_widths() {
        let enc = encoder(TokenizerMode::FixedPatch);
        assert_eq!(enc.config().patch_len(), 25);
        let x = signal(256, 0.0);
        let mut g = Graph::new();
        let p = enc.bind(&mut g, false);
        let tok = enc.tokenize(&mut g, &p, &[&x]).unwrap();
        assert_eq!(g.shape(tok), &[1, 16, 128]);
        // Patch 1 of a 256-sample input covers samples 16..32.
        let w = enc.params().get(enc.patch_projection().w).data();
        let expect: f64 = (0..16).map(|j| x[16 + j] * w[j * 128]).sum();
        assert!((g.value(tok).data()[128] - expect).abs() < 1e-12);
    }

    #[test]
    fn fixed_patch_zero_signal_gives_bias_rows() {
        let mut enc = encoder(TokenizerMode::FixedPatch);
        let b = enc.patch_projection().b.unwrap();
        enc.params_mut()
            .get_mut(b)
            .data_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = i as f64);
        let x = vec![0.0; 400];
        let mut g = Graph::new();
        let p = enc.bind(&mut g, false);
        let tok = enc.tokenize(&mut g, &p, &[&x]).unwrap();
        let bias = enc.params().get(b).data();
        assert!(g.value(tok).data().chunks_exact(128).all(|r| r == bias));
    }
}
