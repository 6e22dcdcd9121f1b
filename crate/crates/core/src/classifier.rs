//! Multivariate classifier: per-channel encoder representations become the
//! nodes of a fully connected channel graph, refined by graph attention (or a
//! GCN, or nothing), a channel-axis Transformer, mean pooling and a linear
//! head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::EpochRecord;
use crate::encoder::{ArtConfig, ArtEncoder, SignalRef};
use crate::error::{Error, Result};
use crate::layers::{Linear, TransformerStack};
use crate::numerics::params::xavier_uniform;
use crate::numerics::{Bound, Graph, ParamId, ParamSet, Real, Tensor, Var};
use crate::rng::StreamRng;
use crate::schema::{ChannelVocabulary, VocabMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    Gat,
    Gcn,
    NoGraph,
}

impl std::str::FromStr for GraphMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gat" => Ok(GraphMode::Gat),
            "gcn" => Ok(GraphMode::Gcn),
            "nograph" | "no-graph" | "none" => Ok(GraphMode::NoGraph),
            other => Err(Error::InvalidArgument(format!("unknown graph mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub d_in: usize,
    pub d_model: usize,
    pub gat_layers: usize,
    pub gat_heads: usize,
    pub leaky_slope: f64,
    pub tx_layers: usize,
    pub tx_heads: usize,
    pub tx_d_ff: usize,
    pub dropout: f64,
    pub n_classes: usize,
    pub graph_mode: GraphMode,
    pub n_channels: usize,
}

impl ClassifierConfig {
    pub fn new(n_channels: usize, n_classes: usize, graph_mode: GraphMode) -> Self {
        Self {
            d_in: 128,
            d_model: 256,
            gat_layers: 2,
            gat_heads: 4,
            leaky_slope: 0.2,
            tx_layers: 2,
            tx_heads: 4,
            tx_d_ff: 512,
            dropout: 0.5,
            n_classes,
            graph_mode,
            n_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.gat_heads == 0 || !self.d_model.is_multiple_of(self.gat_heads) {
            return bad(format!(
                "d_model {} not divisible by {} GAT heads",
                self.d_model, self.gat_heads
            ));
        }
        if self.tx_heads == 0 || !self.d_model.is_multiple_of(self.tx_heads) {
            return bad(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.tx_heads
            ));
        }
        if self.n_channels == 0 || self.n_classes < 2 {
            return bad("need at least one channel and two classes".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GatLayer {
    /// Per-head transforms, stacked column-wise: `[d_model, heads * dh]`.
    pub w: Linear,
    /// Per-head scoring vectors `[heads, 2 * dh]`, source half first.
    pub a: ParamId,
}

#[derive(Clone, Debug)]
pub struct Classifier<T> {
    config: ClassifierConfig,
    params: ParamSet<T>,
    proj: Linear,
    gat: Vec<GatLayer>,
    gcn: Vec<Linear>,
    tx: TransformerStack,
    head: Linear,
}

/// Graph handles produced by one classifier pass.
#[derive(Clone, Debug)]
pub struct ClassifierOutput {
    /// `[B, n_classes]`.
    pub logits: Var,
    /// `[B, d_model]` channel-mean of the Transformer output.
    pub pooled: Var,
    /// `[B, C, d_model]` node features after the graph layers.
    pub nodes: Var,
    /// Attention node of each GAT layer (empty in other modes).
    pub gat_attention: Vec<Var>,
    /// Attention node of each channel-Transformer layer.
    pub tx_attention: Vec<Var>,
}

impl<T: Real> Classifier<T> {
    pub fn new<R: Rng + ?Sized>(config: ClassifierConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut ps = ParamSet::new();
        let proj = Linear::new(&mut ps, "proj", config.d_in, d, true, rng);
        let mut gat = Vec::new();
        let mut gcn = Vec::new();
        match config.graph_mode {
            GraphMode::Gat => {
                let dh = d / config.gat_heads;
                for i in 0..config.gat_layers {
                    let w = Linear::new(&mut ps, &format!("gat{i}.w"), d, d, false, rng);
                    let a = ps.add(
                        format!("gat{i}.a"),
                        xavier_uniform(rng, &[config.gat_heads, 2 * dh], 2 * dh, 1),
                    );
                    gat.push(GatLayer { w, a });
                }
            }
            GraphMode::Gcn => {
                for i in 0..config.gat_layers {
                    gcn.push(Linear::new(&mut ps, &format!("gcn{i}.w"), d, d, false, rng));
                }
            }
            GraphMode::NoGraph => {}
        }
        let tx = TransformerStack::new(&mut ps, "tx", config.tx_layers, d, config.tx_heads, config.tx_d_ff, rng);
        let head = Linear::new(&mut ps, "head", d, config.n_classes, true, rng);
        Ok(Self {
            config,
            params: ps,
            proj,
            gat,
            gcn,
            tx,
            head,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        self.params.bind(g, trainable)
    }

    pub fn cast<U: Real>(&self) -> Classifier<U> {
        Classifier {
            config: self.config.clone(),
            params: self.params.cast(),
            proj: self.proj.clone(),
            gat: self.gat.clone(),
            gcn: self.gcn.clone(),
            tx: self.tx.clone(),
            head: self.head.clone(),
        }
    }

    pub fn gat_layers(&self) -> &[GatLayer] {
        &self.gat
    }

    pub fn gcn_layers(&self) -> &[Linear] {
        &self.gcn
    }

    /// One GAT layer: `ELU(attention-weighted sum of W h_j)` per head, heads
    /// concatenated.
    pub fn gat_layer(&self, g: &mut Graph<T>, p: &Bound, layer: &GatLayer, h: Var) -> (Var, Var) {
        let wh = layer.w.forward(g, p, h);
        let att = g.gat_attention(wh, p[layer.a], self.config.gat_heads, T::of(self.config.leaky_slope));
        (g.elu(att), att)
    }

    /// One GCN layer on the complete graph with self loops, where the
    /// symmetric normalization makes every propagation weight `1 / C`.
    pub fn gcn_layer(&self, g: &mut Graph<T>, p: &Bound, w: &Linear, h: Var) -> Var {
        let c = g.shape(h)[1];
        let adj = Tensor::full(&[c, c], T::one() / T::of(c as f64));
        let mixed = g.node_mix(h, &adj);
        let y = w.forward(g, p, mixed);
        g.elu(y)
    }

    /// Runs everything after the encoder on `reprs: [B * C, d_in]`, rows
    /// grouped by epoch. Dropout is applied only when `dropout_rng` is given.
    pub fn forward_from_reprs(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        reprs: Var,
        batch: usize,
        dropout_rng: Option<&mut StreamRng>,
    ) -> Result<ClassifierOutput> {
        let rows = g.shape(reprs)[0];
        if batch == 0 || !rows.is_multiple_of(batch) {
            return Err(Error::Shape(format!("{rows} channel rows cannot form {batch} epochs")));
        }
        let c = rows / batch;
        if c != self.config.n_channels {
            return Err(Error::Shape(format!(
                "classifier built for {} channels, got {c}",
                self.config.n_channels
            )));
        }
        let x = g.reshape(reprs, &[batch, c, self.config.d_in]);
        let mut h = self.proj.forward(g, p, x);
        let mut gat_attention = Vec::new();
        for layer in &self.gat {
            let (y, att) = self.gat_layer(g, p, layer, h);
            gat_attention.push(att);
            h = y;
        }
        for w in &self.gcn {
            h = self.gcn_layer(g, p, w, h);
        }
        let nodes = h;
        let (out, tx_attention) = self.tx.forward(g, p, h);
        let pooled = g.mean_seq(out);
        let dropped = match dropout_rng {
            Some(rng) => g.dropout(pooled, self.config.dropout, rng),
            None => pooled,
        };
        let logits = self.head.forward(g, p, dropped);
        Ok(ClassifierOutput {
            logits,
            pooled,
            nodes,
            gat_attention,
            tx_attention,
        })
    }
}

/// An epoch converted to model inputs: one signal per channel plus its
/// vocabulary ids.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedEpoch<T> {
    pub signals: Vec<Vec<T>>,
    pub channel_ids: Vec<usize>,
    pub rate_id: usize,
    pub label: usize,
}

impl<T: Real> PreparedEpoch<T> {
    /// Resolves channels against the vocabulary. Under the intersection
    /// strategy channels outside the vocabulary are dropped; under the union
    /// strategy they are an error.
    pub fn new(rec: &EpochRecord, vocab: &ChannelVocabulary, mode: VocabMode, art: &ArtConfig) -> Result<Self> {
        let rate_id = art.rate_id(rec.sampling_rate_hz)?;
        let mut signals = Vec::new();
        let mut channel_ids = Vec::new();
        for (c, name) in rec.channel_names.iter().enumerate() {
            let id = match (vocab.resolve(name), mode) {
                (Ok(id), _) => id,
                (Err(_), VocabMode::Intersection) => continue,
                (Err(e), VocabMode::Union) => return Err(e),
            };
            channel_ids.push(id);
            signals.push(rec.channel(c).iter().map(|&v| T::of(v as f64)).collect());
        }
        if signals.is_empty() {
            return Err(Error::Data(format!(
                "epoch of subject {} has no channel in the vocabulary",
                rec.subject_id
            )));
        }
        Ok(Self {
            signals,
            channel_ids,
            rate_id,
            label: rec.label as usize,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.signals.len()
    }
}

/// Encoder, vocabulary and classifier trained together.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub encoder: ArtEncoder<T>,
    pub vocabulary: ChannelVocabulary,
    pub vocab_mode: VocabMode,
    pub classifier: Classifier<T>,
}

/// Graph handles of a bound [`Model`].
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub encoder: Bound,
    pub classifier: Bound,
}

impl<T: Real> Model<T> {
    pub fn bind(&self, g: &mut Graph<T>, train_encoder: bool, train_classifier: bool) -> BoundModel {
        BoundModel {
            encoder: self.encoder.bind(g, train_encoder),
            classifier: self.classifier.bind(g, train_classifier),
        }
    }

    pub fn prepare(&self, rec: &EpochRecord) -> Result<PreparedEpoch<T>> {
        PreparedEpoch::new(rec, &self.vocabulary, self.vocab_mode, self.encoder.config())
    }

    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &BoundModel,
        epochs: &[&PreparedEpoch<T>],
        dropout_rng: Option<&mut StreamRng>,
    ) -> Result<ClassifierOutput> {
        let inputs: Vec<SignalRef<'_, T>> = epochs
            .iter()
            .flat_map(|e| {
                e.signals.iter().zip(&e.channel_ids).map(|(s, &id)| SignalRef {
                    samples: s,
                    channel_id: id,
                    rate_id: e.rate_id,
                })
            })
            .collect();
        let reprs = self.encoder.represent(g, &p.encoder, &inputs)?;
        self.classifier
            .forward_from_reprs(g, &p.classifier, reprs, epochs.len(), dropout_rng)
    }

    /// Softmax class probabilities per epoch, dropout off.
    pub fn predict_proba(&self, epochs: &[&PreparedEpoch<T>]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false, false);
        let out = self.forward(&mut g, &p, epochs, None)?;
        let probs = g.softmax(out.logits);
        Ok(g.value(probs)
            .data()
            .chunks_exact(self.classifier.config.n_classes)
            .map(|r| r.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
            .collect())
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            encoder: self.encoder.cast(),
            vocabulary: self.vocabulary.clone(),
            vocab_mode: self.vocab_mode,
            classifier: self.classifier.cast(),
        }
    }
}
