//! Stage one: contrastive pre-training on univariate slices pooled across
//! every dataset.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{make_views, AugmentSpec};
use crate::checkpoint::EncoderBundle;
use crate::dataio::EpochRecord;
use crate::encoder::{ArtConfig, ArtEncoder, SignalRef};
use crate::error::{Error, Result};
use crate::numerics::{AdamW, Graph, OptimizerSpec, ScheduleKind, ScheduleSpec};
use crate::rng;
use crate::schema::{ChannelVocabulary, VocabMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub temperature: f64,
    pub schedule: ScheduleKind,
    pub augment: AugmentSpec,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 512,
            lr: 3e-4,
            weight_decay: 7e-4,
            temperature: 0.5,
            schedule: ScheduleKind::CosineAnnealing,
            augment: AugmentSpec::default(),
            seed: 42,
        }
    }
}

impl PretrainConfig {
    /// Small-corpus settings: batches of 64 for 10 epochs.
    pub fn desk() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || !(self.temperature > 0.0) || self.epochs == 0 {
            return Err(Error::InvalidArgument(format!(
                "need batch_size >= 2, temperature > 0 and epochs >= 1, got {}, {}, {}",
                self.batch_size, self.temperature, self.epochs
            )));
        }
        self.augment.validate()
    }
}

/// One univariate pre-training sample: channel `channel` of epoch `epoch`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSlice {
    pub epoch: usize,
    pub channel: usize,
    pub channel_id: usize,
    pub rate_id: usize,
}

/// Every (epoch, channel) pair whose channel is in the vocabulary. In union
/// mode an unknown channel is an error; in intersection mode it is skipped.
pub fn build_pool(
    epochs: &[EpochRecord],
    vocab: &ChannelVocabulary,
    mode: VocabMode,
    config: &ArtConfig,
) -> Result<Vec<PoolSlice>> {
    let mut pool = Vec::new();
    for (e, rec) in epochs.iter().enumerate() {
        let rate_id = config.rate_id(rec.sampling_rate_hz)?;
        for (c, name) in rec.channel_names.iter().enumerate() {
            let channel_id = match (vocab.resolve(name), mode) {
                (Ok(id), _) => id,
                (Err(_), VocabMode::Intersection) => continue,
                (Err(err), VocabMode::Union) => return Err(err),
            };
            pool.push(PoolSlice {
                epoch: e,
                channel: c,
                channel_id,
                rate_id,
            });
        }
    }
    if pool.len() < 2 {
        return Err(Error::Data(format!("pre-training pool has only {} slices", pool.len())));
    }
    Ok(pool)
}

/// Augmented views of one batch: rows `0..n` are the first views and rows
/// `n..2n` the second views of the same slices.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewBatch {
    pub views: Vec<Vec<f32>>,
    pub channel_ids: Vec<usize>,
    pub rate_ids: Vec<usize>,
}

impl ViewBatch {
    pub fn signals(&self) -> Vec<SignalRef<'_, f32>> {
        self.views
            .iter()
            .zip(self.channel_ids.iter().zip(&self.rate_ids))
            .map(|(v, (&c, &r))| SignalRef {
                samples: v,
                channel_id: c,
                rate_id: r,
            })
            .collect()
    }
}

pub fn build_batch(
    slices: &[PoolSlice],
    epochs: &[EpochRecord],
    spec: &AugmentSpec,
    rng: &mut rng::StreamRng,
) -> Result<ViewBatch> {
    let n = slices.len();
    let mut first = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    for s in slices {
        let (a, b) = make_views(epochs[s.epoch].channel(s.channel), spec, rng)?;
        first.push(a);
        second.push(b);
    }
    first.extend(second);
    let channel_ids: Vec<usize> = slices.iter().map(|s| s.channel_id).collect();
    let rate_ids: Vec<usize> = slices.iter().map(|s| s.rate_id).collect();
    Ok(ViewBatch {
        views: first,
        channel_ids: channel_ids.repeat(2),
        rate_ids: rate_ids.repeat(2),
    })
}

/// Splits a shuffled pool into batches of `n`; a final remainder is kept if it
/// has at least two slices.
pub fn batch_ranges(pool_len: usize, n: usize) -> Vec<std::ops::Range<usize>> {
    (0..pool_len)
        .step_by(n)
        .map(|s| s..(s + n).min(pool_len))
        .filter(|r| r.len() >= 2)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

pub struct PretrainOutcome {
    pub bundle: EncoderBundle<f32>,
    pub trace: Vec<EpochLoss>,
}

/// NT-Xent loss of one view batch under the current encoder, without
/// updating anything.
pub fn batch_loss(encoder: &ArtEncoder<f32>, batch: &ViewBatch, temperature: f64) -> Result<f64> {
    let mut g = Graph::new();
    let p = encoder.bind(&mut g, false);
    let r = encoder.represent(&mut g, &p, &batch.signals())?;
    let z = encoder.project(&mut g, &p, r);
    let loss = g.nt_xent(z, temperature)?;
    Ok(g.value(loss).data()[0] as f64)
}

pub fn run_pretraining(
    epochs: &[EpochRecord],
    vocab: &ChannelVocabulary,
    mode: VocabMode,
    art: ArtConfig,
    config: &PretrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<PretrainOutcome> {
    config.validate()?;
    let pool = build_pool(epochs, vocab, mode, &art)?;
    let mut encoder: ArtEncoder<f32> = ArtEncoder::new(art, &mut rng::stream(config.seed, "pretrain/init"))?;
    let spec = OptimizerSpec::adamw(config.lr, config.weight_decay);
    let mut opt = AdamW::new(spec, encoder.params().tensors())?;
    let schedule = ScheduleSpec {
        kind: config.schedule,
        total_steps: config.epochs,
        min_lr: 0.0,
    };
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let lr = schedule.lr_at(epoch, config.lr)?;
        order.shuffle(&mut rng::stream(config.seed, &format!("pretrain/shuffle/{epoch}")));
        let mut aug = rng::stream(config.seed, &format!("pretrain/augment/{epoch}"));
        let mut total = 0.0;
        let ranges = batch_ranges(order.len(), config.batch_size);
        for range in &ranges {
            let slices: Vec<PoolSlice> = order[range.clone()].iter().map(|&i| pool[i]).collect();
            let batch = build_batch(&slices, epochs, &config.augment, &mut aug)?;
            let mut g = Graph::new();
            let p = encoder.bind(&mut g, true);
            let r = encoder.represent(&mut g, &p, &batch.signals())?;
            let z = encoder.project(&mut g, &p, r);
            let diverged = |e| match e {
                Error::NonFinite(what) => Error::Divergence { step, what },
                other => other,
            };
            let loss = g.nt_xent(z, config.temperature).map_err(diverged)?;
            let value = g.value(loss).data()[0] as f64;
            let grads = g.backward(loss).map_err(diverged)?;
            let grads = p.collect(&grads, encoder.params());
            opt.step(encoder.params_mut().tensors_mut(), &grads, lr)
                .map_err(|_| Error::Divergence {
                    step,
                    what: "gradient".into(),
                })?;
            total += value;
            step += 1;
        }
        let entry = EpochLoss {
            epoch,
            mean_loss: total / ranges.len() as f64,
            lr,
        };
        on_epoch(&entry);
        trace.push(entry);
    }
    Ok(PretrainOutcome {
        bundle: EncoderBundle {
            encoder,
            vocabulary: vocab.clone(),
            vocab_mode: mode,
        },
        trace,
    })
}

/// Writes `epoch,mean_loss,lr` rows.
pub fn write_loss_csv(path: &Path, trace: &[EpochLoss]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("epoch,mean_loss,lr\n");
    for t in trace {
        text.push_str(&format!("{},{},{}\n", t.epoch, t.mean_loss, t.lr));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SynthSpec};
    use crate::schema::DatasetChannels;

    fn corpus(per_class: usize) -> (Vec<EpochRecord>, ChannelVocabulary) {
        let spec = SynthSpec {
            epochs_per_class: per_class,
            ..SynthSpec::default()
        };
        let mut eps = generate_synthetic(&spec).unwrap();
        eps.iter_mut().for_each(EpochRecord::zscore);
        let sets: Vec<DatasetChannels> = spec
            .datasets
            .iter()
            .map(|d| (d.dataset_id.clone(), d.channels.clone()))
            .collect();
        (eps, ChannelVocabulary::build_union(&sets).unwrap())
    }

    fn tiny_art(vocab: &ChannelVocabulary) -> ArtConfig {
        let mut art = ArtConfig::new(vocab.len(), &[128, 200]);
        art.d_model = 32;
        art.n_heads = 4;
        art.d_ff = 64;
        art.n_layers = 1;
        art
    }

    #[test]
    fn pool_covers_every_channel() {
        let (eps, vocab) = corpus(1);
        let art = ArtConfig::new(vocab.len(), &[128, 200]);
        let pool = build_pool(&eps, &vocab, VocabMode::Union, &art).unwrap();
        let expected: usize = eps.iter().map(EpochRecord::n_channels).sum();
        assert_eq!(pool.len(), expected);
    }

    #[test]
    fn intersection_pool_skips_private_channels() {
        let (eps, _) = corpus(1);
        let spec = SynthSpec::default();
        let sets: Vec<DatasetChannels> = spec
            .datasets
            .iter()
            .map(|d| (d.dataset_id.clone(), d.channels.clone()))
            .collect();
        let vocab = ChannelVocabulary::build_intersection(&sets).unwrap();
        let art = ArtConfig::new(vocab.len(), &[128, 200]);
        let pool = build_pool(&eps, &vocab, VocabMode::Intersection, &art).unwrap();
        assert_eq!(pool.len(), eps.len() * 5);
        assert!(build_pool(&eps, &vocab, VocabMode::Union, &art).is_err());
    }

    #[test]
    fn batch_layout_pairs_views() {
        let (eps, vocab) = corpus(1);
        let art = ArtConfig::new(vocab.len(), &[128, 200]);
        let pool = build_pool(&eps, &vocab, VocabMode::Union, &art).unwrap();
        let slices: Vec<PoolSlice> = vec![pool[0], pool[9], pool[50], pool[77]];
        let spec = AugmentSpec::default();
        let b = build_batch(&slices, &eps, &spec, &mut rng::stream(1, "b")).unwrap();
        assert_eq!(b.views.len(), 8);
        for i in 0..4 {
            assert_eq!(b.channel_ids[i], b.channel_ids[i + 4]);
            assert_eq!(b.views[i].len(), eps[slices[i].epoch].n_samples());
            assert_eq!(b.views[i + 4].len(), b.views[i].len());
        }
        assert_eq!(b, build_batch(&slices, &eps, &spec, &mut rng::stream(1, "b")).unwrap());
    }

    #[test]
    fn partial_final_batch_rules() {
        assert_eq!(batch_ranges(10, 4), vec![0..4, 4..8, 8..10]);
        assert_eq!(batch_ranges(9, 4), vec![0..4, 4..8]);
    }

    #[test]
    fn untrained_loss_is_near_uniform_value() {
        let (eps, vocab) = corpus(4);
        let art = ArtConfig::new(vocab.len(), &[128, 200]);
        let pool = build_pool(&eps, &vocab, VocabMode::Union, &art).unwrap();
        let enc: ArtEncoder<f32> = ArtEncoder::new(art, &mut rng::stream(42, "init")).unwrap();
        let n = 16;
        let slices: Vec<PoolSlice> = pool.iter().step_by(pool.len() / n).take(n).copied().collect();
        let b = build_batch(&slices, &eps, &AugmentSpec::default(), &mut rng::stream(3, "a")).unwrap();
        let loss = batch_loss(&enc, &b, 0.5).unwrap();
        let uniform = ((2 * n - 1) as f64).ln();
        assert!((loss - uniform).abs() < 0.1 * uniform, "loss {loss} vs {uniform}");
    }

    #[test]
    fn short_run_is_deterministic_and_learns() {
        let (eps, vocab) = corpus(2);
        let cfg = PretrainConfig {
            epochs: 3,
            batch_size: 16,
            lr: 1e-3,
            ..PretrainConfig::default()
        };
        let run = || run_pretraining(&eps, &vocab, VocabMode::Union, tiny_art(&vocab), &cfg, |_| {}).unwrap();
        let a = run();
        let b = run();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.bundle.encoder.params(), b.bundle.encoder.params());
        assert_eq!(a.trace.len(), 3);
        assert_eq!(a.trace[0].lr, 1e-3);
        assert!(a.trace.iter().all(|t| t.mean_loss.is_finite()));
    }
}
