//! Stage two: per-subject supervised fine-tuning with separate learning rates
//! for the pre-trained encoder and the new classifier, top-k validation
//! checkpoint retention, and ensembled evaluation.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_model, EncoderBundle};
use crate::classifier::{Classifier, ClassifierConfig, Model, PreparedEpoch};
use crate::dataio::{split_within_subject, EpochRecord, Split};
use crate::encoder::{ArtConfig, ArtEncoder};
use crate::error::{Error, Result};
use crate::numerics::{AdamW, Graph, OptimizerSpec, ScheduleKind, ScheduleSpec};
use crate::rng;
use crate::schema::{ChannelVocabulary, VocabMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Pretrained,
    Scratch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_encoder: f64,
    pub lr_head: f64,
    pub weight_decay: f64,
    pub top_k: usize,
    pub init_mode: InitMode,
    pub schedule: ScheduleKind,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            lr_encoder: 5e-6,
            lr_head: 1e-4,
            weight_decay: 7e-4,
            top_k: 5,
            init_mode: InitMode::Pretrained,
            schedule: ScheduleKind::Constant,
            train_frac: 0.8,
            val_frac: 0.1,
            seed: 42,
        }
    }
}

impl FinetuneConfig {
    /// Small-corpus settings: 20 epochs of batches of 16.
    pub fn desk() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.top_k == 0 {
            return Err(Error::InvalidArgument(
                "epochs, batch_size and top_k must be positive".into(),
            ));
        }
        if self.lr_encoder < 0.0 || self.lr_encoder > self.lr_head {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= lr_encoder <= lr_head, got {} and {}",
                self.lr_encoder, self.lr_head
            )));
        }
        Ok(())
    }
}

/// A retained validation checkpoint.
#[derive(Clone, Debug)]
pub struct CheckpointEntry<T> {
    pub val_acc: f64,
    pub epoch: usize,
    pub model: Model<T>,
}

/// The best `top_k` checkpoints by validation accuracy, sorted by accuracy
/// descending and then by epoch ascending.
#[derive(Clone, Debug)]
pub struct CheckpointSet<T> {
    top_k: usize,
    entries: Vec<CheckpointEntry<T>>,
}

impl<T: crate::numerics::Real> CheckpointSet<T> {
    pub fn new(top_k: usize) -> Self {
        assert!(top_k >= 1);
        Self {
            top_k,
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[CheckpointEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn epochs(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.epoch).collect()
    }

    /// Would a checkpoint with this accuracy be kept?
    pub fn admits(&self, val_acc: f64) -> bool {
        self.entries.len() < self.top_k || self.entries.last().is_some_and(|m| val_acc > m.val_acc)
    }

    /// Keeps the checkpoint if there is room or it strictly beats the current
    /// minimum, which it then evicts. Returns whether it was kept.
    pub fn insert(&mut self, val_acc: f64, epoch: usize, model: impl FnOnce() -> Model<T>) -> bool {
        if !self.admits(val_acc) {
            return false;
        }
        if self.entries.len() == self.top_k {
            self.entries.pop();
        }
        let at = self
            .entries
            .iter()
            .position(|e| val_acc > e.val_acc || (val_acc == e.val_acc && epoch < e.epoch))
            .unwrap_or(self.entries.len());
        self.entries.insert(
            at,
            CheckpointEntry {
                val_acc,
                epoch,
                model: model(),
            },
        );
        true
    }

    pub fn from_models(models: Vec<(f64, usize, Model<T>)>, top_k: usize) -> Self {
        let mut set = Self::new(top_k);
        for (acc, epoch, m) in models {
            set.insert(acc, epoch, || m);
        }
        set
    }

    /// Writes every member as `rank{r}_epoch{e}.artw` and returns the paths.
    pub fn save_dir(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for (r, e) in self.entries.iter().enumerate() {
            let path = dir.join(format!("rank{r}_epoch{:03}.artw", e.epoch));
            save_model(&path, &e.model)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// Mean of the member distributions and its argmax (lowest index on ties).
pub fn average_distributions(members: &[Vec<f64>]) -> Result<(Vec<f64>, usize)> {
    let first = members.first().ok_or(Error::EmptyEnsemble)?;
    let mut avg = vec![0.0; first.len()];
    for m in members {
        if m.len() != avg.len() {
            return Err(Error::Shape("ensemble members disagree on class count".into()));
        }
        avg.iter_mut().zip(m).for_each(|(a, &v)| *a += v);
    }
    let n = members.len() as f64;
    avg.iter_mut().for_each(|a| *a /= n);
    Ok((avg.clone(), argmax(&avg)))
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub predicted: usize,
}

const INFERENCE_CHUNK: usize = 32;

fn model_proba<T: crate::numerics::Real>(model: &Model<T>, epochs: &[&PreparedEpoch<T>]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(epochs.len());
    for chunk in epochs.chunks(INFERENCE_CHUNK) {
        out.extend(model.predict_proba(chunk)?);
    }
    Ok(out)
}

/// Averages the softmax outputs of every member checkpoint.
pub fn ensemble_predict<T: crate::numerics::Real>(
    set: &CheckpointSet<T>,
    epochs: &[&PreparedEpoch<T>],
) -> Result<Vec<Prediction>> {
    if set.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let per_member = set
        .entries
        .iter()
        .map(|e| model_proba(&e.model, epochs))
        .collect::<Result<Vec<_>>>()?;
    (0..epochs.len())
        .map(|i| {
            let members: Vec<Vec<f64>> = per_member.iter().map(|m| m[i].clone()).collect();
            let (probabilities, predicted) = average_distributions(&members)?;
            Ok(Prediction {
                probabilities,
                predicted,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<Prediction>,
    pub labels: Vec<usize>,
}

pub fn evaluate<T: crate::numerics::Real>(
    set: &CheckpointSet<T>,
    epochs: &[&PreparedEpoch<T>],
    n_classes: usize,
) -> Result<Evaluation> {
    if epochs.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    let predictions = ensemble_predict(set, epochs)?;
    let labels: Vec<usize> = epochs.iter().map(|e| e.label).collect();
    let mut confusion = vec![vec![0; n_classes]; n_classes];
    let mut correct = 0;
    for (p, &y) in predictions.iter().zip(&labels) {
        confusion[y][p.predicted] += 1;
        correct += (p.predicted == y) as usize;
    }
    Ok(Evaluation {
        accuracy: correct as f64 / epochs.len() as f64,
        confusion,
        predictions,
        labels,
    })
}

fn accuracy<T: crate::numerics::Real>(model: &Model<T>, epochs: &[&PreparedEpoch<T>]) -> Result<f64> {
    if epochs.is_empty() {
        return Ok(0.0);
    }
    let probs = model_proba(model, epochs)?;
    let correct = probs.iter().zip(epochs).filter(|(p, e)| argmax(p) == e.label).count();
    Ok(correct as f64 / epochs.len() as f64)
}

/// Where the encoder of a fine-tuning run comes from.
#[derive(Clone, Debug)]
pub enum EncoderInit {
    Pretrained(EncoderBundle<f32>),
    Scratch {
        art: ArtConfig,
        vocabulary: ChannelVocabulary,
        vocab_mode: VocabMode,
    },
}

impl EncoderInit {
    pub fn mode(&self) -> InitMode {
        match self {
            EncoderInit::Pretrained(_) => InitMode::Pretrained,
            EncoderInit::Scratch { .. } => InitMode::Scratch,
        }
    }

    pub fn vocabulary(&self) -> (&ChannelVocabulary, VocabMode) {
        match self {
            EncoderInit::Pretrained(b) => (&b.vocabulary, b.vocab_mode),
            EncoderInit::Scratch {
                vocabulary, vocab_mode, ..
            } => (vocabulary, *vocab_mode),
        }
    }

    pub fn art_config(&self) -> &ArtConfig {
        match self {
            EncoderInit::Pretrained(b) => b.encoder.config(),
            EncoderInit::Scratch { art, .. } => art,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
}

pub struct FinetuneOutcome {
    pub subject_id: String,
    pub split: Split,
    pub trace: Vec<EpochTrace>,
    pub checkpoints: CheckpointSet<f32>,
    /// `None` when the split leaves no test epochs.
    pub test: Option<Evaluation>,
}

impl FinetuneOutcome {
    pub fn best_val_acc(&self) -> f64 {
        self.checkpoints.entries().first().map_or(0.0, |e| e.val_acc)
    }
}

/// Fine-tunes one subject's model. `epochs` must all belong to one subject;
/// `clf` must match the channel count after vocabulary resolution.
pub fn run_finetune(
    epochs: &[EpochRecord],
    init: &EncoderInit,
    clf: ClassifierConfig,
    config: &FinetuneConfig,
    mut on_epoch: impl FnMut(&EpochTrace),
) -> Result<FinetuneOutcome> {
    config.validate()?;
    let subject = match epochs.first() {
        Some(e) if epochs.iter().all(|x| x.subject_id == e.subject_id) => e.subject_id.clone(),
        Some(_) => return Err(Error::Data("fine-tuning epochs span several subjects".into())),
        None => return Err(Error::Data("no epochs to fine-tune on".into())),
    };
    let tag = |what: &str| format!("finetune/{subject}/{what}");
    let (vocabulary, vocab_mode) = init.vocabulary();
    let encoder: ArtEncoder<f32> = match init {
        EncoderInit::Pretrained(b) => b.encoder.clone(),
        EncoderInit::Scratch { art, .. } => {
            ArtEncoder::new(art.clone(), &mut rng::stream(config.seed, &tag("encoder")))?
        }
    };
    let classifier = Classifier::new(clf, &mut rng::stream(config.seed, &tag("classifier")))?;
    let mut model = Model {
        encoder,
        vocabulary: vocabulary.clone(),
        vocab_mode,
        classifier,
    };
    let prepared = epochs
        .iter()
        .map(|e| model.prepare(e))
        .collect::<Result<Vec<PreparedEpoch<f32>>>>()?;
    let n_classes = model.classifier.config().n_classes;
    if let Some(e) = prepared.iter().find(|e| e.label >= n_classes) {
        return Err(Error::Data(format!("label {} outside {n_classes} classes", e.label)));
    }
    let split = split_within_subject(epochs, config.train_frac, config.val_frac, config.seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| &prepared[i]).collect::<Vec<_>>();
    let (val, test) = (pick(&split.val), pick(&split.test));

    let lr_encoder = match init.mode() {
        InitMode::Pretrained => config.lr_encoder,
        InitMode::Scratch => config.lr_head,
    };
    let mut opt_enc = AdamW::new(
        OptimizerSpec::adamw(lr_encoder, config.weight_decay),
        model.encoder.params().tensors(),
    )?;
    let mut opt_clf = AdamW::new(
        OptimizerSpec::adamw(config.lr_head, config.weight_decay),
        model.classifier.params().tensors(),
    )?;
    let schedule = ScheduleSpec {
        kind: config.schedule,
        total_steps: config.epochs,
        min_lr: 0.0,
    };

    let mut order = split.train.clone();
    let mut checkpoints = CheckpointSet::new(config.top_k);
    let mut trace = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let lr_e = schedule.lr_at(epoch, lr_encoder)?;
        let lr_c = schedule.lr_at(epoch, config.lr_head)?;
        order.shuffle(&mut rng::stream(config.seed, &tag(&format!("shuffle/{epoch}"))));
        let mut drop = rng::stream(config.seed, &tag(&format!("dropout/{epoch}")));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedEpoch<f32>> = chunk.iter().map(|&i| &prepared[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
            let mut g = Graph::new();
            let p = model.bind(&mut g, true, true);
            let out = model.forward(&mut g, &p, &batch, Some(&mut drop))?;
            let loss = g.cross_entropy(out.logits, &labels)?;
            let value = g.value(loss).data()[0] as f64;
            let grads = g.backward(loss).map_err(|e| match e {
                Error::NonFinite(what) => Error::Divergence { step, what },
                other => other,
            })?;
            let g_enc = p.encoder.collect(&grads, model.encoder.params());
            let g_clf = p.classifier.collect(&grads, model.classifier.params());
            let diverged = |_| Error::Divergence {
                step,
                what: "gradient".into(),
            };
            opt_enc
                .step(model.encoder.params_mut().tensors_mut(), &g_enc, lr_e)
                .map_err(diverged)?;
            opt_clf
                .step(model.classifier.params_mut().tensors_mut(), &g_clf, lr_c)
                .map_err(diverged)?;
            total += value;
            batches += 1;
            step += 1;
        }
        let val_acc = accuracy(&model, &val)?;
        checkpoints.insert(val_acc, epoch, || model.clone());
        let entry = EpochTrace {
            epoch,
            train_loss: total / batches.max(1) as f64,
            val_acc,
        };
        on_epoch(&entry);
        trace.push(entry);
    }
    let test = if test.is_empty() {
        None
    } else {
        Some(evaluate(&checkpoints, &test, n_classes)?)
    };
    Ok(FinetuneOutcome {
        subject_id: subject,
        split,
        trace,
        checkpoints,
        test,
    })
}
