use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use eegfm_core::checkpoint::EncoderBundle;
use eegfm_core::classifier::PreparedEpoch;
use eegfm_core::dataio::{dataset_channels, load_manifest_epochs, sampling_rates};
use eegfm_core::finetune::{run_finetune, EncoderInit, FinetuneOutcome};
use eegfm_core::{
    ChannelVocabulary, ClassifierConfig, EpochRecord, FinetuneConfig, GraphMode, InitMode, TokenizerMode, VocabMode,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pretrain::EncoderArch;
use super::{mean_std, val};
use crate::config::{flags, resolve, write_json, Artifacts};
use crate::{GraphArg, ModeArg, Preset, Reporter, RunArgs, TokenizerArg, UsageError};

/// Classifier hyper-parameters that do not depend on the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierArch {
    pub graph_mode: GraphMode,
    pub d_model: usize,
    pub gat_layers: usize,
    pub gat_heads: usize,
    pub leaky_slope: f64,
    pub tx_layers: usize,
    pub tx_heads: usize,
    pub tx_d_ff: usize,
    pub dropout: f64,
}

impl Default for ClassifierArch {
    fn default() -> Self {
        let c = ClassifierConfig::new(1, 2, GraphMode::Gat);
        Self {
            graph_mode: c.graph_mode,
            d_model: c.d_model,
            gat_layers: c.gat_layers,
            gat_heads: c.gat_heads,
            leaky_slope: c.leaky_slope,
            tx_layers: c.tx_layers,
            tx_heads: c.tx_heads,
            tx_d_ff: c.tx_d_ff,
            dropout: c.dropout,
        }
    }
}

impl ClassifierArch {
    pub fn config(&self, d_in: usize, n_channels: usize, n_classes: usize) -> ClassifierConfig {
        let mut c = ClassifierConfig::new(n_channels, n_classes, self.graph_mode);
        c.d_in = d_in;
        c.d_model = self.d_model;
        c.gat_layers = self.gat_layers;
        c.gat_heads = self.gat_heads;
        c.leaky_slope = self.leaky_slope;
        c.tx_layers = self.tx_layers;
        c.tx_heads = self.tx_heads;
        c.tx_d_ff = self.tx_d_ff;
        c.dropout = self.dropout;
        c
    }
}

/// Resolved configuration of a fine-tuning run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRun {
    pub manifest: Option<PathBuf>,
    /// Pre-trained encoder; unused in scratch mode.
    pub encoder: Option<PathBuf>,
    /// Vocabulary strategy and encoder shape for scratch mode.
    pub vocab_mode: VocabMode,
    pub encoder_arch: EncoderArch,
    pub classifier: ClassifierArch,
    pub finetune: FinetuneConfig,
    /// Restricts the run to these subjects when non-empty.
    pub subjects: Vec<String>,
    pub save_checkpoints: bool,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Pre-trained encoder checkpoint.
    #[arg(long, conflicts_with = "scratch")]
    pub encoder: Option<PathBuf>,
    /// Train the encoder from random initialization.
    #[arg(long)]
    pub scratch: bool,
    #[arg(long, value_enum)]
    pub graph: Option<GraphArg>,
    /// Tokenizer for scratch mode; must match the checkpoint otherwise.
    #[arg(long, value_enum)]
    pub tokenizer: Option<TokenizerArg>,
    /// Vocabulary strategy for scratch mode.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Fine-tune only this subject; repeatable.
    #[arg(long = "subject")]
    pub subjects: Vec<String>,
    /// Subjects trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, value_enum, default_value_t)]
    pub preset: Preset,
}

pub fn defaults(preset: Preset) -> FinetuneRun {
    FinetuneRun {
        manifest: None,
        encoder: None,
        vocab_mode: VocabMode::Union,
        encoder_arch: EncoderArch::default(),
        classifier: ClassifierArch::default(),
        finetune: match preset {
            Preset::Full => FinetuneConfig::default(),
            Preset::Desk => FinetuneConfig::desk(),
        },
        subjects: Vec::new(),
        save_checkpoints: true,
    }
}

/// One row of the aggregate results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub subject_id: String,
    pub best_val_acc: f64,
    pub test_acc: Option<f64>,
    /// Epochs of the retained checkpoints, best first, `;`-separated.
    pub ckpt_epochs: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub rank: usize,
    pub epoch: usize,
    pub val_acc: f64,
    pub file: Option<String>,
}

/// Per-subject `results.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectResult {
    pub subject_id: String,
    pub best_val_acc: f64,
    pub test_acc: Option<f64>,
    pub ckpt_epochs: Vec<usize>,
    pub checkpoints: Vec<CheckpointRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub init_mode: InitMode,
    pub graph_mode: GraphMode,
    pub tokenizer: TokenizerMode,
    pub n_subjects: usize,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
}

pub(crate) fn resolve_run(args: &FinetuneArgs) -> Result<FinetuneRun> {
    let f = flags(vec![
        ("manifest", args.manifest.as_ref().map(val)),
        ("encoder", args.encoder.as_ref().map(val)),
        ("finetune.init_mode", args.scratch.then(|| val(InitMode::Scratch))),
        ("classifier.graph_mode", args.graph.map(|g| val(GraphMode::from(g)))),
        (
            "encoder_arch.tokenizer",
            args.tokenizer.map(|t| val(TokenizerMode::from(t))),
        ),
        ("vocab_mode", args.mode.map(|m| val(VocabMode::from(m)))),
        ("subjects", (!args.subjects.is_empty()).then(|| val(&args.subjects))),
        ("finetune.seed", args.run.seed.map(val)),
    ]);
    let mut cfg: FinetuneRun = resolve(
        &defaults(args.preset),
        args.run.config.as_deref(),
        f,
        &args.run.overrides,
    )?;
    if args.scratch {
        cfg.encoder = None;
    }
    if args.encoder.is_some() {
        cfg.finetune.init_mode = InitMode::Pretrained;
    }
    Ok(cfg)
}

fn encoder_init(
    cfg: &FinetuneRun,
    epochs: &[EpochRecord],
    tokenizer_flag: Option<TokenizerArg>,
) -> Result<EncoderInit> {
    match cfg.finetune.init_mode {
        InitMode::Pretrained => {
            let path = cfg
                .encoder
                .as_ref()
                .ok_or_else(|| UsageError("--encoder or --scratch is required".into()))?;
            let bundle =
                EncoderBundle::<f32>::load(path).with_context(|| format!("loading encoder {}", path.display()))?;
            let have = bundle.encoder.config().tokenizer;
            if let Some(t) = tokenizer_flag {
                if TokenizerMode::from(t) != have {
                    return Err(
                        UsageError(format!("--tokenizer {t:?} disagrees with the checkpoint's {have:?}")).into(),
                    );
                }
            }
            Ok(EncoderInit::Pretrained(bundle))
        }
        InitMode::Scratch => {
            let vocabulary = ChannelVocabulary::build(cfg.vocab_mode, &dataset_channels(epochs)?)?;
            let art = cfg.encoder_arch.to_art(vocabulary.len(), &sampling_rates(epochs));
            art.validate()?;
            Ok(EncoderInit::Scratch {
                art,
                vocabulary,
                vocab_mode: cfg.vocab_mode,
            })
        }
    }
}

/// Global manifest indices of every subject, in subject-id order.
pub fn group_by_subject(epochs: &[EpochRecord]) -> BTreeMap<String, Vec<usize>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, e) in epochs.iter().enumerate() {
        groups.entry(e.subject_id.clone()).or_default().push(i);
    }
    groups
}

pub fn n_classes(epochs: &[EpochRecord]) -> usize {
    epochs.iter().map(|e| e.label as usize + 1).max().unwrap_or(0)
}

pub fn subject_dir(root: &Path, subject: &str) -> PathBuf {
    root.join("subjects").join(subject)
}

fn finetune_subject(
    cfg: &FinetuneRun,
    init: &EncoderInit,
    records: &[EpochRecord],
    n_classes: usize,
    r: Reporter,
) -> Result<FinetuneOutcome> {
    let (vocab, mode) = init.vocabulary();
    let art = init.art_config();
    let n_channels = PreparedEpoch::<f32>::new(&records[0], vocab, mode, art)?.n_channels();
    let clf = cfg.classifier.config(art.d_model, n_channels, n_classes);
    let subject = &records[0].subject_id;
    run_finetune(records, init, clf, &cfg.finetune, |t| {
        r.say(format!(
            "{subject}  epoch {:>3}  loss {:.4}  val {:.3}",
            t.epoch, t.train_loss, t.val_acc
        ))
    })
    .with_context(|| format!("fine-tuning {subject}"))
}

fn write_subject(
    out: &mut Artifacts,
    cfg: &FinetuneRun,
    outcome: &FinetuneOutcome,
    indices: &[usize],
) -> Result<SubjectResult> {
    let dir = subject_dir(out.root(), &outcome.subject_id);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let files = if cfg.save_checkpoints {
        let paths = outcome.checkpoints.save_dir(&dir.join("checkpoints"))?;
        paths
            .iter()
            .map(|p| {
                out.record(p);
                Some(p.strip_prefix(&dir).unwrap_or(p).to_string_lossy().replace('\\', "/"))
            })
            .collect()
    } else {
        vec![None; outcome.checkpoints.len()]
    };
    let checkpoints: Vec<CheckpointRecord> = outcome
        .checkpoints
        .entries()
        .iter()
        .zip(files)
        .enumerate()
        .map(|(rank, (e, file))| CheckpointRecord {
            rank,
            epoch: e.epoch,
            val_acc: e.val_acc,
            file,
        })
        .collect();
    let result = SubjectResult {
        subject_id: outcome.subject_id.clone(),
        best_val_acc: outcome.best_val_acc(),
        test_acc: outcome.test.as_ref().map(|t| t.accuracy),
        ckpt_epochs: outcome.checkpoints.epochs(),
        checkpoints,
    };
    let results = dir.join("results.json");
    write_json(&results, &result)?;
    out.record(&results);

    let trace = dir.join("trace.csv");
    let mut w = csv::Writer::from_path(&trace)?;
    for t in &outcome.trace {
        w.serialize(t)?;
    }
    w.flush()?;
    out.record(&trace);

    if let Some(test) = &outcome.test {
        let preds = dir.join("predictions.csv");
        let mut w = csv::Writer::from_path(&preds)?;
        w.write_record(["epoch_id", "true_label", "pred_label", "probabilities"])?;
        for ((&local, p), &label) in outcome.split.test.iter().zip(&test.predictions).zip(&test.labels) {
            let probs: Vec<String> = p.probabilities.iter().map(|v| v.to_string()).collect();
            w.write_record([
                indices[local].to_string(),
                label.to_string(),
                p.predicted.to_string(),
                probs.join(";"),
            ])?;
        }
        w.flush()?;
        out.record(&preds);
    }
    Ok(result)
}

pub fn run(args: &FinetuneArgs, r: Reporter) -> Result<()> {
    if args.jobs == 0 {
        return Err(UsageError("--jobs must be at least 1".into()).into());
    }
    let cfg = resolve_run(args)?;
    cfg.finetune.validate()?;
    let manifest = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| UsageError("--manifest is required".into()))?;
    let epochs = load_manifest_epochs(manifest).with_context(|| format!("loading manifest {}", manifest.display()))?;
    let init = encoder_init(&cfg, &epochs, args.tokenizer)?;
    let classes = n_classes(&epochs);
    let mut groups = group_by_subject(&epochs);
    if !cfg.subjects.is_empty() {
        if let Some(missing) = cfg.subjects.iter().find(|s| !groups.contains_key(*s)) {
            return Err(UsageError(format!("subject {missing:?} is not in the manifest")).into());
        }
        groups.retain(|s, _| cfg.subjects.contains(s));
    }
    r.say(format!(
        "fine-tuning {} subjects ({:?} encoder, {:?} graph, {} classes, {} jobs)",
        groups.len(),
        cfg.finetune.init_mode,
        cfg.classifier.graph_mode,
        classes,
        args.jobs
    ));

    let mut out = Artifacts::new(&args.run.out)?;
    out.snapshot(&cfg)?;
    let subjects: Vec<(&String, &Vec<usize>)> = groups.iter().collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.jobs).build()?;
    let outcomes: Vec<Result<FinetuneOutcome>> = pool.install(|| {
        subjects
            .par_iter()
            .map(|(_, idx)| {
                let records: Vec<EpochRecord> = idx.iter().map(|&i| epochs[i].clone()).collect();
                finetune_subject(&cfg, &init, &records, classes, r)
            })
            .collect()
    });

    let mut rows = Vec::with_capacity(outcomes.len());
    for ((_, idx), outcome) in subjects.iter().zip(outcomes) {
        let outcome = outcome?;
        let res = write_subject(&mut out, &cfg, &outcome, idx)?;
        rows.push(ResultRow {
            subject_id: res.subject_id.clone(),
            best_val_acc: res.best_val_acc,
            test_acc: res.test_acc,
            ckpt_epochs: res
                .ckpt_epochs
                .iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        });
        r.say(format!(
            "{}  best val {:.3}  test {}",
            res.subject_id,
            res.best_val_acc,
            res.test_acc.map_or("n/a".into(), |a| format!("{a:.3}"))
        ));
    }
    let results = out.path("results.csv");
    let mut w = csv::Writer::from_path(&results)?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    out.record(&results);

    let accs: Vec<f64> = rows.iter().filter_map(|r| r.test_acc).collect();
    let (mean, std) = mean_std(&accs);
    let summary = Summary {
        init_mode: cfg.finetune.init_mode,
        graph_mode: cfg.classifier.graph_mode,
        tokenizer: init.art_config().tokenizer,
        n_subjects: rows.len(),
        mean_test_acc: mean,
        std_test_acc: std,
    };
    let summary_path = out.path("summary.json");
    write_json(&summary_path, &summary)?;
    out.record(&summary_path);
    out.finish()?;
    println!("test accuracy {:.4} ± {:.4} over {} subjects", mean, std, accs.len());
    Ok(())
}
