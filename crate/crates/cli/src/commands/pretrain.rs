use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use eegfm_core::dataio::{dataset_channels, load_manifest_epochs, sampling_rates};
use eegfm_core::encoder::ConvLayerSpec;
use eegfm_core::pretrain::{run_pretraining, write_loss_csv};
use eegfm_core::{ArtConfig, ChannelVocabulary, EpochRecord, PretrainConfig, TokenizerMode, VocabMode};
use serde::{Deserialize, Serialize};

use super::val;
use crate::config::{flags, resolve, Artifacts};
use crate::{ModeArg, Preset, Reporter, RunArgs, TokenizerArg, UsageError};

/// Encoder hyper-parameters that do not depend on the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderArch {
    pub n_patches: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub conv: Vec<ConvLayerSpec>,
    pub tokenizer: TokenizerMode,
    pub projection_head: bool,
}

impl Default for EncoderArch {
    fn default() -> Self {
        let a = ArtConfig::new(1, &[128]);
        Self {
            n_patches: a.n_patches,
            d_model: a.d_model,
            n_layers: a.n_layers,
            n_heads: a.n_heads,
            d_ff: a.d_ff,
            conv: a.conv,
            tokenizer: a.tokenizer,
            projection_head: a.projection_head,
        }
    }
}

impl EncoderArch {
    pub fn to_art(&self, vocab_size: usize, rates: &[u32]) -> ArtConfig {
        let mut a = ArtConfig::new(vocab_size, rates);
        a.n_patches = self.n_patches;
        a.d_model = self.d_model;
        a.n_layers = self.n_layers;
        a.n_heads = self.n_heads;
        a.d_ff = self.d_ff;
        a.conv = self.conv.clone();
        a.tokenizer = self.tokenizer;
        a.projection_head = self.projection_head;
        a
    }
}

/// Resolved configuration of a pre-training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainRun {
    pub manifests: Vec<PathBuf>,
    pub vocab_mode: VocabMode,
    pub encoder: EncoderArch,
    pub pretrain: PretrainConfig,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Corpus manifest; repeat to pool several.
    #[arg(long = "manifest")]
    pub manifests: Vec<PathBuf>,
    /// Channel vocabulary strategy.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub tokenizer: Option<TokenizerArg>,
    #[arg(long, value_enum, default_value_t)]
    pub preset: Preset,
}

pub fn defaults(preset: Preset) -> PretrainRun {
    PretrainRun {
        manifests: Vec::new(),
        vocab_mode: VocabMode::Union,
        encoder: EncoderArch::default(),
        pretrain: match preset {
            Preset::Full => PretrainConfig::default(),
            Preset::Desk => PretrainConfig::desk(),
        },
    }
}

pub fn load_corpus(manifests: &[PathBuf]) -> Result<Vec<EpochRecord>> {
    let mut epochs = Vec::new();
    for m in manifests {
        epochs.extend(load_manifest_epochs(m).with_context(|| format!("loading manifest {}", m.display()))?);
    }
    Ok(epochs)
}

pub fn run(args: &PretrainArgs, r: Reporter) -> Result<()> {
    let f = flags(vec![
        ("manifests", (!args.manifests.is_empty()).then(|| val(&args.manifests))),
        ("vocab_mode", args.mode.map(|m| val(VocabMode::from(m)))),
        ("encoder.tokenizer", args.tokenizer.map(|t| val(TokenizerMode::from(t)))),
        ("pretrain.seed", args.run.seed.map(val)),
    ]);
    let cfg: PretrainRun = resolve(
        &defaults(args.preset),
        args.run.config.as_deref(),
        f,
        &args.run.overrides,
    )?;
    if cfg.manifests.is_empty() {
        return Err(UsageError("at least one --manifest is required".into()).into());
    }
    cfg.pretrain.validate()?;
    let epochs = load_corpus(&cfg.manifests)?;
    let vocab = ChannelVocabulary::build(cfg.vocab_mode, &dataset_channels(&epochs)?)?;
    let art = cfg.encoder.to_art(vocab.len(), &sampling_rates(&epochs));
    art.validate()?;
    r.say(format!(
        "pre-training on {} epochs from {} datasets, vocabulary of {} channels ({:?})",
        epochs.len(),
        vocab.datasets().len(),
        vocab.len(),
        cfg.vocab_mode
    ));

    let mut out = Artifacts::new(&args.run.out)?;
    out.snapshot(&cfg)?;
    let outcome = run_pretraining(&epochs, &vocab, cfg.vocab_mode, art, &cfg.pretrain, |e| {
        r.say(format!(
            "epoch {:>3}  loss {:.4}  lr {:.2e}",
            e.epoch, e.mean_loss, e.lr
        ))
    })?;
    let ckpt = out.path("encoder.artw");
    outcome.bundle.save(&ckpt)?;
    out.record(&ckpt);
    let vocab_path = out.path("vocabulary.json");
    vocab.save(&vocab_path)?;
    out.record(&vocab_path);
    let loss = out.path("loss.csv");
    write_loss_csv(&loss, &outcome.trace)?;
    out.record(&loss);
    out.finish()?;
    r.say(format!("encoder written to {}", ckpt.display()));
    Ok(())
}
