use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use eegfm_core::classifier::PreparedEpoch;
use eegfm_core::interpret::{
    collect_attention, export_embeddings, key_channels, threshold_edges, write_connectivity, write_embeddings_csv,
};

use super::run_dir::LoadedRun;
use crate::config::Artifacts;
use crate::{Reporter, UsageError};

#[derive(Debug, Args)]
pub struct InterpretArgs {
    /// Directory written by `finetune`.
    #[arg(long)]
    pub run: PathBuf,
    /// Class whose test epochs are analysed.
    #[arg(long)]
    pub class: usize,
    /// Fraction of directed off-diagonal edges kept.
    #[arg(long, default_value_t = 0.15)]
    pub top_frac: f64,
    /// Minimum in-plus-out degree of a key channel.
    #[arg(long, default_value_t = 8)]
    pub min_degree: usize,
    /// Analyse only this subject; repeatable.
    #[arg(long = "subject")]
    pub subjects: Vec<String>,
    /// Output directory; defaults to `<run>/interpret`.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &InterpretArgs, r: Reporter) -> Result<()> {
    if !(args.top_frac > 0.0 && args.top_frac <= 1.0) {
        return Err(UsageError(format!("--top-frac must lie in (0, 1], got {}", args.top_frac)).into());
    }
    let loaded = LoadedRun::open(&args.run)?;
    if args.class >= loaded.n_classes {
        return Err(UsageError(format!(
            "--class {} but the corpus has {} classes",
            args.class, loaded.n_classes
        ))
        .into());
    }
    let subjects: Vec<String> = if args.subjects.is_empty() {
        loaded.subjects.keys().cloned().collect()
    } else {
        args.subjects.clone()
    };
    let mut out = Artifacts::new(&args.out.clone().unwrap_or_else(|| args.run.join("interpret")))?;
    let mut embeddings = Vec::new();
    for subject in &subjects {
        let s = loaded.subject(&args.run, subject)?;
        let test: Vec<&PreparedEpoch<f32>> = s.split.test.iter().map(|&i| &s.prepared[i]).collect();
        if test.is_empty() {
            r.say(format!("{subject}: no test epochs, skipped"));
            continue;
        }
        embeddings.extend(export_embeddings(&s.checkpoints, &test, subject)?);
        let model = &s.checkpoints.entries()[0].model;
        let names: Vec<String> = test[0]
            .channel_ids
            .iter()
            .map(|&id| {
                model
                    .vocabulary
                    .name(id)
                    .map_or_else(|| id.to_string(), |n| n.as_str().to_string())
            })
            .collect();
        let summary = collect_attention(&s.checkpoints, &test, args.class, names)?;
        let graph = threshold_edges(&summary, args.top_frac)?;
        let keys = key_channels(&graph, args.min_degree);
        let path = out.path(&format!("{subject}_class{}.json", args.class));
        write_connectivity(&path, &summary, &graph, &keys)?;
        out.record(&path);
        let key_names: Vec<&str> = keys.iter().map(|&k| summary.channels[k].as_str()).collect();
        println!(
            "{subject}  class {}  {} edges  key channels [{}]",
            args.class,
            graph.edges.len(),
            key_names.join(", ")
        );
    }
    let emb = out.path("embeddings.csv");
    write_embeddings_csv(&emb, &embeddings)?;
    out.record(&emb);
    out.finish()?;
    Ok(())
}
