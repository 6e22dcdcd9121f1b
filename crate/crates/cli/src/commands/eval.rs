use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use eegfm_core::classifier::PreparedEpoch;
use eegfm_core::finetune::evaluate;
use serde::{Deserialize, Serialize};

use super::mean_std;
use super::run_dir::LoadedRun;
use crate::config::{write_json, Artifacts};
use crate::Reporter;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory written by `finetune`.
    #[arg(long)]
    pub run: PathBuf,
    /// Output directory; defaults to `<run>/eval`.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub subject_id: String,
    pub n_test: usize,
    pub test_acc: f64,
    /// Accuracy stored by the fine-tuning run.
    pub recorded_test_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subjects: Vec<EvalRow>,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
}

pub fn run(args: &EvalArgs, r: Reporter) -> Result<()> {
    let loaded = LoadedRun::open(&args.run)?;
    let mut out = Artifacts::new(&args.out.clone().unwrap_or_else(|| args.run.join("eval")))?;
    let mut rows = Vec::new();
    for subject in loaded.subjects.keys() {
        let s = loaded.subject(&args.run, subject)?;
        if s.split.test.is_empty() {
            r.say(format!("{subject}: no test epochs, skipped"));
            continue;
        }
        let test: Vec<&PreparedEpoch<f32>> = s.split.test.iter().map(|&i| &s.prepared[i]).collect();
        let ev = evaluate(&s.checkpoints, &test, loaded.n_classes)?;
        r.say(format!("{subject}  test {:.4}  ({} epochs)", ev.accuracy, test.len()));
        rows.push(EvalRow {
            subject_id: subject.clone(),
            n_test: test.len(),
            test_acc: ev.accuracy,
            recorded_test_acc: s.result.test_acc,
        });
    }
    let accs: Vec<f64> = rows.iter().map(|r| r.test_acc).collect();
    let (mean, std) = mean_std(&accs);
    let csv_path = out.path("eval.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    out.record(&csv_path);
    let report = EvalReport {
        subjects: rows,
        mean_test_acc: mean,
        std_test_acc: std,
    };
    let json_path = out.path("eval.json");
    write_json(&json_path, &report)?;
    out.record(&json_path);
    out.finish()?;
    println!("test accuracy {mean:.4} ± {std:.4} over {} subjects", accs.len());
    Ok(())
}
