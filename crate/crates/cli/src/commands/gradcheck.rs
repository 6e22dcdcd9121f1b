use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use eegfm_core::selfcheck::{run_component, COMPONENTS};
use serde::Serialize;

use crate::config::write_json;
use crate::{Reporter, UsageError};

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Check every component.
    #[arg(long, conflicts_with = "components")]
    pub all: bool,
    /// Component to check; repeatable.
    #[arg(long = "component")]
    pub components: Vec<String>,
    /// Number of random seeds per component.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Write a JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Serialize)]
struct Line {
    component: String,
    seed: u64,
    max_rel_error: f64,
    passed: bool,
}

pub fn run(args: &GradcheckArgs, r: Reporter) -> Result<()> {
    let components: Vec<String> = if args.all {
        COMPONENTS.iter().map(|c| c.to_string()).collect()
    } else if args.components.is_empty() {
        return Err(UsageError(format!("pass --all or --component (one of {})", COMPONENTS.join(", "))).into());
    } else {
        args.components.clone()
    };
    if args.seeds == 0 {
        return Err(UsageError("--seeds must be at least 1".into()).into());
    }
    let mut lines = Vec::new();
    for c in &components {
        for seed in args.seed..args.seed + args.seeds {
            let check = run_component(c, seed)?;
            let line = Line {
                component: c.clone(),
                seed,
                max_rel_error: check.report.max_rel_error(),
                passed: check.passed(),
            };
            println!(
                "{:<24} seed {:<4} max rel err {:.3e}  {}",
                c,
                seed,
                line.max_rel_error,
                if line.passed { "ok" } else { "FAIL" }
            );
            if !line.passed {
                r.say(&check.report);
            }
            lines.push(line);
        }
    }
    if let Some(path) = &args.report {
        write_json(path, &lines)?;
    }
    let failed = lines.iter().filter(|l| !l.passed).count();
    if failed > 0 {
        return Err(eegfm_core::Error::GradCheck(format!("{failed} of {} checks failed", lines.len())).into());
    }
    println!("all {} checks passed", lines.len());
    Ok(())
}
