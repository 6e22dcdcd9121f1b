use anyhow::Result;
use clap::Args;
use eegfm_core::dataio::write_synthetic;
use eegfm_core::SynthSpec;

use super::val;
use crate::config::{flags, resolve, Artifacts};
use crate::{Reporter, RunArgs};

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Noise standard deviation.
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Epochs generated per class and subject.
    #[arg(long)]
    pub epochs_per_class: Option<usize>,
}

pub fn run(args: &GenSynthArgs, r: Reporter) -> Result<()> {
    let f = flags(vec![
        ("seed", args.run.seed.map(val)),
        ("noise_std", args.noise_std.map(val)),
        ("epochs_per_class", args.epochs_per_class.map(val)),
    ]);
    let spec: SynthSpec = resolve(
        &SynthSpec::default(),
        args.run.config.as_deref(),
        f,
        &args.run.overrides,
    )?;
    spec.validate()?;
    let mut art = Artifacts::new(&args.run.out)?;
    art.snapshot(&spec)?;
    let manifest = write_synthetic(&spec, art.root())?;
    art.record(&manifest);
    art.record(&art.path("epochs"));
    art.finish()?;
    let subjects: usize = spec.datasets.iter().map(|d| d.n_subjects).sum();
    r.say(format!(
        "wrote {} datasets, {subjects} subjects, {} classes to {}",
        spec.datasets.len(),
        spec.n_classes,
        manifest.display()
    ));
    Ok(())
}
