//! Synthetic heterogeneous EEG: several pseudo-datasets with different
//! montages and sampling rates, where each class drives a sinusoidal carrier
//! on its own set of channels.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{window_samples, write_epoch, write_manifest, EpochRecord, ManifestEntry, EPOCH_SECONDS};
use crate::error::{Error, Result};
use crate::rng;
use crate::schema::ChannelName;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthDataset {
    pub dataset_id: String,
    pub channels: Vec<ChannelName>,
    pub sampling_rate_hz: u32,
    pub n_subjects: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub datasets: Vec<SynthDataset>,
    pub n_classes: usize,
    pub epochs_per_class: usize,
    /// One carrier frequency per class.
    pub carrier_hz: Vec<f64>,
    /// Channels driven by each class; names absent from a dataset are skipped.
    pub active_channels: Vec<Vec<ChannelName>>,
    pub noise_std: f64,
    /// Per-subject channel gains are drawn from `U(1 - j, 1 + j)`.
    pub gain_jitter: f64,
    pub seed: u64,
}

fn names(list: &[&str]) -> Vec<ChannelName> {
    list.iter().map(|n| ChannelName::new(n).expect("static name")).collect()
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            datasets: vec![
                SynthDataset {
                    dataset_id: "synth_a".into(),
                    channels: names(&["FP1", "FP2", "F3", "F4", "C3", "C4", "O1", "O2"]),
                    sampling_rate_hz: 200,
                    n_subjects: 2,
                },
                SynthDataset {
                    dataset_id: "synth_b".into(),
                    channels: names(&["FP1", "FP2", "C3", "C4", "O1"]),
                    sampling_rate_hz: 128,
                    n_subjects: 2,
                },
            ],
            n_classes: 3,
            epochs_per_class: 40,
            carrier_hz: vec![6.0, 10.0, 20.0],
            active_channels: vec![
                names(&["FP1", "F3", "C3"]),
                names(&["FP2", "F4", "C4"]),
                names(&["O1", "O2"]),
            ],
            noise_std: 0.5,
            gain_jitter: 0.2,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.carrier_hz.len() != self.n_classes || self.active_channels.len() != self.n_classes {
            return bad("carrier_hz and active_channels need one entry per class".into());
        }
        if self.datasets.is_empty() || self.epochs_per_class == 0 {
            return bad("need at least one dataset and one epoch per class".into());
        }
        if !(self.noise_std >= 0.0) || !(0.0..1.0).contains(&self.gain_jitter) {
            return bad("noise_std must be >= 0 and gain_jitter in [0, 1)".into());
        }
        for ds in &self.datasets {
            let nyquist = ds.sampling_rate_hz as f64 / 2.0;
            if let Some(f) = self.carrier_hz.iter().find(|&&f| !(f > 0.0 && f < nyquist)) {
                return bad(format!("carrier {f} Hz is not below Nyquist for {}", ds.dataset_id));
            }
            if ds.channels.is_empty() || ds.n_subjects == 0 {
                return bad(format!("dataset {} has no channels or subjects", ds.dataset_id));
            }
        }
        Ok(())
    }

    pub fn subject_ids(&self, ds: &SynthDataset) -> Vec<String> {
        (1..=ds.n_subjects).map(|s| format!("{}-s{s}", ds.dataset_id)).collect()
    }
}

/// Builds the corpus in memory, ordered by dataset, subject, epoch index,
/// class.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<EpochRecord>> {
    spec.validate()?;
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut out = Vec::new();
    for ds in &spec.datasets {
        let fs = ds.sampling_rate_hz as f64;
        let n = window_samples(EPOCH_SECONDS, ds.sampling_rate_hz);
        let active: Vec<Vec<bool>> = spec
            .active_channels
            .iter()
            .map(|set| ds.channels.iter().map(|c| set.contains(c)).collect())
            .collect();
        for subject in spec.subject_ids(ds) {
            let mut r = rng::stream(spec.seed, &format!("synth/{subject}"));
            let j = spec.gain_jitter;
            let gains: Vec<f64> = ds.channels.iter().map(|_| r.random_range(1.0 - j..=1.0 + j)).collect();
            for _ in 0..spec.epochs_per_class {
                for label in 0..spec.n_classes {
                    let f = spec.carrier_hz[label];
                    let mut samples = Vec::with_capacity(ds.channels.len() * n);
                    for (ch, &gain) in gains.iter().enumerate() {
                        let on = active[label][ch];
                        let phase = r.random_range(0.0..2.0 * PI);
                        for t in 0..n {
                            let carrier = if on {
                                gain * (2.0 * PI * f * t as f64 / fs + phase).sin()
                            } else {
                                0.0
                            };
                            let eps = if spec.noise_std > 0.0 {
                                noise.sample(&mut r)
                            } else {
                                0.0
                            };
                            samples.push((carrier + eps) as f32);
                        }
                    }
                    out.push(EpochRecord::new(
                        ds.dataset_id.clone(),
                        subject.clone(),
                        label as u16,
                        ds.sampling_rate_hz,
                        ds.channels.clone(),
                        samples,
                    )?);
                }
            }
        }
    }
    Ok(out)
}

/// Writes `epochs/{dataset}/{subject}/eNNNNN.eeg` plus `manifest.jsonl`
/// under `out_dir` and returns the manifest path.
pub fn write_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<PathBuf> {
    let epochs = generate_synthetic(spec)?;
    let mut entries = Vec::with_capacity(epochs.len());
    let mut counter: std::collections::HashMap<String, usize> = Default::default();
    for e in &epochs {
        let k = counter.entry(e.subject_id.clone()).or_default();
        let rel = format!("epochs/{}/{}/e{:05}.eeg", e.dataset_id, e.subject_id, *k);
        *k += 1;
        let path = out_dir.join(&rel);
        let dir = path.parent().expect("epoch path has a parent");
        std::fs::create_dir_all(dir).map_err(|err| Error::io(dir, err))?;
        write_epoch(&path, e)?;
        entries.push(ManifestEntry {
            path: rel,
            dataset_id: e.dataset_id.clone(),
            subject_id: e.subject_id.clone(),
            label: e.label,
        });
    }
    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}
