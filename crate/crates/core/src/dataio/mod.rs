//! Epoch records and everything that produces or stores them.

mod format;
mod manifest;
mod split;
mod synth;

pub use format::{decode_epoch, encode_epoch, read_epoch, write_epoch, EPOCH_MAGIC, EPOCH_VERSION};
pub use manifest::{load_manifest_epochs, read_manifest, write_manifest, ManifestEntry};
pub use split::{split_within_subject, Split};
pub use synth::{generate_synthetic, write_synthetic, SynthDataset, SynthSpec};

use crate::error::{Error, Result};
use crate::schema::{ChannelName, DatasetChannels};

/// Epoch duration used throughout.
pub const EPOCH_SECONDS: f64 = 2.0;

/// Samples in a window of `seconds` at `rate_hz`, rounded to nearest.
pub fn window_samples(seconds: f64, rate_hz: u32) -> usize {
    (seconds * rate_hz as f64).round() as usize
}

/// Channel set of every dataset in order of first appearance. All epochs of
/// one dataset must share it.
pub fn dataset_channels(epochs: &[EpochRecord]) -> Result<Vec<DatasetChannels>> {
    let mut sets: Vec<DatasetChannels> = Vec::new();
    for e in epochs {
        match sets.iter().find(|(id, _)| *id == e.dataset_id) {
            Some((_, names)) if *names != e.channel_names => {
                return Err(Error::Data(format!(
                    "dataset {} mixes channel layouts ({} has {} channels, expected {})",
                    e.dataset_id,
                    e.subject_id,
                    e.channel_names.len(),
                    names.len()
                )))
            }
            Some(_) => {}
            None => sets.push((e.dataset_id.clone(), e.channel_names.clone())),
        }
    }
    Ok(sets)
}

/// Distinct sampling rates, ascending.
pub fn sampling_rates(epochs: &[EpochRecord]) -> Vec<u32> {
    let mut rates: Vec<u32> = epochs.iter().map(|e| e.sampling_rate_hz).collect();
    rates.sort_unstable();
    rates.dedup();
    rates
}

/// One labelled multi-channel segment. Samples are channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub dataset_id: String,
    pub subject_id: String,
    pub label: u16,
    pub sampling_rate_hz: u32,
    pub channel_names: Vec<ChannelName>,
    samples: Vec<f32>,
    n_samples: usize,
}

impl EpochRecord {
    pub fn new(
        dataset_id: impl Into<String>,
        subject_id: impl Into<String>,
        label: u16,
        sampling_rate_hz: u32,
        channel_names: Vec<ChannelName>,
        samples: Vec<f32>,
    ) -> Result<Self> {
        let c = channel_names.len();
        if c == 0 {
            return Err(Error::Data("epoch without channels".into()));
        }
        if sampling_rate_hz == 0 {
            return Err(Error::Data("sampling rate must be positive".into()));
        }
        if !samples.len().is_multiple_of(c) || samples.is_empty() {
            return Err(Error::Data(format!(
                "{} samples cannot be split over {c} channels",
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            let n = samples.len() / c;
            return Err(crate::FormatError::NonFiniteSample {
                channel: i / n,
                index: i % n,
            }
            .into());
        }
        let n_samples = samples.len() / c;
        Ok(Self {
            dataset_id: dataset_id.into(),
            subject_id: subject_id.into(),
            label,
            sampling_rate_hz,
            channel_names,
            samples,
            n_samples,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn channel(&self, i: usize) -> &[f32] {
        &self.samples[i * self.n_samples..(i + 1) * self.n_samples]
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    /// Per-channel z-scoring with a variance floor of 1e-8.
    pub fn zscore(&mut self) {
        let n = self.n_samples;
        for ch in self.samples.chunks_exact_mut(n) {
            let mean = ch.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            let var = ch.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / var.max(1e-8).sqrt();
            for v in ch.iter_mut() {
                *v = ((*v as f64 - mean) * inv) as f32;
            }
        }
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select_channels(&self, keep: &[usize]) -> Result<Self> {
        let mut samples = Vec::with_capacity(keep.len() * self.n_samples);
        let mut names = Vec::with_capacity(keep.len());
        for &c in keep {
            if c >= self.n_channels() {
                return Err(Error::Data(format!("channel index {c} out of range")));
            }
            samples.extend_from_slice(self.channel(c));
            names.push(self.channel_names[c].clone());
        }
        Self::new(
            self.dataset_id.clone(),
            self.subject_id.clone(),
            self.label,
            self.sampling_rate_hz,
            names,
            samples,
        )
    }
}

/// An unsegmented multi-channel recording.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousRecording {
    pub dataset_id: String,
    pub subject_id: String,
    pub label: u16,
    pub sampling_rate_hz: u32,
    pub channel_names: Vec<ChannelName>,
    /// Channel-major, `len` samples per channel.
    pub samples: Vec<f32>,
    pub len: usize,
}

/// Cuts a recording into windows of `window_s` seconds whose starts are
/// `window_s - overlap_s` seconds apart. Window and stride are rounded to
/// whole samples; a trailing partial window is dropped.
pub fn segment(rec: &ContinuousRecording, window_s: f64, overlap_s: f64) -> Result<Vec<EpochRecord>> {
    if !(window_s > overlap_s && overlap_s >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need window > overlap >= 0, got window {window_s}, overlap {overlap_s}"
        )));
    }
    let c = rec.channel_names.len();
    if c == 0 || rec.samples.len() != c * rec.len {
        return Err(Error::Data("recording shape does not match its channel list".into()));
    }
    let win = window_samples(window_s, rec.sampling_rate_hz);
    let stride = window_samples(window_s - overlap_s, rec.sampling_rate_hz);
    if win == 0 || stride == 0 {
        return Err(Error::InvalidArgument("window shorter than one sample".into()));
    }
    if rec.len < win {
        return Ok(Vec::new());
    }
    let count = (rec.len - win) / stride + 1;
    (0..count)
        .map(|k| {
            let start = k * stride;
            let mut samples = Vec::with_capacity(c * win);
            for ch in 0..c {
                let base = ch * rec.len + start;
                samples.extend_from_slice(&rec.samples[base..base + win]);
            }
            EpochRecord::new(
                rec.dataset_id.clone(),
                rec.subject_id.clone(),
                rec.label,
                rec.sampling_rate_hz,
                rec.channel_names.clone(),
                samples,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recording(rate: u32, len: usize, channels: usize) -> ContinuousRecording {
        ContinuousRecording {
            dataset_id: "d".into(),
            subject_id: "s".into(),
            label: 0,
            sampling_rate_hz: rate,
            channel_names: (0..channels)
                .map(|i| ChannelName::new(&format!("C{i}")).unwrap())
                .collect(),
            samples: (0..channels * len).map(|i| (i % len) as f32).collect(),
            len,
        }
    }

    #[test]
    fn ten_seconds_at_128_hz_gives_five_epochs() {
        let eps = segment(&recording(128, 1280, 2), 2.0, 0.2).unwrap();
        assert_eq!(eps.len(), 5);
        // Starts at 0, 1.8, 3.6, 5.4, 7.2 s (rounded to whole samples).
        let starts: Vec<f32> = eps.iter().map(|e| e.channel(0)[0]).collect();
        assert_eq!(starts, vec![0.0, 230.0, 460.0, 690.0, 920.0]);
        assert!(eps.iter().all(|e| e.n_samples() == 256));
    }

    #[test]
    fn exactly_one_window() {
        assert_eq!(segment(&recording(200, 400, 1), 2.0, 0.2).unwrap().len(), 1);
        assert!(segment(&recording(200, 399, 1), 2.0, 0.2).unwrap().is_empty());
    }

    #[test]
    fn no_overlap_tiles_the_recording() {
        assert_eq!(segment(&recording(128, 1280, 1), 2.0, 0.0).unwrap().len(), 5);
    }

    #[test]
    fn consecutive_windows_share_overlap_samples() {
        let eps = segment(&recording(200, 4000, 3), 2.0, 0.2).unwrap();
        let overlap = 40;
        for w in eps.windows(2) {
            for ch in 0..3 {
                assert_eq!(&w[0].channel(ch)[400 - overlap..], &w[1].channel(ch)[..overlap]);
            }
        }
        let expected = ((4000.0 / 200.0 - 2.0) / 1.8f64).floor() as usize + 1;
        assert_eq!(eps.len(), expected);
    }

    #[test]
    fn rejects_bad_window() {
        assert!(segment(&recording(128, 1280, 1), 0.2, 0.2).is_err());
    }

    #[test]
    fn zscore_gives_zero_mean_unit_variance() {
        let names = vec![ChannelName::new("A").unwrap(), ChannelName::new("B").unwrap()];
        let mut samples: Vec<f32> = (0..256).map(|i| 3.0 + (i as f32 * 0.1).sin()).collect();
        samples.extend(std::iter::repeat_n(5.0, 256));
        let mut e = EpochRecord::new("d", "s", 0, 128, names, samples).unwrap();
        e.zscore();
        let ch = e.channel(0);
        let mean: f64 = ch.iter().map(|&v| v as f64).sum::<f64>() / 256.0;
        let var: f64 = ch.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 256.0;
        assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-4);
        assert!(e.channel(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_sets_and_rates_follow_first_appearance() {
        let a = segment(&recording(200, 400, 3), 2.0, 0.0).unwrap();
        let mut b = segment(&recording(128, 256, 2), 2.0, 0.0).unwrap();
        b.iter_mut().for_each(|e| e.dataset_id = "e".into());
        let all: Vec<EpochRecord> = b.iter().chain(&a).cloned().collect();
        let sets = dataset_channels(&all).unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0].0, "e");
        assert_eq!(sets[1].1.len(), 3);
        assert_eq!(sampling_rates(&all), vec![128, 200]);

        let mut mixed = a.clone();
        mixed.push(segment(&recording(200, 400, 2), 2.0, 0.0).unwrap().remove(0));
        assert!(dataset_channels(&mixed).is_err());
    }
}
