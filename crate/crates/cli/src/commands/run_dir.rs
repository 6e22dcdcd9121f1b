//! Reloads a finished fine-tuning run.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use eegfm_core::checkpoint::load_model;
use eegfm_core::classifier::PreparedEpoch;
use eegfm_core::dataio::{load_manifest_epochs, split_within_subject, Split};
use eegfm_core::{CheckpointSet, EpochRecord};

use super::finetune::{group_by_subject, n_classes, subject_dir, FinetuneRun, SubjectResult};
use crate::config::read_json;
use crate::UsageError;

pub struct LoadedRun {
    pub config: FinetuneRun,
    pub epochs: Vec<EpochRecord>,
    pub n_classes: usize,
    pub subjects: BTreeMap<String, Vec<usize>>,
}

pub struct LoadedSubject {
    pub result: SubjectResult,
    pub checkpoints: CheckpointSet<f32>,
    /// Every epoch of the subject, prepared for the models.
    pub prepared: Vec<PreparedEpoch<f32>>,
    pub split: Split,
}

impl LoadedRun {
    pub fn open(run: &Path) -> Result<Self> {
        let config: FinetuneRun = read_json(&run.join("config.json"))?;
        let manifest = config
            .manifest
            .as_ref()
            .ok_or_else(|| UsageError(format!("{} records no manifest", run.display())))?;
        let epochs =
            load_manifest_epochs(manifest).with_context(|| format!("loading manifest {}", manifest.display()))?;
        let n_classes = n_classes(&epochs);
        let mut subjects = group_by_subject(&epochs);
        subjects.retain(|s, _| subject_dir(run, s).join("results.json").exists());
        if subjects.is_empty() {
            return Err(UsageError(format!("{} holds no subject results", run.display())).into());
        }
        Ok(Self {
            config,
            epochs,
            n_classes,
            subjects,
        })
    }

    pub fn subject(&self, run: &Path, subject: &str) -> Result<LoadedSubject> {
        let idx = self
            .subjects
            .get(subject)
            .ok_or_else(|| UsageError(format!("subject {subject:?} has no results in {}", run.display())))?;
        let dir = subject_dir(run, subject);
        let result: SubjectResult = read_json(&dir.join("results.json"))?;
        let mut models = Vec::with_capacity(result.checkpoints.len());
        for c in &result.checkpoints {
            let file = c
                .file
                .as_ref()
                .ok_or_else(|| UsageError(format!("{subject}: checkpoints were not saved")))?;
            models.push((c.val_acc, c.epoch, load_model::<f32>(&dir.join(file))?));
        }
        let checkpoints = CheckpointSet::from_models(models, self.config.finetune.top_k);
        let records: Vec<EpochRecord> = idx.iter().map(|&i| self.epochs[i].clone()).collect();
        let model = &checkpoints
            .entries()
            .first()
            .ok_or(eegfm_core::Error::EmptyEnsemble)?
            .model;
        let prepared = records
            .iter()
            .map(|e| model.prepare(e))
            .collect::<eegfm_core::Result<Vec<_>>>()?;
        let ft = &self.config.finetune;
        let split = split_within_subject(&records, ft.train_frac, ft.val_frac, ft.seed)?;
        Ok(LoadedSubject {
            result,
            checkpoints,
            prepared,
            split,
        })
    }
}
