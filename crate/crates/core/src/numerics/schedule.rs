use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    CosineAnnealing,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub total_steps: usize,
    pub min_lr: f64,
}

impl ScheduleSpec {
    pub fn cosine(total_steps: usize) -> Self {
        Self {
            kind: ScheduleKind::CosineAnnealing,
            total_steps,
            min_lr: 0.0,
        }
    }

    pub fn constant(total_steps: usize) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            total_steps,
            min_lr: 0.0,
        }
    }

    pub fn lr_at(&self, step: usize, base_lr: f64) -> Result<f64> {
        match self.kind {
            ScheduleKind::CosineAnnealing => cosine_lr(step, base_lr, self),
            ScheduleKind::Constant => {
                check_range(step, self)?;
                Ok(base_lr)
            }
        }
    }
}

fn check_range(step: usize, spec: &ScheduleSpec) -> Result<()> {
    if spec.total_steps == 0 || spec.min_lr < 0.0 {
        return Err(Error::InvalidArgument(format!("invalid schedule {spec:?}")));
    }
    if step > spec.total_steps {
        return Err(Error::InvalidArgument(format!(
            "schedule step {step} outside [0, {}]",
            spec.total_steps
        )));
    }
    Ok(())
}

/// `min_lr + (base_lr - min_lr) * (1 + cos(pi * step / total)) / 2`.
pub fn cosine_lr(step: usize, base_lr: f64, spec: &ScheduleSpec) -> Result<f64> {
    check_range(step, spec)?;
    let frac = step as f64 / spec.total_steps as f64;
    Ok(spec.min_lr + 0.5 * (base_lr - spec.min_lr) * (1.0 + (std::f64::consts::PI * frac).cos()))
}
