use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Learning-rate schedule, evaluated per optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// Half-cosine from `lr_max` at step 0 to `lr_min` at step `period`;
    /// stays at `lr_min` afterwards.
    Cosine { lr_max: f64, lr_min: f64, period: u64 },
    /// Cosine cycles that restart at `lr_max`; each cycle is `multiplier`
    /// times longer than the previous one.
    CosineWarmRestarts { lr_max: f64, lr_min: f64, period: u64, multiplier: f64 },
}

fn cosine(lr_max: f64, lr_min: f64, t: f64, period: f64) -> f64 {
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * t / period).cos())
}

impl LrSchedule {
    pub fn lr_at(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Cosine { lr_max, lr_min, period } => {
                let period = period.max(1);
                cosine(lr_max, lr_min, step.min(period) as f64, period as f64)
            }
            LrSchedule::CosineWarmRestarts { lr_max, lr_min, period, multiplier } => {
                let (t_cur, t_i) = restart_position(step, period.max(1), multiplier.max(1.0));
                cosine(lr_max, lr_min, t_cur as f64, t_i as f64)
            }
        }
    }

    pub fn lr_max(&self) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Cosine { lr_max, .. } | LrSchedule::CosineWarmRestarts { lr_max, .. } => lr_max,
        }
    }

    pub fn lr_min(&self) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Cosine { lr_min, .. } | LrSchedule::CosineWarmRestarts { lr_min, .. } => lr_min,
        }
    }
}

/// Position within the current cycle and that cycle's length.
fn restart_position(step: u64, period: u64, multiplier: f64) -> (u64, u64) {
    if multiplier == 1.0 {
        return (step % period, period);
    }
    let mut start = 0u64;
    let mut len = period;
    let mut exact = period as f64;
    while step >= start + len {
        start += len;
        exact *= multiplier;
        len = (exact.round() as u64).max(1);
    }
    (step - start, len)
}
