use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning-rate policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    /// Halve `base_lr` every `step_size` iterations.
    Step { base_lr: f64, step_size: usize },
    /// `base_lr · (1 − iter/max_iter)^power`.
    Poly {
        base_lr: f64,
        power: f64,
        max_iter: usize,
    },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LrSchedule::Step { base_lr, step_size } => {
                if !(base_lr > 0.0 && base_lr.is_finite()) {
                    return Err(Error::InvalidInput(
                        "schedule.base_lr must be positive".into(),
                    ));
                }
                if step_size == 0 {
                    return Err(Error::InvalidInput(
                        "schedule.step_size must be at least 1".into(),
                    ));
                }
            }
            LrSchedule::Poly {
                base_lr,
                power,
                max_iter,
            } => {
                if !(base_lr > 0.0 && base_lr.is_finite()) {
                    return Err(Error::InvalidInput(
                        "schedule.base_lr must be positive".into(),
                    ));
                }
                if !(power > 0.0 && power.is_finite()) {
                    return Err(Error::InvalidInput(
                        "schedule.power must be positive".into(),
                    ));
                }
                if max_iter == 0 {
                    return Err(Error::InvalidInput(
                        "schedule.max_iter must be at least 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn base_lr(&self) -> f64 {
        match *self {
            LrSchedule::Step { base_lr, .. } | LrSchedule::Poly { base_lr, .. } => base_lr,
        }
    }
}

/// Learning rate at `iter`. Poly schedules stay at zero past `max_iter`.
pub fn lr_at(schedule: &LrSchedule, iter: usize) -> f64 {
    match *schedule {
        LrSchedule::Step { base_lr, step_size } => {
            let halvings = (iter / step_size).min(i32::MAX as usize) as i32;
            base_lr * 0.5f64.powi(halvings)
        }
        LrSchedule::Poly {
            base_lr,
            power,
            max_iter,
        } => {
            if iter >= max_iter {
                return 0.0;
            }
            base_lr * (1.0 - iter as f64 / max_iter as f64).powf(power)
        }
    }
}
