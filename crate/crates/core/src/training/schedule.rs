//! One-cycle learning-rate schedule with cosine phases.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub max_lr: f64,
    pub total_steps: usize,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl ScheduleConfig {
    pub fn new(max_lr: f64, total_steps: usize) -> Self {
        Self {
            max_lr,
            total_steps,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("max_lr must be positive, got {}", self.max_lr)));
        }
        if !(self.pct_start > 0.0 && self.pct_start < 1.0) {
            return Err(Error::InvalidConfig(format!("pct_start must lie in (0, 1), got {}", self.pct_start)));
        }
        if !(self.div_factor > 0.0 && self.final_div_factor > 0.0) {
            return Err(Error::InvalidConfig("division factors must be positive".into()));
        }
        Ok(())
    }

    pub fn initial_lr(&self) -> f64 {
        self.max_lr / self.div_factor
    }

    pub fn final_lr(&self) -> f64 {
        self.max_lr / self.final_div_factor
    }

    /// Step at which the peak is reached.
    pub fn peak_step(&self) -> f64 {
        self.pct_start * self.total_steps as f64
    }
}

/// Blend that hits `from` at `pct = 0` and `to` at `pct = 1` exactly.
fn cosine(from: f64, to: f64, pct: f64) -> f64 {
    let w = 0.5 * (1.0 + (PI * pct).cos());
    w * from + (1.0 - w) * to
}

/// Learning rate at `step` in `[0, total_steps]`.
///
/// Rises from `max_lr/div_factor` to `max_lr` over the first
/// `pct_start·total_steps` steps, then falls to `max_lr/final_div_factor`,
/// both along half cosines.
pub fn onecycle_lr(cfg: &ScheduleConfig, step: usize) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::StepOutOfRange {
            step,
            total: cfg.total_steps,
        });
    }
    if cfg.total_steps == 0 {
        return Ok(cfg.initial_lr());
    }
    let s = step as f64;
    let peak = cfg.peak_step();
    Ok(if s <= peak {
        cosine(cfg.initial_lr(), cfg.max_lr, s / peak)
    } else {
        cosine(cfg.max_lr, cfg.final_lr(), (s - peak) / (cfg.total_steps as f64 - peak))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_peak() {
        let cfg = ScheduleConfig::new(1e-3, 1000);
        assert_eq!(onecycle_lr(&cfg, 0).unwrap(), 1e-3 / 25.0);
        assert_eq!(onecycle_lr(&cfg, 300).unwrap(), 1e-3);
        assert_eq!(onecycle_lr(&cfg, 1000).unwrap(), 1e-3 / 1e4);
        assert!(matches!(onecycle_lr(&cfg, 1001), Err(Error::StepOutOfRange { step: 1001, total: 1000 })));
    }

    #[test]
    fn steps_are_bounded_by_the_shortest_phase() {
        for total in [10usize, 37, 250] {
            let cfg = ScheduleConfig::new(2e-3, total);
            let shortest = cfg.peak_step().min(total as f64 - cfg.peak_step());
            let bound = 2.0 * cfg.max_lr / shortest;
            for s in 0..total {
                let d = (onecycle_lr(&cfg, s + 1).unwrap() - onecycle_lr(&cfg, s).unwrap()).abs();
                assert!(d <= bound, "total {total} step {s}: {d} > {bound}");
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ScheduleConfig { pct_start: 1.0, ..ScheduleConfig::new(1e-3, 10) }.validate().is_err());
        assert!(ScheduleConfig::new(0.0, 10).validate().is_err());
    }
}
