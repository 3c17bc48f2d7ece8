use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::TrainingConfig;

/// Granularity of the cosine phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Annealing {
    #[default]
    PerStep,
    PerEpoch,
}

/// Number of optimizer steps spent in the linear warm-up.
pub fn warmup_steps(total_steps: usize, cfg: &TrainingConfig) -> usize {
    if cfg.epochs == 0 {
        return 0;
    }
    let w = (total_steps as f64 * cfg.warmup_epochs as f64 / cfg.epochs as f64).round() as usize;
    w.min(total_steps.saturating_sub(1))
}

fn cosine(progress: f64, cfg: &TrainingConfig) -> f64 {
    cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (PI * progress.clamp(0.0, 1.0)).cos())
}

/// Learning rate for optimizer step `step` of `total_steps`.
///
/// Warm-up ramps linearly from `warmup_factor * lr_max` at step 0 to
/// `lr_max` at the first post-warm-up step; cosine annealing then decays to
/// `lr_min` at the final step. Steps past the end return `lr_min`.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainingConfig) -> f64 {
    if let Some(lr) = cfg.constant_lr {
        return lr;
    }
    if total_steps == 0 {
        return cfg.lr_max;
    }
    let step = step.min(total_steps - 1);
    let warm = warmup_steps(total_steps, cfg);
    if step < warm {
        let frac = step as f64 / warm as f64;
        return cfg.lr_max * (cfg.warmup_factor + (1.0 - cfg.warmup_factor) * frac);
    }
    let progress = match cfg.annealing {
        Annealing::PerStep => {
            let span = total_steps - 1 - warm;
            if span == 0 {
                1.0
            } else {
                (step - warm) as f64 / span as f64
            }
        }
        Annealing::PerEpoch => {
            let per_epoch = total_steps.div_ceil(cfg.epochs.max(1)).max(1);
            let epoch = step / per_epoch;
            let last = (total_steps - 1) / per_epoch;
            let first = warm.div_ceil(per_epoch);
            if last <= first {
                1.0
            } else {
                epoch.saturating_sub(first) as f64 / (last - first) as f64
            }
        }
    };
    cosine(progress, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_cfg() -> TrainingConfig {
        TrainingConfig::default()
    }

    #[test]
    fn endpoints() {
        let cfg = paper_cfg();
        let total = 20 * 32;
        let warm = warmup_steps(total, &cfg);
        assert_eq!(warm, 64);
        assert!((lr_at(0, total, &cfg) - 2e-4).abs() <= 1e-12);
        assert!((lr_at(warm, total, &cfg) - 1e-3).abs() <= 1e-12);
        assert!((lr_at(total - 1, total, &cfg) - 3.6e-4).abs() <= 1e-12);
    }

    #[test]
    fn continuous_at_boundary_and_decreasing_after() {
        let cfg = paper_cfg();
        let total = 1000;
        let warm = warmup_steps(total, &cfg);
        let before = lr_at(warm - 1, total, &cfg);
        let at = lr_at(warm, total, &cfg);
        assert!((at - before).abs() < 1e-3 / warm as f64 + 1e-15);
        let mut prev = at;
        for s in warm + 1..total {
            let lr = lr_at(s, total, &cfg);
            assert!(lr <= prev + 1e-18, "step {s}");
            prev = lr;
        }
        for s in 1..warm {
            assert!(lr_at(s, total, &cfg) > lr_at(s - 1, total, &cfg));
        }
    }

    #[test]
    fn per_epoch_endpoints() {
        let cfg = TrainingConfig {
            annealing: Annealing::PerEpoch,
            ..paper_cfg()
        };
        let total = 20 * 10;
        assert!((lr_at(0, total, &cfg) - 2e-4).abs() <= 1e-12);
        assert!((lr_at(20, total, &cfg) - 1e-3).abs() <= 1e-12);
        assert!((lr_at(total - 1, total, &cfg) - 3.6e-4).abs() <= 1e-12);
        // constant within an epoch
        assert_eq!(lr_at(50, total, &cfg), lr_at(59, total, &cfg));
    }

    #[test]
    fn constant_override() {
        let cfg = TrainingConfig {
            constant_lr: Some(0.0),
            ..paper_cfg()
        };
        assert_eq!(lr_at(3, 10, &cfg), 0.0);
    }
}
