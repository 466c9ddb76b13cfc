//! Regularizer schedules and the iNALU reinitialization rule.

/// Sparsity-regularizer scale for NAU/NMU: 0 until `start`, then a linear
/// ramp reaching `hat` at `end` and staying there.
pub fn lambda_scale(iteration: u64, start: u64, end: u64, hat: f64) -> f64 {
    if end <= start {
        return if iteration >= start { hat } else { 0.0 };
    }
    let t = (iteration as f64 - start as f64) / (end as f64 - start as f64);
    hat * t.clamp(0.0, 1.0)
}

/// L1 scale for the NPU family: starts at `start` and multiplies by `growth`
/// every `step` iterations, capped at `end`.
pub fn beta_scale(iteration: u64, start: f64, end: f64, growth: f64, step: u64) -> f64 {
    let steps = iteration.checked_div(step).unwrap_or(0) as i32;
    (start * growth.powi(steps)).min(end)
}

/// The iNALU sparsity regularizer activates only once training has both run
/// past its warmup floor and brought the recent task loss under 1.
pub fn inalu_reg_active(recent_mean_loss: f64, iteration: u64, min_iteration: u64) -> bool {
    iteration > min_iteration && recent_mean_loss < 1.0
}

#[derive(Clone, Copy, Debug)]
pub struct ReinitConfig {
    /// Check every this many iterations.
    pub period: u64,
    /// No reinitialization before this iteration.
    pub min_iteration: u64,
    /// The check waits until the loss history holds this many entries.
    pub capacity: usize,
}

/// True when a stalled run should be reinitialized: at a check point past the
/// iteration floor, with a full history whose older half does not improve on
/// the newer half (within one standard deviation) while the newer half is
/// still above 1.
pub fn should_reinit(history: &[f64], iteration: u64, cfg: &ReinitConfig) -> bool {
    if cfg.period == 0 || !iteration.is_multiple_of(cfg.period) || iteration <= cfg.min_iteration {
        return false;
    }
    if history.len() < cfg.capacity || history.len() < 2 {
        return false;
    }
    let mid = history.len() / 2;
    let older = mean(&history[..mid]);
    let newer = mean(&history[mid..]);
    let newer_std = std(&history[mid..]);
    older <= newer + newer_std && newer > 1.0
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_piecewise_shape() {
        let hat = 0.01;
        assert_eq!(lambda_scale(0, 20_000, 35_000, hat), 0.0);
        assert_eq!(lambda_scale(20_000, 20_000, 35_000, hat), 0.0);
        assert_eq!(lambda_scale(35_000, 20_000, 35_000, hat), hat);
        assert_eq!(lambda_scale(50_000, 20_000, 35_000, hat), hat);
        let mid = lambda_scale(27_500, 20_000, 35_000, hat);
        assert!((mid - hat / 2.0).abs() < 1e-12);
    }

    #[test]
    fn beta_steps_and_ceiling() {
        let close = |a: f64, b: f64| (a - b).abs() / b < 1e-12;
        assert_eq!(beta_scale(0, 1e-7, 1e-5, 10.0, 10_000), 1e-7);
        assert_eq!(beta_scale(9_999, 1e-7, 1e-5, 10.0, 10_000), 1e-7);
        assert!(close(beta_scale(10_000, 1e-7, 1e-5, 10.0, 10_000), 1e-6));
        assert!(close(beta_scale(20_000, 1e-7, 1e-5, 10.0, 10_000), 1e-5));
        assert_eq!(beta_scale(90_000, 1e-7, 1e-5, 10.0, 10_000), 1e-5);
    }

    #[test]
    fn reinit_respects_iteration_floor() {
        let cfg = ReinitConfig { period: 10, min_iteration: 10_000, capacity: 4 };
        let flat = vec![10.0; 4];
        assert!(!should_reinit(&flat, 5_000, &cfg));
        assert!(should_reinit(&flat, 10_010, &cfg));
    }

    #[test]
    fn reinit_skips_improving_or_converged_runs() {
        let cfg = ReinitConfig { period: 10, min_iteration: 10_000, capacity: 4 };
        // Strongly improving history: old mean far above new mean + std.
        let improving = vec![100.0, 90.0, 1.5, 1.4];
        assert!(!should_reinit(&improving, 10_010, &cfg));
        // Converged: newer half below the loss floor of 1.
        let converged = vec![0.5, 0.4, 0.1, 0.1];
        assert!(!should_reinit(&converged, 10_010, &cfg));
    }

    #[test]
    fn reinit_waits_for_full_history() {
        let cfg = ReinitConfig { period: 10, min_iteration: 10_000, capacity: 8 };
        let short = vec![10.0; 4];
        assert!(!should_reinit(&short, 10_010, &cfg));
    }

    #[test]
    fn reinit_only_at_check_points() {
        let cfg = ReinitConfig { period: 10, min_iteration: 10_000, capacity: 4 };
        let flat = vec![10.0; 4];
        assert!(!should_reinit(&flat, 10_011, &cfg));
    }
}
