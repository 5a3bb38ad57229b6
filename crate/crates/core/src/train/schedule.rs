//! Linear warmup followed by cosine annealing.

/// Learning rate at `step` of a run of `total` steps.
pub fn lr_at(step: usize, total: usize, max_lr: f64, min_lr: f64, warmup_fraction: f64) -> f64 {
    let warmup = (warmup_fraction * total as f64).floor() as usize;
    if step < warmup {
        return max_lr * step as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup);
    if span == 0 {
        return max_lr;
    }
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    min_lr + 0.5 * (max_lr - min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        assert_eq!(lr_at(0, 1000, 3.2e-3, 1.2e-4, 0.1), 0.0);
        assert!((lr_at(100, 1000, 3.2e-3, 1.2e-4, 0.1) - 3.2e-3).abs() < 1e-15);
        assert!((lr_at(1000, 1000, 3.2e-3, 1.2e-4, 0.1) - 1.2e-4).abs() < 1e-15);
    }

    #[test]
    fn continuous_at_warmup_end() {
        let before = lr_at(99, 1000, 3.2e-3, 1.2e-4, 0.1);
        let at = lr_at(100, 1000, 3.2e-3, 1.2e-4, 0.1);
        let linear_next = 3.2e-3 * 100.0 / 100.0;
        assert!((at - linear_next).abs() < 1e-9);
        assert!(at > before);
    }

    #[test]
    fn no_warmup_starts_at_max() {
        assert!((lr_at(0, 10, 1.0, 0.1, 0.0) - 1.0).abs() < 1e-15);
    }
}
