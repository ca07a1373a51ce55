use std::f64::consts::PI;

/// Cosine annealing with warm restarts every `period` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineWarmRestarts {
    pub base_lr: f64,
    pub min_lr: f64,
    pub period: usize,
}

impl CosineWarmRestarts {
    /// Restart cadence of `restart_epochs` epochs of `steps_per_epoch` steps.
    pub fn new(base_lr: f64, restart_epochs: usize, steps_per_epoch: usize) -> Self {
        Self {
            base_lr,
            min_lr: 0.0,
            period: (restart_epochs * steps_per_epoch).max(1),
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        let phase = (step % self.period) as f64 / self.period as f64;
        self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + (PI * phase).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_at_base_and_restarts() {
        let s = CosineWarmRestarts::new(0.01, 2, 5);
        assert_eq!(s.lr(0), 0.01);
        assert_eq!(s.lr(10), 0.01);
        assert!((s.lr(5) - 0.005).abs() < 1e-15);
        assert!(s.lr(9) < s.lr(8));
    }
}
