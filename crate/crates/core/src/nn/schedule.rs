/// Reduce-on-plateau learning-rate schedule driven by the monitored test loss.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    best: f64,
    stale: usize,
    patience: usize,
    factor: f64,
    min_lr: f64,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize, factor: f64, min_lr: f64) -> Self {
        assert!(factor > 0.0 && factor < 1.0, "plateau factor must lie in (0, 1)");
        PlateauScheduler {
            lr,
            best: f64::INFINITY,
            stale: 0,
            patience: patience.max(1),
            factor,
            min_lr,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Feed one observed loss; returns the (possibly reduced) learning rate.
    pub fn update(&mut self, loss: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.stale = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decreasing_losses_keep_rate() {
        let mut s = PlateauScheduler::new(1e-4, 2, 0.5, 1e-7);
        for i in 0..50 {
            assert_eq!(s.update(1.0 / (i + 1) as f64), 1e-4);
        }
    }

    #[test]
    fn flat_losses_halve_after_patience() {
        let mut s = PlateauScheduler::new(1e-4, 2, 0.5, 1e-7);
        assert_eq!(s.update(1.0), 1e-4);
        assert_eq!(s.update(1.0), 1e-4);
        assert_eq!(s.update(1.0), 5e-5);
    }

    #[test]
    fn rate_is_clamped_at_minimum() {
        let mut s = PlateauScheduler::new(1e-7, 1, 0.5, 1e-7);
        s.update(1.0);
        for _ in 0..5 {
            assert_eq!(s.update(2.0), 1e-7);
        }
    }
}
