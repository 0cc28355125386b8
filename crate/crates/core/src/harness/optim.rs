use crate::linalg::Matrix;

/// Linear warmup from 0 to the peak rate, then linear decay to 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearWarmup {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LinearWarmup {
    /// Learning rate at 0-based `step`. Equals `peak` at `warmup_steps` and
    /// 0 at `total_steps`.
    pub fn lr(&self, step: usize) -> f64 {
        if step >= self.total_steps {
            return 0.0;
        }
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        let remaining = (self.total_steps - step) as f64;
        self.peak * remaining / (self.total_steps - self.warmup_steps) as f64
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter with its gradient at rate `lr`:
    /// `θ ← θ − lr·(m̂ / (√v̂ + ε) + λ·θ)`.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix], lr: f64) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let it = p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice()));
            for ((theta, &grad), (mi, vi)) in it {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * grad;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * grad * grad;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *theta -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *theta);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = LinearWarmup {
            peak: 0.1,
            warmup_steps: 500,
            total_steps: 2000,
        };
        assert_eq!(s.lr(0), 0.0);
        assert_eq!(s.lr(250), 0.05);
        assert_eq!(s.lr(500), 0.1);
        assert_eq!(s.lr(2000), 0.0);
        assert!(s.lr(1999) > 0.0 && s.lr(1999) < s.lr(1000));
        let no_warmup = LinearWarmup {
            peak: 1.0,
            warmup_steps: 0,
            total_steps: 4,
        };
        assert_eq!(no_warmup.lr(0), 1.0);
        assert_eq!(no_warmup.lr(2), 0.5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.0);
        let mut p = Matrix::filled(1, 2, 1.0);
        let g = Matrix::from_rows(&[[0.5, -2.0]]).unwrap();
        opt.step(&mut [&mut p], &[g], 0.1);
        // bias-corrected first step is lr·sign(g)
        assert!((p.get(0, 0) - 0.9).abs() < 1e-6);
        assert!((p.get(0, 1) - 1.1).abs() < 1e-6);
    }

    #[test]
    fn zero_rate_is_a_no_op() {
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.01);
        let mut p = Matrix::filled(2, 2, 0.3);
        let before = p.clone();
        opt.step(&mut [&mut p], &[Matrix::filled(2, 2, 1.0)], 0.0);
        assert_eq!(p, before);
    }
}
