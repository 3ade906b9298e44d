use super::params::Scalar;

/// Adam without weight decay.
#[derive(Debug, Clone)]
pub struct Adam<F: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<F>,
    v: Vec<F>,
    t: u32,
}

impl<F: Scalar> Adam<F> {
    pub fn new(n_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![F::zero(); n_params],
            v: vec![F::zero(); n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [F], grads: &[F], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one_b1 = F::from_f64(1.0 - self.beta1);
        let one_b2 = F::from_f64(1.0 - self.beta2);
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = F::from_f64(lr / bc1);
        let inv_sqrt_bc2 = F::from_f64(1.0 / bc2.sqrt());
        let eps = F::from_f64(self.eps);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            *p -= step * *m / ((*v).sqrt() * inv_sqrt_bc2 + eps);
        }
    }
}

/// Linear warmup to `peak`, then cosine decay to `peak * min_ratio`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub min_ratio: f64,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup_fraction: f64, total_steps: usize, min_ratio: f64) -> Self {
        let warmup_steps = (warmup_fraction * total_steps as f64).ceil() as usize;
        Self {
            peak,
            warmup_steps,
            total_steps,
            min_ratio,
        }
    }

    /// Rate for the 0-based `step`.
    pub fn at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let decay_steps = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / decay_steps as f64).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.peak * (self.min_ratio + (1.0 - self.min_ratio) * cosine)
    }
}
