//! Adam ascent with projection onto a box.

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// One step that increases the objective whose gradient is `grad`,
    /// followed by clamping every entry to `[lo, hi]`.
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64], lo: f64, hi: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, &g)) in params.iter_mut().zip(grad).enumerate() {
            // Minimise -L: the descent gradient is -g.
            let d = -g;
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * d;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * d * d;
            let step = self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps);
            *p = (*p - step).clamp(lo, hi);
        }
    }
}
