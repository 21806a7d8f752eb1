//! NAdam with the momentum-decay schedule used by PyTorch's `NAdam`.

#[derive(Debug, Clone)]
pub(crate) struct Nadam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    momentum_decay: f64,
    step: u32,
    mu_product: f64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Nadam {
    pub fn new(dim: usize, beta1: f64, beta2: f64, eps: f64, momentum_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            momentum_decay,
            step: 0,
            mu_product: 1.0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    fn momentum(&self, t: u32) -> f64 {
        self.beta1 * (1.0 - 0.5 * 0.96f64.powf(f64::from(t) * self.momentum_decay))
    }

    pub fn update(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let t = self.step;
        let mu_t = self.momentum(t);
        let mu_next = self.momentum(t + 1);
        self.mu_product *= mu_t;
        let bias2 = 1.0 - self.beta2.powi(t as i32);
        let w_grad = lr * (1.0 - mu_t) / (1.0 - self.mu_product);
        let w_mom = lr * mu_next / (1.0 - self.mu_product * mu_next);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let denom = (self.v[i] / bias2).sqrt() + self.eps;
            theta[i] -= (w_grad * g + w_mom * self.m[i]) / denom;
        }
    }
}
