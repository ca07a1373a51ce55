//! First-order optimisers over flat parameter lists.

use crate::Tensor;

/// How weight decay enters the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightDecay {
    None,
    /// Added to the gradient before the moment estimates (classic Adam).
    Coupled(f64),
    /// Applied directly to the parameters (AdamW).
    Decoupled(f64),
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: WeightDecay,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(weight_decay: WeightDecay) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every `params[i]` using `grads[i]` (absent = zero gradient).
    pub fn step(&mut self, lr: f64, params: &mut [&mut Tensor], grads: &[Option<&Tensor>]) {
        assert_eq!(params.len(), grads.len(), "one gradient slot per parameter");
        if self.first.len() != params.len() {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let g = grads[i].map(Tensor::data);
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                let mut gk = g.map_or(0.0, |g| g[k]);
                match self.weight_decay {
                    WeightDecay::Coupled(wd) => gk += wd * *w,
                    WeightDecay::Decoupled(wd) => *w -= lr * wd * *w,
                    WeightDecay::None => {}
                }
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                *w -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
    }
}
