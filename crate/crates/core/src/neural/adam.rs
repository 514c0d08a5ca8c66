//! Adam optimizer with bias correction, holding first/second moment state
//! in model-shaped mirrors.

use super::model::Model;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Model,
    v: Model,
}

impl Adam {
    pub fn new(model: &Model, lr: f64) -> Adam {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: model.zeros_like(), v: model.zeros_like() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update: params -= lr * mhat / (sqrt(vhat) + eps).
    pub fn step(&mut self, params: &mut Model, grads: &Model) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let g_tensors = grads.tensors();
        let mut p_tensors = params.tensors_mut();
        let mut m_tensors = self.m.tensors_mut();
        let mut v_tensors = self.v.tensors_mut();
        assert_eq!(p_tensors.len(), g_tensors.len());
        for i in 0..p_tensors.len() {
            debug_assert_eq!(p_tensors[i].0, g_tensors[i].0);
            let p = &mut p_tensors[i].1.data;
            let g = &g_tensors[i].1.data;
            let m = &mut m_tensors[i].1.data;
            let v = &mut v_tensors[i].1.data;
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
