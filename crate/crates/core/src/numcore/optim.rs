use super::array::Array;
use super::params::{ParamId, ParamStore};
use super::tape::Gradients;

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|(_, _, a)| Array::zeros(a.shape())).collect(),
            v: params.iter().map(|(_, _, a)| Array::zeros(a.shape())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Array], &[Array]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Array>, v: Vec<Array>) {
        self.step = step;
        self.m = m;
        self.v = v;
    }

    /// One update. Parameters without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        let owned: Vec<(ParamId, Array)> = grads
            .params()
            .into_iter()
            .map(|(id, g)| (id, g.clone()))
            .collect();
        self.step_with(params, &owned);
    }

    pub fn step_with(&mut self, params: &mut ParamStore, grads: &[(ParamId, Array)]) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut lookup: Vec<Option<&Array>> = vec![None; params.len()];
        for (id, g) in grads {
            lookup[*id] = Some(g);
        }
        for id in params.ids() {
            let m = self.m[id].data_mut();
            let v = self.v[id].data_mut();
            let p = params.get_mut(id).data_mut();
            for j in 0..p.len() {
                let g = lookup[id].map_or(0.0, |g| g.data()[j]);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
