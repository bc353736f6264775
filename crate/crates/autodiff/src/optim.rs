use crate::element::Element;
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Classic L2 penalty folded into the gradient: `g += wd · θ`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One bias-corrected Adam update of a single buffer; `t` is the 1-based step.
pub fn adam_step<T: Element>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    cfg: &AdamConfig,
) {
    assert!(t >= 1, "adam step counter is 1-based");
    assert!(param.len() == grad.len() && m.len() == grad.len() && v.len() == grad.len());
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.len() {
        let theta = param[i].f64();
        let g = grad[i].f64() + cfg.weight_decay * theta;
        let mi = cfg.beta1 * m[i].f64() + (1.0 - cfg.beta1) * g;
        let vi = cfg.beta2 * v[i].f64() + (1.0 - cfg.beta2) * g * g;
        m[i] = T::of(mi);
        v[i] = T::of(vi);
        let mhat = mi / bc1;
        let vhat = vi / bc2;
        param[i] = T::of(theta - cfg.lr * mhat / (vhat.sqrt() + cfg.eps));
    }
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Update every trainable entry from its accumulated gradient. Returns the
    /// ids that were updated.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Vec<ParamId> {
        if self.m.len() != store.len() {
            self.m = store
                .entries()
                .iter()
                .map(|e| vec![T::zero(); e.value.numel()])
                .collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let ids: Vec<ParamId> = store.ids().collect();
        let mut touched = Vec::new();
        for id in ids {
            let e = store.entry_mut(id);
            if !e.trainable {
                continue;
            }
            let i = id.index();
            adam_step(
                e.value.data_mut(),
                &e.grad,
                &mut self.m[i],
                &mut self.v[i],
                self.step,
                &self.cfg,
            );
            touched.push(id);
        }
        touched
    }
}
