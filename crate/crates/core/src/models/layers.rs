//! Parameter initialization and batchnorm bookkeeping shared by the models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sacm_autodiff::{
    BatchNormMode, BatchNormStats, Element, Graph, ParamId, ParamStore, Tensor, Var,
};

use crate::error::Result;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Uniform(±1/√fan_in) initializer over one seeded stream.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform<T: Element>(
        &mut self,
        store: &mut ParamStore<T>,
        name: &str,
        shape: &[usize],
        fan_in: usize,
    ) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let t = Tensor::from_fn(shape, |_| T::of(self.rng.random_range(-bound..bound)));
        store.add(name, t, true)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Bn {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

impl Bn {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, c: usize) -> Self {
        Bn {
            gamma: store.add(format!("{name}.weight"), Tensor::full(&[c], T::one()), true),
            beta: store.add(format!("{name}.bias"), Tensor::zeros(&[c]), true),
            mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[c]), false),
            var: store.add(
                format!("{name}.running_var"),
                Tensor::full(&[c], T::one()),
                false,
            ),
        }
    }

    /// Batch statistics in training graphs, running statistics otherwise.
    pub fn apply<T: Element>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        updates: &mut Vec<(Bn, BatchNormStats)>,
    ) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let mode = if g.mode().is_train() {
            BatchNormMode::Batch
        } else {
            BatchNormMode::Running {
                mean: store.value(self.mean).data(),
                var: store.value(self.var).data(),
            }
        };
        let (y, stats) = g.batch_norm(x, gamma, beta, mode, BN_EPS)?;
        if let Some(s) = stats {
            updates.push((*self, s));
        }
        Ok(y)
    }
}

/// Exponential running-average update from one training batch.
pub fn apply_bn_updates<T: Element>(store: &mut ParamStore<T>, updates: &[(Bn, BatchNormStats)]) {
    for (bn, s) in updates {
        for (id, stat) in [(bn.mean, &s.mean), (bn.var, &s.var)] {
            for (r, &v) in store
                .entry_mut(id)
                .value
                .data_mut()
                .iter_mut()
                .zip(stat.iter())
            {
                *r = T::of((1.0 - BN_MOMENTUM) * r.f64() + BN_MOMENTUM * v);
            }
        }
    }
}
