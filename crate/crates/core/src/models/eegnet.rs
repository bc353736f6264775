//! Compact temporal → depthwise-spatial → separable CNN for two-class
//! speech / non-speech detection.

use sacm_autodiff::{BatchNormStats, Conv2dSpec, Element, Graph, ParamId, ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::layers::{apply_bn_updates, Bn, Init};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EegNetConfig {
    pub f1: usize,
    pub d: usize,
    pub f2: usize,
    pub dropout: f64,
    pub n_channels: usize,
    pub n_samples: usize,
    pub n_classes: usize,
    pub kernel_len: usize,
    pub separable_kernel: usize,
    pub pool1: usize,
    pub pool2: usize,
}

impl EegNetConfig {
    /// Standard proportions: temporal kernel of half a second, pooling 4 then 8.
    pub fn new(n_channels: usize, n_samples: usize, rate: f64) -> Self {
        EegNetConfig {
            f1: 16,
            d: 4,
            f2: 64,
            dropout: 0.5,
            n_channels,
            n_samples,
            n_classes: 2,
            kernel_len: ((rate / 2.0).round() as usize).max(1),
            separable_kernel: 16,
            pool1: 4,
            pool2: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.f1 == 0 || self.d == 0 || self.f2 == 0 || self.n_classes < 2 {
            return bad(format!("degenerate widths in {self:?}"));
        }
        if self.f2 != self.f1 * self.d {
            return bad(format!(
                "F2 = {} must equal F1·D = {}",
                self.f2,
                self.f1 * self.d
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.n_channels == 0 {
            return bad("EEGNet needs at least one channel".into());
        }
        if self.n_samples < self.kernel_len || self.n_samples < self.pool1 * self.pool2 {
            return bad(format!(
                "{} samples is below the architectural minimum (kernel {}, pooling {}×{})",
                self.n_samples, self.kernel_len, self.pool1, self.pool2
            ));
        }
        Ok(())
    }

    pub fn flat_features(&self) -> usize {
        self.f2 * (self.n_samples / self.pool1 / self.pool2)
    }

    /// Closed-form trainable parameter count.
    pub fn n_trainable(&self) -> usize {
        let fd = self.f1 * self.d;
        self.f1 * self.kernel_len
            + 2 * self.f1
            + fd * self.n_channels
            + 2 * fd
            + fd * self.separable_kernel
            + self.f2 * fd
            + 2 * self.f2
            + self.n_classes * self.flat_features()
            + self.n_classes
    }
}

fn same_pad(k: usize) -> (usize, usize) {
    let left = (k - 1) / 2;
    (left, k - 1 - left)
}

#[derive(Clone, Debug)]
pub struct EegNet<T: Element = f32> {
    pub cfg: EegNetConfig,
    pub store: ParamStore<T>,
    temporal: ParamId,
    bn1: Bn,
    spatial: ParamId,
    bn2: Bn,
    sep_depth: ParamId,
    sep_point: ParamId,
    bn3: Bn,
    fc_w: ParamId,
    fc_b: ParamId,
}

impl<T: Element> EegNet<T> {
    pub fn new(cfg: EegNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut s = ParamStore::new();
        let mut init = Init::new(seed);
        let fd = cfg.f1 * cfg.d;
        let temporal = init.uniform(
            &mut s,
            "temporal.weight",
            &[cfg.f1, 1, 1, cfg.kernel_len],
            cfg.kernel_len,
        );
        let bn1 = Bn::new(&mut s, "bn1", cfg.f1);
        let spatial = init.uniform(
            &mut s,
            "spatial.weight",
            &[fd, 1, cfg.n_channels, 1],
            cfg.n_channels,
        );
        let bn2 = Bn::new(&mut s, "bn2", fd);
        let sep_depth = init.uniform(
            &mut s,
            "separable.depth.weight",
            &[fd, 1, 1, cfg.separable_kernel],
            cfg.separable_kernel,
        );
        let sep_point = init.uniform(&mut s, "separable.point.weight", &[cfg.f2, fd, 1, 1], fd);
        let bn3 = Bn::new(&mut s, "bn3", cfg.f2);
        let flat = cfg.flat_features();
        let fc_w = init.uniform(&mut s, "classifier.weight", &[cfg.n_classes, flat], flat);
        let fc_b = init.uniform(&mut s, "classifier.bias", &[cfg.n_classes], flat);
        Ok(EegNet {
            cfg,
            store: s,
            temporal,
            bn1,
            spatial,
            bn2,
            sep_depth,
            sep_point,
            bn3,
            fc_w,
            fc_b,
        })
    }

    /// `x: (N, C, T)` → logits `(N, n_classes)`. Batchnorm statistics from a
    /// training graph are returned for [`EegNet::update_running_stats`].
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<(Var, Vec<(Bn, BatchNormStats)>)> {
        let c = &self.cfg;
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != c.n_channels || shape[2] != c.n_samples {
            return Err(Error::InvalidArgument(format!(
                "EEGNet expects [N, {}, {}], got {shape:?}",
                c.n_channels, c.n_samples
            )));
        }
        let fd = c.f1 * c.d;
        let mut upd = Vec::new();
        let x = g.reshape(x, &[shape[0], 1, c.n_channels, c.n_samples])?;

        let (l, r) = same_pad(c.kernel_len);
        let w = g.param(&self.store, self.temporal);
        let h = g.conv2d(
            x,
            w,
            None,
            Conv2dSpec {
                padding: (0, 0, l, r),
                groups: 1,
            },
        )?;
        let h = self.bn1.apply(g, &self.store, h, &mut upd)?;

        let w = g.param(&self.store, self.spatial);
        let h = g.conv2d(
            h,
            w,
            None,
            Conv2dSpec {
                padding: (0, 0, 0, 0),
                groups: c.f1,
            },
        )?;
        let h = self.bn2.apply(g, &self.store, h, &mut upd)?;
        let h = g.elu(h, 1.0);
        let h = g.avg_pool2d(h, 1, c.pool1)?;
        let h = g.dropout(h, c.dropout, 0)?;

        let (l, r) = same_pad(c.separable_kernel);
        let w = g.param(&self.store, self.sep_depth);
        let h = g.conv2d(
            h,
            w,
            None,
            Conv2dSpec {
                padding: (0, 0, l, r),
                groups: fd,
            },
        )?;
        let w = g.param(&self.store, self.sep_point);
        let h = g.conv2d(h, w, None, Conv2dSpec::default())?;
        let h = self.bn3.apply(g, &self.store, h, &mut upd)?;
        let h = g.elu(h, 1.0);
        let h = g.avg_pool2d(h, 1, c.pool2)?;
        let h = g.dropout(h, c.dropout, 1)?;

        let h = g.flatten(h)?;
        let w = g.param(&self.store, self.fc_w);
        let b = g.param(&self.store, self.fc_b);
        Ok((g.linear(h, w, Some(b))?, upd))
    }

    pub fn update_running_stats(&mut self, updates: &[(Bn, BatchNormStats)]) {
        apply_bn_updates(&mut self.store, updates);
    }

    /// Convenience: logits for a batch given as one flat `(N, C, T)` tensor.
    pub fn predict(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(sacm_autodiff::Mode::Eval);
        let v = g.constant(x);
        let (out, _) = self.forward(&mut g, v)?;
        Ok(g.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sacm_autodiff::{rel_err, Mode};

    fn batch(n: usize, c: usize, t: usize, seed: u64) -> Tensor<f32> {
        let mut s = seed;
        Tensor::from_fn(&[n, c, t], |_| {
            s = crate::util::mix64(s);
            ((s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) as f32
        })
    }

    #[test]
    fn output_shape_and_eval_determinism() {
        let net = EegNet::<f32>::new(EegNetConfig::new(8, 100, 200.0), 1).unwrap();
        let x = batch(32, 8, 100, 3);
        let a = net.predict(x.clone()).unwrap();
        assert_eq!(a.shape(), &[32, 2]);
        assert!(a.is_finite());
        assert_eq!(a.data(), net.predict(x).unwrap().data());
    }

    #[test]
    fn trainable_count_matches_hand_count() {
        let cfg = EegNetConfig::new(8, 100, 200.0);
        assert_eq!(cfg.kernel_len, 100);
        // temporal 16·100, bn1 32, spatial 64·8, bn2 128, depthwise 64·16,
        // pointwise 64·64, bn3 128, classifier 2·(64·3) + 2
        let hand = 1600 + 32 + 512 + 128 + 1024 + 4096 + 128 + 384 + 2;
        assert_eq!(cfg.n_trainable(), hand);
        assert_eq!(
            EegNet::<f32>::new(cfg, 0).unwrap().store.n_trainable(),
            hand
        );
    }

    #[test]
    fn rejects_short_windows_and_bad_widths() {
        assert!(EegNet::<f32>::new(EegNetConfig::new(8, 20, 200.0), 0).is_err());
        let mut cfg = EegNetConfig::new(8, 100, 200.0);
        cfg.f2 = 32;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn training_mode_dropout_depends_on_step() {
        let net = EegNet::<f32>::new(EegNetConfig::new(4, 64, 64.0), 2).unwrap();
        let x = batch(6, 4, 64, 9);
        let run = |step| {
            let mut g = Graph::new(Mode::Train { seed: 5, step });
            let v = g.constant(x.clone());
            let (out, upd) = net.forward(&mut g, v).unwrap();
            assert_eq!(upd.len(), 3);
            g.value(out).data().to_vec()
        };
        assert_eq!(run(0), run(0));
        assert_ne!(run(0), run(1));
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let cfg = EegNetConfig {
            dropout: 0.0,
            ..EegNetConfig::new(3, 32, 16.0)
        };
        let net32 = EegNet::<f32>::new(cfg, 4).unwrap();
        let x = batch(5, 3, 32, 11);
        let labels = [0usize, 1, 1, 0, 1];

        let mut g = Graph::new(Mode::Train { seed: 0, step: 0 });
        let v = g.constant(x.clone());
        let (logits, _) = net32.forward(&mut g, v).unwrap();
        let loss = g.cross_entropy(logits, &labels).unwrap();
        g.backward(loss).unwrap();
        let mut store = net32.store.clone();
        g.accumulate_param_grads(&mut store);

        let mut net64 = EegNet::<f64>::new(net32.cfg.clone(), 4).unwrap();
        net64.store = net32.store.cast();
        let x64 = x.cast::<f64>();
        let eval = |net: &EegNet<f64>| {
            let mut g = Graph::new(Mode::Train { seed: 0, step: 0 });
            let v = g.constant(x64.clone());
            let (logits, _) = net.forward(&mut g, v).unwrap();
            let l = g.cross_entropy(logits, &labels).unwrap();
            g.value(l).data()[0]
        };

        let trainable: Vec<_> = store
            .ids()
            .filter(|&id| store.entry(id).trainable)
            .collect();
        let eps = 1e-5;
        for k in 0..10 {
            let id = trainable[(k * 7) % trainable.len()];
            let n = store.value(id).numel();
            let i = (k * 13) % n;
            let ad = store.grad(id)[i] as f64;
            let mut p = net64.clone();
            p.store.entry_mut(id).value.data_mut()[i] += eps;
            let mut m = net64.clone();
            m.store.entry_mut(id).value.data_mut()[i] -= eps;
            let fd = (eval(&p) - eval(&m)) / (2.0 * eps);
            let e = rel_err(ad, fd, 1e-3);
            assert!(
                e <= 1e-3,
                "{} [{i}]: analytic {ad} vs numeric {fd}",
                store.entry(id).name
            );
        }
    }
}
