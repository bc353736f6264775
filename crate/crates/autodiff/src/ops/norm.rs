use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::graph::{slot, GradSlots, Graph, Node, Op, Var};
use crate::tensor::Tensor;

/// Where batchnorm takes its normalization statistics from.
#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a, T> {
    /// Statistics of the current batch (training).
    Batch,
    /// Frozen running statistics (evaluation). An affine map of the input.
    Running { mean: &'a [T], var: &'a [T] },
}

/// Batch statistics per channel; `var` is the unbiased estimate used for
/// running-average updates.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub(crate) struct BatchNormSaved<T> {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<T>,
    inv_std: Vec<f64>,
    batch: bool,
    n: usize,
    c: usize,
    r: usize,
}

impl<T: Element> Graph<T> {
    /// Normalize channel axis 1 of `(N, C, ...)` over all other axes.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
        eps: f64,
    ) -> Result<(Var, Option<BatchNormStats>)> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return shape_err("batch_norm", format!("expected [N, C, ...], got {shape:?}"));
        }
        let (n, c) = (shape[0], shape[1]);
        let r: usize = shape[2..].iter().product();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return shape_err(
                "batch_norm",
                format!(
                    "affine params {:?}/{:?} for {c} channels",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            );
        }
        let m = n * r;
        let xd = self.value(x).data();
        let (mean, var, stats) = match mode {
            BatchNormMode::Batch => {
                if m < 2 {
                    return shape_err(
                        "batch_norm",
                        format!("batch statistics need >= 2 values per channel, got {m}"),
                    );
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for ni in 0..n {
                        let off = (ni * c + ch) * r;
                        s += xd[off..off + r].iter().map(|v| v.f64()).sum::<f64>();
                    }
                    let mu = s / m as f64;
                    let mut ss = 0.0;
                    for ni in 0..n {
                        let off = (ni * c + ch) * r;
                        ss += xd[off..off + r]
                            .iter()
                            .map(|v| (v.f64() - mu).powi(2))
                            .sum::<f64>();
                    }
                    mean[ch] = mu;
                    var[ch] = ss / m as f64;
                }
                let unbiased = var.iter().map(|v| v * m as f64 / (m - 1) as f64).collect();
                let stats = BatchNormStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Running { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return shape_err(
                        "batch_norm",
                        format!(
                            "running stats of length {}/{} for {c} channels",
                            mean.len(),
                            var.len()
                        ),
                    );
                }
                (
                    mean.iter().map(|v| v.f64()).collect(),
                    var.iter().map(|v| v.f64()).collect(),
                    None,
                )
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for ni in 0..n {
            for ch in 0..c {
                let off = (ni * c + ch) * r;
                for k in off..off + r {
                    let h = (xd[k].f64() - mean[ch]) * inv_std[ch];
                    xhat[k] = T::of(h);
                    out[k] = T::of(gd[ch].f64() * h + bd[ch].f64());
                }
            }
        }
        let out = Tensor::new(shape, out)?;
        let saved = BatchNormSaved {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch: stats.is_some(),
            n,
            c,
            r,
        };
        let v = self.push(out, Op::BatchNorm(Box::new(saved)), &[x, gamma, beta]);
        Ok((v, stats))
    }
}

pub(crate) fn batch_norm_backward<T: Element>(
    s: &BatchNormSaved<T>,
    grads: &mut GradSlots<T>,
    nodes: &[Node<T>],
    g: &[T],
) {
    let (n, c, r) = (s.n, s.c, s.r);
    let m = (n * r) as f64;
    let gd = nodes[s.gamma.0].value.data();
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for ni in 0..n {
        for ch in 0..c {
            let off = (ni * c + ch) * r;
            for k in off..off + r {
                sum_g[ch] += g[k].f64();
                sum_gx[ch] += g[k].f64() * s.xhat[k].f64();
            }
        }
    }
    if let Some(dg) = slot(grads, nodes, s.gamma) {
        for ch in 0..c {
            dg[ch] += T::of(sum_gx[ch]);
        }
    }
    if let Some(db) = slot(grads, nodes, s.beta) {
        for ch in 0..c {
            db[ch] += T::of(sum_g[ch]);
        }
    }
    if let Some(dx) = slot(grads, nodes, s.x) {
        for ni in 0..n {
            for ch in 0..c {
                let off = (ni * c + ch) * r;
                let scale = gd[ch].f64() * s.inv_std[ch];
                for k in off..off + r {
                    let v = if s.batch {
                        scale * (g[k].f64() - sum_g[ch] / m - s.xhat[k].f64() * sum_gx[ch] / m)
                    } else {
                        scale * g[k].f64()
                    };
                    dx[k] += T::of(v);
                }
            }
        }
    }
}
