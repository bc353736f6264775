use crate::element::Element;
use crate::error::Result;
use crate::graph::{Graph, Mode, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Relative error with a floor so that coordinates whose true derivative is
/// ~0 are compared absolutely.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compare reverse-mode gradients of the scalar `f(x)` with central
/// differences at step `eps`, over `coords` (all coordinates when `None`).
pub fn grad_check<T, F>(
    f: F,
    x: &Tensor<T>,
    eps: f64,
    coords: Option<&[usize]>,
    mode: Mode,
) -> Result<GradCheck>
where
    T: Element,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let eval = |t: &Tensor<T>| -> Result<f64> {
        let mut g = Graph::new(mode);
        let v = g.leaf(t.clone(), false);
        let out = f(&mut g, v)?;
        Ok(g.value(out).data()[0].f64())
    };

    let mut g = Graph::new(mode);
    let v = g.leaf(x.clone(), true);
    let out = f(&mut g, v)?;
    g.backward(out)?;
    let full = g
        .grad(v)
        .map(|s| s.to_vec())
        .unwrap_or_else(|| vec![T::zero(); x.numel()]);

    let all: Vec<usize> = (0..x.numel()).collect();
    let coords = coords.unwrap_or(&all);
    let mut analytic = Vec::with_capacity(coords.len());
    let mut numeric = Vec::with_capacity(coords.len());
    let (mut worst, mut worst_index) = (0.0, 0);
    for &i in coords {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus.data_mut()[i] = T::of(x.data()[i].f64() + eps);
        minus.data_mut()[i] = T::of(x.data()[i].f64() - eps);
        let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
        let ad = full[i].f64();
        let e = rel_err(ad, fd, 1e-6);
        if e > worst {
            worst = e;
            worst_index = i;
        }
        analytic.push(ad);
        numeric.push(fd);
    }
    Ok(GradCheck {
        max_rel_err: worst,
        worst_index,
        analytic,
        numeric,
    })
}
