//! Finite-difference check of the whole SEEG-encoder → symmetric InfoNCE graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sacm_autodiff::{rel_err, Graph, Mode, Tensor};

use super::loss::infonce_symmetric_graph;
use crate::error::Result;
use crate::models::{SeegEncoder, SeegEncoderConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct EndToEndCheck {
    pub n_coords: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

fn loss<T: sacm_autodiff::Element>(
    enc: &SeegEncoder<T>,
    x: &Tensor<T>,
    a: &Tensor<T>,
    tau: f64,
) -> Result<(Graph<T>, sacm_autodiff::Var, sacm_autodiff::Var)> {
    let mut g = Graph::new(Mode::Train { seed: 0, step: 0 });
    let xv = g.leaf(x.clone(), true);
    let av = g.constant(a.clone());
    let (b, _) = enc.forward(&mut g, xv)?;
    let l = infonce_symmetric_graph(&mut g, b, av, tau)?;
    Ok((g, xv, l))
}

/// Analytic single-precision gradients against double-precision central
/// differences, over `n_params` sampled parameter coordinates and as many
/// input coordinates.
pub fn end_to_end_gradient_check(seed: u64, n_params: usize) -> Result<EndToEndCheck> {
    let cfg = SeegEncoderConfig {
        hidden: 8,
        n_blocks: 2,
        ..SeegEncoderConfig::new(4, 6)
    };
    let (n, t, tau) = (6, 24, 0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x64 = Tensor::from_fn(&[n, cfg.n_channels, t], |_| rng.random_range(-1.0..1.0));
    let a64 = Tensor::from_fn(&[n, cfg.d], |_| rng.random_range(-1.0..1.0));
    let enc32 = SeegEncoder::<f32>::new(cfg.clone(), seed)?;
    let mut enc64 = SeegEncoder::<f64>::new(cfg, seed)?;
    enc64.store = enc32.store.cast();

    let (x32, a32) = (x64.cast::<f32>(), a64.cast::<f32>());
    let (mut g, xv, l) = loss(&enc32, &x32, &a32, tau)?;
    g.backward(l)?;
    let dx: Vec<f64> = g
        .grad(xv)
        .unwrap_or(&[])
        .iter()
        .map(|&v| v as f64)
        .collect();
    let mut store = enc32.store.clone();
    store.zero_grad();
    g.accumulate_param_grads(&mut store);

    let eval = |e: &SeegEncoder<f64>, x: &Tensor<f64>| -> Result<f64> {
        let (g, _, l) = loss(e, x, &a64, tau)?;
        Ok(g.value(l).data()[0])
    };
    let eps = 1e-6;
    let mut out = EndToEndCheck {
        n_coords: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    let mut record = |name: String, ad: f64, fd: f64| {
        let e = rel_err(ad, fd, 1e-3);
        out.n_coords += 1;
        if e > out.max_rel_err {
            out.max_rel_err = e;
            out.worst = format!("{name}: analytic {ad:.6e}, numeric {fd:.6e}");
        }
    };

    let trainable: Vec<_> = store
        .ids()
        .filter(|&id| store.entry(id).trainable)
        .collect();
    for k in 0..n_params {
        let id = trainable[k % trainable.len()];
        let i = rng.random_range(0..store.value(id).numel());
        let mut p = enc64.clone();
        p.store.entry_mut(id).value.data_mut()[i] += eps;
        let mut m = enc64.clone();
        m.store.entry_mut(id).value.data_mut()[i] -= eps;
        let fd = (eval(&p, &x64)? - eval(&m, &x64)?) / (2.0 * eps);
        record(
            format!("{}[{i}]", store.entry(id).name),
            store.grad(id)[i] as f64,
            fd,
        );
    }
    for _ in 0..n_params {
        let i = rng.random_range(0..x64.numel());
        let (mut xp, mut xm) = (x64.clone(), x64.clone());
        xp.data_mut()[i] += eps;
        xm.data_mut()[i] -= eps;
        let fd = (eval(&enc64, &xp)? - eval(&enc64, &xm)?) / (2.0 * eps);
        record(format!("input[{i}]"), dx[i], fd);
    }
    Ok(out)
}
