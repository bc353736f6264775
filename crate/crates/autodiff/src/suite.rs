//! Finite-difference sweep over every primitive, in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::grad_check;
use crate::graph::{Graph, Mode, Var};
use crate::ops::{BatchNormMode, Conv1dSpec, Conv2dSpec};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct PrimitiveCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
}

struct Suite {
    rng: ChaCha8Rng,
    out: Vec<PrimitiveCheck>,
}

impl Suite {
    /// Entries bounded away from zero so kinked activations stay differentiable
    /// under the finite-difference step.
    fn rand(&mut self, shape: &[usize]) -> Tensor<f64> {
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| {
            let v: f64 = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
    }

    fn check_shape(
        &mut self,
        name: &'static str,
        shape: &[usize],
        f: impl Fn(&mut Graph<f64>, Var) -> Result<Var>,
        mode: Mode,
    ) -> Result<()> {
        let x = self.rand(shape);
        self.check(name, x, f, mode)
    }

    fn check(
        &mut self,
        name: &'static str,
        x: Tensor<f64>,
        f: impl Fn(&mut Graph<f64>, Var) -> Result<Var>,
        mode: Mode,
    ) -> Result<()> {
        // Random readout so every output coordinate gets a distinct upstream gradient.
        let probe_len = {
            let mut g = Graph::new(mode);
            let v = g.leaf(x.clone(), false);
            let y = f(&mut g, v)?;
            g.value(y).numel()
        };
        let probe = self.rand(&[probe_len]);
        let res = grad_check(
            |g, v| {
                let y = f(g, v)?;
                let flat = g.reshape(y, &[probe_len])?;
                let r = g.constant(probe.clone());
                let p = g.mul(flat, r)?;
                Ok(g.sum(p))
            },
            &x,
            1e-5,
            None,
            mode,
        )?;
        self.out.push(PrimitiveCheck {
            name,
            max_rel_err: res.max_rel_err,
        });
        Ok(())
    }
}

pub fn primitive_gradient_suite(seed: u64) -> Result<Vec<PrimitiveCheck>> {
    let mut s = Suite {
        rng: ChaCha8Rng::seed_from_u64(seed),
        out: Vec::new(),
    };
    let ev = Mode::Eval;
    let tr = Mode::Train { seed, step: 3 };

    let b = s.rand(&[3, 4]);
    s.check_shape(
        "add",
        &[3, 4],
        |g, x| {
            let c = g.constant(b.clone());
            g.add(x, c)
        },
        ev,
    )?;
    s.check_shape(
        "sub",
        &[3, 4],
        |g, x| {
            let c = g.constant(b.clone());
            g.sub(c, x)
        },
        ev,
    )?;
    s.check_shape(
        "mul",
        &[3, 4],
        |g, x| {
            let c = g.constant(b.clone());
            g.mul(x, c)
        },
        ev,
    )?;
    s.check_shape("mul_self", &[5], |g, x| g.mul(x, x), ev)?;
    s.check_shape("scale", &[4], |g, x| Ok(g.scale(x, -2.5)), ev)?;
    s.check_shape("add_scalar", &[4], |g, x| Ok(g.add_scalar(x, 0.7)), ev)?;
    s.check_shape("sum", &[2, 3], |g, x| Ok(g.sum(x)), ev)?;
    s.check_shape("mean", &[2, 3], |g, x| Ok(g.mean(x)), ev)?;

    let m = s.rand(&[4, 2]);
    s.check_shape(
        "matmul_lhs",
        &[3, 4],
        |g, x| {
            let c = g.constant(m.clone());
            g.matmul(x, c)
        },
        ev,
    )?;
    let l = s.rand(&[3, 4]);
    s.check_shape(
        "matmul_rhs",
        &[4, 2],
        |g, x| {
            let c = g.constant(l.clone());
            g.matmul(c, x)
        },
        ev,
    )?;
    s.check_shape("transpose", &[3, 2], |g, x| g.transpose(x), ev)?;
    s.check_shape("reshape", &[3, 2], |g, x| g.reshape(x, &[2, 3]), ev)?;

    let (lw, lb, lx) = (s.rand(&[3, 4]), s.rand(&[3]), s.rand(&[2, 4]));
    s.check_shape(
        "linear_x",
        &[2, 4],
        |g, x| {
            let (w, b) = (g.constant(lw.clone()), g.constant(lb.clone()));
            g.linear(x, w, Some(b))
        },
        ev,
    )?;
    s.check(
        "linear_w",
        lw.clone(),
        |g, w| {
            let xx = g.constant(lx.clone());
            g.linear(xx, w, None)
        },
        ev,
    )?;
    s.check(
        "linear_b",
        lb.clone(),
        |g, b| {
            let (xx, w) = (g.constant(lx.clone()), g.constant(lw.clone()));
            g.linear(xx, w, Some(b))
        },
        ev,
    )?;

    let spec1 = Conv1dSpec {
        stride: 2,
        padding: 3,
        dilation: 2,
        groups: 2,
    };
    let (cw, cb, cx) = (s.rand(&[4, 2, 3]), s.rand(&[4]), s.rand(&[2, 4, 11]));
    s.check(
        "conv1d_x",
        cx.clone(),
        |g, x| {
            let (w, b) = (g.constant(cw.clone()), g.constant(cb.clone()));
            g.conv1d(x, w, Some(b), spec1)
        },
        ev,
    )?;
    s.check(
        "conv1d_w",
        cw.clone(),
        |g, w| {
            let x = g.constant(cx.clone());
            g.conv1d(x, w, None, spec1)
        },
        ev,
    )?;
    s.check(
        "conv1d_b",
        cb.clone(),
        |g, b| {
            let (x, w) = (g.constant(cx.clone()), g.constant(cw.clone()));
            g.conv1d(x, w, Some(b), spec1)
        },
        ev,
    )?;

    let spec2 = Conv2dSpec {
        padding: (1, 0, 2, 1),
        groups: 2,
    };
    let (dw, db, dx) = (s.rand(&[4, 1, 2, 3]), s.rand(&[4]), s.rand(&[2, 2, 3, 5]));
    s.check(
        "conv2d_x",
        dx.clone(),
        |g, x| {
            let (w, b) = (g.constant(dw.clone()), g.constant(db.clone()));
            g.conv2d(x, w, Some(b), spec2)
        },
        ev,
    )?;
    s.check(
        "conv2d_w",
        dw.clone(),
        |g, w| {
            let x = g.constant(dx.clone());
            g.conv2d(x, w, None, spec2)
        },
        ev,
    )?;
    s.check(
        "conv2d_b",
        db.clone(),
        |g, b| {
            let (x, w) = (g.constant(dx.clone()), g.constant(dw.clone()));
            g.conv2d(x, w, Some(b), spec2)
        },
        ev,
    )?;

    let (gam, bet, bx) = (s.rand(&[3]), s.rand(&[3]), s.rand(&[4, 3, 5]));
    let (rm, rv) = (vec![0.1, -0.2, 0.3], vec![0.5, 1.5, 2.0]);
    s.check(
        "batchnorm_train_x",
        bx.clone(),
        |g, x| {
            let (a, b) = (g.constant(gam.clone()), g.constant(bet.clone()));
            Ok(g.batch_norm(x, a, b, BatchNormMode::Batch, 1e-5)?.0)
        },
        tr,
    )?;
    s.check(
        "batchnorm_train_gamma",
        gam.clone(),
        |g, a| {
            let (x, b) = (g.constant(bx.clone()), g.constant(bet.clone()));
            Ok(g.batch_norm(x, a, b, BatchNormMode::Batch, 1e-5)?.0)
        },
        tr,
    )?;
    s.check(
        "batchnorm_train_beta",
        bet.clone(),
        |g, b| {
            let (x, a) = (g.constant(bx.clone()), g.constant(gam.clone()));
            Ok(g.batch_norm(x, a, b, BatchNormMode::Batch, 1e-5)?.0)
        },
        tr,
    )?;
    s.check(
        "batchnorm_eval_x",
        bx.clone(),
        |g, x| {
            let (a, b) = (g.constant(gam.clone()), g.constant(bet.clone()));
            Ok(g.batch_norm(
                x,
                a,
                b,
                BatchNormMode::Running {
                    mean: &rm,
                    var: &rv,
                },
                1e-5,
            )?
            .0)
        },
        ev,
    )?;

    s.check_shape("elu", &[3, 4], |g, x| Ok(g.elu(x, 1.0)), ev)?;
    s.check_shape("gelu", &[3, 4], |g, x| Ok(g.gelu(x)), ev)?;
    s.check_shape("relu", &[3, 4], |g, x| Ok(g.relu(x)), ev)?;
    s.check_shape("dropout_eval", &[3, 4], |g, x| g.dropout(x, 0.5, 7), ev)?;
    s.check_shape("dropout_train", &[3, 4], |g, x| g.dropout(x, 0.5, 7), tr)?;
    s.check_shape(
        "avg_pool2d",
        &[2, 2, 2, 9],
        |g, x| g.avg_pool2d(x, 1, 4),
        ev,
    )?;
    s.check_shape("mean_last", &[2, 3, 5], |g, x| g.mean_last(x), ev)?;
    s.check_shape("log_softmax", &[3, 5], |g, x| g.log_softmax(x), ev)?;
    s.check_shape(
        "cross_entropy",
        &[4, 3],
        |g, x| g.cross_entropy(x, &[0, 2, 1, 2]),
        ev,
    )?;
    s.check_shape("l2_normalize", &[3, 4], |g, x| g.l2_normalize(x), ev)?;
    let ca = s.rand(&[5, 4]);
    s.check_shape(
        "cosine_similarity_matrix",
        &[3, 4],
        |g, x| {
            let a = g.constant(ca.clone());
            g.cosine_similarity_matrix(x, a)
        },
        ev,
    )?;
    Ok(s.out)
}
