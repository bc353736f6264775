use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::error::{AutodiffError, Result};
use crate::graph::{slot, GradSlots, Graph, Mode, Node, Op, Var};
use crate::tensor::Tensor;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based dropout key: the mask depends only on `(seed, layer, step)`.
pub fn dropout_key(seed: u64, layer: u64, step: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ layer) ^ step)
}

impl<T: Element> Graph<T> {
    pub fn relu(&mut self, x: Var) -> Var {
        let out = map(self.value(x), |v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn elu(&mut self, x: Var, alpha: f64) -> Var {
        let a = T::of(alpha);
        let out = map(self.value(x), |v| {
            if v > T::zero() {
                v
            } else {
                a * (v.exp() - T::one())
            }
        });
        self.push(out, Op::Elu { x, alpha: a }, &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = map(self.value(x), |v| {
            let v = v.f64();
            T::of(0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
        });
        self.push(out, Op::Gelu(x), &[x])
    }

    /// Inverted dropout. Identity in eval mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, layer: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(AutodiffError::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        let Mode::Train { seed, step } = self.mode() else {
            return Ok(x);
        };
        if p == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_key(seed, layer, step));
        let keep = T::of(1.0 / (1.0 - p));
        let n = self.value(x).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout { x, mask }, &[x]))
    }
}

fn map<T: Element>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).unwrap()
}

pub(crate) fn relu_backward<T: Element>(
    grads: &mut GradSlots<T>,
    nodes: &[Node<T>],
    x: Var,
    g: &[T],
) {
    let xd = nodes[x.0].value.data();
    if let Some(s) = slot(grads, nodes, x) {
        for i in 0..s.len() {
            if xd[i] > T::zero() {
                s[i] += g[i];
            }
        }
    }
}

pub(crate) fn elu_backward<T: Element>(
    grads: &mut GradSlots<T>,
    nodes: &[Node<T>],
    x: Var,
    alpha: T,
    out: &Tensor<T>,
    g: &[T],
) {
    let (xd, yd) = (nodes[x.0].value.data(), out.data());
    if let Some(s) = slot(grads, nodes, x) {
        for i in 0..s.len() {
            let d = if xd[i] > T::zero() {
                T::one()
            } else {
                yd[i] + alpha
            };
            s[i] += g[i] * d;
        }
    }
}

pub(crate) fn gelu_backward<T: Element>(
    grads: &mut GradSlots<T>,
    nodes: &[Node<T>],
    x: Var,
    g: &[T],
) {
    let xd = nodes[x.0].value.data();
    if let Some(s) = slot(grads, nodes, x) {
        for i in 0..s.len() {
            let v = xd[i].f64();
            let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
            let d =
                0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
            s[i] += T::of(g[i].f64() * d);
        }
    }
}

pub(crate) fn dropout_backward<T: Element>(
    grads: &mut GradSlots<T>,
    nodes: &[Node<T>],
    x: Var,
    mask: &[T],
    g: &[T],
) {
    if let Some(s) = slot(grads, nodes, x) {
        for i in 0..s.len() {
            s[i] += g[i] * mask[i];
        }
    }
}
