//! Arithmetic, reductions, linear algebra and the softmax family.

use crate::element::{gemm, Element, Mat};
use crate::error::{shape_err, AutodiffError, Result};
use crate::graph::{slot, GradSlots, Graph, Node, Op, Var};
use crate::tensor::Tensor;

fn same_shape<T: Element>(g: &Graph<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return shape_err(op, format!("{:?} vs {:?}", g.shape(a), g.shape(b)));
    }
    Ok(())
}

fn rank2<T: Element>(g: &Graph<T>, op: &'static str, a: Var) -> Result<(usize, usize)> {
    match g.shape(a) {
        [r, c] => Ok((*r, *c)),
        s => shape_err(op, format!("expected a 2-D tensor, got {s:?}")),
    }
}

impl<T: Element> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        let x = self.value(a);
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().map(|&v| v * c).collect(),
        )
        .unwrap();
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        let x = self.value(a);
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().map(|&v| v + c).collect(),
        )
        .unwrap();
        self.push(out, Op::AddScalar(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().map(|v| v.f64()).sum();
        self.push(Tensor::scalar(T::of(s)), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s: f64 = x.data().iter().map(|v| v.f64()).sum::<f64>() / x.numel().max(1) as f64;
        self.push(Tensor::scalar(T::of(s)), Op::Mean(a), &[a])
    }

    /// `(m × k) · (k × n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = rank2(self, "matmul", a)?;
        let (k2, n) = rank2(self, "matmul", b)?;
        if k != k2 {
            return shape_err("matmul", format!("[{m}, {k}] x [{k2}, {n}]"));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            Mat::new(self.value(a).data(), m, k),
            Mat::new(self.value(b).data(), k, n),
            T::zero(),
            &mut out,
        );
        let out = Tensor::new(vec![m, n], out)?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = rank2(self, "transpose", a)?;
        let x = self.value(a).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        let out = Tensor::new(vec![c, r], out)?;
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Collapse every axis after the first.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        let n = s.first().copied().unwrap_or(1);
        let rest = s.iter().skip(1).product();
        self.reshape(a, &[n, rest])
    }

    /// `x (N × in) · wᵀ (in × out) + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, fin) = rank2(self, "linear", x)?;
        let (fout, fin2) = rank2(self, "linear", w)?;
        if fin != fin2 {
            return shape_err(
                "linear",
                format!("input [{n}, {fin}] vs weight [{fout}, {fin2}]"),
            );
        }
        if let Some(b) = b {
            if self.shape(b) != [fout] {
                return shape_err(
                    "linear",
                    format!("bias {:?}, expected [{fout}]", self.shape(b)),
                );
            }
        }
        let mut out = vec![T::zero(); n * fout];
        gemm(
            Mat::new(self.value(x).data(), n, fin),
            Mat::new(self.value(w).data(), fout, fin).t(),
            T::zero(),
            &mut out,
        );
        if let Some(b) = b {
            let bd = self.value(b).data();
            for row in out.chunks_mut(fout) {
                row.iter_mut().zip(bd).for_each(|(o, &bb)| *o += bb);
            }
        }
        let out = Tensor::new(vec![n, fout], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Linear { x, w, b }, &inputs))
    }

    /// Mean over the last axis (temporal mean pooling).
    pub fn mean_last(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let Some((&l, lead)) = s.split_last() else {
            return shape_err("mean_last", "scalar input".into());
        };
        if l == 0 {
            return shape_err("mean_last", "empty last axis".into());
        }
        let data: Vec<T> = self
            .value(x)
            .data()
            .chunks(l)
            .map(|c| T::of(c.iter().map(|v| v.f64()).sum::<f64>() / l as f64))
            .collect();
        let out = Tensor::new(lead.to_vec(), data)?;
        Ok(self.push(out, Op::MeanLast(x), &[x]))
    }

    /// Non-overlapping 2-D average pooling over the last two axes of
    /// `(N, C, H, W)`; trailing remainders are dropped.
    pub fn avg_pool2d(&mut self, x: Var, kh: usize, kw: usize) -> Result<Var> {
        let &[n, c, h, w] = self.shape(x) else {
            return shape_err(
                "avg_pool2d",
                format!("expected [N, C, H, W], got {:?}", self.shape(x)),
            );
        };
        if kh == 0 || kw == 0 || h < kh || w < kw {
            return shape_err("avg_pool2d", format!("kernel ({kh}, {kw}) on [{h}, {w}]"));
        }
        let (ho, wo) = (h / kh, w / kw);
        let xd = self.value(x).data();
        let norm = 1.0 / (kh * kw) as f64;
        let mut out = vec![T::zero(); n * c * ho * wo];
        for p in 0..n * c {
            let src = &xd[p * h * w..(p + 1) * h * w];
            for i in 0..ho {
                for j in 0..wo {
                    let mut s = 0.0;
                    for a in 0..kh {
                        for b in 0..kw {
                            s += src[(i * kh + a) * w + j * kw + b].f64();
                        }
                    }
                    out[(p * ho + i) * wo + j] = T::of(s * norm);
                }
            }
        }
        let out = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.push(out, Op::AvgPool2d { x, kh, kw }, &[x]))
    }

    /// Row-wise log-softmax of a 2-D tensor.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (r, k) = rank2(self, "log_softmax", x)?;
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); r * k];
        for i in 0..r {
            let row = &xd[i * k..(i + 1) * k];
            let lse = log_sum_exp(row);
            for j in 0..k {
                out[i * k + j] = T::of(row[j].f64() - lse);
            }
        }
        let out = Tensor::new(vec![r, k], out)?;
        Ok(self.push(out, Op::LogSoftmax(x), &[x]))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, k) = rank2(self, "cross_entropy", logits)?;
        if targets.len() != r {
            return shape_err(
                "cross_entropy",
                format!("{} targets for {r} rows", targets.len()),
            );
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(AutodiffError::InvalidArgument(format!(
                "cross_entropy: target {t} >= {k} classes"
            )));
        }
        let xd = self.value(logits).data();
        let mut probs = vec![T::zero(); r * k];
        let mut nll = 0.0;
        for i in 0..r {
            let row = &xd[i * k..(i + 1) * k];
            let lse = log_sum_exp(row);
            for j in 0..k {
                probs[i * k + j] = T::of((row[j].f64() - lse).exp());
            }
            nll += lse - row[targets[i]].f64();
        }
        let out = Tensor::scalar(T::of(nll / r as f64));
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Divide each row of a 2-D tensor by its Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let (r, c) = rank2(self, "l2_normalize", x)?;
        let xd = self.value(x).data();
        let mut norms = Vec::with_capacity(r);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let nrm = row.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
            if nrm == 0.0 {
                return Err(AutodiffError::ZeroNorm { row: i });
            }
            for j in 0..c {
                out[i * c + j] = T::of(row[j].f64() / nrm);
            }
            norms.push(nrm);
        }
        let out = Tensor::new(vec![r, c], out)?;
        Ok(self.push(out, Op::L2Normalize { x, norms }, &[x]))
    }

    /// `S[i][j] = cos(b_i, a_j)` for `b: N × d`, `a: M × d`.
    pub fn cosine_similarity_matrix(&mut self, b: Var, a: Var) -> Result<Var> {
        let (_, d1) = rank2(self, "cosine_similarity_matrix", b)?;
        let (_, d2) = rank2(self, "cosine_similarity_matrix", a)?;
        if d1 != d2 {
            return shape_err(
                "cosine_similarity_matrix",
                format!("feature dims {d1} vs {d2}"),
            );
        }
        let bn = self.l2_normalize(b)?;
        let an = self.l2_normalize(a)?;
        let at = self.transpose(an)?;
        self.matmul(bn, at)
    }
}

pub(crate) fn log_sum_exp<T: Element>(row: &[T]) -> f64 {
    let m = row
        .iter()
        .map(|v| v.f64())
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|v| (v.f64() - m).exp()).sum::<f64>().ln()
}

fn zip_map<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect()
}

pub(crate) fn add_into<T: Element>(
    grads: &mut GradSlots<T>,
    nodes: &[Node<T>],
    v: Var,
    g: &[T],
    c: T,
) {
    if let Some(s) = slot(grads, nodes, v) {
        s.iter_mut().zip(g).for_each(|(a, &b)| *a += c * b);
    }
}

pub(crate) fn broadcast_scalar_into<T: Element>(
    grads: &mut GradSlots<T>,
    nodes: &[Node<T>],
    v: Var,
    g: T,
) {
    if let Some(s) = slot(grads, nodes, v) {
        s.iter_mut().for_each(|a| *a += g);
    }
}

pub(crate) fn mul_backward<T: Element>(
    grads: &mut GradSlots<T>,
    nodes: &[Node<T>],
    a: Var,
    b: Var,
    g: &[T],
) {
    let (ad, bd) = (nodes[a.0].value.data(), nodes[b.0].value.data());
    if let Some(s) = slot(grads, nodes, a) {
        for i in 0..s.len() {
            s[i] += g[i] * bd[i];
        }
    }
    if let Some(s) = slot(grads, nodes, b) {
        for i in 0..s.len() {
            s[i] += g[i] * ad[i];
        }
    }
}

pub(crate) fn matmul_backward<T: Element>(
    grads: &mut GradSlots<T>,
    nodes: &[Node<T>],
    a: Var,
    b: Var,
    g: &[T],
) {
    let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
    let n = nodes[b.0].value.shape()[1];
    let (ad, bd) = (nodes[a.0].value.data(), nodes[b.0].value.data());
    if let Some(s) = slot(grads, nodes, a) {
        gemm(Mat::new(g, m, n), Mat::new(bd, k, n).t(), T::one(), s);
    }
    if let Some(s) = slot(grads, nodes, b) {
        gemm(Mat::new(ad, m, k).t(), Mat::new(g, m, n), T::one(), s);
    }
}

pub(crate) fn transpose_backward<T: Element>(
    grads: &mut GradSlots<T>,
    nodes: &[Node<T>],
    a: Var,
    g: &[T],
) {
    let (r, c) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
    if let Some(s) = slot(grads, nodes, a) {
        for i in 0..r {
            for j in 0..c {
                s[i * c + j] += g[j * r + i];
            }
        }
    }
}

pub(crate) fn linear_backward<T: Element>(
    grads: &mut GradSlots<T>,
    nodes: &[Node<T>],
    x: Var,
    w: Var,
    b: Option<Var>,
    g: &[T],
) {
    let (n, fin) = (nodes[x.0].value.shape()[0], nodes[x.0].value.shape()[1]);
    let fout = nodes[w.0].value.shape()[0];
    let (xd, wd) = (nodes[x.0].value.data(), nodes[w.0].value.data());
    if let Some(s) = slot(grads, nodes, x) {
        gemm(Mat::new(g, n, fout), Mat::new(wd, fout, fin), T::one(), s);
    }
    if let Some(s) = slot(grads, nodes, w) {
        gemm(Mat::new(g, n, fout).t(), Mat::new(xd, n, fin), T::one(), s);
    }
    if let Some(b) = b {
        if let Some(s) = slot(grads, nodes, b) {
            for row in g.chunks(fout) {
                s.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
            }
        }
    }
}

pub(crate) fn mean_last_backward<T: Element>(
    grads: &mut GradSlots<T>,
    nodes: &[Node<T>],
    x: Var,
    g: &[T],
) {
    let l = *nodes[x.0].value.shape().last().unwrap();
    let inv = T::of(1.0 / l as f64);
    if let Some(s) = slot(grads, nodes, x) {
        for (chunk, &gv) in s.chunks_mut(l).zip(g) {
            chunk.iter_mut().for_each(|a| *a += gv * inv);
        }
    }
}

pub(crate) fn avg_pool2d_backward<T: Element>(
    grads: &mut GradSlots<T>,
    nodes: &[Node<T>],
    x: Var,
    kh: usize,
    kw: usize,
    g: &[T],
) {
    let s = nodes[x.0].value.shape();
    let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
    let (ho, wo) = (h / kh, w / kw);
    let inv = T::of(1.0 / (kh * kw) as f64);
    if let Some(dst) = slot(grads, nodes, x) {
        for p in 0..nc {
            for i in 0..ho {
                for j in 0..wo {
                    let gv = g[(p * ho + i) * wo + j] * inv;
                    for a in 0..kh {
                        for b in 0..kw {
                            dst[p * h * w + (i * kh + a) * w + j * kw + b] += gv;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn log_softmax_backward<T: Element>(
    grads: &mut GradSlots<T>,
    nodes: &[Node<T>],
    x: Var,
    out: &Tensor<T>,
    g: &[T],
) {
    let k = out.shape()[1];
    if let Some(s) = slot(grads, nodes, x) {
        for ((srow, grow), yrow) in s.chunks_mut(k).zip(g.chunks(k)).zip(out.data().chunks(k)) {
            let gs: f64 = grow.iter().map(|v| v.f64()).sum();
            for j in 0..k {
                srow[j] += T::of(grow[j].f64() - yrow[j].f64().exp() * gs);
            }
        }
    }
}

pub(crate) fn cross_entropy_backward<T: Element>(
    grads: &mut GradSlots<T>,
    nodes: &[Node<T>],
    logits: Var,
    targets: &[usize],
    probs: &[T],
    g: T,
) {
    let r = targets.len();
    let k = probs.len() / r.max(1);
    let c = g / T::of(r as f64);
    if let Some(s) = slot(grads, nodes, logits) {
        for i in 0..r {
            for j in 0..k {
                let onehot = if j == targets[i] { T::one() } else { T::zero() };
                s[i * k + j] += c * (probs[i * k + j] - onehot);
            }
        }
    }
}

pub(crate) fn l2_normalize_backward<T: Element>(
    grads: &mut GradSlots<T>,
    nodes: &[Node<T>],
    x: Var,
    out: &Tensor<T>,
    norms: &[f64],
    g: &[T],
) {
    let c = out.shape()[1];
    if let Some(s) = slot(grads, nodes, x) {
        for (i, &nrm) in norms.iter().enumerate() {
            let y = &out.data()[i * c..(i + 1) * c];
            let gr = &g[i * c..(i + 1) * c];
            let dot: f64 = y.iter().zip(gr).map(|(a, b)| a.f64() * b.f64()).sum();
            for j in 0..c {
                s[i * c + j] += T::of((gr[j].f64() - y[j].f64() * dot) / nrm);
            }
        }
    }
}
