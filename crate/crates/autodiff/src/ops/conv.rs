//! Grouped convolutions lowered to im2col + GEMM.
//!
//! Both 1-D and 2-D convolutions share one kernel: a 1-D input `(N, C, L)` is
//! treated as `(N, C, 1, L)`.

use crate::element::{gemm, Element, Mat};
use crate::error::{shape_err, Result};
use crate::graph::{slot, GradSlots, Graph, Node, Op, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv1dSpec {
    fn default() -> Self {
        Conv1dSpec {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

impl Conv1dSpec {
    /// `floor((L + 2p − d·(k−1) − 1) / s) + 1`, or `None` if the kernel does not fit.
    pub fn out_len(&self, len: usize, kernel: usize) -> Option<usize> {
        out_extent(
            len,
            self.padding,
            self.padding,
            kernel,
            self.stride,
            self.dilation,
        )
    }
}

/// Stride-1, dilation-1 2-D convolution with asymmetric zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    /// `(top, bottom, left, right)`.
    pub padding: (usize, usize, usize, usize),
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec {
            padding: (0, 0, 0, 0),
            groups: 1,
        }
    }
}

fn out_extent(
    len: usize,
    pad_lo: usize,
    pad_hi: usize,
    k: usize,
    stride: usize,
    dil: usize,
) -> Option<usize> {
    let span = dil * (k.checked_sub(1)?) + 1;
    let padded = len + pad_lo + pad_hi;
    if stride == 0 || padded < span {
        return None;
    }
    Some((padded - span) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: (usize, usize),
    dil: (usize, usize),
    pad_top: usize,
    pad_left: usize,
    groups: usize,
}

impl Geometry {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }
    fn ck(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }
    fn npos(&self) -> usize {
        self.n * self.ho * self.wo
    }

    /// Source offset inside one `(H, W)` plane, if the tap lands in bounds.
    #[inline]
    fn src(&self, oh: usize, ow: usize, i: usize, j: usize) -> Option<usize> {
        let y = (oh * self.stride.0 + i * self.dil.0).checked_sub(self.pad_top)?;
        let x = (ow * self.stride.1 + j * self.dil.1).checked_sub(self.pad_left)?;
        (y < self.h && x < self.w).then_some(y * self.w + x)
    }

    fn im2col<T: Element>(&self, x: &[T], g: usize, cols: &mut [T]) {
        let npos = self.npos();
        let plane = self.h * self.w;
        for ci in 0..self.cin_g() {
            let c = g * self.cin_g() + ci;
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let r = (ci * self.kh + i) * self.kw + j;
                    let row = &mut cols[r * npos..(r + 1) * npos];
                    for ni in 0..self.n {
                        let base = (ni * self.cin + c) * plane;
                        for oh in 0..self.ho {
                            for ow in 0..self.wo {
                                let col = (ni * self.ho + oh) * self.wo + ow;
                                row[col] = match self.src(oh, ow, i, j) {
                                    Some(o) => x[base + o],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Element>(&self, cols: &[T], g: usize, dx: &mut [T]) {
        let npos = self.npos();
        let plane = self.h * self.w;
        for ci in 0..self.cin_g() {
            let c = g * self.cin_g() + ci;
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let r = (ci * self.kh + i) * self.kw + j;
                    let row = &cols[r * npos..(r + 1) * npos];
                    for ni in 0..self.n {
                        let base = (ni * self.cin + c) * plane;
                        for oh in 0..self.ho {
                            for ow in 0..self.wo {
                                if let Some(o) = self.src(oh, ow, i, j) {
                                    dx[base + o] += row[(ni * self.ho + oh) * self.wo + ow];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvSaved<T> {
    x: Var,
    w: Var,
    b: Option<Var>,
    geo: Geometry,
    /// im2col buffers for every group, concatenated.
    cols: Vec<T>,
}

pub(crate) type Conv1dSaved<T> = ConvSaved<T>;
pub(crate) type Conv2dSaved<T> = ConvSaved<T>;

impl<T: Element> Graph<T> {
    /// `x: (N, Cin, L)`, `w: (Cout, Cin/groups, K)`, `b: (Cout)`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv1dSpec) -> Result<Var> {
        let &[n, cin, l] = self.shape(x) else {
            return shape_err(
                "conv1d",
                format!("input must be [N, C, L], got {:?}", self.shape(x)),
            );
        };
        let &[cout, cin_g, k] = self.shape(w) else {
            return shape_err(
                "conv1d",
                format!("weight must be [Cout, Cin/g, K], got {:?}", self.shape(w)),
            );
        };
        let Some(lout) = spec.out_len(l, k) else {
            return shape_err(
                "conv1d",
                format!(
                    "kernel {k} (dilation {}) does not fit length {l}",
                    spec.dilation
                ),
            );
        };
        let geo = Geometry {
            n,
            cin,
            h: 1,
            w: l,
            cout,
            kh: 1,
            kw: k,
            ho: 1,
            wo: lout,
            stride: (1, spec.stride),
            dil: (1, spec.dilation),
            pad_top: 0,
            pad_left: spec.padding,
            groups: spec.groups,
        };
        check_groups(&geo, cin_g, "conv1d")?;
        let (out, cols) = self.conv_forward(x, w, b, &geo)?;
        let out = Tensor::new(vec![n, cout, lout], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(
            out,
            Op::Conv1d(Box::new(ConvSaved { x, w, b, geo, cols })),
            &inputs,
        ))
    }

    /// `x: (N, Cin, H, W)`, `w: (Cout, Cin/groups, KH, KW)`, `b: (Cout)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let &[n, cin, h, wd] = self.shape(x) else {
            return shape_err(
                "conv2d",
                format!("input must be [N, C, H, W], got {:?}", self.shape(x)),
            );
        };
        let &[cout, cin_g, kh, kw] = self.shape(w) else {
            return shape_err(
                "conv2d",
                format!(
                    "weight must be [Cout, Cin/g, KH, KW], got {:?}",
                    self.shape(w)
                ),
            );
        };
        let (pt, pb, pl, pr) = spec.padding;
        let (Some(ho), Some(wo)) = (
            out_extent(h, pt, pb, kh, 1, 1),
            out_extent(wd, pl, pr, kw, 1, 1),
        ) else {
            return shape_err(
                "conv2d",
                format!("kernel ({kh}, {kw}) does not fit input ({h}, {wd})"),
            );
        };
        let geo = Geometry {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            ho,
            wo,
            stride: (1, 1),
            dil: (1, 1),
            pad_top: pt,
            pad_left: pl,
            groups: spec.groups,
        };
        check_groups(&geo, cin_g, "conv2d")?;
        let (out, cols) = self.conv_forward(x, w, b, &geo)?;
        let out = Tensor::new(vec![n, cout, ho, wo], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(
            out,
            Op::Conv2d(Box::new(ConvSaved { x, w, b, geo, cols })),
            &inputs,
        ))
    }

    fn conv_forward(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geo: &Geometry,
    ) -> Result<(Vec<T>, Vec<T>)> {
        if let Some(b) = b {
            if self.shape(b) != [geo.cout] {
                return shape_err(
                    "conv",
                    format!("bias {:?}, expected [{}]", self.shape(b), geo.cout),
                );
            }
        }
        let (ck, npos, cout_g) = (geo.ck(), geo.npos(), geo.cout_g());
        let xd = self.value(x).data();
        let wdata = self.value(w).data();
        let mut cols = vec![T::zero(); geo.groups * ck * npos];
        let mut y = vec![T::zero(); cout_g * npos];
        let opos = geo.ho * geo.wo;
        let mut out = vec![T::zero(); geo.n * geo.cout * opos];
        for g in 0..geo.groups {
            let cg = &mut cols[g * ck * npos..(g + 1) * ck * npos];
            geo.im2col(xd, g, cg);
            let wg = &wdata[g * cout_g * ck..(g + 1) * cout_g * ck];
            gemm(
                Mat::new(wg, cout_g, ck),
                Mat::new(cg, ck, npos),
                T::zero(),
                &mut y,
            );
            for co in 0..cout_g {
                let c = g * cout_g + co;
                let bias = b.map_or(T::zero(), |b| self.value(b).data()[c]);
                for ni in 0..geo.n {
                    let dst = &mut out[(ni * geo.cout + c) * opos..(ni * geo.cout + c + 1) * opos];
                    let src = &y[co * npos + ni * opos..co * npos + (ni + 1) * opos];
                    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = s + bias);
                }
            }
        }
        Ok((out, cols))
    }
}

fn check_groups(geo: &Geometry, cin_g: usize, op: &'static str) -> Result<()> {
    if geo.groups == 0
        || !geo.cin.is_multiple_of(geo.groups)
        || !geo.cout.is_multiple_of(geo.groups)
        || geo.cin / geo.groups != cin_g
    {
        return shape_err(
            op,
            format!(
                "groups {} incompatible with Cin {}, Cout {}, weight Cin/g {}",
                geo.groups, geo.cin, geo.cout, cin_g
            ),
        );
    }
    Ok(())
}

pub(crate) fn conv1d_backward<T: Element>(
    s: &ConvSaved<T>,
    grads: &mut GradSlots<T>,
    nodes: &[Node<T>],
    g: &[T],
) {
    conv_backward(s, grads, nodes, g)
}

pub(crate) fn conv2d_backward<T: Element>(
    s: &ConvSaved<T>,
    grads: &mut GradSlots<T>,
    nodes: &[Node<T>],
    g: &[T],
) {
    conv_backward(s, grads, nodes, g)
}

fn conv_backward<T: Element>(
    s: &ConvSaved<T>,
    grads: &mut GradSlots<T>,
    nodes: &[Node<T>],
    g: &[T],
) {
    let geo = &s.geo;
    let (ck, npos, cout_g) = (geo.ck(), geo.npos(), geo.cout_g());
    let opos = geo.ho * geo.wo;
    let wdata = nodes[s.w.0].value.data();
    let mut dy = vec![T::zero(); cout_g * npos];
    let mut dcols = vec![T::zero(); ck * npos];

    if let Some(b) = s.b {
        if let Some(db) = slot(grads, nodes, b) {
            for ni in 0..geo.n {
                for c in 0..geo.cout {
                    let off = (ni * geo.cout + c) * opos;
                    let sum: f64 = g[off..off + opos].iter().map(|v| v.f64()).sum();
                    db[c] += T::of(sum);
                }
            }
        }
    }

    for grp in 0..geo.groups {
        for co in 0..cout_g {
            let c = grp * cout_g + co;
            for ni in 0..geo.n {
                let src = &g[(ni * geo.cout + c) * opos..(ni * geo.cout + c + 1) * opos];
                dy[co * npos + ni * opos..co * npos + (ni + 1) * opos].copy_from_slice(src);
            }
        }
        let cg = &s.cols[grp * ck * npos..(grp + 1) * ck * npos];
        if let Some(dw) = slot(grads, nodes, s.w) {
            let dwg = &mut dw[grp * cout_g * ck..(grp + 1) * cout_g * ck];
            gemm(
                Mat::new(&dy, cout_g, npos),
                Mat::new(cg, ck, npos).t(),
                T::one(),
                dwg,
            );
        }
        if nodes[s.x.0].requires_grad {
            let wg = &wdata[grp * cout_g * ck..(grp + 1) * cout_g * ck];
            gemm(
                Mat::new(wg, cout_g, ck).t(),
                Mat::new(&dy, cout_g, npos),
                T::zero(),
                &mut dcols,
            );
            if let Some(dx) = slot(grads, nodes, s.x) {
                geo.col2im(&dcols, grp, dx);
            }
        }
    }
}
