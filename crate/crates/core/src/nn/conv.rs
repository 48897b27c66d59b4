//! Grouped 2-D cross-correlation.
//!
//! Three kernels share one entry point: pointwise (1×1, stride 1, no padding)
//! goes straight to GEMM, depthwise (one input channel per group and one
//! filter per channel) runs a direct loop, everything else uses im2col.

use crate::error::{Error, Result};
use crate::tape::{Backward, BackwardCtx, GradSink, Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        ConvSpec {
            stride,
            padding,
            groups,
        }
    }

    pub fn pointwise() -> Self {
        ConvSpec::new(1, 0, 1)
    }

    /// Stride-1 convolution that preserves spatial size for an odd kernel.
    pub fn same(kernel: usize, groups: usize) -> Self {
        ConvSpec::new(1, kernel / 2, groups)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    groups: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(x: &[usize], wt: &[usize], spec: ConvSpec) -> Result<Self> {
        if x.len() != 4 || wt.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("expected rank-4 input and weight, got {x:?} and {wt:?}"),
            ));
        }
        let (batch, cin, h, w) = (x[0], x[1], x[2], x[3]);
        let (cout, cin_g, kh, kw) = (wt[0], wt[1], wt[2], wt[3]);
        let groups = spec.groups;
        if kh != kw {
            return Err(Error::shape("conv2d", format!("non-square kernel {kh}x{kw}")));
        }
        if spec.stride == 0 || groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "groups {groups} must divide in {cin} and out {cout}; stride {}",
                    spec.stride
                ),
            ));
        }
        if cin_g * groups != cin {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "weight expects {} input channels per group, input has {cin} over {groups} groups",
                    cin_g
                ),
            ));
        }
        let k = kh;
        let span_h = h + 2 * spec.padding;
        let span_w = w + 2 * spec.padding;
        if span_h < k
            || span_w < k
            || !(span_h - k).is_multiple_of(spec.stride)
            || !(span_w - k).is_multiple_of(spec.stride)
        {
            return Err(Error::shape(
                "conv2d",
                format!("({h}x{w} + 2*{} - {k}) / {} is not integral", spec.padding, spec.stride),
            ));
        }
        Ok(ConvGeom {
            batch,
            cin,
            h,
            w,
            cout,
            k,
            stride: spec.stride,
            pad: spec.padding,
            groups,
            ho: (span_h - k) / spec.stride + 1,
            wo: (span_w - k) / spec.stride + 1,
        })
    }

    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn is_depthwise(&self) -> bool {
        self.groups == self.cin && self.cout == self.cin
    }

    /// Range of output positions `o` along one axis for which input index
    /// `o*stride + kk - pad` falls inside `0..len`.
    fn valid(&self, kk: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kk as isize - self.pad as isize;
        // o*s + off >= 0  and  o*s + off < len
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi_excl = (len as isize - off + s - 1) / s;
        let hi = hi_excl.clamp(0, out_len as isize);
        (lo.clamp(0, out_len as isize) as usize, hi as usize)
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let (k, ho, wo) = (g.k, g.ho, g.wo);
    let plane = g.h * g.w;
    let cin_g = x.len() / plane;
    for c in 0..cin_g {
        let xc = &x[c * plane..(c + 1) * plane];
        for ky in 0..k {
            let (oy0, oy1) = g.valid(ky, g.h, ho);
            for kx in 0..k {
                let (ox0, ox1) = g.valid(kx, g.w, wo);
                let row = &mut cols[((c * k + ky) * k + kx) * ho * wo..][..ho * wo];
                row.iter_mut().for_each(|v| *v = T::zero());
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.pad;
                    for ox in ox0..ox1 {
                        let ix = ox * g.stride + kx - g.pad;
                        row[oy * wo + ox] = xc[iy * g.w + ix];
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let (k, ho, wo) = (g.k, g.ho, g.wo);
    let plane = g.h * g.w;
    let cin_g = dx.len() / plane;
    for c in 0..cin_g {
        let dxc = &mut dx[c * plane..(c + 1) * plane];
        for ky in 0..k {
            let (oy0, oy1) = g.valid(ky, g.h, ho);
            for kx in 0..k {
                let (ox0, ox1) = g.valid(kx, g.w, wo);
                let row = &cols[((c * k + ky) * k + kx) * ho * wo..][..ho * wo];
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.pad;
                    for ox in ox0..ox1 {
                        let ix = ox * g.stride + kx - g.pad;
                        dxc[iy * g.w + ix] += row[oy * wo + ox];
                    }
                }
            }
        }
    }
}

fn depthwise_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], out: &mut [T]) {
    let (k, ho, wo) = (g.k, g.ho, g.wo);
    let plane = g.h * g.w;
    for n in 0..g.batch {
        for c in 0..g.cin {
            let xc = &x[(n * g.cin + c) * plane..][..plane];
            let wc = &w[c * k * k..][..k * k];
            let oc = &mut out[(n * g.cout + c) * ho * wo..][..ho * wo];
            for ky in 0..k {
                let (oy0, oy1) = g.valid(ky, g.h, ho);
                for kx in 0..k {
                    let (ox0, ox1) = g.valid(kx, g.w, wo);
                    let wv = wc[ky * k + kx];
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let xrow = &xc[iy * g.w..][..g.w];
                        let orow = &mut oc[oy * wo..][..wo];
                        if g.stride == 1 {
                            let base = kx as isize - g.pad as isize;
                            for ox in ox0..ox1 {
                                orow[ox] += wv * xrow[(ox as isize + base) as usize];
                            }
                        } else {
                            for ox in ox0..ox1 {
                                orow[ox] += wv * xrow[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    gout: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let (k, ho, wo) = (g.k, g.ho, g.wo);
    let plane = g.h * g.w;
    for n in 0..g.batch {
        for c in 0..g.cin {
            let xoff = (n * g.cin + c) * plane;
            let goff = (n * g.cout + c) * ho * wo;
            let gc = &gout[goff..][..ho * wo];
            for ky in 0..k {
                let (oy0, oy1) = g.valid(ky, g.h, ho);
                for kx in 0..k {
                    let (ox0, ox1) = g.valid(kx, g.w, wo);
                    if ox0 >= ox1 {
                        continue;
                    }
                    let widx = c * k * k + ky * k + kx;
                    let wv = w[widx];
                    let mut acc = T::zero();
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &gc[oy * wo + ox0..oy * wo + ox1];
                        let ix0 = ox0 * g.stride + kx - g.pad;
                        let xrow = &x[xoff + iy * g.w..][..g.w];
                        if g.stride == 1 {
                            let xs = &xrow[ix0..ix0 + grow.len()];
                            acc += grow.iter().zip(xs).fold(T::zero(), |a, (&gv, &xv)| a + gv * xv);
                            if let Some(dx) = dx.as_deref_mut() {
                                let drow = &mut dx[xoff + iy * g.w + ix0..][..grow.len()];
                                drow.iter_mut().zip(grow).for_each(|(d, &gv)| *d += gv * wv);
                            }
                        } else {
                            for (j, &gv) in grow.iter().enumerate() {
                                let ix = ix0 + j * g.stride;
                                acc += gv * xrow[ix];
                                if let Some(dx) = dx.as_deref_mut() {
                                    dx[xoff + iy * g.w + ix] += gv * wv;
                                }
                            }
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<(Tensor<T>, ConvGeom)> {
    let g = ConvGeom::new(x.shape(), w.shape(), spec)?;
    if let Some(b) = bias {
        if b.shape() != [g.cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias {:?} for {} output channels", b.shape(), g.cout),
            ));
        }
    }
    let (ho, wo) = (g.ho, g.wo);
    let mut out = vec![T::zero(); g.batch * g.cout * ho * wo];
    let xd = x.data();
    let wd = w.data();
    let plane_in = g.h * g.w;
    let plane_out = ho * wo;
    if g.is_depthwise() {
        depthwise_forward(&g, xd, wd, &mut out);
    } else {
        let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
        let kdim = cin_g * g.k * g.k;
        let mut cols = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); kdim * plane_out]
        };
        for n in 0..g.batch {
            for grp in 0..g.groups {
                let xs = &xd[(n * g.cin + grp * cin_g) * plane_in..][..cin_g * plane_in];
                let ws = &wd[grp * cout_g * kdim..][..cout_g * kdim];
                let os = &mut out[(n * g.cout + grp * cout_g) * plane_out..][..cout_g * plane_out];
                let src: &[T] = if g.is_pointwise() {
                    xs
                } else {
                    im2col(&g, xs, &mut cols);
                    &cols
                };
                T::gemm(cout_g, kdim, plane_out, T::one(), ws, false, src, false, T::zero(), os);
            }
        }
    }
    if let Some(b) = bias {
        let bd = b.data();
        for n in 0..g.batch {
            for (c, &bv) in bd.iter().enumerate() {
                out[(n * g.cout + c) * plane_out..][..plane_out]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
    }
    Ok((Tensor::new(vec![g.batch, g.cout, ho, wo], out)?, g))
}

struct ConvBackward {
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: ConvGeom,
}

impl<T: Scalar> Backward<T> for ConvBackward {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, gout: &[T], sink: &mut GradSink<'_, T>) {
        let g = &self.geom;
        let plane_in = g.h * g.w;
        let plane_out = g.ho * g.wo;
        if let Some(b) = self.b {
            if let Some(db) = sink.slot(b) {
                for n in 0..g.batch {
                    for (c, d) in db.iter_mut().enumerate() {
                        *d += gout[(n * g.cout + c) * plane_out..][..plane_out]
                            .iter()
                            .copied()
                            .sum::<T>();
                    }
                }
            }
        }
        let xd = ctx.value(self.x).data();
        let wd = ctx.value(self.w).data();
        let want_x = sink.wants(self.x);
        let want_w = sink.wants(self.w);
        if !want_x && !want_w {
            return;
        }
        let mut dx = want_x.then(|| vec![T::zero(); xd.len()]);
        let mut dw = want_w.then(|| vec![T::zero(); wd.len()]);
        if g.is_depthwise() {
            depthwise_backward(g, xd, wd, gout, dx.as_deref_mut(), dw.as_deref_mut());
        } else {
            let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
            let kdim = cin_g * g.k * g.k;
            let pw = g.is_pointwise();
            let mut cols = if pw {
                Vec::new()
            } else {
                vec![T::zero(); kdim * plane_out]
            };
            let mut dcols = if pw {
                Vec::new()
            } else {
                vec![T::zero(); kdim * plane_out]
            };
            for n in 0..g.batch {
                for grp in 0..g.groups {
                    let xoff = (n * g.cin + grp * cin_g) * plane_in;
                    let xs = &xd[xoff..][..cin_g * plane_in];
                    let ws = &wd[grp * cout_g * kdim..][..cout_g * kdim];
                    let gs = &gout[(n * g.cout + grp * cout_g) * plane_out..][..cout_g * plane_out];
                    if let Some(dw) = dw.as_deref_mut() {
                        let src: &[T] = if pw {
                            xs
                        } else {
                            im2col(g, xs, &mut cols);
                            &cols
                        };
                        let dws = &mut dw[grp * cout_g * kdim..][..cout_g * kdim];
                        T::gemm(cout_g, plane_out, kdim, T::one(), gs, false, src, true, T::one(), dws);
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let dxs = &mut dx[xoff..][..cin_g * plane_in];
                        if pw {
                            T::gemm(kdim, cout_g, plane_out, T::one(), ws, true, gs, false, T::one(), dxs);
                        } else {
                            T::gemm(
                                kdim,
                                cout_g,
                                plane_out,
                                T::one(),
                                ws,
                                true,
                                gs,
                                false,
                                T::zero(),
                                &mut dcols,
                            );
                            col2im(g, &dcols, dxs);
                        }
                    }
                }
            }
        }
        if let Some(dx) = dx {
            sink.accumulate(self.x, &dx);
        }
        if let Some(dw) = dw {
            sink.accumulate(self.w, &dw);
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Grouped cross-correlation of `x: [B, C_in, H, W]` with
    /// `w: [C_out, C_in / groups, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let (value, geom) = conv2d_forward(self.value(x), self.value(w), bias.map(|b| self.value(b)), spec)?;
        let mut parents = vec![x, w];
        parents.extend(bias);
        Ok(self.push_op(value, &parents, ConvBackward { x, w, b: bias, geom }))
    }

    /// Per-channel spatial convolution; `spec.groups` must equal the channel count.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let c = self.shape(x).get(1).copied().unwrap_or(0);
        let ws = self.shape(w);
        if spec.groups != c || ws.len() != 4 || ws[0] != c || ws[1] != 1 {
            return Err(Error::shape(
                "depthwise_conv2d",
                format!(
                    "depthwise needs groups == channels ({c}) and weight [{c}, 1, k, k]; got groups {} and {:?}",
                    spec.groups, ws
                ),
            ));
        }
        self.conv2d(x, w, bias, spec)
    }
}
