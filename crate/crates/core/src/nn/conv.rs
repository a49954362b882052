//! Standard, depthwise-separable and gated 2-D convolutions over `[H, W, C]` tensors.
//!
//! Every kernel materializes its padding and then runs a "valid" sliding window,
//! so the number of scalar multiplications performed is exactly the analytic
//! count reported by [`count_mults`] for both padding modes.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    Same,
}

/// Spatial and channel geometry of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub padding: Padding,
}

/// Zero padding added on each side, `(top, bottom, left, right)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Pads {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl ConvGeometry {
    /// Square geometry: `pf x pf x m` input, `pk x pk` kernel, `n` filters.
    pub fn square(pf: usize, pk: usize, stride: usize, m: usize, n: usize, padding: Padding) -> Self {
        ConvGeometry {
            in_h: pf,
            in_w: pf,
            kernel_h: pk,
            kernel_w: pk,
            stride_h: stride,
            stride_w: stride,
            in_channels: m,
            out_channels: n,
            padding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::Geometry("kernel extent must be positive".into()));
        }
        if self.stride_h == 0 || self.stride_w == 0 {
            return Err(Error::Geometry("stride must be positive".into()));
        }
        if self.in_h == 0 || self.in_w == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Geometry(format!("empty extent in {self:?}")));
        }
        if self.padding == Padding::Valid && (self.kernel_h > self.in_h || self.kernel_w > self.in_w) {
            return Err(Error::Geometry(format!(
                "kernel {}x{} larger than input {}x{} with valid padding",
                self.kernel_h, self.kernel_w, self.in_h, self.in_w
            )));
        }
        Ok(())
    }

    /// Output spatial extent `(Pp_h, Pp_w)`.
    pub fn output_hw(&self) -> Result<(usize, usize)> {
        self.validate()?;
        Ok(match self.padding {
            Padding::Valid => (
                (self.in_h - self.kernel_h) / self.stride_h + 1,
                (self.in_w - self.kernel_w) / self.stride_w + 1,
            ),
            Padding::Same => (
                self.in_h.div_ceil(self.stride_h),
                self.in_w.div_ceil(self.stride_w),
            ),
        })
    }

    pub fn pads(&self) -> Result<Pads> {
        let (oh, ow) = self.output_hw()?;
        Ok(match self.padding {
            Padding::Valid => Pads::default(),
            Padding::Same => {
                let th = ((oh - 1) * self.stride_h + self.kernel_h).saturating_sub(self.in_h);
                let tw = ((ow - 1) * self.stride_w + self.kernel_w).saturating_sub(self.in_w);
                Pads {
                    top: th / 2,
                    bottom: th - th / 2,
                    left: tw / 2,
                    right: tw - tw / 2,
                }
            }
        })
    }

    fn kernel_area(&self) -> u64 {
        (self.kernel_h * self.kernel_w) as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Standard,
    DepthwiseSeparable,
}

/// Scalar multiplications performed by one forward pass, biases excluded.
///
/// Standard: `N * Pp^2 * Pk^2 * M`. Depthwise-separable: `M * Pp^2 * (Pk^2 + N)`,
/// i.e. `M * Pk^2 * Pp^2` for the depthwise stage plus `M * Pp^2 * N` pointwise.
pub fn count_mults(geom: &ConvGeometry, kind: ConvKind) -> Result<u64> {
    let (oh, ow) = geom.output_hw()?;
    let positions = (oh * ow) as u64;
    let m = geom.in_channels as u64;
    let n = geom.out_channels as u64;
    let k2 = geom.kernel_area();
    Ok(match kind {
        ConvKind::Standard => n * positions * k2 * m,
        ConvKind::DepthwiseSeparable => m * positions * (k2 + n),
    })
}

/// Trainable parameters of one convolution with biases.
pub fn count_conv_params(geom: &ConvGeometry, kind: ConvKind) -> u64 {
    let m = geom.in_channels as u64;
    let n = geom.out_channels as u64;
    let k2 = geom.kernel_area();
    match kind {
        ConvKind::Standard => k2 * m * n + n,
        ConvKind::DepthwiseSeparable => (k2 * m + m) + (m * n + n),
    }
}

/// Hook invoked once per scalar multiplication inside the convolution kernels.
pub trait Tally {
    fn tick(&mut self);
}

impl Tally for () {
    #[inline(always)]
    fn tick(&mut self) {}
}

/// Counts multiplications for instrumented kernel runs.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MulCount(pub u64);

impl Tally for MulCount {
    #[inline(always)]
    fn tick(&mut self) {
        self.0 += 1;
    }
}

pub(crate) fn pad3(x: &Tensor, p: Pads) -> Tensor {
    if p == Pads::default() {
        return x.clone();
    }
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ph, pw) = (h + p.top + p.bottom, w + p.left + p.right);
    let mut out = Tensor::zeros(&[ph, pw, c]);
    let src = x.data();
    let dst = out.data_mut();
    for y in 0..h {
        let s = y * w * c;
        let d = ((y + p.top) * pw + p.left) * c;
        dst[d..d + w * c].copy_from_slice(&src[s..s + w * c]);
    }
    out
}

pub(crate) fn crop3(x: &Tensor, p: Pads) -> Tensor {
    if p == Pads::default() {
        return x.clone();
    }
    let (ph, pw, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (h, w) = (ph - p.top - p.bottom, pw - p.left - p.right);
    let mut out = Tensor::zeros(&[h, w, c]);
    let src = x.data();
    let dst = out.data_mut();
    for y in 0..h {
        let s = ((y + p.top) * pw + p.left) * c;
        let d = y * w * c;
        dst[d..d + w * c].copy_from_slice(&src[s..s + w * c]);
    }
    out
}

/// Valid cross-correlation of a padded `[H, W, M]` input with `[kh, kw, M, N]` weights.
pub(crate) fn conv_valid<T: Tally>(
    xp: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize),
    tally: &mut T,
) -> Tensor {
    let (h, w, m) = (xp.shape()[0], xp.shape()[1], xp.shape()[2]);
    let (kh, kw, n) = (weight.shape()[0], weight.shape()[1], weight.shape()[3]);
    let oh = (h - kh) / stride.0 + 1;
    let ow = (w - kw) / stride.1 + 1;
    let mut out = Tensor::zeros(&[oh, ow, n]);
    let xd = xp.data();
    let wd = weight.data();
    let od = out.data_mut();
    for oy in 0..oh {
        for ox in 0..ow {
            let o = &mut od[(oy * ow + ox) * n..(oy * ow + ox + 1) * n];
            if let Some(b) = bias {
                o.copy_from_slice(b.data());
            }
            for ky in 0..kh {
                let iy = oy * stride.0 + ky;
                for kx in 0..kw {
                    let ix = ox * stride.1 + kx;
                    let xrow = &xd[(iy * w + ix) * m..(iy * w + ix + 1) * m];
                    let wbase = (ky * kw + kx) * m * n;
                    for (ci, &xv) in xrow.iter().enumerate() {
                        let wrow = &wd[wbase + ci * n..wbase + (ci + 1) * n];
                        for (ov, &wv) in o.iter_mut().zip(wrow) {
                            tally.tick();
                            *ov += xv * wv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv_valid`]: `(d_input_padded, d_weight, d_bias)`.
pub(crate) fn conv_valid_backward(
    xp: &Tensor,
    weight: &Tensor,
    stride: (usize, usize),
    grad: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (h, w, m) = (xp.shape()[0], xp.shape()[1], xp.shape()[2]);
    let (kh, kw, n) = (weight.shape()[0], weight.shape()[1], weight.shape()[3]);
    let (oh, ow) = (grad.shape()[0], grad.shape()[1]);
    let mut gx = Tensor::zeros(xp.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(&[n]);
    let xd = xp.data();
    let wd = weight.data();
    let gd = grad.data();
    {
        let gbd = gb.data_mut();
        for pos in 0..oh * ow {
            for (b, g) in gbd.iter_mut().zip(&gd[pos * n..(pos + 1) * n]) {
                *b += g;
            }
        }
    }
    let gxd = gx.data_mut();
    let gwd = gw.data_mut();
    for oy in 0..oh {
        for ox in 0..ow {
            let g = &gd[(oy * ow + ox) * n..(oy * ow + ox + 1) * n];
            for ky in 0..kh {
                let iy = oy * stride.0 + ky;
                for kx in 0..kw {
                    let ix = ox * stride.1 + kx;
                    let xi = (iy * w + ix) * m;
                    let wbase = (ky * kw + kx) * m * n;
                    for ci in 0..m {
                        let xv = xd[xi + ci];
                        let wrow = &wd[wbase + ci * n..wbase + (ci + 1) * n];
                        let gwrow = &mut gwd[wbase + ci * n..wbase + (ci + 1) * n];
                        let mut acc = 0.0;
                        for j in 0..n {
                            gwrow[j] += xv * g[j];
                            acc += wrow[j] * g[j];
                        }
                        gxd[xi + ci] += acc;
                    }
                }
            }
        }
    }
    debug_assert_eq!(gx.shape(), &[h, w, m]);
    (gx, gw, gb)
}

/// Per-channel valid cross-correlation with `[kh, kw, M]` weights.
pub(crate) fn depthwise_valid<T: Tally>(
    xp: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize),
    tally: &mut T,
) -> Tensor {
    let (h, w, m) = (xp.shape()[0], xp.shape()[1], xp.shape()[2]);
    let (kh, kw) = (weight.shape()[0], weight.shape()[1]);
    let oh = (h - kh) / stride.0 + 1;
    let ow = (w - kw) / stride.1 + 1;
    let mut out = Tensor::zeros(&[oh, ow, m]);
    let xd = xp.data();
    let wd = weight.data();
    let od = out.data_mut();
    for oy in 0..oh {
        for ox in 0..ow {
            let o = &mut od[(oy * ow + ox) * m..(oy * ow + ox + 1) * m];
            if let Some(b) = bias {
                o.copy_from_slice(b.data());
            }
            for ky in 0..kh {
                let iy = oy * stride.0 + ky;
                for kx in 0..kw {
                    let ix = ox * stride.1 + kx;
                    let xrow = &xd[(iy * w + ix) * m..(iy * w + ix + 1) * m];
                    let wrow = &wd[(ky * kw + kx) * m..(ky * kw + kx + 1) * m];
                    for ((ov, &xv), &wv) in o.iter_mut().zip(xrow).zip(wrow) {
                        tally.tick();
                        *ov += xv * wv;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn depthwise_valid_backward(
    xp: &Tensor,
    weight: &Tensor,
    stride: (usize, usize),
    grad: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (w, m) = (xp.shape()[1], xp.shape()[2]);
    let (kh, kw) = (weight.shape()[0], weight.shape()[1]);
    let (oh, ow) = (grad.shape()[0], grad.shape()[1]);
    let mut gx = Tensor::zeros(xp.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(&[m]);
    let xd = xp.data();
    let wd = weight.data();
    let gd = grad.data();
    let gxd = gx.data_mut();
    let gwd = gw.data_mut();
    let gbd = gb.data_mut();
    for oy in 0..oh {
        for ox in 0..ow {
            let g = &gd[(oy * ow + ox) * m..(oy * ow + ox + 1) * m];
            for (b, gv) in gbd.iter_mut().zip(g) {
                *b += gv;
            }
            for ky in 0..kh {
                let iy = oy * stride.0 + ky;
                for kx in 0..kw {
                    let ix = ox * stride.1 + kx;
                    let xi = (iy * w + ix) * m;
                    let wi = (ky * kw + kx) * m;
                    for c in 0..m {
                        gwd[wi + c] += xd[xi + c] * g[c];
                        gxd[xi + c] += wd[wi + c] * g[c];
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

fn expect_input(x: &Tensor, channels: usize, what: &str) -> Result<()> {
    x.expect_rank(3, what)?;
    if x.shape()[2] != channels {
        return Err(Error::Geometry(format!(
            "{what} expects {channels} input channels, got {}",
            x.shape()[2]
        )));
    }
    Ok(())
}

fn geometry_for(x: &Tensor, kernel: (usize, usize), stride: (usize, usize), m: usize, n: usize, padding: Padding) -> ConvGeometry {
    ConvGeometry {
        in_h: x.shape()[0],
        in_w: x.shape()[1],
        kernel_h: kernel.0,
        kernel_w: kernel.1,
        stride_h: stride.0,
        stride_w: stride.1,
        in_channels: m,
        out_channels: n,
        padding,
    }
}

/// Standard convolution with `[kh, kw, M, N]` weights and `[N]` bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: (usize, usize),
    pub padding: Padding,
}

#[derive(Clone, Debug)]
pub struct ConvCache {
    padded: Tensor,
    pads: Pads,
}

impl Conv2d {
    pub fn new(weight: Tensor, bias: Tensor, stride: (usize, usize), padding: Padding) -> Result<Self> {
        weight.expect_rank(4, "conv2d weight")?;
        bias.expect_shape(&[weight.shape()[3]])?;
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Geometry("stride must be positive".into()));
        }
        Ok(Conv2d {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[3]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[0], self.weight.shape()[1])
    }

    pub fn geometry(&self, x: &Tensor) -> Result<ConvGeometry> {
        expect_input(x, self.in_channels(), "conv2d")?;
        let g = geometry_for(x, self.kernel(), self.stride, self.in_channels(), self.out_channels(), self.padding);
        g.validate()?;
        Ok(g)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        self.forward_tallied(x, &mut ())
    }

    pub fn forward_tallied<T: Tally>(&self, x: &Tensor, tally: &mut T) -> Result<(Tensor, ConvCache)> {
        let pads = self.geometry(x)?.pads()?;
        let padded = pad3(x, pads);
        let y = conv_valid(&padded, &self.weight, Some(&self.bias), self.stride, tally);
        Ok((y, ConvCache { padded, pads }))
    }

    /// Returns the input gradient and `[d_weight, d_bias]`.
    pub fn backward(&self, cache: &ConvCache, grad: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (gxp, gw, gb) = conv_valid_backward(&cache.padded, &self.weight, self.stride, grad);
        Ok((crop3(&gxp, cache.pads), vec![gw, gb]))
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Depthwise `[kh, kw, M]` convolution followed by a pointwise `[1, 1, M, N]` one.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthwiseSeparableConv2d {
    pub depthwise: Tensor,
    pub depthwise_bias: Tensor,
    pub pointwise: Tensor,
    pub pointwise_bias: Tensor,
    pub stride: (usize, usize),
    pub padding: Padding,
}

#[derive(Clone, Debug)]
pub struct DwSepCache {
    padded: Tensor,
    pads: Pads,
    depthwise_out: Tensor,
}

impl DepthwiseSeparableConv2d {
    pub fn new(
        depthwise: Tensor,
        depthwise_bias: Tensor,
        pointwise: Tensor,
        pointwise_bias: Tensor,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        depthwise.expect_rank(3, "depthwise weight")?;
        pointwise.expect_rank(4, "pointwise weight")?;
        let m = depthwise.shape()[2];
        let n = pointwise.shape()[3];
        pointwise.expect_shape(&[1, 1, m, n])?;
        depthwise_bias.expect_shape(&[m])?;
        pointwise_bias.expect_shape(&[n])?;
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Geometry("stride must be positive".into()));
        }
        Ok(DepthwiseSeparableConv2d {
            depthwise,
            depthwise_bias,
            pointwise,
            pointwise_bias,
            stride,
            padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.depthwise.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.pointwise.shape()[3]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.depthwise.shape()[0], self.depthwise.shape()[1])
    }

    pub fn geometry(&self, x: &Tensor) -> Result<ConvGeometry> {
        expect_input(x, self.in_channels(), "depthwise-separable conv")?;
        let g = geometry_for(x, self.kernel(), self.stride, self.in_channels(), self.out_channels(), self.padding);
        g.validate()?;
        Ok(g)
    }

    /// Output of the depthwise stage alone.
    pub fn depthwise_only(&self, x: &Tensor) -> Result<Tensor> {
        let pads = self.geometry(x)?.pads()?;
        Ok(depthwise_valid(&pad3(x, pads), &self.depthwise, Some(&self.depthwise_bias), self.stride, &mut ()))
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, DwSepCache)> {
        self.forward_tallied(x, &mut ())
    }

    pub fn forward_tallied<T: Tally>(&self, x: &Tensor, tally: &mut T) -> Result<(Tensor, DwSepCache)> {
        let pads = self.geometry(x)?.pads()?;
        let padded = pad3(x, pads);
        let depthwise_out = depthwise_valid(&padded, &self.depthwise, Some(&self.depthwise_bias), self.stride, tally);
        let y = conv_valid(&depthwise_out, &self.pointwise, Some(&self.pointwise_bias), (1, 1), tally);
        Ok((
            y,
            DwSepCache {
                padded,
                pads,
                depthwise_out,
            },
        ))
    }

    /// Returns the input gradient and `[d_depthwise, d_depthwise_bias, d_pointwise, d_pointwise_bias]`.
    pub fn backward(&self, cache: &DwSepCache, grad: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (gd, gpw, gpb) = conv_valid_backward(&cache.depthwise_out, &self.pointwise, (1, 1), grad);
        let (gxp, gdw, gdb) = depthwise_valid_backward(&cache.padded, &self.depthwise, self.stride, &gd);
        Ok((crop3(&gxp, cache.pads), vec![gdw, gdb, gpw, gpb]))
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("depthwise", &self.depthwise),
            ("depthwise_bias", &self.depthwise_bias),
            ("pointwise", &self.pointwise),
            ("pointwise_bias", &self.pointwise_bias),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.depthwise,
            &mut self.depthwise_bias,
            &mut self.pointwise,
            &mut self.pointwise_bias,
        ]
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `conv_f(x) * sigmoid(conv_g(x))` with same padding on both paths.
#[derive(Clone, Debug, PartialEq)]
pub struct GatedConv2d {
    pub feature: Conv2d,
    pub gate: Conv2d,
}

#[derive(Clone, Debug)]
pub struct GatedCache {
    feature: ConvCache,
    feature_out: Tensor,
    gate_sig: Tensor,
}

impl GatedConv2d {
    pub fn new(feature: Conv2d, gate: Conv2d) -> Result<Self> {
        if feature.weight.shape() != gate.weight.shape() || feature.stride != gate.stride {
            return Err(Error::Geometry(format!(
                "gated conv paths differ: feature {:?} vs gate {:?}",
                feature.weight.shape(),
                gate.weight.shape()
            )));
        }
        if feature.padding != Padding::Same || gate.padding != Padding::Same {
            return Err(Error::Geometry("gated conv paths must use same padding".into()));
        }
        Ok(GatedConv2d { feature, gate })
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, GatedCache)> {
        self.forward_tallied(x, &mut ())
    }

    pub fn forward_tallied<T: Tally>(&self, x: &Tensor, tally: &mut T) -> Result<(Tensor, GatedCache)> {
        let (f, fcache) = self.feature.forward_tallied(x, tally)?;
        // the padded input is shared, only the gate weights differ
        let g = conv_valid(&fcache.padded, &self.gate.weight, Some(&self.gate.bias), self.gate.stride, tally);
        let mut gate_sig = g;
        for v in gate_sig.data_mut() {
            *v = sigmoid(*v);
        }
        let mut y = f.clone();
        for (o, s) in y.data_mut().iter_mut().zip(gate_sig.data()) {
            *o *= s;
        }
        Ok((
            y,
            GatedCache {
                feature: fcache,
                feature_out: f,
                gate_sig,
            },
        ))
    }

    /// Returns the input gradient and `[d_fw, d_fb, d_gw, d_gb]`.
    pub fn backward(&self, cache: &GatedCache, grad: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut gf = grad.clone();
        let mut gg = grad.clone();
        for i in 0..gf.len() {
            let s = cache.gate_sig.data()[i];
            gf.data_mut()[i] *= s;
            gg.data_mut()[i] *= cache.feature_out.data()[i] * s * (1.0 - s);
        }
        let (mut gxp, gfw, gfb) = conv_valid_backward(&cache.feature.padded, &self.feature.weight, self.feature.stride, &gf);
        let (gxp2, ggw, ggb) = conv_valid_backward(&cache.feature.padded, &self.gate.weight, self.gate.stride, &gg);
        gxp.add_assign(&gxp2);
        Ok((crop3(&gxp, cache.feature.pads), vec![gfw, gfb, ggw, ggb]))
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("feature_weight", &self.feature.weight),
            ("feature_bias", &self.feature.bias),
            ("gate_weight", &self.gate.weight),
            ("gate_bias", &self.gate.bias),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.feature.weight,
            &mut self.feature.bias,
            &mut self.gate.weight,
            &mut self.gate.bias,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_layer, REL_TOL};
    use crate::nn::testutil::{random, rng};
    use crate::nn::{Layer, LayerOp};

    // Seven nested loops straight from the cross-correlation definition.
    fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: (usize, usize)) -> Tensor {
        let (h, wd, m) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kh, kw, n) = (w.shape()[0], w.shape()[1], w.shape()[3]);
        let oh = (h - kh) / stride.0 + 1;
        let ow = (wd - kw) / stride.1 + 1;
        let mut out = vec![0.0; oh * ow * n];
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..n {
                    let mut acc = b.data()[o];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            for c in 0..m {
                                let wi = ((ky * kw + kx) * m + c) * n + o;
                                acc += x.at3(oy * stride.0 + ky, ox * stride.1 + kx, c) * w.data()[wi];
                            }
                        }
                    }
                    out[(oy * ow + ox) * n + o] = acc;
                }
            }
        }
        Tensor::from_vec(&[oh, ow, n], out).unwrap()
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
        assert_eq!(a.shape(), b.shape());
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn output_extents() {
        let g = ConvGeometry::square(5, 3, 1, 3, 8, Padding::Valid);
        assert_eq!(g.output_hw().unwrap(), (3, 3));
        let g = ConvGeometry::square(7, 3, 2, 1, 1, Padding::Same);
        assert_eq!(g.output_hw().unwrap(), (4, 4));
        assert_eq!(g.pads().unwrap(), Pads { top: 1, bottom: 1, left: 1, right: 1 });
        let g = ConvGeometry::square(2, 3, 1, 1, 1, Padding::Valid);
        assert!(matches!(g.output_hw(), Err(Error::Geometry(_))));
    }

    #[test]
    fn mult_and_param_formulas() {
        let g = ConvGeometry::square(5, 3, 1, 3, 8, Padding::Valid);
        assert_eq!(count_mults(&g, ConvKind::Standard).unwrap(), 1944);
        assert_eq!(count_mults(&g, ConvKind::DepthwiseSeparable).unwrap(), 459);
        assert_eq!(count_conv_params(&g, ConvKind::Standard), 224);
        assert_eq!(count_conv_params(&g, ConvKind::DepthwiseSeparable), 62);
        let g = ConvGeometry::square(4, 1, 1, 3, 1, Padding::Valid);
        let s = count_mults(&g, ConvKind::Standard).unwrap();
        let d = count_mults(&g, ConvKind::DepthwiseSeparable).unwrap();
        assert_eq!(d, 2 * s);
    }

    #[test]
    fn identity_kernel() {
        let x = random(&mut rng(1), &[4, 5, 1]);
        let conv = Conv2d::new(Tensor::full(&[1, 1, 1, 1], 1.0), Tensor::zeros(&[1]), (1, 1), Padding::Valid).unwrap();
        assert_eq!(conv.forward(&x).unwrap().0, x);
    }

    #[test]
    fn sum_kernel() {
        let x = Tensor::from_vec(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let conv = Conv2d::new(Tensor::full(&[2, 2, 1, 1], 1.0), Tensor::zeros(&[1]), (1, 1), Padding::Valid).unwrap();
        assert_eq!(conv.forward(&x).unwrap().0.data(), &[10.0]);
    }

    #[test]
    fn matches_naive_loops() {
        let mut r = rng(2);
        for stride in [(1, 1), (2, 1), (2, 3)] {
            let x = random(&mut r, &[5, 5, 3]);
            let w = random(&mut r, &[3, 3, 3, 8]);
            let b = random(&mut r, &[8]);
            let conv = Conv2d::new(w.clone(), b.clone(), stride, Padding::Valid).unwrap();
            let y = conv.forward(&x).unwrap().0;
            assert!(max_abs_diff(&y, &naive_conv(&x, &w, &b, stride)) < 1e-12);
        }
    }

    #[test]
    fn same_padding_equals_explicit_zero_border() {
        let mut r = rng(3);
        let x = random(&mut r, &[5, 6, 2]);
        let w = random(&mut r, &[3, 3, 2, 4]);
        let b = random(&mut r, &[4]);
        let y = Conv2d::new(w.clone(), b.clone(), (1, 1), Padding::Same).unwrap().forward(&x).unwrap().0;
        let padded = pad3(&x, Pads { top: 1, bottom: 1, left: 1, right: 1 });
        assert!(max_abs_diff(&y, &naive_conv(&padded, &w, &b, (1, 1))) < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_geometry_error() {
        let conv = Conv2d::new(Tensor::zeros(&[3, 3, 2, 1]), Tensor::zeros(&[1]), (1, 1), Padding::Valid).unwrap();
        assert!(matches!(conv.forward(&Tensor::zeros(&[5, 5, 3])), Err(Error::Geometry(_))));
    }

    fn dwsep(r: &mut rand_chacha::ChaCha8Rng, m: usize, n: usize, stride: (usize, usize), padding: Padding) -> DepthwiseSeparableConv2d {
        DepthwiseSeparableConv2d::new(
            random(r, &[3, 3, m]),
            random(r, &[m]),
            random(r, &[1, 1, m, n]),
            random(r, &[n]),
            stride,
            padding,
        )
        .unwrap()
    }

    #[test]
    fn dwsep_identity() {
        let x = random(&mut rng(4), &[3, 4, 2]);
        let mut pw = Tensor::zeros(&[1, 1, 2, 2]);
        pw.data_mut()[0] = 1.0;
        pw.data_mut()[3] = 1.0;
        let l = DepthwiseSeparableConv2d::new(
            Tensor::full(&[1, 1, 2], 1.0),
            Tensor::zeros(&[2]),
            pw,
            Tensor::zeros(&[2]),
            (1, 1),
            Padding::Valid,
        )
        .unwrap();
        assert_eq!(l.forward(&x).unwrap().0, x);
    }

    #[test]
    fn dwsep_is_depthwise_then_pointwise() {
        let mut r = rng(5);
        for padding in [Padding::Valid, Padding::Same] {
            let l = dwsep(&mut r, 3, 5, (2, 1), padding);
            let x = random(&mut r, &[6, 7, 3]);
            let y = l.forward(&x).unwrap().0;
            let pointwise = Conv2d::new(l.pointwise.clone(), l.pointwise_bias.clone(), (1, 1), Padding::Valid).unwrap();
            let composed = pointwise.forward(&l.depthwise_only(&x).unwrap()).unwrap().0;
            assert!(max_abs_diff(&y, &composed) < 1e-12);
            // the depthwise stage is a per-channel standard convolution
            let dw = l.depthwise_only(&x).unwrap();
            for c in 0..3 {
                let mut w = Tensor::zeros(&[3, 3, 3, 1]);
                for k in 0..9 {
                    w.data_mut()[k * 3 + c] = l.depthwise.data()[k * 3 + c];
                }
                let single = Conv2d::new(w, Tensor::full(&[1], l.depthwise_bias.data()[c]), (2, 1), padding).unwrap();
                let yc = single.forward(&x).unwrap().0;
                for i in 0..yc.len() {
                    assert!((yc.data()[i] - dw.data()[i * 3 + c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dwsep_zero_depthwise_gives_bias() {
        let mut r = rng(6);
        let mut l = dwsep(&mut r, 2, 3, (1, 1), Padding::Same);
        l.depthwise = Tensor::zeros(&[3, 3, 2]);
        l.depthwise_bias = Tensor::zeros(&[2]);
        let y = l.forward(&random(&mut r, &[4, 4, 2])).unwrap().0;
        for px in y.data().chunks(3) {
            assert_eq!(px, l.pointwise_bias.data());
        }
    }

    fn gated(r: &mut rand_chacha::ChaCha8Rng, m: usize, n: usize) -> GatedConv2d {
        let f = Conv2d::new(random(r, &[3, 3, m, n]), random(r, &[n]), (1, 1), Padding::Same).unwrap();
        let g = Conv2d::new(random(r, &[3, 3, m, n]), random(r, &[n]), (1, 1), Padding::Same).unwrap();
        GatedConv2d::new(f, g).unwrap()
    }

    #[test]
    fn gated_limits() {
        let mut r = rng(7);
        let mut l = gated(&mut r, 2, 3);
        let x = random(&mut r, &[4, 5, 2]);
        let f = l.feature.forward(&x).unwrap().0;
        l.gate.weight = Tensor::zeros(&[3, 3, 2, 3]);
        l.gate.bias = Tensor::zeros(&[3]);
        let y = l.forward(&x).unwrap().0;
        for (a, b) in y.data().iter().zip(f.data()) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
        l.gate.bias = Tensor::full(&[3], 50.0);
        let y = l.forward(&x).unwrap().0;
        assert!(max_abs_diff(&y, &f) < 1e-9);
    }

    #[test]
    fn gated_matches_composition() {
        let mut r = rng(8);
        let l = gated(&mut r, 2, 3);
        let x = random(&mut r, &[4, 5, 2]);
        let padded = pad3(&x, Pads { top: 1, bottom: 1, left: 1, right: 1 });
        let f = naive_conv(&padded, &l.feature.weight, &l.feature.bias, (1, 1));
        let g = naive_conv(&padded, &l.gate.weight, &l.gate.bias, (1, 1));
        let y = l.forward(&x).unwrap().0;
        for i in 0..y.len() {
            let want = f.data()[i] / (1.0 + (-g.data()[i]).exp());
            assert!((y.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn gated_rejects_mismatched_paths() {
        let f = Conv2d::new(Tensor::zeros(&[3, 3, 1, 2]), Tensor::zeros(&[2]), (1, 1), Padding::Same).unwrap();
        let g = Conv2d::new(Tensor::zeros(&[3, 3, 1, 3]), Tensor::zeros(&[3]), (1, 1), Padding::Same).unwrap();
        assert!(GatedConv2d::new(f.clone(), g).is_err());
        let v = Conv2d::new(Tensor::zeros(&[3, 3, 1, 2]), Tensor::zeros(&[2]), (1, 1), Padding::Valid).unwrap();
        assert!(GatedConv2d::new(f, v).is_err());
    }

    #[test]
    fn tallied_runs_match_formula() {
        let mut r = rng(9);
        let x = random(&mut r, &[7, 6, 3]);
        let conv = Conv2d::new(random(&mut r, &[3, 2, 3, 4]), random(&mut r, &[4]), (2, 1), Padding::Same).unwrap();
        let mut t = MulCount::default();
        conv.forward_tallied(&x, &mut t).unwrap();
        assert_eq!(t.0, count_mults(&conv.geometry(&x).unwrap(), ConvKind::Standard).unwrap());
        let l = dwsep(&mut r, 3, 4, (1, 2), Padding::Valid);
        let mut t = MulCount::default();
        l.forward_tallied(&x, &mut t).unwrap();
        assert_eq!(t.0, count_mults(&l.geometry(&x).unwrap(), ConvKind::DepthwiseSeparable).unwrap());
    }

    #[test]
    fn finite_difference_gradients() {
        let mut r = rng(10);
        for padding in [Padding::Valid, Padding::Same] {
            let x = random(&mut r, &[4, 4, 2]);
            let conv = Conv2d::new(random(&mut r, &[3, 3, 2, 3]), random(&mut r, &[3]), (1, 1), padding).unwrap();
            let strided = Conv2d::new(random(&mut r, &[2, 3, 2, 2]), random(&mut r, &[2]), (2, 1), padding).unwrap();
            let layers = [
                Layer::new("conv", LayerOp::Conv(conv)),
                Layer::new("strided", LayerOp::Conv(strided)),
                Layer::new("dwsep", LayerOp::DwSep(dwsep(&mut r, 2, 3, (2, 2), padding))),
            ];
            for layer in layers.iter() {
                let out = layer.output_shape(x.shape()).unwrap();
                let proj = random(&mut r, &out);
                let err = check_layer(layer, &x, &proj, 1e-5).unwrap();
                assert!(err < REL_TOL, "{}: {err}", layer.name);
            }
        }
        let layer = Layer::new("gated", LayerOp::Gated(gated(&mut r, 2, 2)));
        let x = random(&mut r, &[4, 4, 2]);
        let proj = random(&mut r, &[4, 4, 2]);
        assert!(check_layer(&layer, &x, &proj, 1e-5).unwrap() < REL_TOL);
    }
}
