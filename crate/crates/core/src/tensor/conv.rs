use rayon::prelude::*;

use super::{Real, Tensor};
use crate::error::{config_err, Result};

/// Geometry of a 2-D convolution.
///
/// Padding is implied by the kernel: `(k - 1) / 2` zeros on each side, so odd
/// kernels at stride 1 preserve size and a 2×2 kernel at stride 2 halves it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub groups: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Dense 1×1 convolution with bias.
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_h: 1,
            kernel_w: 1,
            stride: 1,
            groups: 1,
            has_bias: true,
        }
    }

    /// 3×3 depthwise convolution with bias.
    pub fn depthwise3(channels: usize) -> Self {
        Self {
            in_channels: channels,
            out_channels: channels,
            kernel_h: 3,
            kernel_w: 3,
            stride: 1,
            groups: channels,
            has_bias: true,
        }
    }

    /// Dense 3×3 convolution with bias.
    pub fn dense3(in_channels: usize, out_channels: usize) -> Self {
        Self {
            kernel_h: 3,
            kernel_w: 3,
            ..Self::pointwise(in_channels, out_channels)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.in_channels,
            self.out_channels,
            self.kernel_h,
            self.kernel_w,
            self.stride,
            self.groups,
        ];
        if fields.contains(&0) {
            return config_err!("conv spec has a zero field: {self:?}");
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return config_err!(
                "channels in={} out={} not divisible by groups={}",
                self.in_channels,
                self.out_channels,
                self.groups
            );
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel_h,
            self.kernel_w,
        ]
    }

    pub fn pad_h(&self) -> usize {
        (self.kernel_h - 1) / 2
    }

    pub fn pad_w(&self) -> usize {
        (self.kernel_w - 1) / 2
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad_h() - self.kernel_h) / self.stride + 1,
            (w + 2 * self.pad_w() - self.kernel_w) / self.stride + 1,
        )
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>()
            + if self.has_bias { self.out_channels } else { 0 }
    }

    /// Multiply-accumulates for one application on an `h×w` input.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let (oh, ow) = self.output_hw(h, w);
        (self.out_channels * (self.in_channels / self.groups) * self.kernel_h * self.kernel_w)
            as u64
            * (oh * ow) as u64
    }

    fn check<T: Real>(
        &self,
        x: &Tensor<T>,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
    ) -> Result<(usize, usize)> {
        self.validate()?;
        let (c, h, w) = x.dims3()?;
        if c != self.in_channels {
            return config_err!(
                "conv expects {} input channels, input has {c} (shape {:?})",
                self.in_channels,
                x.shape()
            );
        }
        if weight.shape() != self.weight_shape() {
            return config_err!(
                "conv weight shape {:?} does not match expected {:?}",
                weight.shape(),
                self.weight_shape()
            );
        }
        match (bias, self.has_bias) {
            (Some(b), true) if b.shape() != [self.out_channels] => {
                return config_err!(
                    "conv bias shape {:?}, expected [{}]",
                    b.shape(),
                    self.out_channels
                )
            }
            (None, true) => return config_err!("conv spec requires a bias"),
            (Some(_), false) => return config_err!("conv spec has no bias but one was given"),
            _ => {}
        }
        if h % self.stride != 0 || w % self.stride != 0 {
            return config_err!("spatial dims {h}×{w} not divisible by stride {}", self.stride);
        }
        if h + 2 * self.pad_h() < self.kernel_h || w + 2 * self.pad_w() < self.kernel_w {
            return config_err!(
                "input {h}×{w} smaller than kernel {}×{}",
                self.kernel_h,
                self.kernel_w
            );
        }
        Ok((h, w))
    }
}

/// Valid output index range for kernel offset `k`: the `o` with
/// `0 <= o*stride + k - pad < n`.
#[inline]
fn out_range(n: usize, n_out: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k).div_ceil(stride);
    // o*stride + k - pad <= n - 1  =>  o <= (n - 1 + pad - k) / stride
    let hi = if n + pad > k {
        ((n - 1 + pad - k) / stride + 1).min(n_out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

const PAR_THRESHOLD: usize = 1 << 18;

/// Cross-correlation with zero padding, grouped, optional bias.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (h, w) = spec.check(x, weight, bias)?;
    let (oh, ow) = spec.output_hw(h, w);
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let (kh, kw, s) = (spec.kernel_h, spec.kernel_w, spec.stride);
    let (ph, pw) = (spec.pad_h(), spec.pad_w());
    let xd = x.data();
    let wd = weight.data();

    let compute = |oc: usize, out: &mut [T]| {
        let g = oc / cout_g;
        let mut acc = vec![0f64; oh * ow];
        for icl in 0..cin_g {
            let ic = g * cin_g + icl;
            let plane = &xd[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kh {
                let (oy0, oy1) = out_range(h, oh, ky, ph, s);
                for kx in 0..kw {
                    let wv = wd[((oc * cin_g + icl) * kh + ky) * kw + kx].f64();
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox0, ox1) = out_range(w, ow, kx, pw, s);
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - ph;
                        let row = &plane[iy * w..(iy + 1) * w];
                        let arow = &mut acc[oy * ow..(oy + 1) * ow];
                        for ox in ox0..ox1 {
                            arow[ox] += wv * row[ox * s + kx - pw].f64();
                        }
                    }
                }
            }
        }
        let b = bias.map_or(0.0, |b| b.data()[oc].f64());
        for (o, a) in out.iter_mut().zip(acc) {
            *o = T::c(a + b);
        }
    };

    let mut out = vec![T::zero(); spec.out_channels * oh * ow];
    let work = spec.out_channels * cin_g * kh * kw * oh * ow;
    if work >= PAR_THRESHOLD {
        out.par_chunks_mut(oh * ow)
            .enumerate()
            .for_each(|(oc, o)| compute(oc, o));
    } else {
        out.chunks_mut(oh * ow)
            .enumerate()
            .for_each(|(oc, o)| compute(oc, o));
    }
    Tensor::new(&[spec.out_channels, oh, ow], out)
}

/// Gradients of [`conv2d`] with respect to input, weight, and bias.
pub struct ConvGrads<T: Real> {
    pub x: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (_, h, w) = x.dims3()?;
    let (oh, ow) = spec.output_hw(h, w);
    if grad_out.shape() != [spec.out_channels, oh, ow] {
        return config_err!(
            "conv grad shape {:?}, expected [{}, {oh}, {ow}]",
            grad_out.shape(),
            spec.out_channels
        );
    }
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let (kh, kw, s) = (spec.kernel_h, spec.kernel_w, spec.stride);
    let (ph, pw) = (spec.pad_h(), spec.pad_w());
    let xd = x.data();
    let wd = weight.data();
    let gd = grad_out.data();

    // Weight gradient, one output channel at a time.
    let wgrad_for = |oc: usize, dw: &mut [T]| {
        let g = oc / cout_g;
        let gplane = &gd[oc * oh * ow..(oc + 1) * oh * ow];
        for icl in 0..cin_g {
            let ic = g * cin_g + icl;
            let plane = &xd[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kh {
                let (oy0, oy1) = out_range(h, oh, ky, ph, s);
                for kx in 0..kw {
                    let (ox0, ox1) = out_range(w, ow, kx, pw, s);
                    let mut acc = 0f64;
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - ph;
                        let row = &plane[iy * w..(iy + 1) * w];
                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                        for ox in ox0..ox1 {
                            acc += grow[ox].f64() * row[ox * s + kx - pw].f64();
                        }
                    }
                    dw[(icl * kh + ky) * kw + kx] = T::c(acc);
                }
            }
        }
    };
    let per_oc = cin_g * kh * kw;
    let mut dw = vec![T::zero(); spec.out_channels * per_oc];
    let work = spec.out_channels * per_oc * oh * ow;
    if work >= PAR_THRESHOLD {
        dw.par_chunks_mut(per_oc)
            .enumerate()
            .for_each(|(oc, c)| wgrad_for(oc, c));
    } else {
        dw.chunks_mut(per_oc)
            .enumerate()
            .for_each(|(oc, c)| wgrad_for(oc, c));
    }

    // Input gradient, one input channel at a time.
    let xgrad_for = |ic: usize, dx: &mut [T]| {
        let g = ic / cin_g;
        let icl = ic % cin_g;
        let mut acc = vec![0f64; h * w];
        for ocl in 0..cout_g {
            let oc = g * cout_g + ocl;
            let gplane = &gd[oc * oh * ow..(oc + 1) * oh * ow];
            for ky in 0..kh {
                let (oy0, oy1) = out_range(h, oh, ky, ph, s);
                for kx in 0..kw {
                    let wv = wd[((oc * cin_g + icl) * kh + ky) * kw + kx].f64();
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox0, ox1) = out_range(w, ow, kx, pw, s);
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - ph;
                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                        let arow = &mut acc[iy * w..(iy + 1) * w];
                        for ox in ox0..ox1 {
                            arow[ox * s + kx - pw] += wv * grow[ox].f64();
                        }
                    }
                }
            }
        }
        for (d, a) in dx.iter_mut().zip(acc) {
            *d = T::c(a);
        }
    };
    let mut dx = vec![T::zero(); spec.in_channels * h * w];
    if work >= PAR_THRESHOLD {
        dx.par_chunks_mut(h * w)
            .enumerate()
            .for_each(|(ic, c)| xgrad_for(ic, c));
    } else {
        dx.chunks_mut(h * w)
            .enumerate()
            .for_each(|(ic, c)| xgrad_for(ic, c));
    }

    let bias = spec.has_bias.then(|| {
        Tensor::from_fn(&[spec.out_channels], |oc| {
            T::c(gd[oc * oh * ow..(oc + 1) * oh * ow]
                .iter()
                .map(|v| v.f64())
                .sum())
        })
    });
    Ok(ConvGrads {
        x: Tensor::new(x.shape(), dx)?,
        weight: Tensor::new(weight.shape(), dw)?,
        bias,
    })
}
