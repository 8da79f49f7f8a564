//! Orthonormal 2-D FFT on `C×H×W` tensors, spectrum centering, and the
//! real/imaginary channel packing used inside every frequency block.
//!
//! Forward and inverse are both scaled by `1/sqrt(H·W)`, so the transform is
//! unitary and Parseval holds without extra factors. Zero frequency sits at
//! index `(0, 0)` until [`fft_shift`] moves it to `(H/2, W/2)`.

use std::f64::consts::PI;

use crate::error::{config_err, Result};
use crate::tensor::{Real, Tensor};

/// A spectrum as two same-shaped `C×H×W` planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor<T: Real = f32> {
    re: Tensor<T>,
    im: Tensor<T>,
}

impl<T: Real> ComplexTensor<T> {
    pub fn new(re: Tensor<T>, im: Tensor<T>) -> Result<Self> {
        if re.shape() != im.shape() {
            return config_err!(
                "real and imaginary planes differ: {:?} vs {:?}",
                re.shape(),
                im.shape()
            );
        }
        re.dims3()?;
        Ok(Self { re, im })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            re: Tensor::zeros(shape),
            im: Tensor::zeros(shape),
        }
    }

    pub fn re(&self) -> &Tensor<T> {
        &self.re
    }

    pub fn im(&self) -> &Tensor<T> {
        &self.im
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn into_parts(self) -> (Tensor<T>, Tensor<T>) {
        (self.re, self.im)
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> f64 {
        self.re.sum_sq_f64() + self.im.sum_sq_f64()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Self::new(self.re.add(&other.re)?, self.im.add(&other.im)?)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        let re = self
            .re
            .mul(&other.re)?
            .sub(&self.im.mul(&other.im)?)?;
        let im = self
            .re
            .mul(&other.im)?
            .add(&self.im.mul(&other.re)?)?;
        Self::new(re, im)
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            re: self.re.scale(s),
            im: self.im.scale(s),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.re
            .max_abs_diff(&other.re)
            .max(self.im.max_abs_diff(&other.im))
    }
}

fn check_pow2(h: usize, w: usize) -> Result<()> {
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return config_err!("FFT needs power-of-two dims, got {h}×{w}");
    }
    Ok(())
}

/// In-place iterative radix-2 transform of one line. `sign` is -1 for the
/// forward kernel `exp(-2πi nk/N)`, +1 for the inverse. Unscaled.
fn fft_line(re: &mut [f64], im: &mut [f64], sign: f64) {
    let n = re.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        let half = len / 2;
        for k in 0..half {
            let (s, c) = (ang * k as f64).sin_cos();
            for start in (0..n).step_by(len) {
                let (a, b) = (start + k, start + k + half);
                let tr = re[b] * c - im[b] * s;
                let ti = re[b] * s + im[b] * c;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

/// Transforms every `H×W` plane in place (rows then columns) and applies the
/// orthonormal scale.
fn fft_planes(re: &mut [f64], im: &mut [f64], c: usize, h: usize, w: usize, sign: f64) {
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut col_re = vec![0.0; h];
    let mut col_im = vec![0.0; h];
    for k in 0..c {
        let pr = &mut re[k * h * w..(k + 1) * h * w];
        let pi = &mut im[k * h * w..(k + 1) * h * w];
        for y in 0..h {
            fft_line(&mut pr[y * w..(y + 1) * w], &mut pi[y * w..(y + 1) * w], sign);
        }
        for x in 0..w {
            for y in 0..h {
                col_re[y] = pr[y * w + x];
                col_im[y] = pi[y * w + x];
            }
            fft_line(&mut col_re, &mut col_im, sign);
            for y in 0..h {
                pr[y * w + x] = col_re[y] * scale;
                pi[y * w + x] = col_im[y] * scale;
            }
        }
    }
}

fn transform<T: Real>(re: &Tensor<T>, im: Option<&Tensor<T>>, sign: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (c, h, w) = re.dims3()?;
    check_pow2(h, w)?;
    let mut r: Vec<f64> = re.data().iter().map(|v| v.f64()).collect();
    let mut i: Vec<f64> = match im {
        Some(im) => im.data().iter().map(|v| v.f64()).collect(),
        None => vec![0.0; r.len()],
    };
    fft_planes(&mut r, &mut i, c, h, w, sign);
    Ok((r, i))
}

fn to_tensor<T: Real>(shape: &[usize], v: Vec<f64>) -> Result<Tensor<T>> {
    Tensor::new(shape, v.into_iter().map(T::c).collect())
}

/// Per-channel orthonormal 2-D DFT of a real tensor, uncentered.
pub fn fft2d<T: Real>(x: &Tensor<T>) -> Result<ComplexTensor<T>> {
    let (r, i) = transform(x, None, -1.0)?;
    ComplexTensor::new(to_tensor(x.shape(), r)?, to_tensor(x.shape(), i)?)
}

/// Forward transform of a complex input.
pub fn fft2d_complex<T: Real>(x: &ComplexTensor<T>) -> Result<ComplexTensor<T>> {
    let (r, i) = transform(&x.re, Some(&x.im), -1.0)?;
    ComplexTensor::new(to_tensor(x.shape(), r)?, to_tensor(x.shape(), i)?)
}

/// Inverse transform keeping both planes.
pub fn ifft2d_complex<T: Real>(x: &ComplexTensor<T>) -> Result<ComplexTensor<T>> {
    let (r, i) = transform(&x.re, Some(&x.im), 1.0)?;
    ComplexTensor::new(to_tensor(x.shape(), r)?, to_tensor(x.shape(), i)?)
}

/// Inverse transform; returns the real part and the largest imaginary
/// magnitude that was discarded.
pub fn ifft2d_with_residue<T: Real>(x: &ComplexTensor<T>) -> Result<(Tensor<T>, f64)> {
    let (r, i) = transform(&x.re, Some(&x.im), 1.0)?;
    let residue = i.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok((to_tensor(x.shape(), r)?, residue))
}

/// Inverse orthonormal transform, real part only.
pub fn ifft2d<T: Real>(x: &ComplexTensor<T>) -> Result<Tensor<T>> {
    ifft2d_with_residue(x).map(|(t, _)| t)
}

/// Moves zero frequency to `(⌊H/2⌋, ⌊W/2⌋)`; with `inverse`, undoes it.
pub fn fft_shift<T: Real>(x: &ComplexTensor<T>, inverse: bool) -> Result<ComplexTensor<T>> {
    let (dy, dx) = shift_amounts(x.shape()[1], x.shape()[2], inverse);
    ComplexTensor::new(
        crate::tensor::ops::roll2d(&x.re, dy, dx)?,
        crate::tensor::ops::roll2d(&x.im, dy, dx)?,
    )
}

/// Signed roll applied by [`fft_shift`].
pub fn shift_amounts(h: usize, w: usize, inverse: bool) -> (isize, isize) {
    if inverse {
        (h.div_ceil(2) as isize, w.div_ceil(2) as isize)
    } else {
        ((h / 2) as isize, (w / 2) as isize)
    }
}

/// `C`-channel spectrum to a `2C`-channel real tensor: real planes first.
pub fn complex_to_channels<T: Real>(x: &ComplexTensor<T>) -> Tensor<T> {
    Tensor::concat_channels(&[&x.re, &x.im]).expect("planes share a shape")
}

/// Splits a `2C`-channel tensor into real (first half) and imaginary parts.
pub fn channels_to_complex<T: Real>(x: &Tensor<T>) -> Result<ComplexTensor<T>> {
    let (c2, _, _) = x.dims3()?;
    if c2 % 2 != 0 {
        return config_err!("cannot split {c2} channels into real/imaginary halves");
    }
    ComplexTensor::new(x.channels(0, c2 / 2)?, x.channels(c2 / 2, c2)?)
}

/// Forward transform of a real `C` tensor straight to packed `2C` channels.
pub fn fft2d_packed<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(complex_to_channels(&fft2d(x)?))
}

/// Inverse transform of a packed `2C` spectrum, real part only.
pub fn ifft2d_packed<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    ifft2d(&channels_to_complex(x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testing::{rand_tensor, rng};

    /// Direct O(N²) orthonormal DFT per plane.
    fn naive_dft(x: &Tensor<f64>) -> ComplexTensor<f64> {
        let (c, h, w) = x.dims3().unwrap();
        let mut re = Tensor::zeros(x.shape());
        let mut im = Tensor::zeros(x.shape());
        let s = 1.0 / ((h * w) as f64).sqrt();
        for k in 0..c {
            for u in 0..h {
                for v in 0..w {
                    let (mut ar, mut ai) = (0.0, 0.0);
                    for y in 0..h {
                        for xx in 0..w {
                            let ph = -2.0 * PI * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                            let val = x.data()[(k * h + y) * w + xx];
                            ar += val * ph.cos();
                            ai += val * ph.sin();
                        }
                    }
                    re.data_mut()[(k * h + u) * w + v] = ar * s;
                    im.data_mut()[(k * h + u) * w + v] = ai * s;
                }
            }
        }
        ComplexTensor::new(re, im).unwrap()
    }

    #[test]
    fn constant_and_impulse() {
        let f = fft2d(&Tensor::<f32>::ones(&[1, 2, 2])).unwrap();
        assert!((f.re().data()[0] - 2.0).abs() < 1e-7);
        assert!(f.re().data()[1..].iter().all(|v| v.abs() < 1e-7));
        assert!(f.im().max_abs() < 1e-7);

        let mut imp = Tensor::<f32>::zeros(&[1, 4, 4]);
        imp.data_mut()[0] = 1.0;
        let f = fft2d(&imp).unwrap();
        assert!(f.re().data().iter().all(|v| (v - 0.25).abs() < 1e-7));
        assert!(f.im().max_abs() < 1e-7);
    }

    #[test]
    fn matches_naive_dft() {
        let x = rand_tensor::<f64>(&mut rng(3), &[2, 8, 8]);
        assert!(fft2d(&x).unwrap().max_abs_diff(&naive_dft(&x)) < 1e-4);
        let x = rand_tensor::<f64>(&mut rng(4), &[1, 4, 16]);
        assert!(fft2d(&x).unwrap().max_abs_diff(&naive_dft(&x)) < 1e-10);
    }

    #[test]
    fn inverse_cases() {
        let x = rand_tensor::<f32>(&mut rng(5), &[3, 16, 8]);
        let (back, residue) = ifft2d_with_residue(&fft2d(&x).unwrap()).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-5);
        assert!(residue < 1e-4);

        let z = ifft2d(&ComplexTensor::<f32>::zeros(&[1, 4, 4])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));

        let mut dc = ComplexTensor::<f32>::zeros(&[1, 2, 2]);
        dc.re.data_mut()[0] = 2.0;
        let img = ifft2d(&dc).unwrap();
        assert!(img.data().iter().all(|v| (v - 1.0).abs() < 1e-7));
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(fft2d(&Tensor::<f32>::ones(&[1, 6, 8])).is_err());
    }

    #[test]
    fn shift_moves_dc_to_center() {
        let mut x = ComplexTensor::<f32>::zeros(&[1, 4, 4]);
        x.re.data_mut()[0] = 1.0;
        let s = fft_shift(&x, false).unwrap();
        assert_eq!(s.re().data()[2 * 4 + 2], 1.0);
        assert_eq!(fft_shift(&s, false).unwrap(), x);
        assert_eq!(fft_shift(&s, true).unwrap(), x);
    }

    #[test]
    fn shift_index_oracle() {
        let mut r = rng(6);
        let x = ComplexTensor::new(
            rand_tensor::<f32>(&mut r, &[1, 8, 8]),
            rand_tensor::<f32>(&mut r, &[1, 8, 8]),
        )
        .unwrap();
        let s = fft_shift(&x, false).unwrap();
        for y in 0..8 {
            for xx in 0..8 {
                let src = ((y + 4) % 8) * 8 + (xx + 4) % 8;
                assert_eq!(s.re().data()[y * 8 + xx], x.re().data()[src]);
                assert_eq!(s.im().data()[y * 8 + xx], x.im().data()[src]);
            }
        }
        // Odd dims: forward then inverse restores.
        let o = ComplexTensor::new(
            rand_tensor::<f32>(&mut r, &[2, 5, 3]),
            rand_tensor::<f32>(&mut r, &[2, 5, 3]),
        )
        .unwrap();
        assert_eq!(fft_shift(&fft_shift(&o, false).unwrap(), true).unwrap(), o);
    }

    #[test]
    fn channel_packing() {
        let x = ComplexTensor::new(Tensor::<f32>::ones(&[1, 2, 2]), Tensor::zeros(&[1, 2, 2])).unwrap();
        let p = complex_to_channels(&x);
        assert_eq!(p.shape(), &[2, 2, 2]);
        assert_eq!(&p.data()[..4], &[1.0; 4]);
        assert_eq!(&p.data()[4..], &[0.0; 4]);
        assert_eq!(channels_to_complex(&p).unwrap(), x);

        let mut r = rng(7);
        let x = ComplexTensor::new(
            rand_tensor::<f32>(&mut r, &[3, 4, 4]),
            rand_tensor::<f32>(&mut r, &[3, 4, 4]),
        )
        .unwrap();
        let p = complex_to_channels(&x);
        assert_eq!(p.channels(0, 3).unwrap(), *x.re());
        assert_eq!(p.channels(3, 6).unwrap(), *x.im());
        assert!(channels_to_complex(&Tensor::<f32>::ones(&[3, 2, 2])).is_err());
    }

    #[test]
    fn hermitian_symmetry_for_real_input() {
        let x = rand_tensor::<f32>(&mut rng(8), &[2, 8, 16]);
        let f = fft2d(&x).unwrap();
        let (c, h, w) = (2, 8, 16);
        for k in 0..c {
            for u in 0..h {
                for v in 0..w {
                    let a = (k * h + u) * w + v;
                    let b = (k * h + (h - u) % h) * w + (w - v) % w;
                    assert!((f.re().data()[a] - f.re().data()[b]).abs() < 1e-4);
                    assert!((f.im().data()[a] + f.im().data()[b]).abs() < 1e-4);
                }
            }
        }
    }
}
