//! Forward kernels and their vector-Jacobian products.
//!
//! Everything here is a pure function on [`Tensor`]s. The autograd layer in
//! [`super::autograd`] wires them into a tape.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::{Real, Tensor};
use crate::error::{config_err, Result};

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn gelu_scalar(x: f64) -> f64 {
    x * phi(x)
}

fn gelu_grad_scalar(x: f64) -> f64 {
    phi(x) + x * (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Exact GELU, `x * Φ(x)`.
pub fn gelu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::c(gelu_scalar(v.f64())))
}

pub fn gelu_backward<T: Real>(x: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(g, |v, gv| T::c(gelu_grad_scalar(v.f64()) * gv.f64()))
}

/// First channel half times second channel half.
pub fn simple_gate<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c2, h, w) = x.dims3()?;
    if c2 % 2 != 0 {
        return config_err!("simple gate needs an even channel count, got {c2}");
    }
    let half = c2 / 2 * h * w;
    let d = x.data();
    let out = d[..half].iter().zip(&d[half..]).map(|(&a, &b)| a * b).collect();
    Tensor::new(&[c2 / 2, h, w], out)
}

pub fn simple_gate_backward<T: Real>(x: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    let (c2, h, w) = x.dims3()?;
    let half = c2 / 2 * h * w;
    let d = x.data();
    let gd = g.data();
    let mut out = Vec::with_capacity(2 * half);
    out.extend((0..half).map(|i| gd[i] * d[half + i]));
    out.extend((0..half).map(|i| gd[i] * d[i]));
    Tensor::new(&[c2, h, w], out)
}

/// Per-position channel statistics kept for the backward pass.
pub struct LayerNormCache<T: Real> {
    /// Normalized input before the affine transform.
    pub xhat: Tensor<T>,
    /// 1/sqrt(var + eps) per spatial position.
    pub rstd: Vec<f64>,
}

/// Normalizes the channel vector at every spatial position, then applies
/// per-channel scale and shift. Variance is biased.
pub fn layer_norm_channels<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let (c, h, w) = x.dims3()?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return config_err!(
            "layer norm over {c} channels got gamma {:?} and beta {:?}",
            gamma.shape(),
            beta.shape()
        );
    }
    if eps <= 0.0 {
        return config_err!("layer norm eps must be positive, got {eps}");
    }
    let hw = h * w;
    let d = x.data();
    let mut xhat = vec![T::zero(); c * hw];
    let mut out = vec![T::zero(); c * hw];
    let mut rstd = vec![0.0; hw];
    for p in 0..hw {
        let mean = (0..c).map(|k| d[k * hw + p].f64()).sum::<f64>() / c as f64;
        let var = (0..c)
            .map(|k| (d[k * hw + p].f64() - mean).powi(2))
            .sum::<f64>()
            / c as f64;
        let r = 1.0 / (var + eps).sqrt();
        rstd[p] = r;
        for k in 0..c {
            let n = (d[k * hw + p].f64() - mean) * r;
            xhat[k * hw + p] = T::c(n);
            out[k * hw + p] = T::c(n * gamma.data()[k].f64() + beta.data()[k].f64());
        }
    }
    Ok((
        Tensor::new(x.shape(), out)?,
        LayerNormCache {
            xhat: Tensor::new(x.shape(), xhat)?,
            rstd,
        },
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<T: Real>(
    cache: &LayerNormCache<T>,
    gamma: &Tensor<T>,
    g: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (c, h, w) = cache.xhat.dims3()?;
    let hw = h * w;
    let xh = cache.xhat.data();
    let gd = g.data();
    let mut dx = vec![T::zero(); c * hw];
    let mut dgamma = vec![0f64; c];
    let mut dbeta = vec![0f64; c];
    for p in 0..hw {
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for k in 0..c {
            let gv = gd[k * hw + p].f64();
            let xv = xh[k * hw + p].f64();
            dgamma[k] += gv * xv;
            dbeta[k] += gv;
            let dn = gv * gamma.data()[k].f64();
            mean_d += dn;
            mean_dx += dn * xv;
        }
        mean_d /= c as f64;
        mean_dx /= c as f64;
        for k in 0..c {
            let dn = gd[k * hw + p].f64() * gamma.data()[k].f64();
            let xv = xh[k * hw + p].f64();
            dx[k * hw + p] = T::c(cache.rstd[p] * (dn - mean_d - xv * mean_dx));
        }
    }
    Ok((
        Tensor::new(g.shape(), dx)?,
        Tensor::new(&[c], dgamma.into_iter().map(T::c).collect())?,
        Tensor::new(&[c], dbeta.into_iter().map(T::c).collect())?,
    ))
}

/// Per-channel mean over all spatial positions, `C×1×1`.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    let hw = h * w;
    let d = x.data();
    Tensor::new(
        &[c, 1, 1],
        (0..c)
            .map(|k| T::c(d[k * hw..(k + 1) * hw].iter().map(|v| v.f64()).sum::<f64>() / hw as f64))
            .collect(),
    )
}

/// Per-channel block sums of `p_h×p_w` tiles, giving `C×(H/p_h)×(W/p_w)`.
fn block_sum<T: Real>(x: &Tensor<T>, rows: usize, cols: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    if rows == 0 || cols == 0 || h % rows != 0 || w % cols != 0 {
        return config_err!("{h}×{w} map cannot be tiled by a {rows}×{cols} grid");
    }
    let (ph, pw) = (h / rows, w / cols);
    let d = x.data();
    let mut out = vec![0f64; c * rows * cols];
    for k in 0..c {
        for y in 0..h {
            for xx in 0..w {
                out[(k * rows + y / ph) * cols + xx / pw] += d[(k * h + y) * w + xx].f64();
            }
        }
    }
    Tensor::new(&[c, rows, cols], out.into_iter().map(T::c).collect())
}

/// Repeats each cell of a `C×m×n` map over an `(H/m)×(W/n)` block.
pub fn block_broadcast<T: Real>(f: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (c, rows, cols) = f.dims3()?;
    if h % rows != 0 || w % cols != 0 {
        return config_err!("cannot broadcast {rows}×{cols} grid onto {h}×{w}");
    }
    let (ph, pw) = (h / rows, w / cols);
    let fd = f.data();
    Ok(Tensor::from_fn(&[c, h, w], |i| {
        let k = i / (h * w);
        let y = (i / w) % h;
        let x = i % w;
        fd[(k * rows + y / ph) * cols + x / pw]
    }))
}

/// Adjoint of [`block_broadcast`].
pub fn block_broadcast_backward<T: Real>(
    g: &Tensor<T>,
    rows: usize,
    cols: usize,
) -> Result<Tensor<T>> {
    block_sum(g, rows, cols)
}

/// For each patch `(i, j)` of a `rows×cols` tiling and each channel, the sum
/// of `kernel[i*cols + j] ⊙ patch` plus `bias[i*cols + j]`.
///
/// `kernels` is `(rows*cols)×(p_h*p_w)`, `bias` is `rows*cols` long.
pub fn patch_weighted_sum<T: Real>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    rows: usize,
    cols: usize,
) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    if rows == 0 || cols == 0 || h % rows != 0 || w % cols != 0 {
        return config_err!("{h}×{w} map cannot be tiled by a {rows}×{cols} grid");
    }
    let (ph, pw) = (h / rows, w / cols);
    let np = rows * cols;
    if kernels.shape() != [np, ph * pw] || bias.len() != np {
        return config_err!(
            "patch kernels {:?} / bias {:?} do not fit a {rows}×{cols} grid of {ph}×{pw} patches",
            kernels.shape(),
            bias.shape()
        );
    }
    let d = x.data();
    let kd = kernels.data();
    let mut out = vec![T::zero(); c * np];
    for k in 0..c {
        for i in 0..rows {
            for j in 0..cols {
                let pidx = i * cols + j;
                let mut acc = bias.data()[pidx].f64();
                for u in 0..ph {
                    for v in 0..pw {
                        acc += kd[pidx * ph * pw + u * pw + v].f64()
                            * d[(k * h + i * ph + u) * w + j * pw + v].f64();
                    }
                }
                out[k * np + pidx] = T::c(acc);
            }
        }
    }
    Tensor::new(&[c, rows, cols], out)
}

/// Returns `(dx, dkernels, dbias)`.
pub fn patch_weighted_sum_backward<T: Real>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    g: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (c, h, w) = x.dims3()?;
    let (_, rows, cols) = g.dims3()?;
    let (ph, pw) = (h / rows, w / cols);
    let np = rows * cols;
    let d = x.data();
    let kd = kernels.data();
    let gd = g.data();
    let mut dx = vec![T::zero(); c * h * w];
    let mut dk = vec![0f64; np * ph * pw];
    let mut db = vec![0f64; np];
    for k in 0..c {
        for i in 0..rows {
            for j in 0..cols {
                let pidx = i * cols + j;
                let gv = gd[k * np + pidx].f64();
                db[pidx] += gv;
                for u in 0..ph {
                    for v in 0..pw {
                        let xi = (k * h + i * ph + u) * w + j * pw + v;
                        let ki = pidx * ph * pw + u * pw + v;
                        dx[xi] = T::c(gv * kd[ki].f64());
                        dk[ki] += gv * d[xi].f64();
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape(), dx)?,
        Tensor::new(kernels.shape(), dk.into_iter().map(T::c).collect())?,
        Tensor::new(&[np], db.into_iter().map(T::c).collect())?,
    ))
}

/// Affine map on rows: `x (N×in) · wᵀ (in×out) + b`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, fin) = match x.shape() {
        &[n, f] => (n, f),
        s => return config_err!("linear input must be N×in, got {s:?}"),
    };
    let fout = match w.shape() {
        &[o, i] if i == fin => o,
        s => return config_err!("linear weight {s:?} does not accept {fin} inputs"),
    };
    if b.shape() != [fout] {
        return config_err!("linear bias {:?}, expected [{fout}]", b.shape());
    }
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    Tensor::new(
        &[n, fout],
        (0..n * fout)
            .map(|idx| {
                let (r, o) = (idx / fout, idx % fout);
                let acc: f64 = (0..fin)
                    .map(|i| xd[r * fin + i].f64() * wd[o * fin + i].f64())
                    .sum();
                T::c(acc + bd[o].f64())
            })
            .collect(),
    )
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, fin) = (x.shape()[0], x.shape()[1]);
    let fout = w.shape()[0];
    let (xd, wd, gd) = (x.data(), w.data(), g.data());
    let dx = (0..n * fin)
        .map(|idx| {
            let (r, i) = (idx / fin, idx % fin);
            T::c((0..fout).map(|o| gd[r * fout + o].f64() * wd[o * fin + i].f64()).sum())
        })
        .collect();
    let dw = (0..fout * fin)
        .map(|idx| {
            let (o, i) = (idx / fin, idx % fin);
            T::c((0..n).map(|r| gd[r * fout + o].f64() * xd[r * fin + i].f64()).sum())
        })
        .collect();
    let db = (0..fout)
        .map(|o| T::c((0..n).map(|r| gd[r * fout + o].f64()).sum()))
        .collect();
    Ok((
        Tensor::new(x.shape(), dx)?,
        Tensor::new(w.shape(), dw)?,
        Tensor::new(&[fout], db)?,
    ))
}

/// Pixel shuffle: `(C·r²)×H×W → C×(rH)×(rW)` with
/// `out[c, y*r + i, x*r + j] = in[c*r² + i*r + j, y, x]`.
pub fn depth_to_space<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    if r == 0 || c % (r * r) != 0 {
        return config_err!("depth_to_space({r}) needs channels divisible by {}, got {c}", r * r);
    }
    let co = c / (r * r);
    let (ho, wo) = (h * r, w * r);
    let d = x.data();
    Ok(Tensor::from_fn(&[co, ho, wo], |idx| {
        let k = idx / (ho * wo);
        let yo = (idx / wo) % ho;
        let xo = idx % wo;
        let ci = k * r * r + (yo % r) * r + xo % r;
        d[(ci * h + yo / r) * w + xo / r]
    }))
}

/// Inverse of [`depth_to_space`], which is also its adjoint.
pub fn space_to_depth<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return config_err!("space_to_depth({r}) on {h}×{w}");
    }
    let (hi, wi) = (h / r, w / r);
    let ci = c * r * r;
    let d = x.data();
    Ok(Tensor::from_fn(&[ci, hi, wi], |idx| {
        let k = idx / (hi * wi);
        let y = (idx / wi) % hi;
        let xx = idx % wi;
        let (co, off) = (k / (r * r), k % (r * r));
        d[(co * h + y * r + off / r) * w + xx * r + off % r]
    }))
}

/// Circular shift of every channel plane by `(dy, dx)`:
/// `out[y, x] = in[(y - dy) mod H, (x - dx) mod W]`.
pub fn roll2d<T: Real>(x: &Tensor<T>, dy: isize, dx: isize) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    let sy = dy.rem_euclid(h as isize) as usize;
    let sx = dx.rem_euclid(w as isize) as usize;
    let d = x.data();
    let mut out = vec![T::zero(); d.len()];
    for k in 0..c {
        for y in 0..h {
            let yo = (y + sy) % h;
            for xx in 0..w {
                out[(k * h + yo) * w + (xx + sx) % w] = d[(k * h + y) * w + xx];
            }
        }
    }
    Tensor::new(x.shape(), out)
}
