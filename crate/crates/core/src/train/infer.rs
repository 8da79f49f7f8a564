use std::f64::consts::PI;

use rayon::prelude::*;

use crate::arch::Frenet;
use crate::error::{config_err, Result};
use crate::tensor::Tensor;

/// Tile starts along one axis: stride `window − overlap`, last tile clamped to
/// the border.
pub fn tile_origins(len: usize, window: usize, overlap: usize) -> Result<Vec<usize>> {
    if window == 0 || window > len {
        return config_err!("window {window} does not fit an axis of length {len}");
    }
    if overlap >= window {
        return config_err!("overlap {overlap} must be smaller than window {window}");
    }
    let stride = window - overlap;
    let mut out = vec![0];
    let mut o = 0;
    while o + window < len {
        o = (o + stride).min(len - window);
        out.push(o);
    }
    Ok(out)
}

/// Raised-cosine tile profile, strictly positive.
pub fn tile_profile(window: usize) -> Vec<f64> {
    (0..window)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * (i as f64 + 0.5) / window as f64).cos())
        .collect()
}

/// Tiling of an `h×w` canvas together with the per-pixel weight totals.
#[derive(Clone, Debug)]
pub struct BlendPlan {
    pub h: usize,
    pub w: usize,
    pub window: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    profile: Vec<f64>,
    total: Vec<f64>,
}

impl BlendPlan {
    pub fn new(h: usize, w: usize, window: usize, overlap: usize) -> Result<Self> {
        let rows = tile_origins(h, window, overlap)?;
        let cols = tile_origins(w, window, overlap)?;
        let profile = tile_profile(window);
        let mut total = vec![0.0; h * w];
        for &r in &rows {
            for &c in &cols {
                for y in 0..window {
                    for x in 0..window {
                        total[(r + y) * w + c + x] += profile[y] * profile[x];
                    }
                }
            }
        }
        Ok(Self {
            h,
            w,
            window,
            rows,
            cols,
            profile,
            total,
        })
    }

    /// Tile origins in row-major order.
    pub fn tiles(&self) -> Vec<(usize, usize)> {
        self.rows
            .iter()
            .flat_map(|&r| self.cols.iter().map(move |&c| (r, c)))
            .collect()
    }

    /// Normalized weight of tile `(r, c)` at canvas pixel `(y, x)`; zero
    /// outside the tile.
    pub fn weight(&self, (r, c): (usize, usize), y: usize, x: usize) -> f64 {
        let n = self.window;
        if y < r || x < c || y >= r + n || x >= c + n {
            return 0.0;
        }
        self.profile[y - r] * self.profile[x - c] / self.total[y * self.w + x]
    }
}

/// Runs `f` on overlapping `window×window` tiles and blends the outputs.
pub fn sliding_window_infer<F>(f: F, image: &Tensor, window: usize, overlap: usize) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor> + Sync,
{
    let (c, h, w) = image.dims3()?;
    let plan = BlendPlan::new(h, w, window, overlap)?;
    let tiles = plan.tiles();
    if tiles.len() == 1 {
        return f(image);
    }
    let outs = tiles
        .par_iter()
        .map(|&(r, col)| {
            let tile = Tensor::from_fn(&[c, window, window], |i| {
                let (ch, y, x) = (i / (window * window), i / window % window, i % window);
                image.data()[(ch * h + r + y) * w + col + x]
            });
            let out = f(&tile)?;
            if out.shape() != tile.shape() {
                return config_err!("tile output {:?} differs from input {:?}", out.shape(), tile.shape());
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = vec![0.0f64; c * h * w];
    for (&(r, col), out) in tiles.iter().zip(&outs) {
        for ch in 0..c {
            for y in 0..window {
                for x in 0..window {
                    let wt = plan.profile[y] * plan.profile[x];
                    acc[(ch * h + r + y) * w + col + x] += wt * out.data()[(ch * window + y) * window + x] as f64;
                }
            }
        }
    }
    let data = acc
        .iter()
        .enumerate()
        .map(|(i, v)| (v / plan.total[i % (h * w)]) as f32)
        .collect();
    Tensor::new(&[c, h, w], data)
}

/// Tiled inference with a network whose input size sets the window.
pub fn infer_tiled(net: &Frenet, image: &Tensor, overlap: usize) -> Result<Tensor> {
    if net.cfg.input_h != net.cfg.input_w {
        return config_err!("tiled inference needs a square network input");
    }
    sliding_window_infer(|t| net.forward(t), image, net.cfg.input_h, overlap)
}
