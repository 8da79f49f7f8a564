//! Position-conditioned modulation of centered spectra.
//!
//! The spectrum is cut into a `g×g` grid of non-overlapping patches. Each
//! patch's normalized distance from the map center drives two small MLPs
//! (kernel-bias generators) that emit a `p_h×p_w` kernel and a scalar bias.
//! The kernel-weighted patch sum plus bias is projected by a 1×1 conv into a
//! per-channel factor, which multiplies the patch.

use rand::Rng;

use crate::error::{config_err, Result};
use crate::tensor::{init, ConvSpec, ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Hidden width of each kernel-bias generator.
pub const KBG_HIDDEN: usize = 16;

/// Non-overlapping tiling of an `H×W` map with per-patch center distances.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    /// Row-major `rows×cols`, each in `[0, 1]`.
    pub distances: Vec<f64>,
}

impl PatchGrid {
    pub fn height(&self) -> usize {
        self.rows * self.patch_h
    }

    pub fn width(&self) -> usize {
        self.cols * self.patch_w
    }

    pub fn num_patches(&self) -> usize {
        self.rows * self.cols
    }

    pub fn patch_len(&self) -> usize {
        self.patch_h * self.patch_w
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.cols + j]
    }

    /// Distances as an `N×1` matrix, the generators' input batch.
    pub fn distance_column<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn(&[self.num_patches(), 1], |i| T::c(self.distances[i]))
    }

    fn check_tiles(&self, h: usize, w: usize) -> Result<()> {
        if self.height() != h || self.width() != w {
            return config_err!(
                "{}×{} grid of {}×{} patches does not tile a {h}×{w} map",
                self.rows,
                self.cols,
                self.patch_h,
                self.patch_w
            );
        }
        Ok(())
    }
}

/// Largest power-of-two `g ≤ min(target, H, W)` dividing both dims, with
/// distances normalized by the center-to-corner length.
pub fn make_patch_grid(h: usize, w: usize, target: usize) -> PatchGrid {
    let limit = target.min(h).min(w).max(1);
    let mut g = 1usize << (usize::BITS - 1 - limit.leading_zeros());
    while g > 1 && (h % g != 0 || w % g != 0) {
        g /= 2;
    }
    let (ph, pw) = (h / g, w / g);
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let norm = cy.hypot(cx);
    let distances = (0..g * g)
        .map(|idx| {
            let (i, j) = (idx / g, idx % g);
            let py = (i as f64 + 0.5) * ph as f64;
            let px = (j as f64 + 0.5) * pw as f64;
            (py - cy).hypot(px - cx) / norm
        })
        .collect();
    PatchGrid {
        rows: g,
        cols: g,
        patch_h: ph,
        patch_w: pw,
        distances,
    }
}

/// Weights of a two-layer generator `d ↦ w2·gelu(w1·d + b1) + b2`.
#[derive(Clone, Debug)]
pub struct KbgParams<T: Real = f32> {
    /// `hidden×1`
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    /// `out×hidden`
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

impl<T: Real> KbgParams<T> {
    pub fn hidden(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn out(&self) -> usize {
        self.w2.shape()[0]
    }

    pub fn random(rng: &mut impl Rng, hidden: usize, out: usize) -> Self {
        Self {
            w1: init::kaiming_linear(rng, hidden, 1),
            b1: Tensor::zeros(&[hidden]),
            w2: init::kaiming_linear(rng, out, hidden),
            b2: Tensor::zeros(&[out]),
        }
    }
}

/// Full set of weights for one modulation unit, outside any network.
#[derive(Clone, Debug)]
pub struct AfpmParams<T: Real = f32> {
    pub kernel_kbg: KbgParams<T>,
    pub bias_kbg: KbgParams<T>,
    pub proj: ConvSpec,
    pub proj_weight: Tensor<T>,
    pub proj_bias: Tensor<T>,
}

impl<T: Real> AfpmParams<T> {
    pub fn random(rng: &mut impl Rng, channels: usize, grid: &PatchGrid) -> Self {
        let proj = ConvSpec::pointwise(channels, channels);
        Self {
            kernel_kbg: KbgParams::random(rng, KBG_HIDDEN, grid.patch_len()),
            bias_kbg: KbgParams::random(rng, KBG_HIDDEN, 1),
            proj,
            proj_weight: init::kaiming_conv(rng, &proj),
            proj_bias: Tensor::zeros(&[channels]),
        }
    }
}

/// Generator weights bound on a tape.
pub struct KbgVars<'a, 't, T: Real> {
    pub w1: &'a Var<'t, T>,
    pub b1: &'a Var<'t, T>,
    pub w2: &'a Var<'t, T>,
    pub b2: &'a Var<'t, T>,
}

impl<'t, T: Real> KbgVars<'_, 't, T> {
    /// Applies the generator to an `N×1` batch of distances.
    pub fn forward(&self, d: &Var<'t, T>) -> Result<Var<'t, T>> {
        d.linear(self.w1, self.b1)?.gelu().linear(self.w2, self.b2)
    }
}

/// How patch content is aggregated before the projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    /// Generated kernel and bias.
    Adaptive,
    /// Plain per-channel patch mean, no generators.
    Pooling,
}

/// Kernel and bias generators bound on a tape.
pub struct Generators<'a, 't, T: Real> {
    pub kernel: KbgVars<'a, 't, T>,
    pub bias: KbgVars<'a, 't, T>,
}

/// Modulation on a tape. Without generators the patch mean is used.
pub fn afpm_apply<'t, T: Real>(
    x: &Var<'t, T>,
    grid: &PatchGrid,
    generators: Option<&Generators<'_, 't, T>>,
    proj: &ConvSpec,
    proj_weight: &Var<'t, T>,
    proj_bias: &Var<'t, T>,
) -> Result<Var<'t, T>> {
    let (_, h, w) = x.value().dims3()?;
    grid.check_tiles(h, w)?;
    let pooled = aggregate(x, grid, generators)?;
    let factor = pooled.conv2d(proj, proj_weight, Some(proj_bias))?;
    factor.block_broadcast(h, w)?.mul(x)
}

/// Per-patch, per-channel aggregate `C×rows×cols` (before projection).
pub fn aggregate<'t, T: Real>(
    x: &Var<'t, T>,
    grid: &PatchGrid,
    generators: Option<&Generators<'_, 't, T>>,
) -> Result<Var<'t, T>> {
    let tape = x.tape();
    let (kernels, bias) = match generators {
        Some(g) => {
            let d = tape.constant(grid.distance_column::<T>());
            let k = g.kernel.forward(&d)?;
            let b = g.bias.forward(&d)?;
            if k.shape() != [grid.num_patches(), grid.patch_len()] || b.shape() != [grid.num_patches(), 1] {
                return config_err!(
                    "generators emit kernel {:?} and bias {:?}, grid needs [{}, {}] and [{}, 1]",
                    k.shape(),
                    b.shape(),
                    grid.num_patches(),
                    grid.patch_len(),
                    grid.num_patches()
                );
            }
            (k, b)
        }
        None => {
            let inv = T::c(1.0 / grid.patch_len() as f64);
            (
                tape.constant(Tensor::full(&[grid.num_patches(), grid.patch_len()], inv)),
                tape.constant(Tensor::zeros(&[grid.num_patches(), 1])),
            )
        }
    };
    x.patch_weighted_sum(&kernels, &bias, grid.rows, grid.cols)
}

/// Evaluates one generator at a single distance.
pub fn kbg_forward<T: Real>(params: &KbgParams<T>, d: f64) -> Result<Tensor<T>> {
    let tape = Tape::inference();
    let (w1, b1, w2, b2) = (
        tape.constant(params.w1.clone()),
        tape.constant(params.b1.clone()),
        tape.constant(params.w2.clone()),
        tape.constant(params.b2.clone()),
    );
    let vars = KbgVars { w1: &w1, b1: &b1, w2: &w2, b2: &b2 };
    let out = vars.forward(&tape.constant(Tensor::full(&[1, 1], T::c(d))))?;
    out.value().clone().reshape(&[params.out()])
}

fn run_standalone<T: Real>(
    x: &Tensor<T>,
    params: &AfpmParams<T>,
    grid: &PatchGrid,
    aggregation: Aggregation,
) -> Result<Tensor<T>> {
    let tape = Tape::inference();
    let c = |t: &Tensor<T>| tape.constant(t.clone());
    let k = &params.kernel_kbg;
    let b = &params.bias_kbg;
    let (kw1, kb1, kw2, kb2) = (c(&k.w1), c(&k.b1), c(&k.w2), c(&k.b2));
    let (bw1, bb1, bw2, bb2) = (c(&b.w1), c(&b.b1), c(&b.w2), c(&b.b2));
    let generators = Generators {
        kernel: KbgVars { w1: &kw1, b1: &kb1, w2: &kw2, b2: &kb2 },
        bias: KbgVars { w1: &bw1, b1: &bb1, w2: &bw2, b2: &bb2 },
    };
    let out = afpm_apply(
        &c(x),
        grid,
        (aggregation == Aggregation::Adaptive).then_some(&generators),
        &params.proj,
        &c(&params.proj_weight),
        &c(&params.proj_bias),
    )?;
    Ok(out.value().clone())
}

/// Adaptive modulation of a `C×H×W` map.
pub fn afpm_forward<T: Real>(x: &Tensor<T>, params: &AfpmParams<T>, grid: &PatchGrid) -> Result<Tensor<T>> {
    run_standalone(x, params, grid, Aggregation::Adaptive)
}

/// Same pipeline with the adaptive aggregation replaced by patch means.
pub fn afpm_pooling_variant<T: Real>(
    x: &Tensor<T>,
    params: &AfpmParams<T>,
    grid: &PatchGrid,
) -> Result<Tensor<T>> {
    run_standalone(x, params, grid, Aggregation::Pooling)
}

/// Network-resident generator: parameter handles and sizes.
#[derive(Clone, Debug)]
pub struct KbgLayer {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub hidden: usize,
    pub out: usize,
}

impl KbgLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        hidden: usize,
        out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let p = KbgParams::<T>::random(rng, hidden, out);
        Ok(Self {
            w1: store.add(format!("{prefix}.fc1.weight"), p.w1)?,
            b1: store.add(format!("{prefix}.fc1.bias"), p.b1)?,
            w2: store.add(format!("{prefix}.fc2.weight"), p.w2)?,
            b2: store.add(format!("{prefix}.fc2.bias"), p.b2)?,
            hidden,
            out,
        })
    }

    pub fn bind<'a, 't, T: Real>(&self, p: &'a [Var<'t, T>]) -> KbgVars<'a, 't, T> {
        KbgVars {
            w1: &p[self.w1.index()],
            b1: &p[self.b1.index()],
            w2: &p[self.w2.index()],
            b2: &p[self.b2.index()],
        }
    }

    pub fn params<T: Real>(&self, store: &ParamStore<T>) -> KbgParams<T> {
        KbgParams {
            w1: store.value(self.w1).clone(),
            b1: store.value(self.b1).clone(),
            w2: store.value(self.w2).clone(),
            b2: store.value(self.b2).clone(),
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.hidden + self.hidden * self.out + self.out
    }

    /// Multiply-accumulates of both linear layers over `n` distances.
    pub fn macs(&self, n: usize) -> u64 {
        (n * (self.hidden + self.hidden * self.out)) as u64
    }
}

/// Network-resident modulation unit for one fixed map size.
#[derive(Clone, Debug)]
pub struct AfpmLayer {
    pub grid: PatchGrid,
    /// Kernel and bias generators; absent for the pooling variant.
    pub generators: Option<(KbgLayer, KbgLayer)>,
    pub proj: ConvSpec,
    pub proj_weight: ParamId,
    pub proj_bias: ParamId,
}

impl AfpmLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        h: usize,
        w: usize,
        grid_target: usize,
        aggregation: Aggregation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let grid = make_patch_grid(h, w, grid_target);
        let proj = ConvSpec::pointwise(channels, channels);
        let generators = match aggregation {
            Aggregation::Adaptive => Some((
                KbgLayer::new(store, &format!("{prefix}.kernel_kbg"), KBG_HIDDEN, grid.patch_len(), rng)?,
                KbgLayer::new(store, &format!("{prefix}.bias_kbg"), KBG_HIDDEN, 1, rng)?,
            )),
            Aggregation::Pooling => None,
        };
        Ok(Self {
            generators,
            proj_weight: store.add(format!("{prefix}.proj.weight"), init::kaiming_conv(rng, &proj))?,
            proj_bias: store.add(format!("{prefix}.proj.bias"), Tensor::zeros(&[channels]))?,
            proj,
            grid,
        })
    }

    pub fn aggregation(&self) -> Aggregation {
        match self.generators {
            Some(_) => Aggregation::Adaptive,
            None => Aggregation::Pooling,
        }
    }

    pub fn forward<'t, T: Real>(&self, x: &Var<'t, T>, p: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let generators = self.generators.as_ref().map(|(k, b)| Generators {
            kernel: k.bind(p),
            bias: b.bind(p),
        });
        afpm_apply(
            x,
            &self.grid,
            generators.as_ref(),
            &self.proj,
            &p[self.proj_weight.index()],
            &p[self.proj_bias.index()],
        )
    }

    /// Standalone weights; the pooling variant gets zero generators.
    pub fn params<T: Real>(&self, store: &ParamStore<T>) -> AfpmParams<T> {
        let zero = |out: usize| KbgParams {
            w1: Tensor::zeros(&[KBG_HIDDEN, 1]),
            b1: Tensor::zeros(&[KBG_HIDDEN]),
            w2: Tensor::zeros(&[out, KBG_HIDDEN]),
            b2: Tensor::zeros(&[out]),
        };
        let (kernel_kbg, bias_kbg) = match &self.generators {
            Some((k, b)) => (k.params(store), b.params(store)),
            None => (zero(self.grid.patch_len()), zero(1)),
        };
        AfpmParams {
            kernel_kbg,
            bias_kbg,
            proj: self.proj,
            proj_weight: store.value(self.proj_weight).clone(),
            proj_bias: store.value(self.proj_bias).clone(),
        }
    }

    /// The generated `p_h×p_w` kernel for every patch, as `(rows·cols)×p_h×p_w`.
    pub fn kernels<T: Real>(&self, store: &ParamStore<T>) -> Result<Option<Tensor<T>>> {
        let Some((k, _)) = &self.generators else {
            return Ok(None);
        };
        let params = k.params(store);
        let mut data = Vec::with_capacity(self.grid.num_patches() * self.grid.patch_len());
        for &d in &self.grid.distances {
            data.extend_from_slice(kbg_forward(&params, d)?.data());
        }
        Tensor::new(
            &[self.grid.num_patches(), self.grid.patch_h, self.grid.patch_w],
            data,
        )
        .map(Some)
    }

    pub fn param_count(&self) -> usize {
        let g = self
            .generators
            .as_ref()
            .map_or(0, |(k, b)| k.param_count() + b.param_count());
        g + self.proj.param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testing::{rand_tensor, rng};

    /// Independent coordinate loop for the distance formula.
    fn distance_oracle(h: usize, w: usize, g: usize, i: usize, j: usize) -> f64 {
        let (ph, pw) = (h as f64 / g as f64, w as f64 / g as f64);
        let mut sy = 0.0;
        let mut sx = 0.0;
        // Center of a patch = mean of its pixel-center coordinates + 0.5 offset
        // convention: pixel k covers [k, k+1).
        for u in 0..ph as usize {
            sy += (i as f64 * ph) + u as f64 + 0.5;
        }
        for v in 0..pw as usize {
            sx += (j as f64 * pw) + v as f64 + 0.5;
        }
        let (py, px) = (sy / ph, sx / pw);
        let dy = py - h as f64 / 2.0;
        let dx = px - w as f64 / 2.0;
        (dy * dy + dx * dx).sqrt() / ((h * h + w * w) as f64 / 4.0).sqrt()
    }

    #[test]
    fn grid_for_64_map() {
        let g = make_patch_grid(64, 64, 8);
        assert_eq!((g.rows, g.cols, g.patch_h, g.patch_w), (8, 8, 8, 8));
        assert!((g.distance(0, 0) - 0.875).abs() < 1e-12);
        assert!((g.distance(3, 3) - 0.125).abs() < 1e-12);
        assert_eq!(g.distance(3, 3), g.distance(4, 4));
        for i in 0..8 {
            for j in 0..8 {
                assert!((g.distance(i, j) - distance_oracle(64, 64, 8, i, j)).abs() < 1e-12);
                assert_eq!(g.distance(i, j), g.distance(7 - i, 7 - j));
            }
        }
    }

    #[test]
    fn coarser_fallback_and_rectangles() {
        let g = make_patch_grid(4, 4, 8);
        assert_eq!((g.rows, g.patch_h), (4, 1));
        let g = make_patch_grid(16, 64, 8);
        assert_eq!((g.rows, g.cols, g.patch_h, g.patch_w), (8, 8, 2, 8));
        assert!(g.distances.iter().all(|&d| (0.0..=1.0).contains(&d)));
        let g = make_patch_grid(1, 1, 8);
        assert_eq!((g.rows, g.patch_h), (1, 1));
        assert_eq!(g.distance(0, 0), 0.0);
        let g = make_patch_grid(32, 32, 6);
        assert_eq!(g.rows, 4);
    }

    #[test]
    fn kbg_cases() {
        let mut p = KbgParams::<f64>::random(&mut rng(1), 16, 4);
        p.w1 = Tensor::zeros(&[16, 1]);
        p.w2 = Tensor::zeros(&[4, 16]);
        p.b2 = Tensor::new(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(kbg_forward(&p, 0.3).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);

        let unit = KbgParams::<f64> {
            w1: Tensor::ones(&[1, 1]),
            b1: Tensor::zeros(&[1]),
            w2: Tensor::ones(&[1, 1]),
            b2: Tensor::zeros(&[1]),
        };
        let y = kbg_forward(&unit, 1.0).unwrap().item();
        assert!((y - crate::tensor::testing::normal_cdf_series(1.0)).abs() < 1e-12);
        assert!((y - 0.8413447).abs() < 1e-7);

        let grid = make_patch_grid(64, 64, 8);
        let mut store = ParamStore::<f32>::new();
        let layer = AfpmLayer::new(&mut store, "a", 4, 64, 64, 8, Aggregation::Adaptive, &mut rng(2)).unwrap();
        let (k, b) = layer.generators.as_ref().unwrap();
        assert_eq!(kbg_forward(&k.params(&store), 0.5).unwrap().len(), grid.patch_len());
        assert_eq!(kbg_forward(&b.params(&store), 0.5).unwrap().len(), 1);
        assert_eq!(layer.param_count(), store.numel());
        let mut store = ParamStore::<f32>::new();
        let pooled = AfpmLayer::new(&mut store, "a", 4, 64, 64, 8, Aggregation::Pooling, &mut rng(2)).unwrap();
        assert_eq!(store.numel(), 4 * 4 + 4);
        assert!(pooled.kernels(&store).unwrap().is_none());
    }

    fn unit_modulation(params: &mut AfpmParams<f64>) {
        params.proj_weight = Tensor::zeros(&params.proj.weight_shape());
        params.proj_bias = Tensor::ones(&[params.proj.out_channels]);
    }

    #[test]
    fn unit_modulation_is_identity() {
        let mut r = rng(3);
        let grid = make_patch_grid(16, 16, 8);
        let mut p = AfpmParams::<f64>::random(&mut r, 3, &grid);
        unit_modulation(&mut p);
        let x = rand_tensor::<f64>(&mut r, &[3, 16, 16]);
        assert_eq!(afpm_forward(&x, &p, &grid).unwrap(), x);
        assert_eq!(afpm_pooling_variant(&x, &p, &grid).unwrap(), x);
    }

    #[test]
    fn zero_patch_stays_zero_and_others_untouched() {
        let mut r = rng(4);
        let grid = make_patch_grid(8, 8, 4);
        let p = AfpmParams::<f64>::random(&mut r, 2, &grid);
        let x = rand_tensor::<f64>(&mut r, &[2, 8, 8]);
        let base = afpm_forward(&x, &p, &grid).unwrap();
        let mut z = x.clone();
        for c in 0..2 {
            for u in 0..2 {
                for v in 0..2 {
                    z.data_mut()[(c * 8 + 2 + u) * 8 + 4 + v] = 0.0;
                }
            }
        }
        let out = afpm_forward(&z, &p, &grid).unwrap();
        for c in 0..2 {
            for y in 0..8 {
                for xx in 0..8 {
                    let i = (c * 8 + y) * 8 + xx;
                    if (2..4).contains(&y) && (4..6).contains(&xx) {
                        assert_eq!(out.data()[i], 0.0);
                    } else {
                        assert_eq!(out.data()[i], base.data()[i]);
                    }
                }
            }
        }
    }

    #[test]
    fn single_patch_matches_transcription() {
        // C=2, one 2×2 patch, hand-set generator constants.
        let grid = make_patch_grid(2, 2, 1);
        assert_eq!(grid.num_patches(), 1);
        let kernel_kbg = KbgParams::<f64> {
            w1: Tensor::new(&[2, 1], vec![0.7, -1.3]).unwrap(),
            b1: Tensor::new(&[2], vec![0.1, 0.2]).unwrap(),
            w2: Tensor::new(&[4, 2], vec![0.5, -0.25, 1.0, 0.3, -0.6, 0.9, 0.2, 0.4]).unwrap(),
            b2: Tensor::new(&[4], vec![0.01, -0.02, 0.03, 0.05]).unwrap(),
        };
        let bias_kbg = KbgParams::<f64> {
            w1: Tensor::new(&[2, 1], vec![1.1, 0.4]).unwrap(),
            b1: Tensor::new(&[2], vec![-0.3, 0.0]).unwrap(),
            w2: Tensor::new(&[1, 2], vec![0.8, -0.5]).unwrap(),
            b2: Tensor::new(&[1], vec![0.15]).unwrap(),
        };
        let proj = ConvSpec::pointwise(2, 2);
        let proj_w = [0.9, -0.2, 0.35, 1.2];
        let proj_b = [0.05, -0.1];
        let params = AfpmParams {
            kernel_kbg: kernel_kbg.clone(),
            bias_kbg: bias_kbg.clone(),
            proj,
            proj_weight: Tensor::new(&[2, 2, 1, 1], proj_w.to_vec()).unwrap(),
            proj_bias: Tensor::new(&[2], proj_b.to_vec()).unwrap(),
        };
        let f = [[0.3, -1.2, 0.8, 0.45], [1.5, 0.2, -0.7, -0.05]];
        let x = Tensor::new(&[2, 2, 2], f.concat()).unwrap();

        // Scalar transcription.
        let d = grid.distance(0, 0);
        let g = |v: f64| v * crate::tensor::testing::normal_cdf_series(v);
        let mlp = |p: &KbgParams<f64>, o: usize| {
            let mut acc = p.b2.data()[o];
            for k in 0..2 {
                acc += p.w2.data()[o * 2 + k] * g(p.w1.data()[k] * d + p.b1.data()[k]);
            }
            acc
        };
        let kern: Vec<f64> = (0..4).map(|o| mlp(&kernel_kbg, o)).collect();
        let b = mlp(&bias_kbg, 0);
        let s: Vec<f64> = (0..2)
            .map(|c| (0..4).map(|k| kern[k] * f[c][k]).sum::<f64>() + b)
            .collect();
        let factor: Vec<f64> = (0..2)
            .map(|o| proj_w[o * 2] * s[0] + proj_w[o * 2 + 1] * s[1] + proj_b[o])
            .collect();
        let expect: Vec<f64> = (0..2)
            .flat_map(|c| (0..4).map(move |k| (c, k)))
            .map(|(c, k)| factor[c] * f[c][k])
            .collect();

        let out = afpm_forward(&x, &params, &grid).unwrap();
        for (a, e) in out.data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-4, "{a} vs {e}");
        }
    }

    #[test]
    fn pooling_aggregate_is_patch_mean() {
        let mut r = rng(5);
        let grid = make_patch_grid(8, 8, 2);
        let tape = Tape::inference();
        let x = rand_tensor::<f64>(&mut r, &[3, 8, 8]);
        let xv = tape.constant(x.clone());
        let agg = aggregate(&xv, &grid, None).unwrap();
        for ch in 0..3 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut patch = Tensor::<f64>::zeros(&[1, 4, 4]);
                    for u in 0..4 {
                        for v in 0..4 {
                            patch.data_mut()[u * 4 + v] = x.data()[(ch * 8 + i * 4 + u) * 8 + j * 4 + v];
                        }
                    }
                    let m = crate::tensor::global_avg_pool(&patch).unwrap().item();
                    assert!((agg.value().data()[(ch * 2 + i) * 2 + j] - m).abs() < 1e-6);
                }
            }
        }
        let constant = tape.constant(Tensor::full(&[3, 8, 8], 2.5));
        let agg = aggregate(&constant, &grid, None).unwrap();
        assert!(agg.value().data().iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn tiling_mismatch_is_rejected() {
        let grid = make_patch_grid(16, 16, 8);
        let p = AfpmParams::<f32>::random(&mut rng(6), 2, &grid);
        assert!(afpm_forward(&Tensor::ones(&[2, 8, 8]), &p, &grid).is_err());
        let other = make_patch_grid(32, 32, 8);
        assert!(afpm_forward(&Tensor::ones(&[2, 32, 32]), &p, &other).is_err());
    }
}
