//! Invariant suites shared by the `verify` command and the test targets.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::afpm::{aggregate, make_patch_grid, AfpmLayer, AfpmParams, Aggregation, KbgParams, PatchGrid};
use crate::arch::{build_frenet, NetworkConfig};
use crate::error::{config_err, Error, Result};
use crate::spectral::{fft2d, fft_shift, ifft2d, ComplexTensor};
use crate::tensor::{grad_check, init, GradCheckReport, ParamStore, Real, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Spectral,
    Afpm,
    Grad,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Self::Spectral),
            "afpm" => Ok(Self::Afpm),
            "grad" => Ok(Self::Grad),
            "all" => Ok(Self::All),
            other => config_err!("unknown suite {other:?} (expected spectral, afpm, grad or all)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    fn new(suite: &'static str) -> Self {
        Self { suite, checks: Vec::new() }
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.checks.push(Check {
            name: name.to_string(),
            pass,
            detail,
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.pass { "PASS" } else { "FAIL" };
            writeln!(f, "[{tag}] {}/{}: {}", self.suite, c.name, c.detail)?;
        }
        Ok(())
    }
}

pub fn run(suite: Suite, seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(match suite {
        Suite::Spectral => vec![spectral_suite(seed)?],
        Suite::Afpm => vec![afpm_suite(seed)?],
        Suite::Grad => vec![grad_suite(seed)?],
        Suite::All => vec![spectral_suite(seed)?, afpm_suite(seed)?, grad_suite(seed)?],
    })
}

fn random<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    init::uniform(rng, shape, -1.0, 1.0)
}

/// Direct circular convolution with the kernel anchored at the origin.
fn circular_conv(x: &[f64], h: usize, w: usize, k: &[f64], kh: usize, kw: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut s = 0.0;
            for u in 0..kh {
                for v in 0..kw {
                    s += k[u * kw + v] * x[((i + h - u) % h) * w + (j + w - v) % w];
                }
            }
            out[i * w + j] = s;
        }
    }
    out
}

fn sorted_bits(t: &Tensor) -> Vec<u32> {
    let mut v: Vec<u32> = t.data().iter().map(|x| x.to_bits()).collect();
    v.sort_unstable();
    v
}

/// Transform identities on 32-bit tensors.
pub fn spectral_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = SuiteReport::new("spectral");

    let mut err = 0.0f64;
    for shape in [[3, 32, 32], [8, 64, 64], [1, 4, 16]] {
        let x: Tensor = random(&mut rng, &shape);
        err = err.max(ifft2d(&fft2d(&x)?)?.max_abs_diff(&x));
    }
    r.check("round_trip", err < 1e-5, format!("max abs error {err:.3e} (< 1e-5)"));

    let x: Tensor = random(&mut rng, &[8, 64, 64]);
    let (e_x, e_f) = (x.sum_sq_f64(), fft2d(&x)?.energy());
    let rel = (e_x - e_f).abs() / e_x;
    r.check("parseval", rel < 1e-4, format!("relative error {rel:.3e} (< 1e-4)"));

    let (h, w, kk) = (32, 32, 5);
    let img: Tensor = init::uniform(&mut rng, &[1, h, w], 0.0, 1.0);
    let kern: Vec<f64> = (0..kk * kk).map(|i| ((i * 7 % 11) as f64 + 1.0) / 100.0).collect();
    let padded = Tensor::from_fn(&[1, h, w], |i| {
        let (y, x) = (i / w, i % w);
        if y < kk && x < kk {
            kern[y * kk + x] as f32
        } else {
            0.0
        }
    });
    let xd: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let oracle = circular_conv(&xd, h, w, &kern, kk, kk);
    let via_fft = ifft2d(&fft2d(&img)?.mul(&fft2d(&padded)?)?)?.scale(((h * w) as f32).sqrt());
    let peak = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = oracle
        .iter()
        .zip(via_fft.data())
        .fold(0.0f64, |m, (a, &b)| m.max((a - b as f64).abs()));
    let rel = diff / peak;
    r.check("convolution_theorem", rel < 1e-3, format!("relative error {rel:.3e} (< 1e-3)"));

    let spec = ComplexTensor::<f32>::new(random(&mut rng, &[2, 8, 16]), random(&mut rng, &[2, 8, 16]))?;
    let twice = fft_shift(&fft_shift(&spec, false)?, false)?;
    let back = fft_shift(&fft_shift(&spec, false)?, true)?;
    r.check(
        "shift_involution",
        twice == spec && back == spec,
        "fft_shift applied twice on 8×16 is bit-exact".into(),
    );

    let odd = ComplexTensor::<f32>::new(random(&mut rng, &[1, 5, 7]), random(&mut rng, &[1, 5, 7]))?;
    let shifted = fft_shift(&odd, false)?;
    let same_energy = sorted_bits(shifted.re()) == sorted_bits(odd.re())
        && sorted_bits(shifted.im()) == sorted_bits(odd.im())
        && fft_shift(&shifted, true)? == odd;
    r.check("shift_energy", same_energy, "shift permutes entries on 5×7 and the inverse undoes it".into());

    let (a, b) = (0.7f32, -1.3f32);
    let x: Tensor = random(&mut rng, &[2, 16, 16]);
    let y: Tensor = random(&mut rng, &[2, 16, 16]);
    let lhs = fft2d(&x.scale(a).add(&y.scale(b))?)?;
    let rhs = fft2d(&x)?.scale(a).add(&fft2d(&y)?.scale(b))?;
    let d = lhs.max_abs_diff(&rhs);
    r.check("linearity", d < 1e-5, format!("max abs difference {d:.3e} (< 1e-5)"));

    let x: Tensor = random(&mut rng, &[2, 8, 8]);
    let f = fft2d(&x)?;
    let mut herm = 0.0f64;
    for c in 0..2 {
        for k in 0..8 {
            for l in 0..8 {
                let i = (c * 8 + k) * 8 + l;
                let j = (c * 8 + (8 - k) % 8) * 8 + (8 - l) % 8;
                herm = herm
                    .max((f.re().data()[i] - f.re().data()[j]).abs() as f64)
                    .max((f.im().data()[i] + f.im().data()[j]).abs() as f64);
            }
        }
    }
    r.check("hermitian", herm < 1e-4, format!("max deviation {herm:.3e} (< 1e-4)"));
    Ok(r)
}

fn patch_of(grid: &PatchGrid, t: &Tensor, c: usize, (i, j): (usize, usize)) -> Vec<f32> {
    let (h, w) = (grid.height(), grid.width());
    let mut out = Vec::with_capacity(c * grid.patch_len());
    for ch in 0..c {
        for y in 0..grid.patch_h {
            for x in 0..grid.patch_w {
                out.push(t.data()[(ch * h + i * grid.patch_h + y) * w + j * grid.patch_w + x]);
            }
        }
    }
    out
}

fn set_patch(grid: &PatchGrid, t: &mut Tensor, c: usize, (i, j): (usize, usize), vals: &[f32]) {
    let (h, w) = (grid.height(), grid.width());
    let mut it = vals.iter();
    for ch in 0..c {
        for y in 0..grid.patch_h {
            for x in 0..grid.patch_w {
                t.data_mut()[(ch * h + i * grid.patch_h + y) * w + j * grid.patch_w + x] = *it.next().unwrap();
            }
        }
    }
}

fn layer_eval(layer: &AfpmLayer, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
    let tape = Tape::inference();
    let p = store.bind(&tape);
    Ok(layer.forward(&tape.constant(x.clone()), &p)?.value().clone())
}

fn layer_aggregate(layer: &AfpmLayer, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
    let tape = Tape::inference();
    let p = store.bind(&tape);
    let generators = layer.generators.as_ref().map(|(k, b)| crate::afpm::Generators {
        kernel: k.bind(&p),
        bias: b.bind(&p),
    });
    Ok(aggregate(&tape.constant(x.clone()), &layer.grid, generators.as_ref())?
        .value()
        .clone())
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn kbg_scalar(k: &KbgParams, d: f64) -> Vec<f64> {
    let hidden: Vec<f64> = (0..k.hidden())
        .map(|u| gelu(k.w1.data()[u] as f64 * d + k.b1.data()[u] as f64))
        .collect();
    (0..k.out())
        .map(|o| k.b2.data()[o] as f64 + (0..k.hidden()).map(|u| k.w2.data()[o * k.hidden() + u] as f64 * hidden[u]).sum::<f64>())
        .collect()
}

/// Scalar-by-scalar modulation of a single `C×p×p` patch.
fn single_patch_oracle(x: &Tensor, params: &AfpmParams, d: f64) -> Vec<f64> {
    let (c, p, q) = x.dims3().unwrap();
    let kernel = kbg_scalar(&params.kernel_kbg, d);
    let bias = kbg_scalar(&params.bias_kbg, d)[0];
    let s: Vec<f64> = (0..c)
        .map(|ch| (0..p * q).map(|k| kernel[k] * x.data()[ch * p * q + k] as f64).sum::<f64>() + bias)
        .collect();
    let mut out = Vec::with_capacity(c * p * q);
    for ch in 0..c {
        let factor = params.proj_bias.data()[ch] as f64
            + (0..c).map(|k| params.proj_weight.data()[ch * c + k] as f64 * s[k]).sum::<f64>();
        out.extend((0..p * q).map(|k| factor * x.data()[ch * p * q + k] as f64));
    }
    out
}

/// Modulation invariants on randomized fixtures.
pub fn afpm_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = SuiteReport::new("afpm");
    let (c, h, w) = (3, 64, 64);
    let mut store = ParamStore::<f32>::new();
    let layer = AfpmLayer::new(&mut store, "m", c, h, w, 8, Aggregation::Adaptive, &mut rng)?;
    let grid = layer.grid.clone();
    let x: Tensor = random(&mut rng, &[c, h, w]);
    let out = layer_eval(&layer, &store, &x)?;

    let mut unit = store.clone();
    unit.set("m.proj.weight", Tensor::zeros(&[c, c, 1, 1]))?;
    unit.set("m.proj.bias", Tensor::ones(&[c]))?;
    let mut pool_store = ParamStore::<f32>::new();
    let pool = AfpmLayer::new(&mut pool_store, "m", c, h, w, 8, Aggregation::Pooling, &mut rng)?;
    pool_store.set("m.proj.weight", Tensor::zeros(&[c, c, 1, 1]))?;
    pool_store.set("m.proj.bias", Tensor::ones(&[c]))?;
    let exact = layer_eval(&layer, &unit, &x)? == x && layer_eval(&pool, &pool_store, &x)? == x;
    r.check("unit_modulation", exact, "zero projection weight and unit bias return the input exactly".into());

    // (0,1) and (1,0) share a distance; so do point-reflected positions.
    let pairs = [((0, 1), (1, 0)), ((2, 5), (5, 2)), ((1, 3), (6, 4))];
    let mut content_ok = true;
    for (a, b) in pairs {
        let mut swapped = x.clone();
        let (pa, pb) = (patch_of(&grid, &x, c, a), patch_of(&grid, &x, c, b));
        set_patch(&grid, &mut swapped, c, a, &pb);
        set_patch(&grid, &mut swapped, c, b, &pa);
        let o = layer_eval(&layer, &store, &swapped)?;
        content_ok &= patch_of(&grid, &o, c, a) == patch_of(&grid, &out, c, b)
            && patch_of(&grid, &o, c, b) == patch_of(&grid, &out, c, a);
    }
    r.check(
        "content_independence",
        content_ok,
        "swapping contents of equal-distance patches swaps their outputs bit-exactly".into(),
    );

    let kernels = layer.kernels(&store)?.expect("adaptive layer has kernels");
    let biases = layer_aggregate(&layer, &store, &Tensor::zeros(&[c, h, w]))?;
    let (m, n, pl) = (grid.rows, grid.cols, grid.patch_len());
    let mut sym = true;
    for i in 0..m {
        for j in 0..n {
            let (a, b) = (i * n + j, (m - 1 - i) * n + (n - 1 - j));
            sym &= kernels.data()[a * pl..(a + 1) * pl] == kernels.data()[b * pl..(b + 1) * pl];
            for ch in 0..c {
                sym &= biases.data()[ch * m * n + a] == biases.data()[ch * m * n + b];
            }
        }
    }
    r.check("central_symmetry", sym, "point-reflected patches get bit-identical kernels and biases".into());

    let s0 = biases;
    let s1 = layer_aggregate(&layer, &store, &x)?.sub(&s0)?;
    let s2 = layer_aggregate(&layer, &store, &x.scale(2.0))?.sub(&s0)?;
    let hom = s2.max_abs_diff(&s1.scale(2.0)) / s1.max_abs().max(1e-12);
    let out2 = layer_eval(&layer, &store, &x.scale(2.0))?;
    let nonlin = out2.max_abs_diff(&out.scale(2.0));
    r.check(
        "homogeneity",
        hom < 1e-5 && nonlin > 1e-6,
        format!("aggregate scales by 2 (rel {hom:.2e}), output does not (diff {nonlin:.2e})"),
    );

    let mut zeroed = x.clone();
    set_patch(&grid, &mut zeroed, c, (3, 4), &vec![0.0; c * grid.patch_len()]);
    let oz = layer_eval(&layer, &store, &zeroed)?;
    let mut indep = patch_of(&grid, &oz, c, (3, 4)).iter().all(|&v| v == 0.0);
    for i in 0..m {
        for j in 0..n {
            if (i, j) != (3, 4) {
                indep &= patch_of(&grid, &oz, c, (i, j)) == patch_of(&grid, &out, c, (i, j));
            }
        }
    }
    r.check("patch_independence", indep, "a zeroed patch stays zero and no other patch changes".into());

    let one = make_patch_grid(2, 2, 1);
    let params = AfpmParams::<f32>::random(&mut rng, 2, &one);
    let xp: Tensor = random(&mut rng, &[2, 2, 2]);
    let got = crate::afpm::afpm_forward(&xp, &params, &one)?;
    let want = single_patch_oracle(&xp, &params, one.distance(0, 0));
    let err = got
        .data()
        .iter()
        .zip(&want)
        .fold(0.0f64, |e, (&g, &w)| e.max((g as f64 - w).abs()));
    r.check("single_patch_transcription", err < 1e-4, format!("max abs error {err:.3e} (< 1e-4)"));
    Ok(r)
}

/// The full model and its four ablations.
pub fn ablation_configs(base: &NetworkConfig) -> Vec<(&'static str, NetworkConfig)> {
    vec![
        ("full", base.clone()),
        (
            "no_freq_skip",
            NetworkConfig {
                use_freq_skip: false,
                ..base.clone()
            },
        ),
        (
            "local_only",
            NetworkConfig {
                use_global_branch: false,
                ..base.clone()
            },
        ),
        (
            "global_only",
            NetworkConfig {
                use_local_branch: false,
                ..base.clone()
            },
        ),
        (
            "avg_pooling",
            NetworkConfig {
                use_pooling_variant: true,
                ..base.clone()
            },
        ),
    ]
}

pub const GRAD_PROBES: usize = 500;
pub const GRAD_STEP: f64 = 1e-3;
pub const GRAD_TOL: f64 = 1e-3;
pub const GRAD_PASS_FRACTION: f64 = 0.99;

/// Finite-difference check of a whole network in 64-bit arithmetic, on the
/// mean squared error against a fixed random target.
pub fn grad_check_network(cfg: &NetworkConfig, seed: u64, probes: usize) -> Result<GradCheckReport> {
    let net = build_frenet::<f64>(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let shape = [cfg.in_channels, cfg.input_h, cfg.input_w];
    let y: Tensor<f64> = init::uniform(&mut rng, &shape, 0.0, 1.0);
    let target: Tensor<f64> = init::uniform(&mut rng, &shape, 0.0, 1.0);
    grad_check(
        &net.params,
        |tape, p| {
            let out = net.forward_on(p, &tape.constant(y.clone()), None)?;
            Ok(out.sub(&tape.constant(target.clone()))?.mean_sq())
        },
        probes,
        GRAD_STEP,
        GRAD_TOL,
        seed,
    )
}

/// Gradient checks of the small network and each ablation.
pub fn grad_suite(seed: u64) -> Result<SuiteReport> {
    let mut r = SuiteReport::new("grad");
    for (name, cfg) in ablation_configs(&NetworkConfig::tiny()) {
        let rep = grad_check_network(&cfg, seed, GRAD_PROBES)?;
        let frac = rep.pass_fraction();
        r.check(
            name,
            frac >= GRAD_PASS_FRACTION,
            format!(
                "{:.1}% of {} probes within {GRAD_TOL:e} (max rel {:.2e})",
                100.0 * frac,
                rep.probes.len(),
                rep.max_rel_err()
            ),
        );
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names() {
        assert_eq!("afpm".parse::<Suite>().unwrap(), Suite::Afpm);
        assert!("fast".parse::<Suite>().is_err());
    }

    #[test]
    fn spectral_and_afpm_suites_pass() {
        for rep in [spectral_suite(1).unwrap(), afpm_suite(2).unwrap()] {
            assert!(rep.passed(), "{rep}");
        }
    }

    #[test]
    fn circular_conv_oracle_on_delta() {
        let x: Vec<f64> = (0..12).map(|v| v as f64).collect();
        assert_eq!(circular_conv(&x, 3, 4, &[1.0], 1, 1), x);
        let shifted = circular_conv(&x, 3, 4, &[0.0, 1.0], 1, 2);
        assert_eq!(shifted[1], x[0]);
        assert_eq!(shifted[0], x[3]);
    }
}
