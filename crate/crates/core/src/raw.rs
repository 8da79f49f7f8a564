//! RAW normalization, RGGB packing, synthetic blur pairs and image files.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{write_kv, KvDoc};
use crate::error::{config_err, Error, Result};
use crate::tensor::{ften, Tensor};
use crate::train::psnr;

/// Sensor black and white levels in counts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreprocessSpec {
    pub black_level: f64,
    pub white_level: f64,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self {
            black_level: 64.0,
            white_level: 1023.0,
        }
    }
}

impl PreprocessSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.black_level >= 0.0 && self.white_level > self.black_level) {
            return config_err!(
                "white level {} must exceed black level {} ≥ 0",
                self.white_level,
                self.black_level
            );
        }
        Ok(())
    }

    /// Normalized intensity to (rounded) counts.
    pub fn to_counts(&self, v: f64) -> f64 {
        (self.black_level + v * (self.white_level - self.black_level)).round()
    }

    pub fn from_kv(doc: &mut KvDoc) -> Result<Self> {
        let d = Self::default();
        let s = Self {
            black_level: doc.take_or("black_level", d.black_level)?,
            white_level: doc.take_or("white_level", d.white_level)?,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn write_kv(&self, out: &mut String) {
        write_kv(out, "black_level", self.black_level);
        write_kv(out, "white_level", self.white_level);
    }
}

/// `clamp((x − black)/(white − black), 0, 1)`.
pub fn preprocess_raw(x: &Tensor, spec: &PreprocessSpec) -> Result<Tensor> {
    spec.validate()?;
    let (b, range) = (spec.black_level, spec.white_level - spec.black_level);
    Ok(x.map(|v| ((v as f64 - b) / range).clamp(0.0, 1.0) as f32))
}

/// `1×H×W` mosaic to `4×H/2×W/2` planes ordered R, G1, G2, B.
pub fn bayer_pack(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if c != 1 || h % 2 != 0 || w % 2 != 0 {
        return config_err!("Bayer packing needs a 1×H×W mosaic with even H, W; got {c}×{h}×{w}");
    }
    let (h2, w2) = (h / 2, w / 2);
    Ok(Tensor::from_fn(&[4, h2, w2], |i| {
        let (ch, rest) = (i / (h2 * w2), i % (h2 * w2));
        let (y, xx) = (rest / w2, rest % w2);
        x.data()[(2 * y + ch / 2) * w + 2 * xx + ch % 2]
    }))
}

pub fn bayer_unpack(x: &Tensor) -> Result<Tensor> {
    let (c, h2, w2) = x.dims3()?;
    if c != 4 {
        return config_err!("Bayer unpacking needs 4 channels, got {c}");
    }
    let (h, w) = (2 * h2, 2 * w2);
    Ok(Tensor::from_fn(&[1, h, w], |i| {
        let (y, xx) = (i / w, i % w);
        let ch = (y % 2) * 2 + xx % 2;
        x.data()[(ch * h2 + y / 2) * w2 + xx / 2]
    }))
}

/// Procedural test image in `[0, 1]`: a gradient, painted rectangles and
/// disks, and a sum of oriented sinusoids at every octave.
pub fn gen_sharp(seed: u64, h: usize, w: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (h as f64, w as f64);
    let base = rng.random_range(0.25..0.55);
    let (gx, gy) = (rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
    let mut img: Vec<f64> = (0..h * w)
        .map(|i| base + gx * ((i % w) as f64 / wf - 0.5) + gy * ((i / w) as f64 / hf - 0.5))
        .collect();

    for _ in 0..rng.random_range(3..8) {
        let (y0, x0) = (rng.random_range(0.0..hf), rng.random_range(0.0..wf));
        let (rh, rw) = (rng.random_range(0.1..0.5) * hf, rng.random_range(0.1..0.5) * wf);
        let v = rng.random_range(0.05..0.95);
        for y in (y0 as usize)..((y0 + rh) as usize).min(h) {
            for x in (x0 as usize)..((x0 + rw) as usize).min(w) {
                img[y * w + x] = v;
            }
        }
    }
    for _ in 0..rng.random_range(2..6) {
        let (cy, cx) = (rng.random_range(0.0..hf), rng.random_range(0.0..wf));
        let r = rng.random_range(0.05..0.25) * hf.min(wf);
        let v = rng.random_range(0.05..0.95);
        for (i, px) in img.iter_mut().enumerate() {
            let (dy, dx) = ((i / w) as f64 + 0.5 - cy, (i % w) as f64 + 0.5 - cx);
            if dy * dy + dx * dx <= r * r {
                *px = v;
            }
        }
    }
    let octaves = (h.min(w).max(2)).ilog2() as usize;
    for o in 0..octaves {
        // Frequency from 1/N up to 1/2 cycles per pixel.
        let f = 0.5 / (1u64 << o) as f64;
        let amp = 0.05 / (1.0 + 0.5 * o as f64);
        for _ in 0..2 {
            let th = rng.random_range(0.0..PI);
            let ph = rng.random_range(0.0..2.0 * PI);
            let f = f * rng.random_range(0.7..1.0);
            let (fy, fx) = (f * th.sin(), f * th.cos());
            for (i, px) in img.iter_mut().enumerate() {
                *px += amp * (2.0 * PI * (fy * (i / w) as f64 + fx * (i % w) as f64) + ph).cos();
            }
        }
    }
    Tensor::new(&[1, h, w], img.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect())
        .expect("shape matches")
}

/// Blur family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelKind {
    Gaussian { sigma: f64 },
    Motion { length: usize, angle: f64 },
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gaussian { sigma } => write!(f, "gaussian sigma={sigma:.6}"),
            Self::Motion { length, angle } => write!(f, "motion length={length} angle={angle:.6}"),
        }
    }
}

/// Which family the dataset generator draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelChoice {
    Gaussian,
    Motion,
    Mixed,
}

impl FromStr for KernelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "motion" => Ok(Self::Motion),
            "mixed" => Ok(Self::Mixed),
            other => config_err!("unknown kernel kind {other:?} (gaussian, motion, mixed)"),
        }
    }
}

impl fmt::Display for KernelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gaussian => "gaussian",
            Self::Motion => "motion",
            Self::Mixed => "mixed",
        })
    }
}

/// Normalized non-negative `k×k` blur kernel, `k` odd.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    pub size: usize,
    pub weights: Tensor,
    pub kind: KernelKind,
}

fn check_size(k: usize) -> Result<()> {
    if k == 0 || k % 2 == 0 {
        return config_err!("kernel size {k} must be odd");
    }
    Ok(())
}

fn normalized(k: usize, raw: Vec<f64>, kind: KernelKind) -> BlurKernel {
    let s: f64 = raw.iter().sum();
    let weights = Tensor::new(&[k, k], raw.iter().map(|v| (v / s) as f32).collect()).expect("k×k");
    BlurKernel { size: k, weights, kind }
}

impl BlurKernel {
    pub fn delta(k: usize) -> Result<Self> {
        Self::gaussian(1e-3, k)
    }

    pub fn gaussian(sigma: f64, k: usize) -> Result<Self> {
        check_size(k)?;
        if !(sigma > 0.0) {
            return config_err!("gaussian sigma {sigma} must be positive");
        }
        let r = (k / 2) as f64;
        let raw = (0..k * k)
            .map(|i| {
                let (u, v) = ((i / k) as f64 - r, (i % k) as f64 - r);
                (-(u * u + v * v) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        Ok(normalized(k, raw, KernelKind::Gaussian { sigma }))
    }

    /// Line of `length` unit samples through the center, rounded to cells.
    pub fn motion(length: usize, angle: f64, k: usize) -> Result<Self> {
        check_size(k)?;
        if length == 0 || length > k {
            return config_err!("motion length {length} must be in 1..={k}");
        }
        let r = (k / 2) as f64;
        let mut raw = vec![0.0; k * k];
        for s in 0..length {
            let t = s as f64 - (length - 1) as f64 / 2.0;
            let u = (r + t * angle.sin()).round().clamp(0.0, (k - 1) as f64) as usize;
            let v = (r + t * angle.cos()).round().clamp(0.0, (k - 1) as f64) as usize;
            raw[u * k + v] += 1.0;
        }
        Ok(normalized(k, raw, KernelKind::Motion { length, angle }))
    }
}

/// Seeded kernel: Gaussian σ in `sigma_range` or motion of length `3..=k`.
pub fn gen_kernel(seed: u64, choice: KernelChoice, k: usize, sigma_range: (f64, f64)) -> Result<BlurKernel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let motion = match choice {
        KernelChoice::Gaussian => false,
        KernelChoice::Motion => true,
        KernelChoice::Mixed => rng.random_bool(0.5),
    };
    if motion {
        if k < 3 {
            return config_err!("motion kernels need size ≥ 3, got {k}");
        }
        let length = rng.random_range(3..=k);
        BlurKernel::motion(length, rng.random_range(0.0..PI), k)
    } else {
        let (lo, hi) = sigma_range;
        if !(0.0 < lo && lo <= hi) {
            return config_err!("sigma range [{lo}, {hi}] is invalid");
        }
        let sigma = if lo == hi { lo } else { rng.random_range(lo..hi) };
        BlurKernel::gaussian(sigma, k)
    }
}

/// Circular 2-D convolution.
pub fn apply_blur(x: &Tensor, kernel: &BlurKernel) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let k = kernel.size;
    if k > h || k > w {
        return config_err!("{k}×{k} kernel is larger than the {h}×{w} image");
    }
    let r = (k / 2) as isize;
    let kw = kernel.weights.data();
    let mut out = vec![0f32; c * h * w];
    for ch in 0..c {
        let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0f64;
                for u in 0..k {
                    let sy = (y as isize - (u as isize - r)).rem_euclid(h as isize) as usize;
                    for v in 0..k {
                        let sx = (xx as isize - (v as isize - r)).rem_euclid(w as isize) as usize;
                        acc += kw[u * k + v] as f64 * plane[sy * w + sx] as f64;
                    }
                }
                out[(ch * h + y) * w + xx] = acc as f32;
            }
        }
    }
    Tensor::new(&[c, h, w], out)
}

/// Synthetic dataset recipe.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub seed: u64,
    pub count: usize,
    /// RAW mosaic size before packing.
    pub height: usize,
    pub width: usize,
    pub kernel: KernelChoice,
    pub kernel_size: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub noise_sigma: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            count: 200,
            height: 64,
            width: 64,
            kernel: KernelChoice::Gaussian,
            kernel_size: 13,
            sigma_min: 0.8,
            sigma_max: 2.5,
            noise_sigma: 0.002,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height % 2 != 0 || self.width % 2 != 0 || self.height == 0 || self.width == 0 {
            return config_err!("data size {}×{} must be even and non-zero", self.height, self.width);
        }
        check_size(self.kernel_size)?;
        if self.kernel_size > self.height.min(self.width) {
            return config_err!("kernel size {} exceeds the image", self.kernel_size);
        }
        if !(self.sigma_min > 0.0 && self.sigma_max >= self.sigma_min) {
            return config_err!("sigma range [{}, {}] is invalid", self.sigma_min, self.sigma_max);
        }
        if !(self.noise_sigma >= 0.0) {
            return config_err!("noise_sigma must be ≥ 0");
        }
        Ok(())
    }

    pub fn from_kv(doc: &mut KvDoc) -> Result<Self> {
        let d = Self::default();
        let s = Self {
            seed: doc.take_or("data_seed", d.seed)?,
            count: doc.take_or("data_count", d.count)?,
            height: doc.take_or("data_height", d.height)?,
            width: doc.take_or("data_width", d.width)?,
            kernel: doc.take_or("kernel_kind", d.kernel)?,
            kernel_size: doc.take_or("kernel_size", d.kernel_size)?,
            sigma_min: doc.take_or("sigma_min", d.sigma_min)?,
            sigma_max: doc.take_or("sigma_max", d.sigma_max)?,
            noise_sigma: doc.take_or("noise_sigma", d.noise_sigma)?,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn write_kv(&self, out: &mut String) {
        write_kv(out, "data_seed", self.seed);
        write_kv(out, "data_count", self.count);
        write_kv(out, "data_height", self.height);
        write_kv(out, "data_width", self.width);
        write_kv(out, "kernel_kind", self.kernel);
        write_kv(out, "kernel_size", self.kernel_size);
        write_kv(out, "sigma_min", self.sigma_min);
        write_kv(out, "sigma_max", self.sigma_max);
        write_kv(out, "noise_sigma", self.noise_sigma);
    }
}

/// Packed blurred/sharp pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub blurred: Tensor,
    pub sharp: Tensor,
}

/// Provenance of one generated pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemMeta {
    pub index: usize,
    pub kind: String,
    pub kernel_seed: u64,
    pub noise_sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub pairs: Vec<Pair>,
    pub meta: Vec<ItemMeta>,
}

fn to_packed(v: &Tensor, spec: &PreprocessSpec) -> Result<Tensor> {
    let counts = v.map(|x| spec.to_counts(x as f64) as f32);
    bayer_pack(&preprocess_raw(&counts, spec)?)
}

/// One pair, deterministic in `(data.seed, index)`.
pub fn gen_pair(data: &DatasetSpec, spec: &PreprocessSpec, index: usize) -> Result<(Pair, ItemMeta)> {
    let mut rng = ChaCha8Rng::seed_from_u64(data.seed);
    rng.set_stream(index as u64);
    let sharp_seed = rng.next_u64();
    let kernel_seed = rng.next_u64();
    let sharp = gen_sharp(sharp_seed, data.height, data.width);
    let kernel = gen_kernel(kernel_seed, data.kernel, data.kernel_size, (data.sigma_min, data.sigma_max))?;
    let mut blurred = apply_blur(&sharp, &kernel)?;
    if data.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, data.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        for v in blurred.data_mut() {
            *v = (*v as f64 + normal.sample(&mut rng)) as f32;
        }
    }
    let pair = Pair {
        blurred: to_packed(&blurred, spec)?,
        sharp: to_packed(&sharp, spec)?,
    };
    let meta = ItemMeta {
        index,
        kind: kernel.kind.to_string(),
        kernel_seed,
        noise_sigma: data.noise_sigma,
    };
    Ok((pair, meta))
}

/// `count` pairs generated in parallel, returned in index order.
pub fn gen_dataset(data: &DatasetSpec, spec: &PreprocessSpec) -> Result<Corpus> {
    data.validate()?;
    spec.validate()?;
    let items = (0..data.count)
        .into_par_iter()
        .map(|i| gen_pair(data, spec, i))
        .collect::<Result<Vec<_>>>()?;
    let (pairs, meta) = items.into_iter().unzip();
    Ok(Corpus { pairs, meta })
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Hex SHA-256 of the concatenated blurred and sharp payloads.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.pairs {
            h.update(ften::payload(&p.blurred));
            h.update(ften::payload(&p.sharp));
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Mean PSNR of blurred against sharp on the unpacked mosaics.
    pub fn baseline_psnr(&self) -> Result<f64> {
        let mut total = 0.0;
        for p in &self.pairs {
            total += psnr(&bayer_unpack(&p.blurred)?, &bayer_unpack(&p.sharp)?, 1.0)?;
        }
        Ok(total / self.pairs.len().max(1) as f64)
    }

    /// Writes `manifest.txt` and `NNNN_{blur,sharp}.ften` under `root`.
    pub fn save(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root)?;
        let mut manifest = String::new();
        let _ = writeln!(manifest, "# digest {}", self.digest());
        let _ = writeln!(manifest, "# baseline_psnr {:.4}", self.baseline_psnr()?);
        for m in &self.meta {
            let _ = writeln!(
                manifest,
                "{} {} kernel_seed={} noise_sigma={}",
                m.index, m.kind, m.kernel_seed, m.noise_sigma
            );
        }
        for (m, p) in self.meta.iter().zip(&self.pairs) {
            ften::save(&p.blurred, &root.join(format!("{:04}_blur.ften", m.index)))?;
            ften::save(&p.sharp, &root.join(format!("{:04}_sharp.ften", m.index)))?;
        }
        fs::write(root.join("manifest.txt"), manifest)?;
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        let text = fs::read_to_string(root.join("manifest.txt"))?;
        let mut corpus = Corpus {
            pairs: Vec::new(),
            meta: Vec::new(),
        };
        for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
            let bad = || Error::format("manifest.txt", format!("malformed line {line:?}"));
            let mut parts = line.split_whitespace();
            let index: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let rest: Vec<&str> = parts.collect();
            let field = |key: &str| {
                rest.iter()
                    .find_map(|p| p.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
                    .ok_or_else(bad)
            };
            let kernel_seed = field("kernel_seed")?.parse().map_err(|_| bad())?;
            let noise_sigma = field("noise_sigma")?.parse().map_err(|_| bad())?;
            let kind = rest
                .iter()
                .take_while(|p| !p.starts_with("kernel_seed="))
                .copied()
                .collect::<Vec<_>>()
                .join(" ");
            let blurred = ften::load(&root.join(format!("{index:04}_blur.ften")))?;
            let sharp = ften::load(&root.join(format!("{index:04}_sharp.ften")))?;
            if blurred.shape() != sharp.shape() {
                return Err(Error::format("corpus", format!("item {index}: blur/sharp shapes differ")));
            }
            corpus.pairs.push(Pair { blurred, sharp });
            corpus.meta.push(ItemMeta {
                index,
                kind,
                kernel_seed,
                noise_sigma,
            });
        }
        Ok(corpus)
    }
}

fn read_header_tokens(bytes: &[u8], n: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < n {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::format("PNM", "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the samples.
    Ok((tokens, i + 1))
}

fn read_pnm(path: &Path, magic: &str, channels: usize) -> Result<(Tensor, usize)> {
    let bytes = fs::read(path)?;
    let (tok, offset) = read_header_tokens(&bytes, 4)?;
    let err = |m: String| Error::format(path.display().to_string(), m);
    if tok[0] != magic {
        return Err(err(format!("expected {magic}, found {}", tok[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| err(format!("bad header value {s:?}")));
    let (w, h, maxval) = (parse(&tok[1])?, parse(&tok[2])?, parse(&tok[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(err(format!("maxval {maxval} out of range")));
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let n = w * h * channels;
    let body = bytes.get(offset..offset + n * bps).ok_or_else(|| err("truncated samples".into()))?;
    let sample = |i: usize| -> f32 {
        if bps == 1 {
            body[i] as f32
        } else {
            u16::from_be_bytes([body[2 * i], body[2 * i + 1]]) as f32
        }
    };
    // Interleaved samples to planar channels.
    let t = Tensor::new(
        &[channels, h, w],
        (0..n)
            .map(|i| {
                let (c, p) = (i / (h * w), i % (h * w));
                sample(p * channels + c)
            })
            .collect(),
    )?;
    Ok((t, maxval))
}

fn write_pnm(path: &Path, x: &Tensor, magic: &str) -> Result<()> {
    let (c, h, w) = x.dims3()?;
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "{magic}\n{w} {h}\n65535\n")?;
    for p in 0..h * w {
        for ch in 0..c {
            let v = x.data()[ch * h * w + p].round().clamp(0.0, 65535.0) as u16;
            out.write_all(&v.to_be_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Binary greymap (`P5`) as a `1×H×W` tensor of raw sample values.
pub fn read_pgm(path: &Path) -> Result<Tensor> {
    Ok(read_pnm(path, "P5", 1)?.0)
}

/// Writes a `1×H×W` tensor as 16-bit big-endian `P5`, rounding and clamping.
pub fn write_pgm(path: &Path, x: &Tensor) -> Result<()> {
    if x.dims3()?.0 != 1 {
        return config_err!("PGM output needs one channel, got shape {:?}", x.shape());
    }
    write_pnm(path, x, "P5")
}

/// Binary pixmap (`P6`) as a `3×H×W` tensor of raw sample values.
pub fn read_ppm(path: &Path) -> Result<Tensor> {
    Ok(read_pnm(path, "P6", 3)?.0)
}

/// `P6` samples divided by the file's maxval.
pub fn read_ppm_unit(path: &Path) -> Result<Tensor> {
    let (t, maxval) = read_pnm(path, "P6", 3)?;
    Ok(t.map(|v| v / maxval as f32))
}

/// `[0, 1]` values written as 16-bit `P6`.
pub fn write_ppm_unit(path: &Path, x: &Tensor) -> Result<()> {
    write_ppm(path, &x.map(|v| v.clamp(0.0, 1.0) * 65535.0))
}

pub fn write_ppm(path: &Path, x: &Tensor) -> Result<()> {
    if x.dims3()?.0 != 3 {
        return config_err!("PPM output needs three channels, got shape {:?}", x.shape());
    }
    write_pnm(path, x, "P6")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{fft2d, ifft2d, ComplexTensor};
    use crate::tensor::testing::{rand_tensor, rng};

    #[test]
    fn preprocess_cases() {
        let spec = PreprocessSpec::default();
        let x = Tensor::new(&[1, 1, 5], vec![0.0, 64.0, 543.5, 1023.0, 2000.0]).unwrap();
        assert_eq!(preprocess_raw(&x, &spec).unwrap().data(), &[0.0, 0.0, 0.5, 1.0, 1.0]);
        let bad = PreprocessSpec {
            black_level: 100.0,
            white_level: 100.0,
        };
        assert!(preprocess_raw(&x, &bad).is_err());
        let ramp = Tensor::from_fn(&[1, 1, 200], |i| i as f32 * 6.0);
        let out = preprocess_raw(&ramp, &spec).unwrap();
        assert!(out.data().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn pack_cases() {
        let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(bayer_pack(&x).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
        let x = rand_tensor::<f32>(&mut rng(1), &[1, 128, 128]);
        let p = bayer_pack(&x).unwrap();
        assert_eq!(p.shape(), &[4, 64, 64]);
        assert_eq!(p.data()[64 + 1], x.data()[2 * 128 + 2]);
        assert_eq!(p.data()[3 * 64 * 64], x.data()[128 + 1]);
        assert_eq!(bayer_unpack(&p).unwrap(), x);
        assert!(bayer_pack(&Tensor::zeros(&[1, 3, 4])).is_err());
    }

    #[test]
    fn sharp_images_are_deterministic_and_broadband() {
        let a = gen_sharp(5, 64, 64);
        assert_eq!(a, gen_sharp(5, 64, 64));
        assert_ne!(a, gen_sharp(6, 64, 64));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        for seed in 0..5 {
            let f = fft2d(&gen_sharp(seed, 64, 64).cast::<f64>()).unwrap();
            let (mut high, mut total) = (0.0, 0.0);
            for k in 0..64 {
                for l in 0..64 {
                    let fy = k.min(64 - k) as f64 / 64.0;
                    let fx = l.min(64 - l) as f64 / 64.0;
                    let e = f.re().data()[k * 64 + l].powi(2) + f.im().data()[k * 64 + l].powi(2);
                    total += e;
                    if fy.hypot(fx) > 0.125 {
                        high += e;
                    }
                }
            }
            assert!(high > 0.01 * total, "seed {seed}: {high} / {total}");
        }
    }

    #[test]
    fn kernel_cases() {
        let d = BlurKernel::gaussian(1e-3, 5).unwrap();
        for (i, &v) in d.weights.data().iter().enumerate() {
            let want = if i == 12 { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-6);
        }
        let m = BlurKernel::motion(3, 0.0, 5).unwrap();
        for (i, &v) in m.weights.data().iter().enumerate() {
            let want = if (11..=13).contains(&i) { 1.0 / 3.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-7, "{i}: {v}");
        }
        for seed in 0..20 {
            for choice in [KernelChoice::Gaussian, KernelChoice::Motion, KernelChoice::Mixed] {
                let k = gen_kernel(seed, choice, 9, (0.8, 2.5)).unwrap();
                assert!((k.weights.sum_f64() - 1.0).abs() < 1e-6);
                assert!(k.weights.data().iter().all(|&v| v >= 0.0));
                match k.kind {
                    KernelKind::Gaussian { sigma } => assert!((0.8..2.5).contains(&sigma)),
                    KernelKind::Motion { length, .. } => assert!((3..=9).contains(&length)),
                }
            }
        }
        assert!(BlurKernel::gaussian(1.0, 4).is_err());
    }

    #[test]
    fn blur_cases() {
        let x = rand_tensor::<f32>(&mut rng(2), &[1, 16, 16]);
        assert_eq!(apply_blur(&x, &BlurKernel::delta(5).unwrap()).unwrap(), x);
        let k = gen_kernel(3, KernelChoice::Mixed, 7, (0.8, 2.5)).unwrap();
        let c = Tensor::full(&[1, 16, 16], 0.3f32);
        assert!(apply_blur(&c, &k).unwrap().max_abs_diff(&c) < 1e-6);
        assert!(apply_blur(&Tensor::zeros(&[1, 4, 4]), &k).is_err());

        // Convolution theorem with the kernel centered at the origin.
        let k = BlurKernel::motion(5, 0.7, 7).unwrap();
        let mut padded = Tensor::<f64>::zeros(&[1, 16, 16]);
        for u in 0..7 {
            for v in 0..7 {
                let (y, xx) = ((u + 16 - 3) % 16, (v + 16 - 3) % 16);
                padded.data_mut()[y * 16 + xx] = k.weights.data()[u * 7 + v] as f64;
            }
        }
        let fx = fft2d(&x.cast::<f64>()).unwrap();
        let prod: ComplexTensor<f64> = fx.mul(&fft2d(&padded).unwrap()).unwrap().scale(16.0);
        let via_fft = ifft2d(&prod).unwrap();
        let direct = apply_blur(&x, &k).unwrap().cast::<f64>();
        let rel = direct.max_abs_diff(&via_fft) / direct.max_abs();
        assert!(rel < 1e-3, "{rel}");
    }

    fn small_spec() -> DatasetSpec {
        DatasetSpec {
            count: 6,
            height: 32,
            width: 32,
            kernel_size: 9,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn dataset_shapes_determinism_and_identity_case() {
        let pre = PreprocessSpec::default();
        let c = gen_dataset(&small_spec(), &pre).unwrap();
        assert_eq!(c.len(), 6);
        assert!(c.pairs.iter().all(|p| p.blurred.shape() == [4, 16, 16]));
        assert_eq!(c.digest(), gen_dataset(&small_spec(), &pre).unwrap().digest());
        let (p3, _) = gen_pair(&small_spec(), &pre, 3).unwrap();
        assert_eq!(p3, c.pairs[3]);

        let clean = DatasetSpec {
            noise_sigma: 0.0,
            sigma_min: 1e-3,
            sigma_max: 1e-3,
            ..small_spec()
        };
        let c = gen_dataset(&clean, &pre).unwrap();
        assert!(c.pairs.iter().all(|p| p.blurred == p.sharp));
        assert!(c.baseline_psnr().unwrap().is_infinite());
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = gen_dataset(&small_spec(), &PreprocessSpec::default()).unwrap();
        c.save(dir.path()).unwrap();
        let back = Corpus::load(dir.path()).unwrap();
        assert_eq!(back, c);
        assert!(dir.path().join("0005_sharp.ften").exists());
    }

    #[test]
    fn pnm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let x = Tensor::from_fn(&[1, 3, 5], |i| (i * 4000) as f32);
        let p = dir.path().join("a.pgm");
        write_pgm(&p, &x).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n5 3\n65535\n"));
        assert_eq!(&bytes[bytes.len() - 2..], &(14u16 * 4000).to_be_bytes());
        assert_eq!(read_pgm(&p).unwrap(), x);
        let rgb = Tensor::from_fn(&[3, 2, 2], |i| i as f32 * 100.0);
        let q = dir.path().join("b.ppm");
        write_ppm(&q, &rgb).unwrap();
        assert_eq!(read_ppm(&q).unwrap(), rgb);
        fs::write(&p, b"P5\n# comment\n2 1\n255\n\x07\x09").unwrap();
        assert_eq!(read_pgm(&p).unwrap().data(), &[7.0, 9.0]);
        assert!(read_ppm(&p).is_err());
    }
}
