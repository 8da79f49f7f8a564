use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{downsample_spec, Conv, Facm, Ffn, FreBlock, Upsample};
use super::NetworkConfig;
use crate::afpm::Aggregation;
use crate::error::{config_err, Result};
use crate::spectral::{channels_to_complex, ComplexTensor};
use crate::tensor::{ConvSpec, ParamStore, Real, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct EncoderStage {
    pub down: Conv,
    pub blocks: Vec<FreBlock>,
}

#[derive(Clone, Debug)]
pub struct DecoderStage {
    pub blocks: Vec<FreBlock>,
    pub up: Upsample,
}

/// Layer structure; parameter values live in the accompanying store.
#[derive(Clone, Debug)]
pub struct Layout {
    pub head: Conv,
    /// Index `i` is scale `i + 1`.
    pub encoder: Vec<EncoderStage>,
    pub bottleneck: Vec<FreBlock>,
    /// Index `i` is scale `i + 1`.
    pub decoder: Vec<DecoderStage>,
    pub tail: Conv,
}

/// A built network: config, layout and parameters.
#[derive(Clone, Debug)]
pub struct Frenet<T: Real = f32> {
    pub cfg: NetworkConfig,
    pub layout: Layout,
    pub params: ParamStore<T>,
}

/// Per-scale spectra stored by the encoder for the decoder.
pub struct FreqSkipStore<'t, T: Real> {
    slots: Vec<Option<Var<'t, T>>>,
}

impl<'t, T: Real> FreqSkipStore<'t, T> {
    pub fn new(scales: usize) -> Self {
        Self {
            slots: (0..scales).map(|_| None).collect(),
        }
    }

    pub fn put(&mut self, scale: usize, spectrum: Var<'t, T>) {
        self.slots[scale - 1] = Some(spectrum);
    }

    pub fn get(&self, scale: usize) -> Option<&Var<'t, T>> {
        self.slots[scale - 1].as_ref()
    }
}

/// Intermediate values recorded during a forward pass.
#[derive(Clone, Debug, Default)]
pub struct Trace<T: Real = f32> {
    /// Encoder output at each scale.
    pub encoder: Vec<Tensor<T>>,
    pub bottleneck: Option<Tensor<T>>,
    /// Each block's centered spectrum, keyed by block path.
    pub spectra: Vec<(String, ComplexTensor<T>)>,
}

/// Parameter and operation counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cost {
    pub params: usize,
    /// Multiply-accumulates of convolutions and dense layers.
    pub conv_macs: u64,
    /// Real flops of all 2-D FFTs at `5·N·log2 N` per transform.
    pub fft_flops: u64,
}

fn build_block<T: Real>(
    store: &mut ParamStore<T>,
    name: String,
    cfg: &NetworkConfig,
    scale: usize,
    rng: &mut ChaCha8Rng,
) -> Result<FreBlock> {
    let c = cfg.channels_at(scale);
    let (h, w) = cfg.hw_at(scale);
    let local = cfg.use_local_branch.then_some(if cfg.use_pooling_variant {
        Aggregation::Pooling
    } else {
        Aggregation::Adaptive
    });
    let facm = Facm::new(
        store,
        &format!("{name}.facm"),
        c,
        h,
        w,
        cfg.grid_target,
        local,
        cfg.use_global_branch,
        rng,
    )?;
    let ffn = Ffn::new(store, &format!("{name}.ffn"), c, cfg.ffn_hidden(c), rng)?;
    Ok(FreBlock { name, facm, ffn })
}

/// Builds a network with Kaiming-uniform weights drawn from `seed`.
pub fn build_frenet<T: Real>(cfg: &NetworkConfig, seed: u64) -> Result<Frenet<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let l = cfg.scales();
    let head = Conv::new(&mut store, "head", ConvSpec::dense3(cfg.in_channels, cfg.width), &mut rng)?;
    let mut encoder = Vec::with_capacity(l);
    for i in 1..=l {
        let down = Conv::new(
            &mut store,
            &format!("enc{i}.down"),
            downsample_spec(cfg.channels_at(i - 1)),
            &mut rng,
        )?;
        let blocks = (0..cfg.enc_blocks[i - 1])
            .map(|j| build_block(&mut store, format!("enc{i}.blk{j}"), cfg, i, &mut rng))
            .collect::<Result<_>>()?;
        encoder.push(EncoderStage { down, blocks });
    }
    let bottleneck = (0..cfg.bottleneck_blocks)
        .map(|j| build_block(&mut store, format!("bottleneck.blk{j}"), cfg, l, &mut rng))
        .collect::<Result<_>>()?;
    let mut decoder = Vec::with_capacity(l);
    for i in 1..=l {
        let blocks = (0..cfg.dec_blocks[i - 1])
            .map(|j| build_block(&mut store, format!("dec{i}.blk{j}"), cfg, i, &mut rng))
            .collect::<Result<_>>()?;
        let up = Upsample::new(&mut store, &format!("dec{i}.up"), cfg.channels_at(i), &mut rng)?;
        decoder.push(DecoderStage { blocks, up });
    }
    let tail = Conv::new(&mut store, "tail", ConvSpec::dense3(cfg.width, cfg.in_channels), &mut rng)?;
    Ok(Frenet {
        cfg: cfg.clone(),
        layout: Layout {
            head,
            encoder,
            bottleneck,
            decoder,
            tail,
        },
        params: store,
    })
}

fn fft_flops(channels: usize, h: usize, w: usize) -> u64 {
    let n = (h * w) as u64;
    channels as u64 * 5 * n * n.ilog2() as u64
}

impl<T: Real> Frenet<T> {
    pub fn cast<U: Real>(&self) -> Frenet<U> {
        Frenet {
            cfg: self.cfg.clone(),
            layout: self.layout.clone(),
            params: self.params.cast(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&FreBlock, usize)> {
        let l = self.cfg.scales();
        let enc = self.layout.encoder.iter().enumerate().flat_map(|(i, s)| s.blocks.iter().map(move |b| (b, i + 1)));
        let mid = self.layout.bottleneck.iter().map(move |b| (b, l));
        let dec = self.layout.decoder.iter().enumerate().rev().flat_map(|(i, s)| s.blocks.iter().map(move |b| (b, i + 1)));
        enc.chain(mid).chain(dec)
    }

    /// Parameter count and operation counts for one `C_in×H×W` input.
    pub fn cost(&self) -> Cost {
        let cfg = &self.cfg;
        let (h, w) = (cfg.input_h, cfg.input_w);
        let lay = &self.layout;
        let mut macs = lay.head.macs(h, w) + lay.tail.macs(h, w);
        let mut fft = 0;
        for (i, s) in lay.encoder.iter().enumerate() {
            let (ph, pw) = cfg.hw_at(i);
            macs += s.down.macs(ph, pw);
        }
        for (i, s) in lay.decoder.iter().enumerate() {
            let (sh, sw) = cfg.hw_at(i + 1);
            macs += s.up.macs(sh, sw);
        }
        for (b, scale) in self.blocks() {
            let (sh, sw) = cfg.hw_at(scale);
            macs += b.macs(sh, sw);
            fft += 2 * fft_flops(b.facm.channels, sh, sw);
        }
        Cost {
            params: self.param_count(),
            conv_macs: macs,
            fft_flops: fft,
        }
    }

    /// Checks an input against the configured shape.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let want = [self.cfg.in_channels, self.cfg.input_h, self.cfg.input_w];
        if shape != want {
            return config_err!("network expects input {want:?}, got {shape:?}");
        }
        Ok(())
    }

    /// Forward pass on a tape. `p` is `self.params.bind(tape)`.
    pub fn forward_on<'t>(
        &self,
        p: &[Var<'t, T>],
        y: &Var<'t, T>,
        mut trace: Option<&mut Trace<T>>,
    ) -> Result<Var<'t, T>> {
        self.check_input(y.shape())?;
        let cfg = &self.cfg;
        let lay = &self.layout;
        let l = cfg.scales();
        let record = |name: &str, spec: &Var<'t, T>, trace: &mut Option<&mut Trace<T>>| -> Result<()> {
            if let Some(t) = trace.as_deref_mut() {
                t.spectra.push((name.to_string(), channels_to_complex(spec.value())?));
            }
            Ok(())
        };
        let mut skips = FreqSkipStore::new(l);
        let mut enc_out = Vec::with_capacity(l);
        let mut f = lay.head.forward(y, p)?;
        for (idx, stage) in lay.encoder.iter().enumerate() {
            let i = idx + 1;
            f = stage.down.forward(&f, p)?;
            let mut last = None;
            for b in &stage.blocks {
                let (out, spec) = b.forward(&f, None, p)?;
                record(&b.name, &spec, &mut trace)?;
                f = out;
                last = Some(spec);
            }
            debug_assert_eq!(
                f.shape(),
                [cfg.channels_at(i), cfg.hw_at(i).0, cfg.hw_at(i).1]
            );
            if cfg.use_freq_skip {
                if let Some(spec) = last {
                    skips.put(i, spec);
                }
            }
            if let Some(t) = trace.as_deref_mut() {
                t.encoder.push(f.value().clone());
            }
            enc_out.push(f.clone());
        }
        for b in &lay.bottleneck {
            let (out, spec) = b.forward(&f, None, p)?;
            record(&b.name, &spec, &mut trace)?;
            f = out;
        }
        if let Some(t) = trace.as_deref_mut() {
            t.bottleneck = Some(f.value().clone());
        }
        for (idx, stage) in lay.decoder.iter().enumerate().rev() {
            let i = idx + 1;
            if cfg.use_spatial_skip {
                f = f.add(&enc_out[idx])?;
            }
            for (j, b) in stage.blocks.iter().enumerate() {
                let skip = if cfg.use_freq_skip && (cfg.freq_skip_all_blocks || j == 0) {
                    skips.get(i)
                } else {
                    None
                };
                let (out, spec) = b.forward(&f, skip, p)?;
                record(&b.name, &spec, &mut trace)?;
                f = out;
            }
            f = stage.up.forward(&f, p)?;
        }
        let out = lay.tail.forward(&f, p)?;
        if cfg.global_residual {
            out.add(y)
        } else {
            Ok(out)
        }
    }

    /// Inference on a plain tensor.
    pub fn forward(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_traced(y, None)
    }

    pub fn forward_traced(&self, y: &Tensor<T>, trace: Option<&mut Trace<T>>) -> Result<Tensor<T>> {
        let tape = Tape::inference();
        let p = self.params.bind(&tape);
        let out = self.forward_on(&p, &tape.constant(y.clone()), trace)?;
        Ok(out.value().clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testing::{rand_tensor, rng};

    /// Independent parameter formula for the block structure.
    fn expected_params(cfg: &NetworkConfig) -> usize {
        let pw = |i: usize, o: usize| i * o + o;
        let dw = |c: usize| 9 * c + c;
        let block = |scale: usize| {
            let c = cfg.channels_at(scale);
            let (h, w) = cfg.hw_at(scale);
            let c2 = 2 * c;
            let mut n = 2 * c2 + pw(c2, 2 * c2) + dw(2 * c2) + pw(c2, c2);
            if cfg.use_local_branch {
                if !cfg.use_pooling_variant {
                    let g = crate::afpm::make_patch_grid(h, w, cfg.grid_target);
                    let kbg = |out: usize| 16 + 16 + 16 * out + out;
                    n += kbg(g.patch_len()) + kbg(1);
                }
                n += pw(c2, c2);
            }
            if cfg.use_global_branch {
                n += pw(c2, c2);
            }
            let hid = cfg.ffn_hidden(c);
            n + 2 * (pw(c, hid) + dw(hid)) + pw(hid, c)
        };
        let l = cfg.scales();
        let mut n = (9 * cfg.in_channels * cfg.width + cfg.width) + (9 * cfg.width * cfg.in_channels + cfg.in_channels);
        for i in 1..=l {
            let c = cfg.channels_at(i);
            n += 4 * (c / 2) * c + c;
            n += (cfg.enc_blocks[i - 1] + cfg.dec_blocks[i - 1]) * block(i);
            n += pw(c, c) + pw(c / 4, c / 2);
        }
        n + cfg.bottleneck_blocks * block(l)
    }

    #[test]
    fn parameter_count_matches_formula() {
        let tiny = build_frenet::<f32>(&NetworkConfig::tiny(), 0).unwrap();
        assert_eq!(tiny.param_count(), expected_params(&NetworkConfig::tiny()));
        assert!(tiny.param_count() < 100_000);
        for cfg in [
            NetworkConfig::frenet(),
            NetworkConfig { use_global_branch: false, ..NetworkConfig::tiny() },
            NetworkConfig { use_local_branch: false, ..NetworkConfig::tiny() },
            NetworkConfig { use_pooling_variant: true, ..NetworkConfig::tiny() },
        ] {
            let net = build_frenet::<f32>(&cfg, 0).unwrap();
            assert_eq!(net.param_count(), expected_params(&cfg), "{cfg:?}");
        }
    }

    #[test]
    fn names_are_deterministic() {
        let net = build_frenet::<f32>(&NetworkConfig::tiny(), 3).unwrap();
        assert!(net.params.id("enc1.blk0.facm.conv_in.weight").is_some());
        assert!(net.params.id("dec2.blk0.facm.afpm.kernel_kbg.fc1.weight").is_some());
        assert!(net.params.id("bottleneck.blk0.ffn.conv_out.bias").is_some());
        let again = build_frenet::<f32>(&NetworkConfig::tiny(), 3).unwrap();
        for (a, b) in net.params.iter().zip(again.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
        let other = build_frenet::<f32>(&NetworkConfig::tiny(), 4).unwrap();
        assert_ne!(net.params.iter().next().unwrap().value, other.params.iter().next().unwrap().value);
    }

    #[test]
    fn rejects_both_branches_off() {
        let cfg = NetworkConfig {
            use_local_branch: false,
            use_global_branch: false,
            ..NetworkConfig::tiny()
        };
        assert!(build_frenet::<f32>(&cfg, 0).is_err());
    }

    #[test]
    fn forward_shape_determinism_and_input_check() {
        let cfg = NetworkConfig::tiny().with_input(32, 32);
        let net = build_frenet::<f32>(&cfg, 1).unwrap();
        let x = rand_tensor::<f32>(&mut rng(2), &[4, 32, 32]);
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a.shape(), &[4, 32, 32]);
        assert!(a.is_finite());
        assert_eq!(a, b);
        assert!(net.forward(&Tensor::zeros(&[4, 16, 16])).is_err());
        assert!(net.forward(&Tensor::zeros(&[3, 32, 32])).is_err());
    }

    #[test]
    fn freq_skip_is_write_only_for_the_encoder() {
        let on = build_frenet::<f32>(&NetworkConfig::tiny(), 5).unwrap();
        let mut off = on.clone();
        off.cfg.use_freq_skip = false;
        let x = rand_tensor::<f32>(&mut rng(6), &[4, 16, 16]);
        let (mut ta, mut tb) = (Trace::default(), Trace::default());
        let a = on.forward_traced(&x, Some(&mut ta)).unwrap();
        let b = off.forward_traced(&x, Some(&mut tb)).unwrap();
        assert_eq!(ta.encoder, tb.encoder);
        assert_eq!(ta.bottleneck, tb.bottleneck);
        assert!(a.max_abs_diff(&b) > 1e-6);
    }

    #[test]
    fn spatial_skip_and_residual_toggles_are_live() {
        let base = build_frenet::<f32>(&NetworkConfig::tiny(), 7).unwrap();
        let x = rand_tensor::<f32>(&mut rng(8), &[4, 16, 16]);
        let y0 = base.forward(&x).unwrap();
        let mut n = base.clone();
        n.cfg.use_spatial_skip = false;
        assert!(n.forward(&x).unwrap().max_abs_diff(&y0) > 1e-6);
        let mut n = base.clone();
        n.cfg.global_residual = true;
        assert!(n.forward(&x).unwrap().sub(&x).unwrap().max_abs_diff(&y0) < 1e-5);
        let mut n = base.clone();
        n.cfg.freq_skip_all_blocks = false;
        let cfg = NetworkConfig { dec_blocks: vec![2, 2], ..NetworkConfig::tiny() };
        let two = build_frenet::<f32>(&cfg, 7).unwrap();
        let mut first_only = two.clone();
        first_only.cfg.freq_skip_all_blocks = false;
        assert!(two.forward(&x).unwrap().max_abs_diff(&first_only.forward(&x).unwrap()) > 1e-6);
    }

    #[test]
    fn trace_records_every_block() {
        let net = build_frenet::<f32>(&NetworkConfig::tiny(), 9).unwrap();
        let mut t = Trace::default();
        net.forward_traced(&Tensor::ones(&[4, 16, 16]), Some(&mut t)).unwrap();
        let names: Vec<&str> = t.spectra.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["enc1.blk0", "enc2.blk0", "bottleneck.blk0", "dec2.blk0", "dec1.blk0"]);
        assert_eq!(t.spectra[0].1.shape(), &[8, 8, 8]);
        assert_eq!(t.spectra[1].1.shape(), &[16, 4, 4]);
    }

    #[test]
    fn frenet_builds_on_packed_raw() {
        let net = build_frenet::<f32>(&NetworkConfig::frenet(), 0).unwrap();
        let y = rand_tensor::<f32>(&mut rng(10), &[4, 64, 64]);
        let out = net.forward(&y).unwrap();
        assert_eq!(out.shape(), &[4, 64, 64]);
        assert!(out.is_finite());
    }

    #[test]
    fn cost_counts_single_conv_formula() {
        let net = build_frenet::<f32>(&NetworkConfig::tiny(), 0).unwrap();
        let c = net.cost();
        assert_eq!(c.params, net.param_count());
        assert!(c.conv_macs > 0 && c.fft_flops > 0);
        assert_eq!(ConvSpec::pointwise(3, 8).macs(64, 64), 98_304);
    }
}
