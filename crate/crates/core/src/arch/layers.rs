use rand::Rng;

use crate::afpm::{Aggregation, AfpmLayer};
use crate::error::{config_err, Result};
use crate::spectral::shift_amounts;
use crate::tensor::{init, ConvSpec, ParamId, ParamStore, Real, Tensor, Var};

pub const LN_EPS: f64 = 1e-6;

/// A convolution with its parameter handles.
#[derive(Clone, Debug)]
pub struct Conv {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ConvSpec,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        spec.validate()?;
        let weight = store.add(format!("{name}.weight"), init::kaiming_conv(rng, &spec))?;
        let bias = if spec.has_bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[spec.out_channels]))?)
        } else {
            None
        };
        Ok(Self { spec, weight, bias })
    }

    pub fn forward<'t, T: Real>(&self, x: &Var<'t, T>, p: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        x.conv2d(&self.spec, &p[self.weight.index()], self.bias.map(|b| &p[b.index()]))
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.spec.macs(h, w)
    }
}

/// Per-position normalization over channels.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels]))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]))?,
        })
    }

    pub fn forward<'t, T: Real>(&self, x: &Var<'t, T>, p: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        x.layer_norm_channels(&p[self.gamma.index()], &p[self.beta.index()], LN_EPS)
    }
}

/// Simplified channel attention: `x ⊙ conv1×1(avgpool(x))`.
#[derive(Clone, Debug)]
pub struct Sca {
    pub proj: Conv,
}

impl Sca {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            proj: Conv::new(store, &format!("{name}.proj"), ConvSpec::pointwise(channels, channels), rng)?,
        })
    }

    pub fn forward<'t, T: Real>(&self, x: &Var<'t, T>, p: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let (_, h, w) = x.value().dims3()?;
        let attn = self.proj.forward(&x.global_avg_pool()?, p)?;
        attn.block_broadcast(h, w)?.mul(x)
    }
}

/// Spectral processing unit for a `C×H×W` feature map.
#[derive(Clone, Debug)]
pub struct Facm {
    pub channels: usize,
    pub norm: LayerNorm,
    pub conv_in: Conv,
    pub dwconv: Conv,
    pub local: Option<AfpmLayer>,
    pub global: Option<Sca>,
    pub conv_out: Conv,
}

/// What a FACM pass produces.
pub struct FacmOutput<'t, T: Real> {
    pub out: Var<'t, T>,
    /// Packed centered spectrum `2C×H×W` before the inverse shift.
    pub spectrum: Var<'t, T>,
    /// Branch sum fed to the output conv.
    pub fused: Var<'t, T>,
}

impl Facm {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        h: usize,
        w: usize,
        grid_target: usize,
        local: Option<Aggregation>,
        global: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let c2 = 2 * channels;
        let norm = LayerNorm::new(store, &format!("{name}.norm"), c2)?;
        let conv_in = Conv::new(store, &format!("{name}.conv_in"), ConvSpec::pointwise(c2, 2 * c2), rng)?;
        let dwconv = Conv::new(store, &format!("{name}.dwconv"), ConvSpec::depthwise3(2 * c2), rng)?;
        let local = match local {
            Some(agg) => Some(AfpmLayer::new(store, &format!("{name}.afpm"), c2, h, w, grid_target, agg, rng)?),
            None => None,
        };
        let global = if global {
            Some(Sca::new(store, &format!("{name}.sca"), c2, rng)?)
        } else {
            None
        };
        if local.is_none() && global.is_none() {
            return config_err!("{name}: both spectral branches disabled");
        }
        let conv_out = Conv::new(store, &format!("{name}.conv_out"), ConvSpec::pointwise(c2, c2), rng)?;
        Ok(Self {
            channels,
            norm,
            conv_in,
            dwconv,
            local,
            global,
            conv_out,
        })
    }

    /// `skip` is a packed centered spectrum added before normalization.
    pub fn forward<'t, T: Real>(
        &self,
        x: &Var<'t, T>,
        skip: Option<&Var<'t, T>>,
        p: &[Var<'t, T>],
    ) -> Result<FacmOutput<'t, T>> {
        let (c, h, w) = x.value().dims3()?;
        if c != self.channels {
            return config_err!("FACM built for {} channels, got {c}", self.channels);
        }
        let (dy, dx) = shift_amounts(h, w, false);
        let mut freq = x.fft2d_packed()?.roll2d(dy, dx)?;
        if let Some(s) = skip {
            if s.shape() != freq.shape() {
                return config_err!(
                    "frequency skip has shape {:?}, block spectrum is {:?}",
                    s.shape(),
                    freq.shape()
                );
            }
            freq = freq.add(s)?;
        }
        let f = self.norm.forward(&freq, p)?;
        let f = self.conv_in.forward(&f, p)?;
        let f = self.dwconv.forward(&f, p)?.simple_gate()?;
        let fused = match (&self.local, &self.global) {
            (Some(a), Some(s)) => a.forward(&f, p)?.add(&s.forward(&f, p)?)?,
            (Some(a), None) => a.forward(&f, p)?,
            (None, Some(s)) => s.forward(&f, p)?,
            (None, None) => unreachable!("rejected at construction"),
        };
        let spectrum = self.conv_out.forward(&fused, p)?;
        let (iy, ix) = shift_amounts(h, w, true);
        let back = spectrum.roll2d(iy, ix)?.ifft2d_packed()?;
        Ok(FacmOutput {
            out: x.add(&back)?,
            spectrum,
            fused,
        })
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let mut m = self.conv_in.macs(h, w) + self.dwconv.macs(h, w) + self.conv_out.macs(h, w);
        if let Some(a) = &self.local {
            if let Some((k, b)) = &a.generators {
                let n = a.grid.num_patches();
                m += k.macs(n) + b.macs(n);
            }
            m += a.proj.macs(a.grid.rows, a.grid.cols);
        }
        if let Some(s) = &self.global {
            m += s.proj.macs(1, 1);
        }
        m
    }
}

/// Gated depthwise feed-forward with a residual.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub gate_in: Conv,
    pub gate_dw: Conv,
    pub value_in: Conv,
    pub value_dw: Conv,
    pub conv_out: Conv,
}

impl Ffn {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut conv = |part: &str, spec| Conv::new(store, &format!("{name}.{part}"), spec, rng);
        Ok(Self {
            gate_in: conv("gate_in", ConvSpec::pointwise(channels, hidden))?,
            gate_dw: conv("gate_dw", ConvSpec::depthwise3(hidden))?,
            value_in: conv("value_in", ConvSpec::pointwise(channels, hidden))?,
            value_dw: conv("value_dw", ConvSpec::depthwise3(hidden))?,
            conv_out: conv("conv_out", ConvSpec::pointwise(hidden, channels))?,
        })
    }

    pub fn forward<'t, T: Real>(&self, x: &Var<'t, T>, p: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let gate = self.gate_dw.forward(&self.gate_in.forward(x, p)?, p)?.gelu();
        let value = self.value_dw.forward(&self.value_in.forward(x, p)?, p)?;
        x.add(&self.conv_out.forward(&gate.mul(&value)?, p)?)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        [&self.gate_in, &self.gate_dw, &self.value_in, &self.value_dw, &self.conv_out]
            .iter()
            .map(|c| c.macs(h, w))
            .sum()
    }
}

/// FACM followed by FFN.
#[derive(Clone, Debug)]
pub struct FreBlock {
    pub name: String,
    pub facm: Facm,
    pub ffn: Ffn,
}

impl FreBlock {
    pub fn forward<'t, T: Real>(
        &self,
        x: &Var<'t, T>,
        skip: Option<&Var<'t, T>>,
        p: &[Var<'t, T>],
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let f = self.facm.forward(x, skip, p)?;
        Ok((self.ffn.forward(&f.out, p)?, f.spectrum))
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.facm.macs(h, w) + self.ffn.macs(h, w)
    }
}

/// `conv1×1(2C→2C) → depth_to_space(2) → conv1×1(C/2→C)`.
#[derive(Clone, Debug)]
pub struct Upsample {
    pub expand: Conv,
    pub project: Conv,
}

impl Upsample {
    /// Maps `channels` at one scale to `channels/2` at twice the resolution.
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        if channels % 4 != 0 {
            return config_err!("{name}: {channels} channels cannot be rearranged by a factor of 2");
        }
        Ok(Self {
            expand: Conv::new(store, &format!("{name}.conv1"), ConvSpec::pointwise(channels, channels), rng)?,
            project: Conv::new(
                store,
                &format!("{name}.conv2"),
                ConvSpec::pointwise(channels / 4, channels / 2),
                rng,
            )?,
        })
    }

    pub fn forward<'t, T: Real>(&self, x: &Var<'t, T>, p: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let f = self.expand.forward(x, p)?.depth_to_space(2)?;
        self.project.forward(&f, p)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.expand.macs(h, w) + self.project.macs(2 * h, 2 * w)
    }
}

/// `k×k` stride-`k` downsampling conv doubling channels.
pub(crate) fn downsample_spec(channels: usize) -> ConvSpec {
    ConvSpec {
        in_channels: channels,
        out_channels: 2 * channels,
        kernel_h: 2,
        kernel_w: 2,
        stride: 2,
        groups: 1,
        has_bias: true,
    }
}

/// Runs a layer on plain tensors.
#[cfg(test)]
pub(crate) fn eval<T: Real>(
    store: &ParamStore<T>,
    x: &Tensor<T>,
    f: impl for<'t> FnOnce(&Var<'t, T>, &[Var<'t, T>]) -> Result<Var<'t, T>>,
) -> Result<Tensor<T>> {
    let tape = crate::tensor::Tape::inference();
    let p = store.bind(&tape);
    let out = f(&tape.constant(x.clone()), &p)?;
    Ok(out.value().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use crate::afpm::{afpm_forward, afpm_pooling_variant};
    use crate::spectral::{channels_to_complex, complex_to_channels, fft2d, fft_shift, ifft2d};
    use crate::tensor::testing::{rand_tensor, rng};
    use crate::tensor::{conv2d, global_avg_pool, layer_norm_channels, ops, simple_gate};

    fn value<T: Real>(s: &ParamStore<T>, id: ParamId) -> Tensor<T> {
        s.value(id).clone()
    }

    fn conv_oracle(s: &ParamStore<f64>, c: &Conv, x: &Tensor<f64>) -> Tensor<f64> {
        let b = c.bias.map(|b| value(s, b));
        conv2d(x, &c.spec, &value(s, c.weight), b.as_ref()).unwrap()
    }

    fn broadcast_mul(f: &Tensor<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (c, h, w) = x.dims3().unwrap();
        Tensor::from_fn(&[c, h, w], |i| f.data()[i / (h * w)] * x.data()[i])
    }

    fn sca_oracle(s: &ParamStore<f64>, sca: &Sca, x: &Tensor<f64>) -> Tensor<f64> {
        broadcast_mul(&conv_oracle(s, &sca.proj, &global_avg_pool(x).unwrap()), x)
    }

    #[test]
    fn sca_cases() {
        let mut s = ParamStore::<f64>::new();
        let sca = Sca::new(&mut s, "sca", 1, &mut rng(1)).unwrap();
        s.set("sca.proj.weight", Tensor::full(&[1, 1, 1, 1], 0.5)).unwrap();
        s.set("sca.proj.bias", Tensor::full(&[1], 0.25)).unwrap();
        let out = eval(&s, &Tensor::full(&[1, 3, 3], 2.0), |x, p| sca.forward(x, p)).unwrap();
        assert!(out.data().iter().all(|&v| v == (0.5 * 2.0 + 0.25) * 2.0));

        let mut s = ParamStore::<f64>::new();
        let sca = Sca::new(&mut s, "sca", 4, &mut rng(2)).unwrap();
        let x = rand_tensor::<f64>(&mut rng(3), &[4, 8, 8]);
        let out = eval(&s, &x, |x, p| sca.forward(x, p)).unwrap();
        assert!(out.max_abs_diff(&sca_oracle(&s, &sca, &x)) < 1e-6);

        s.set("sca.proj.weight", Tensor::zeros(&[4, 4, 1, 1])).unwrap();
        s.set("sca.proj.bias", Tensor::ones(&[4])).unwrap();
        assert_eq!(eval(&s, &x, |x, p| sca.forward(x, p)).unwrap(), x);
    }

    fn ffn_oracle(s: &ParamStore<f64>, f: &Ffn, x: &Tensor<f64>) -> Tensor<f64> {
        let gate = ops::gelu(&conv_oracle(s, &f.gate_dw, &conv_oracle(s, &f.gate_in, x)));
        let value = conv_oracle(s, &f.value_dw, &conv_oracle(s, &f.value_in, x));
        x.add(&conv_oracle(s, &f.conv_out, &gate.mul(&value).unwrap())).unwrap()
    }

    #[test]
    fn ffn_cases() {
        let mut s = ParamStore::<f64>::new();
        let ffn = Ffn::new(&mut s, "ffn", 6, 12, &mut rng(4)).unwrap();
        let x = rand_tensor::<f64>(&mut rng(5), &[6, 5, 5]);
        assert_eq!(eval(&s, &x, |x, p| ffn.forward(x, p)).unwrap().shape(), &[6, 5, 5]);

        let mut s = ParamStore::<f64>::new();
        let ffn = Ffn::new(&mut s, "ffn", 2, 4, &mut rng(6)).unwrap();
        let x = rand_tensor::<f64>(&mut rng(7), &[2, 4, 4]);
        let out = eval(&s, &x, |x, p| ffn.forward(x, p)).unwrap();
        assert!(out.max_abs_diff(&ffn_oracle(&s, &ffn, &x)) < 1e-5);

        for name in ["gate_in", "gate_dw", "value_in", "value_dw", "conv_out"] {
            let id = s.id(&format!("ffn.{name}.weight")).unwrap();
            let shape = s.value(id).shape().to_vec();
            s.set(&format!("ffn.{name}.weight"), Tensor::zeros(&shape)).unwrap();
        }
        assert_eq!(eval(&s, &x, |x, p| ffn.forward(x, p)).unwrap(), x);
    }

    fn facm(s: &mut ParamStore<f64>, c: usize, hw: usize, local: Option<Aggregation>, global: bool) -> Facm {
        Facm::new(s, "facm", c, hw, hw, 8, local, global, &mut rng(8)).unwrap()
    }

    /// Step-by-step transcription using the plain tensor operations.
    fn facm_oracle(s: &ParamStore<f64>, f: &Facm, x: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
        let freq = complex_to_channels(&fft_shift(&fft2d(x).unwrap(), false).unwrap());
        let (norm, _) = layer_norm_channels(&freq, &value(s, f.norm.gamma), &value(s, f.norm.beta), LN_EPS).unwrap();
        let processed = simple_gate(&conv_oracle(s, &f.dwconv, &conv_oracle(s, &f.conv_in, &norm))).unwrap();
        let local = f.local.as_ref().map(|a| {
            let params = a.params(s);
            match a.aggregation() {
                Aggregation::Adaptive => afpm_forward(&processed, &params, &a.grid).unwrap(),
                Aggregation::Pooling => afpm_pooling_variant(&processed, &params, &a.grid).unwrap(),
            }
        });
        let global = f.global.as_ref().map(|g| sca_oracle(s, g, &processed));
        let fused = match (local, global) {
            (Some(a), Some(b)) => a.add(&b).unwrap(),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => unreachable!(),
        };
        let spectrum = conv_oracle(s, &f.conv_out, &fused);
        let back = ifft2d(&fft_shift(&channels_to_complex(&spectrum).unwrap(), true).unwrap()).unwrap();
        (x.add(&back).unwrap(), spectrum)
    }

    fn run_facm(s: &ParamStore<f64>, f: &Facm, x: &Tensor<f64>, skip: Option<&Tensor<f64>>) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
        let tape = Tape::inference();
        let p = s.bind(&tape);
        let skip = skip.map(|t| tape.constant(t.clone()));
        let o = f.forward(&tape.constant(x.clone()), skip.as_ref(), &p).unwrap();
        (o.out.value().clone(), o.spectrum.value().clone(), o.fused.value().clone())
    }

    #[test]
    fn facm_shapes_and_composition() {
        let mut s = ParamStore::<f64>::new();
        let f = facm(&mut s, 4, 16, Some(Aggregation::Adaptive), true);
        let x = rand_tensor::<f64>(&mut rng(9), &[4, 16, 16]);
        let (out, spec, _) = run_facm(&s, &f, &x, None);
        assert_eq!(out.shape(), &[4, 16, 16]);
        assert_eq!(channels_to_complex(&spec).unwrap().shape(), &[4, 16, 16]);

        let mut s = ParamStore::<f64>::new();
        let f = facm(&mut s, 2, 8, Some(Aggregation::Adaptive), true);
        let x = rand_tensor::<f64>(&mut rng(10), &[2, 8, 8]);
        let (out, spec, _) = run_facm(&s, &f, &x, None);
        let (want_out, want_spec) = facm_oracle(&s, &f, &x);
        assert!(out.max_abs_diff(&want_out) < 1e-4);
        assert!(spec.max_abs_diff(&want_spec) < 1e-4);
    }

    #[test]
    fn facm_zero_weights_add_constant_field() {
        let mut s = ParamStore::<f64>::new();
        let f = facm(&mut s, 2, 8, Some(Aggregation::Adaptive), true);
        let names: Vec<String> = s.iter().filter(|p| p.name.ends_with("weight")).map(|p| p.name.clone()).collect();
        for n in names {
            let shape = s.by_name(&n).unwrap().value.shape().to_vec();
            s.set(&n, Tensor::zeros(&shape)).unwrap();
        }
        s.set("facm.conv_out.bias", Tensor::new(&[4], vec![0.5, -0.25, 0.0, 0.0]).unwrap()).unwrap();
        let x = rand_tensor::<f64>(&mut rng(11), &[2, 8, 8]);
        let (out, _, _) = run_facm(&s, &f, &x, None);
        let y = rand_tensor::<f64>(&mut rng(12), &[2, 8, 8]);
        let (out_y, _, _) = run_facm(&s, &f, &y, None);
        let field = out.sub(&x).unwrap();
        assert!(out.is_finite());
        assert!(field.max_abs_diff(&out_y.sub(&y).unwrap()) < 1e-12);
        assert!(field.max_abs() > 0.0);
    }

    #[test]
    fn facm_skip_and_branch_ablation() {
        let mut s = ParamStore::<f64>::new();
        let f = facm(&mut s, 2, 8, Some(Aggregation::Adaptive), true);
        let x = rand_tensor::<f64>(&mut rng(13), &[2, 8, 8]);
        let skip = rand_tensor::<f64>(&mut rng(14), &[4, 8, 8]);
        let (a, _, _) = run_facm(&s, &f, &x, None);
        let (b, _, _) = run_facm(&s, &f, &x, Some(&skip));
        assert!(a.max_abs_diff(&b) > 1e-6);
        let tape = Tape::inference();
        let p = s.bind(&tape);
        let bad = tape.constant(Tensor::<f64>::zeros(&[4, 4, 4]));
        assert!(f.forward(&tape.constant(x.clone()), Some(&bad), &p).is_err());

        let processed_of = |s: &ParamStore<f64>, f: &Facm| {
            let tape = Tape::inference();
            let p = s.bind(&tape);
            let freq = tape.constant(complex_to_channels(&fft_shift(&fft2d(&x).unwrap(), false).unwrap()));
            let n = f.norm.forward(&freq, &p).unwrap();
            let g = f.dwconv.forward(&f.conv_in.forward(&n, &p).unwrap(), &p).unwrap().simple_gate().unwrap();
            (g.value().clone(), f.local.as_ref().map(|a| a.forward(&g, &p).unwrap().value().clone()), f.global.as_ref().map(|sc| sc.forward(&g, &p).unwrap().value().clone()))
        };
        for (local, global) in [(true, false), (false, true)] {
            let mut s = ParamStore::<f64>::new();
            let f = facm(&mut s, 2, 8, local.then_some(Aggregation::Adaptive), global);
            let (_, _, fused) = run_facm(&s, &f, &x, None);
            let (_, l, g) = processed_of(&s, &f);
            assert_eq!(fused, l.or(g).unwrap());
        }
    }

    #[test]
    fn upsample_cases() {
        let mut s = ParamStore::<f64>::new();
        let up = Upsample::new(&mut s, "up", 8, &mut rng(15)).unwrap();
        let x = rand_tensor::<f64>(&mut rng(16), &[8, 8, 8]);
        let out = eval(&s, &x, |x, p| up.forward(x, p)).unwrap();
        assert_eq!(out.shape(), &[4, 16, 16]);
        let want = conv_oracle(&s, &up.project, &ops::depth_to_space(&conv_oracle(&s, &up.expand, &x), 2).unwrap());
        assert!(out.max_abs_diff(&want) < 1e-12);
        assert!(Upsample::new(&mut s, "bad", 6, &mut rng(0)).is_err());
    }

    #[test]
    fn downsample_cases() {
        let mut s = ParamStore::<f64>::new();
        let down = Conv::new(&mut s, "down", downsample_spec(4), &mut rng(17)).unwrap();
        let x = rand_tensor::<f64>(&mut rng(18), &[4, 16, 16]);
        let out = eval(&s, &x, |x, p| down.forward(x, p)).unwrap();
        assert_eq!(out.shape(), &[8, 8, 8]);
        let (w, b) = (value(&s, down.weight), value(&s, down.bias.unwrap()));
        for o in 0..8 {
            for y in 0..8 {
                for xx in 0..8 {
                    let mut acc = b.data()[o];
                    for c in 0..4 {
                        for u in 0..2 {
                            for v in 0..2 {
                                acc += w.data()[((o * 4 + c) * 2 + u) * 2 + v] * x.data()[(c * 16 + 2 * y + u) * 16 + 2 * xx + v];
                            }
                        }
                    }
                    assert!((out.data()[(o * 8 + y) * 8 + xx] - acc).abs() < 1e-12);
                }
            }
        }
        let y = rand_tensor::<f64>(&mut rng(19), &[4, 16, 16]);
        let lin = |t: &Tensor<f64>| eval(&s, t, |x, p| down.forward(x, p)).unwrap();
        let zero = lin(&Tensor::zeros(&[4, 16, 16]));
        let lhs = lin(&x.scale(2.0).add(&y).unwrap()).sub(&zero).unwrap();
        let rhs = lin(&x).sub(&zero).unwrap().scale(2.0).add(&lin(&y).sub(&zero).unwrap()).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-10);
        assert!(eval(&s, &Tensor::zeros(&[4, 15, 16]), |x, p| down.forward(x, p)).is_err());
    }
}
