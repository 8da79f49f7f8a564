//! Losses, optimization, metrics and tiled inference.

mod infer;
mod metrics;
mod optim;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use infer::{infer_tiled, sliding_window_infer, tile_origins, tile_profile, BlendPlan};
pub use metrics::{gaussian_taps, psnr, ssim, MetricReport, SSIM_SIGMA, SSIM_WINDOW};
pub use optim::{adam_step, cosine_lr, AdamHyper, AdamState};

use crate::arch::{build_frenet, Checkpoint, Cost, Frenet, NetworkConfig};
use crate::config::{write_kv, KvDoc};
use crate::error::{config_err, Error, Result};
use crate::raw::{bayer_unpack, Pair};
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub batch: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub fr_weight: f64,
    pub seed: u64,
    /// Items held out from the end of a corpus for validation.
    pub val_count: usize,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch: usize, seed: u64) -> Self {
        Self {
            lr0: 1e-3,
            lr_min: 1e-6,
            epochs,
            batch,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            fr_weight: 0.01,
            seed,
            val_count: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.lr0 > self.lr_min && self.lr_min > 0.0) {
            bad.push(format!("need lr0 > lr_min > 0, got {} and {}", self.lr0, self.lr_min));
        }
        if self.batch == 0 {
            bad.push("batch must be at least 1".to_string());
        }
        if !(self.fr_weight >= 0.0) {
            bad.push(format!("fr_weight must be non-negative, got {}", self.fr_weight));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            bad.push("Adam betas must lie in [0, 1)".to_string());
        }
        if !(self.adam_eps > 0.0) {
            bad.push("adam_eps must be positive".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            config_err!("invalid training config: {}", bad.join("; "))
        }
    }

    pub fn from_kv(doc: &mut KvDoc) -> Result<Self> {
        let d = Self::new(doc.require("epochs")?, doc.require("batch")?, doc.require("seed")?);
        let c = Self {
            lr0: doc.take_or("lr0", d.lr0)?,
            lr_min: doc.take_or("lr_min", d.lr_min)?,
            adam_beta1: doc.take_or("adam_beta1", d.adam_beta1)?,
            adam_beta2: doc.take_or("adam_beta2", d.adam_beta2)?,
            adam_eps: doc.take_or("adam_eps", d.adam_eps)?,
            fr_weight: doc.take_or("fr_weight", d.fr_weight)?,
            val_count: doc.take_or("val_count", d.val_count)?,
            ..d
        };
        c.validate()?;
        Ok(c)
    }

    pub fn write_kv(&self, out: &mut String) {
        write_kv(out, "lr0", self.lr0);
        write_kv(out, "lr_min", self.lr_min);
        write_kv(out, "epochs", self.epochs);
        write_kv(out, "batch", self.batch);
        write_kv(out, "adam_beta1", self.adam_beta1);
        write_kv(out, "adam_beta2", self.adam_beta2);
        write_kv(out, "adam_eps", self.adam_eps);
        write_kv(out, "fr_weight", self.fr_weight);
        write_kv(out, "seed", self.seed);
        write_kv(out, "val_count", self.val_count);
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// `mean|p − t| + w·mean|F(p) − F(t)|` over real and imaginary parts.
pub fn loss_var<'t, T: Real>(pred: &Var<'t, T>, target: &Var<'t, T>, fr_weight: f64) -> Result<Var<'t, T>> {
    let d = pred.sub(target)?;
    let l1 = d.mean_abs();
    if fr_weight == 0.0 {
        return Ok(l1);
    }
    l1.add(&d.fft2d_packed()?.mean_abs().scale(fr_weight))
}

pub fn loss_total<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, fr_weight: f64) -> Result<f64> {
    let tape = Tape::inference();
    let l = loss_var(&tape.constant(pred.clone()), &tape.constant(target.clone()), fr_weight)?;
    Ok(l.value().item().f64())
}

/// Parameters, conv MACs and FFT flops at the configured input size.
pub fn count_params_macs(cfg: &NetworkConfig) -> Result<Cost> {
    Ok(build_frenet::<f32>(cfg, 0)?.cost())
}

/// Quality of `net` on packed pairs, measured on the unpacked mosaic with
/// predictions clamped to `[0, 1]`.
pub fn evaluate(net: &Frenet, pairs: &[Pair]) -> Result<MetricReport> {
    evaluate_with(|x| net.forward(x), pairs)
}

pub fn evaluate_with<F>(f: F, pairs: &[Pair]) -> Result<MetricReport>
where
    F: Fn(&Tensor) -> Result<Tensor> + Sync,
{
    let per_image = pairs
        .par_iter()
        .map(|p| {
            let pred = bayer_unpack(&f(&p.blurred)?.map(|v| v.clamp(0.0, 1.0)))?;
            let sharp = bayer_unpack(&p.sharp)?;
            Ok((psnr(&pred, &sharp, 1.0)?, ssim(&pred, &sharp)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_images(per_image))
}

/// Loss of one batch and its mean parameter gradients, per-sample tapes run
/// in parallel and reduced in batch order.
pub fn batch_gradients<T: Real>(
    net: &Frenet<T>,
    inputs: &[(&Tensor<T>, &Tensor<T>)],
    fr_weight: f64,
) -> Result<(f64, Vec<Option<Tensor<T>>>)> {
    let per = inputs
        .par_iter()
        .map(|&(x, y)| {
            let tape = Tape::new();
            let p = net.params.bind(&tape);
            let pred = net.forward_on(&p, &tape.constant(x.clone()), None)?;
            let loss = loss_var(&pred, &tape.constant(y.clone()), fr_weight)?;
            let mut g = tape.backward(&loss)?;
            Ok((loss.value().item().f64(), p.iter().map(|v| g.take(v)).collect::<Vec<_>>()))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per.len() as f64;
    let mut loss = 0.0;
    let mut grads: Vec<Option<Tensor<T>>> = (0..net.params.len()).map(|_| None).collect();
    for (l, gs) in per {
        loss += l;
        for (acc, g) in grads.iter_mut().zip(gs) {
            match (acc.as_mut(), g) {
                (Some(a), Some(g)) => a.add_assign(&g)?,
                (None, Some(g)) => *acc = Some(g),
                _ => {}
            }
        }
    }
    let s = T::c(1.0 / n);
    for g in grads.iter_mut().flatten() {
        *g = g.scale(s);
    }
    Ok((loss / n, grads))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub steps: usize,
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub val_psnr: Vec<f64>,
    pub best_psnr: Option<f64>,
    pub state: Option<AdamState>,
}

fn checkpoint(net: &Frenet, state: &AdamState, dir: Option<&Path>, file: &str) -> Result<Option<PathBuf>> {
    let Some(dir) = dir else { return Ok(None) };
    let path = dir.join(file);
    Checkpoint::from_network(net, state.named(&net.params), state.t).save(&path)?;
    Ok(Some(path))
}

/// Seeded-shuffle mini-batch Adam with a per-epoch cosine schedule.
///
/// Writes one log line per epoch. With `out_dir`, saves `final.fckpt` and,
/// when `val` is non-empty, `best.fckpt` at the best validation PSNR.
pub fn train(
    net: &mut Frenet,
    train_set: &[Pair],
    val: &[Pair],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    log: &mut dyn Write,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return config_err!("training set is empty");
    }
    for p in train_set.iter().chain(val) {
        net.check_input(p.blurred.shape())?;
        net.check_input(p.sharp.shape())?;
    }
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(&net.params);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr0, cfg.lr_min);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let batches: Vec<&[usize]> = order.chunks(cfg.batch).collect();
        for (b, idx) in batches.iter().enumerate() {
            let inputs: Vec<_> = idx.iter().map(|&i| (&train_set[i].blurred, &train_set[i].sharp)).collect();
            let (loss, grads) = batch_gradients(net, &inputs, cfg.fr_weight)?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                let path = checkpoint(net, &state, out_dir, "last_good.fckpt")?;
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    checkpoint: path,
                });
            }
            net.params.zero_grads();
            net.params.accumulate_grads(grads)?;
            adam_step(&mut net.params, &mut state, lr, cfg.hyper())?;
            net.params.zero_grads();
            report.steps += 1;
            report.step_losses.push(loss);
            epoch_loss += loss;
        }
        epoch_loss /= batches.len() as f64;
        report.epoch_losses.push(epoch_loss);
        let mut line = format!("epoch {} step {} lr {lr:.6e} loss {epoch_loss:.6e}", epoch + 1, report.steps);
        if !val.is_empty() {
            let v = evaluate(net, val)?.psnr_db;
            line += &format!(" val_psnr {v:.4}");
            report.val_psnr.push(v);
            if report.best_psnr.is_none_or(|b| v > b) {
                report.best_psnr = Some(v);
                checkpoint(net, &state, out_dir, "best.fckpt")?;
            }
        }
        writeln!(log, "{line}")?;
    }
    checkpoint(net, &state, out_dir, "final.fckpt")?;
    report.state = Some(state);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::fft2d;
    use crate::tensor::testing::{rand_tensor, rng};

    #[test]
    fn config_keys() {
        let mut doc = KvDoc::parse("epochs = 2\nbatch = 4\nseed = 3\nfr_weight = 0\n").unwrap();
        let c = TrainConfig::from_kv(&mut doc).unwrap();
        doc.finish().unwrap();
        assert_eq!(c.fr_weight, 0.0);
        assert_eq!(c.lr0, 1e-3);
        let mut s = String::new();
        c.write_kv(&mut s);
        let mut doc = KvDoc::parse(&s).unwrap();
        assert_eq!(TrainConfig::from_kv(&mut doc).unwrap(), c);
        for bad in ["batch = 0", "lr0 = 1e-7", "fr_weight = -1"] {
            let text = format!("epochs = 2\nseed = 3\n{bad}\n{}", if bad.starts_with("batch") { "" } else { "batch = 1\n" });
            assert!(TrainConfig::from_kv(&mut KvDoc::parse(&text).unwrap()).is_err(), "{bad}");
        }
    }

    #[test]
    fn loss_cases() {
        let a = rand_tensor::<f64>(&mut rng(1), &[2, 8, 8]);
        assert_eq!(loss_total(&a, &a, 0.01).unwrap(), 0.0);
        assert!((loss_total(&a, &a.map(|v| v + 0.5), 0.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(loss_total(&a, &Tensor::zeros(&[2, 8, 4]), 0.0).is_err());

        let b = rand_tensor::<f64>(&mut rng(2), &[2, 8, 8]);
        let l1 = a.sub(&b).unwrap().data().iter().map(|v| v.abs()).sum::<f64>() / a.len() as f64;
        let mut fr = 0.0;
        for c in 0..2 {
            let fa = fft2d(&a.channels(c, c + 1).unwrap()).unwrap();
            let fb = fft2d(&b.channels(c, c + 1).unwrap()).unwrap();
            for i in 0..64 {
                fr += (fa.re().data()[i] - fb.re().data()[i]).abs() + (fa.im().data()[i] - fb.im().data()[i]).abs();
            }
        }
        fr /= 2.0 * a.len() as f64;
        let got = loss_total(&a, &b, 0.01).unwrap();
        assert!((got - (l1 + 0.01 * fr)).abs() < 1e-5 * got);
    }

    fn tiny_pairs(n: usize, seed: u64) -> Vec<Pair> {
        (0..n)
            .map(|i| {
                let sharp = rand_tensor::<f32>(&mut rng(seed + i as u64), &[4, 16, 16]).map(|v| 0.5 + 0.4 * v);
                Pair {
                    blurred: sharp.map(|v| 0.8 * v + 0.1),
                    sharp,
                }
            })
            .collect()
    }

    #[test]
    fn step_count_and_determinism() {
        let data = tiny_pairs(8, 10);
        let cfg = TrainConfig::new(1, 4, 5);
        let run = || {
            let mut net = build_frenet::<f32>(&NetworkConfig::tiny(), 3).unwrap();
            let mut log = Vec::new();
            let r = train(&mut net, &data, &[], &cfg, None, &mut log).unwrap();
            (r, net, String::from_utf8(log).unwrap())
        };
        let (r1, n1, log1) = run();
        let (r2, n2, log2) = run();
        assert_eq!(r1.steps, 2);
        assert_eq!(r1.state.as_ref().unwrap().t, 2);
        assert_eq!(log1, log2);
        assert_eq!(r1.step_losses, r2.step_losses);
        assert!(log1.starts_with("epoch 1 step 2 lr "), "{log1}");
        assert_eq!(n1.params, n2.params);
        assert_ne!(n1.params, build_frenet::<f32>(&NetworkConfig::tiny(), 3).unwrap().params);
    }

    #[test]
    fn writes_checkpoints_and_logs_val_psnr() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_pairs(4, 20);
        let cfg = TrainConfig::new(2, 2, 1);
        let mut net = build_frenet::<f32>(&NetworkConfig::tiny(), 3).unwrap();
        let mut log = Vec::new();
        let r = train(&mut net, &data, &data[..2], &cfg, Some(dir.path()), &mut log).unwrap();
        let log = String::from_utf8(log).unwrap();
        assert_eq!(log.lines().count(), 2);
        assert!(log.lines().all(|l| l.contains(" val_psnr ")));
        assert_eq!(r.val_psnr.len(), 2);
        let fin = Checkpoint::load(&dir.path().join("final.fckpt")).unwrap();
        assert_eq!(fin.step, 4);
        assert_eq!(fin.to_network().unwrap().params, net.params);
        assert!(dir.path().join("best.fckpt").exists());
    }

    #[test]
    fn non_finite_loss_aborts_with_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let mut data = tiny_pairs(4, 30);
        data[3].sharp.data_mut()[0] = f32::NAN;
        let mut net = build_frenet::<f32>(&NetworkConfig::tiny(), 3).unwrap();
        let cfg = TrainConfig::new(1, 1, 0);
        let err = train(&mut net, &data, &[], &cfg, Some(dir.path()), &mut std::io::sink()).unwrap_err();
        let Error::NonFiniteLoss { epoch, checkpoint, .. } = err else {
            panic!("{err}")
        };
        assert_eq!(epoch, 0);
        assert!(checkpoint.unwrap().exists());
    }

    #[test]
    fn evaluate_on_identity() {
        let data = tiny_pairs(2, 40);
        let r = evaluate_with(|x| Ok(x.clone()), &data).unwrap();
        assert_eq!(r.per_image.len(), 2);
        let want = psnr(&bayer_unpack(&data[0].blurred).unwrap(), &bayer_unpack(&data[0].sharp).unwrap(), 1.0).unwrap();
        assert!((r.per_image[0].0 - want).abs() < 1e-9);
        assert!(r.to_text().lines().last().unwrap().starts_with("mean "));
    }

    #[test]
    fn cost_matches_network() {
        let cfg = NetworkConfig::tiny();
        let c = count_params_macs(&cfg).unwrap();
        assert_eq!(c.params, build_frenet::<f32>(&cfg, 9).unwrap().param_count());
        assert!(c.conv_macs > 0 && c.fft_flops > 0);
    }
}
