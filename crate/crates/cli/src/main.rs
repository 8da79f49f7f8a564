use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use frenet::arch::{Checkpoint, Frenet, NetworkConfig};
use frenet::config::RunConfig;
use frenet::raw::{
    bayer_pack, bayer_unpack, gen_dataset, preprocess_raw, read_pgm, read_ppm_unit, write_pgm, write_ppm_unit,
    Corpus, PreprocessSpec,
};
use frenet::tensor::ften;
use frenet::train::{count_params_macs, infer_tiled, sliding_window_infer, train};
use frenet::verify::{self, Suite};
use frenet::{Error, Result, Tensor};

#[derive(Parser)]
#[command(name = "frenet", version, about = "Frequency-enhanced RAW image deblurring")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic blurred/sharp corpus.
    Datagen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network on a corpus; the last `val_count` items are held out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Deblur one image with overlapping tiles.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Tile size in network pixels; must equal the network input size.
        #[arg(long)]
        window: Option<usize>,
        /// Defaults to half the window.
        #[arg(long)]
        overlap: Option<usize>,
    },
    /// Print parameter and operation counts.
    Analyze {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the invariant suites.
    Verify {
        #[arg(long, default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write one block's centered spectrum as `.re.ften` / `.im.ften`.
    DumpSpectrum {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Block path such as `enc1.blk0`.
        #[arg(long)]
        block: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write each block's modulation kernels.
    DumpKernels {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("FRENET_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("FRENET_THREADS must be a non-negative integer, got {v:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Datagen { config, out } => datagen(&config, &out)?,
        Cmd::Train { config, data, out } => train_cmd(&config, &data, &out)?,
        Cmd::Infer {
            checkpoint,
            input,
            output,
            window,
            overlap,
        } => infer(&checkpoint, &input, &output, window, overlap)?,
        Cmd::Analyze { config } => analyze(&config)?,
        Cmd::Verify { suite, seed } => return verify_cmd(suite, seed),
        Cmd::DumpSpectrum {
            checkpoint,
            input,
            block,
            out,
        } => dump_spectrum(&checkpoint, &input, &block, &out)?,
        Cmd::DumpKernels { checkpoint, out } => dump_kernels(&checkpoint, &out)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn datagen(config: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let corpus = gen_dataset(&cfg.dataset, &cfg.preprocess)?;
    corpus.save(out)?;
    println!("items {}", corpus.len());
    println!("digest {}", corpus.digest());
    println!("baseline_psnr {:.4}", corpus.baseline_psnr()?);
    Ok(())
}

/// Writes to stdout and a log file at once.
struct Tee<A, B>(A, B);

impl<A: Write, B: Write> Write for Tee<A, B> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.write_all(buf)?;
        self.1.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.0.flush()?;
        self.1.flush()
    }
}

fn train_cmd(config: &Path, data: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let corpus = Corpus::load(data)?;
    let nv = cfg.train.val_count;
    if nv >= corpus.len() {
        return Err(Error::Config(format!(
            "val_count {nv} leaves no training items in a corpus of {}",
            corpus.len()
        )));
    }
    let (train_set, val) = corpus.pairs.split_at(corpus.len() - nv);
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    let mut net = frenet::arch::build_frenet::<f32>(&cfg.network, cfg.train.seed)?;
    let mut log = Tee(io::stdout(), File::create(out.join("train.log"))?);
    let r = train(&mut net, train_set, val, &cfg.train, Some(out), &mut log)?;
    let best = r.best_psnr.map_or("-".to_string(), |p| format!("{p:.4}"));
    writeln!(log, "done steps {} best_val_psnr {best}", r.steps)?;
    Ok(())
}

fn load_net(path: &Path) -> Result<Frenet> {
    Checkpoint::load(path)?.to_network()
}

fn ext(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Reads an image as network input. RAW PGM counts are normalized with the
/// default preprocessing and packed to four planes.
fn read_image(path: &Path) -> Result<Tensor> {
    match ext(path).as_str() {
        "pgm" => bayer_pack(&preprocess_raw(&read_pgm(path)?, &PreprocessSpec::default())?),
        "ppm" => read_ppm_unit(path),
        "ften" => ften::load(path),
        e => Err(Error::Config(format!("unsupported image extension {e:?} (pgm, ppm, ften)"))),
    }
}

fn write_image(path: &Path, x: &Tensor) -> Result<()> {
    match ext(path).as_str() {
        "pgm" => {
            let spec = PreprocessSpec::default();
            let raw = bayer_unpack(x)?;
            write_pgm(path, &raw.map(|v| spec.to_counts(v.clamp(0.0, 1.0) as f64) as f32))
        }
        "ppm" => write_ppm_unit(path, x),
        "ften" => ften::save(x, path),
        e => Err(Error::Config(format!("unsupported image extension {e:?} (pgm, ppm, ften)"))),
    }
}

fn infer(
    checkpoint: &Path,
    input: &Path,
    output: &Path,
    window: Option<usize>,
    overlap: Option<usize>,
) -> Result<()> {
    let net = load_net(checkpoint)?;
    let x = read_image(input)?;
    let win = net.cfg.input_h;
    if let Some(w) = window {
        if w != win || net.cfg.input_w != win {
            return Err(Error::Config(format!(
                "window {w} must match the network input {}×{}",
                net.cfg.input_h, net.cfg.input_w
            )));
        }
    }
    let y = match overlap {
        Some(ov) => sliding_window_infer(|t| net.forward(t), &x, win, ov)?,
        None => infer_tiled(&net, &x, win / 2)?,
    };
    write_image(output, &y)
}

/// Published figures for the two presets at `128×128×1`.
fn reference(cfg: &NetworkConfig) -> Option<(&'static str, f64, f64)> {
    let frenet = NetworkConfig::frenet();
    let plus = NetworkConfig::frenet_plus();
    if *cfg == frenet {
        Some(("FrENet", 19.76e6, 2.22e9))
    } else if *cfg == plus {
        Some(("FrENet+", 48.38e6, 7.30e9))
    } else {
        None
    }
}

fn analyze(config: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?.network;
    let c = count_params_macs(&cfg)?;
    println!(
        "input      {}×{}×{} (width {}, {} scales, blocks {:?}/{}/{:?})",
        cfg.in_channels,
        cfg.input_h,
        cfg.input_w,
        cfg.width,
        cfg.scales(),
        cfg.enc_blocks,
        cfg.bottleneck_blocks,
        cfg.dec_blocks
    );
    println!("params     {:>14} ({:.2}M)", c.params, c.params as f64 / 1e6);
    println!("conv_macs  {:>14} ({:.3}G)", c.conv_macs, c.conv_macs as f64 / 1e9);
    println!("fft_flops  {:>14} ({:.3}G)", c.fft_flops, c.fft_flops as f64 / 1e9);
    if let Some((name, p, m)) = reference(&cfg) {
        println!(
            "reference  {name} {:.2}M params, {:.2}G MACs on 128×128×1 RAW (params {:+.1}%, MACs {:+.1}%)",
            p / 1e6,
            m / 1e9,
            100.0 * (c.params as f64 / p - 1.0),
            100.0 * (c.conv_macs as f64 / m - 1.0)
        );
    }
    Ok(())
}

fn verify_cmd(suite: Suite, seed: u64) -> Result<ExitCode> {
    let reports = verify::run(suite, seed)?;
    let mut ok = true;
    for r in &reports {
        print!("{r}");
        ok &= r.passed();
    }
    println!("{}", if ok { "all checks passed" } else { "some checks FAILED" });
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn dump_spectrum(checkpoint: &Path, input: &Path, block: &str, out: &Path) -> Result<()> {
    let net = load_net(checkpoint)?;
    let x = read_image(input)?;
    let mut trace = frenet::arch::Trace::default();
    net.forward_traced(&x, Some(&mut trace))?;
    let Some((_, spec)) = trace.spectra.iter().find(|(name, _)| name == block) else {
        let names: Vec<&str> = trace.spectra.iter().map(|(n, _)| n.as_str()).collect();
        return Err(Error::Config(format!("no block {block:?}; known: {}", names.join(", "))));
    };
    fs::create_dir_all(out)?;
    ften::save(spec.re(), out.join(format!("{block}.re.ften")))?;
    ften::save(spec.im(), out.join(format!("{block}.im.ften")))?;
    println!("{block} {:?}", spec.shape());
    Ok(())
}

fn dump_kernels(checkpoint: &Path, out: &Path) -> Result<()> {
    let net = load_net(checkpoint)?;
    fs::create_dir_all(out)?;
    let mut n = 0;
    for (b, _) in net.blocks() {
        let Some(local) = &b.facm.local else { continue };
        if let Some(k) = local.kernels(&net.params)? {
            ften::save(&k, out.join(format!("{}.kernels.ften", b.name)))?;
            println!("{} {:?}", b.name, k.shape());
            n += 1;
        }
    }
    if n == 0 {
        println!("no adaptive modulation kernels in this network");
    }
    Ok(())
}
