mod dataset_dir;
mod gradcheck;
mod run_config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fgf_core::baselines::{Baseline, BaselineParams};
use fgf_core::gan::{load_checkpoint, save_checkpoint, train, Dataset, Discriminator, DiscriminatorConfig, Generator};
use fgf_core::image::{load_image, save_image, write_ppm_preview, ImageTensor};
use fgf_core::{Error, EvalReport, MetricsReport, Result};

use run_config::RunConfig;

#[derive(Parser)]
#[command(name = "fgfgan", version, about = "Pansharpening with a fast-guided-filter GAN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Train the generator alone.
    #[arg(long)]
    no_gan: bool,
    /// Drop the spatial attention blocks.
    #[arg(long)]
    no_sam: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        cfg.apply_overrides(&self.set)?;
        if self.no_gan {
            cfg.generator.use_gan = false;
        }
        if self.no_sam {
            cfg.generator.use_sam = false;
        }
        cfg.validate()?;
        log::info!("resolved configuration:\n{cfg}");
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Degrade and tile paired scenes into train/val/test patch triples.
    Prepare {
        /// Directory of multispectral scenes.
        #[arg(long)]
        ms: PathBuf,
        /// Directory of PAN scenes with matching file stems.
        #[arg(long)]
        pan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write a synthetic dataset in the prepared layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train on a prepared dataset and write checkpoints and logs.
    Train {
        /// Prepared dataset root.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fuse one PAN/LRMS pair.
    Fuse {
        #[arg(long, default_value = "fgfgan")]
        method: String,
        /// Required for `fgfgan`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        pan: PathBuf,
        #[arg(long)]
        lrms: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write an 8-bit PPM/PGM preview.
        #[arg(long)]
        preview: Option<PathBuf>,
    },
    /// Score a method on a split directory of patch triples.
    Eval {
        #[arg(long, default_value = "fgfgan")]
        method: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Split directory, e.g. `<dataset>/test`.
        #[arg(long)]
        split: PathBuf,
        /// Also write the report as `key = value` lines.
        #[arg(long)]
        kv: Option<PathBuf>,
    },
    /// Print parameter counts for the configured networks.
    Params {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Finite-difference check of every layer family.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Method {
    Model(Box<Generator<f32>>),
    Classic(Baseline),
}

impl Method {
    fn parse(name: &str, checkpoint: Option<&Path>) -> Result<Self> {
        if name == "fgfgan" {
            let path = checkpoint
                .ok_or_else(|| Error::InvalidArgument("method fgfgan needs --checkpoint".into()))?;
            let (gen, _) = load_checkpoint(path)?;
            return Ok(Method::Model(Box::new(gen)));
        }
        name.parse::<Baseline>().map(Method::Classic).map_err(|_| {
            Error::InvalidArgument(format!(
                "unknown method `{name}` (expected fgfgan, bicubic, ihs, brovey, hpf or sfim)"
            ))
        })
    }

    fn fuse(&self, pan: &ImageTensor, lrms: &ImageTensor) -> Result<ImageTensor> {
        let sus = scale_between(pan, lrms)?;
        match self {
            Method::Model(gen) => {
                let c = gen.config();
                if c.bands != lrms.channels() || c.sus != sus {
                    return Err(Error::Shape(format!(
                        "checkpoint expects {} bands at scale {}, input has {} bands at scale {sus}",
                        c.bands,
                        c.sus,
                        lrms.channels()
                    )));
                }
                gen.predict(pan, lrms)
            }
            Method::Classic(b) => b.run(pan, lrms, sus, &BaselineParams::default()),
        }
    }
}

fn scale_between(pan: &ImageTensor, lrms: &ImageTensor) -> Result<usize> {
    let ok = pan.channels() == 1
        && lrms.height() > 0
        && pan.height() % lrms.height() == 0
        && pan.height() / lrms.height() * lrms.width() == pan.width();
    if !ok {
        return Err(Error::Shape(format!(
            "pan {:?} is not a single band at an integer multiple of lrms {:?}",
            pan.dims(),
            lrms.dims()
        )));
    }
    Ok(pan.height() / lrms.height())
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Prepare { ms, pan, out, cfg } => {
            let cfg = cfg.resolve()?;
            let manifest = dataset_dir::prepare(&ms, &pan, &out, &cfg.dataset)?;
            log::info!("wrote {}", out.join("manifest.txt").display());
            print!("{}", manifest.lines().take_while(|l| !l.contains("<-")).map(|l| format!("{l}\n")).collect::<String>());
        }
        Command::Synth { out, cfg } => {
            let cfg = cfg.resolve()?;
            let data = Dataset::synthetic(&cfg.dataset)?;
            for (split, items) in dataset_dir::SPLITS.iter().zip([&data.train, &data.val, &data.test]) {
                let dir = out.join(split);
                fs::create_dir_all(&dir)?;
                for (i, t) in items.iter().enumerate() {
                    dataset_dir::write_triple(&dir, &format!("{i:05}"), t)?;
                }
                println!("{split} {}", items.len());
            }
        }
        Command::Train { data, out, cfg } => {
            let cfg = cfg.resolve()?;
            let data = dataset_dir::read_dataset(&data)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("config.txt"), cfg.to_string())?;
            let outcome = train(&data, &cfg.generator, &cfg.train, |_| {})?;
            fs::write(out.join("train_log.txt"), outcome.log_text())?;
            save_checkpoint(out.join("best.ckpt"), &outcome.best, outcome.discriminator.as_ref())?;
            save_checkpoint(out.join("last.ckpt"), &outcome.last, outcome.discriminator.as_ref())?;
            println!("best_epoch {}", outcome.best_epoch);
            if !data.test.is_empty() {
                let mut report = EvalReport::default();
                for (i, t) in data.test.iter().enumerate() {
                    let pred = outcome.best.predict(&t.pan, &t.lrms)?;
                    report.push(format!("{i:05}"), MetricsReport::compute(&pred, &t.reference, t.sus())?);
                }
                fs::write(out.join("test_metrics.txt"), report.to_key_values())?;
                println!("test {}", report.mean());
            }
        }
        Command::Fuse {
            method,
            checkpoint,
            pan,
            lrms,
            out,
            preview,
        } => {
            let method = Method::parse(&method, checkpoint.as_deref())?;
            let pan = load_image(&pan)?;
            let lrms = load_image(&lrms)?;
            let fused = method.fuse(&pan, &lrms)?;
            save_image(&fused, &out)?;
            if let Some(p) = preview {
                write_ppm_preview(&fused, p)?;
            }
        }
        Command::Eval {
            method,
            checkpoint,
            split,
            kv,
        } => {
            let method = Method::parse(&method, checkpoint.as_deref())?;
            let items = dataset_dir::read_split(&split)?;
            if items.is_empty() {
                return Err(Error::Empty(format!("no patch triples in {}", split.display())));
            }
            let mut report = EvalReport::default();
            for (name, t) in &items {
                let pred = method.fuse(&t.pan, &t.lrms)?;
                report.push(name.clone(), MetricsReport::compute(&pred, &t.reference, t.sus())?);
            }
            print!("{}", report.to_text());
            if let Some(p) = kv {
                fs::write(p, report.to_key_values())?;
            }
        }
        Command::Params { cfg } => {
            let cfg = cfg.resolve()?;
            let gen = Generator::<f32>::new(cfg.generator.clone(), 0)?;
            println!("generator {}", gen.param_count());
            if cfg.generator.use_gan {
                let dcfg = DiscriminatorConfig {
                    bands: cfg.generator.bands,
                    base_width: cfg.train.disc_width,
                };
                println!("discriminator {}", Discriminator::<f32>::new(dcfg, 0)?.param_count());
            }
        }
        Command::Gradcheck { seed } => {
            let mut failed = Vec::new();
            for (family, err) in gradcheck::run(seed)? {
                let ok = err <= gradcheck::TOLERANCE;
                println!("{family} {err:.3e} {}", if ok { "ok" } else { "FAIL" });
                if !ok {
                    failed.push(family);
                }
            }
            if !failed.is_empty() {
                eprintln!("gradient check failed for {}", failed.join(", "));
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
