use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bfanet::core::gradsuite;
use bfanet::core::{gen_synthetic, Ablation, BinaryMask};
use bfanet::dataset;
use bfanet::pipeline;
use bfanet::pnm::{self, Image};
use bfanet::{Checkpoint, Error, Manifest, Result, RunConfig, Split};
use clap::{Parser, Subcommand};

/// Boundary-guided salient object detection: data, training, inference and evaluation.
#[derive(Parser, Debug)]
#[command(name = "bfanet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset and its manifest.
    GenData {
        /// Number of samples.
        #[arg(long)]
        n: usize,
        /// Square image side, a multiple of 32.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Generator seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Split tag written into the manifest (train or test).
        #[arg(long)]
        split: Option<String>,
    },
    /// Derive Canny boundary labels for every mask in a directory.
    GenBoundary {
        /// Directory of P5 masks.
        #[arg(long)]
        masks_dir: PathBuf,
        /// Output directory; labels keep the mask file names.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes loss.csv and checkpoint files.
    Train {
        /// Run configuration (key = value lines); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Overrides the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Extra KEY=VALUE overrides, applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory for loss.csv and checkpoints.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write saliency maps for a directory of P5/P6 images.
    Infer {
        /// Trained checkpoint file.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of P5/P6 images.
        #[arg(long)]
        images: PathBuf,
        /// Output directory for the graymaps.
        #[arg(long)]
        out: PathBuf,
        /// Also write per-scale boundary probability maps.
        #[arg(long)]
        dump_boundary: bool,
        /// Refuse unless the checkpoint's model config equals this file's.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Refuse unless the checkpoint was trained as this variant.
        #[arg(long)]
        ablation: Option<String>,
    },
    /// Score predicted graymaps against ground-truth masks.
    Eval {
        /// Predicted saliency graymaps.
        #[arg(long)]
        pred_dir: PathBuf,
        /// Ground-truth masks; files are paired by name.
        #[arg(long)]
        gt_dir: PathBuf,
        /// Output directory for eval.csv and pr_curve.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient suite; exit 0 iff every case passes.
    Gradcheck {
        /// Run a single case.
        #[arg(long)]
        op: Option<String>,
        /// Print the case names and exit.
        #[arg(long)]
        list: bool,
    },
    /// Train all four variants from one seed and compare them.
    Ablate {
        /// Shared run configuration; its ablation key is ignored.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Held-out samples to score; the training manifest is scored when omitted.
        #[arg(long)]
        test_manifest: Option<PathBuf>,
        /// Overrides the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Extra KEY=VALUE overrides, applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory: one subdirectory per variant plus ablation.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run_config(path: Option<&Path>, epochs: Option<usize>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData {
            n,
            size,
            seed,
            out,
            split,
        } => {
            let split = split.map(|s| s.parse::<Split>()).transpose()?;
            let samples = gen_synthetic(n, size, seed)?;
            let m = dataset::write_samples(&out, &samples, split)?;
            println!("wrote {} samples to {}", m.len(), out.display());
        }
        Command::GenBoundary { masks_dir, out } => {
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let files = dataset::graymaps(&masks_dir)?;
            for f in &files {
                let mask: BinaryMask = pnm::read(f)?.to_mask().map_err(|e| e.in_file(f))?;
                let edges = bfanet::core::canny_boundary(&mask, &Default::default())?;
                pnm::write(
                    &out.join(f.file_name().expect("listed file")),
                    &Image::from_mask(&edges),
                )?;
            }
            println!("wrote {} boundary maps to {}", files.len(), out.display());
        }
        Command::Train {
            config,
            manifest,
            epochs,
            overrides,
            out,
        } => {
            let cfg = run_config(config.as_deref(), epochs, &overrides)?;
            let m = Manifest::load(&manifest)?;
            let samples = dataset::load_samples(&m)?;
            let outcome = pipeline::train(&cfg, &samples, &out, |l| {
                eprintln!("{}", pipeline::loss_row(l));
            })?;
            println!("checkpoint {}", outcome.checkpoint.display());
        }
        Command::Infer {
            checkpoint,
            images,
            out,
            dump_boundary,
            config,
            ablation,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            if let Some(p) = config {
                ckpt.check_matches(&RunConfig::load(&p)?.model)?;
            }
            if let Some(a) = ablation {
                let want: Ablation = a.parse().map_err(|_| Error::Usage(format!("unknown ablation {a:?}")))?;
                if want != ckpt.config.model.ablation {
                    return Err(Error::contract(
                        "trainer",
                        format!("checkpoint is {} but {want} was requested", ckpt.config.model.ablation),
                    ));
                }
            }
            let files = dataset::anymaps(&images)?;
            let inputs = files
                .iter()
                .map(|f| Ok((dataset::stem(f), pnm::read(f)?)))
                .collect::<Result<Vec<_>>>()?;
            let written = pipeline::infer(&ckpt, &inputs, &out, dump_boundary)?;
            println!("wrote {} saliency maps to {}", written.len(), out.display());
        }
        Command::Eval { pred_dir, gt_dir, out } => {
            let report = pipeline::evaluate_dirs(&pred_dir, &gt_dir)?;
            pipeline::write_report(&report, &out)?;
            println!(
                "images {} mean_f {} mae {} max_f {}",
                report.images.len(),
                report.mean_f,
                report.mean_mae,
                report.max_f
            );
        }
        Command::Gradcheck { op, list } => {
            if list {
                for c in gradsuite::CASES {
                    println!("{c}");
                }
                return Ok(());
            }
            let cases: Vec<&str> = match &op {
                Some(name) if gradsuite::CASES.contains(&name.as_str()) => vec![name.as_str()],
                Some(name) => return Err(Error::Usage(format!("unknown gradcheck case {name:?}; see --list"))),
                None => gradsuite::CASES.to_vec(),
            };
            let mut failed = 0;
            for c in cases {
                let r = gradsuite::run_case(c)?;
                println!(
                    "{} {c} max_rel_error={:e} checked={} excluded={}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.max_rel_error,
                    r.checked,
                    r.excluded
                );
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                return Err(Error::contract(
                    "tensor-core",
                    format!("{failed} gradient check(s) failed"),
                ));
            }
        }
        Command::Ablate {
            config,
            manifest,
            test_manifest,
            epochs,
            overrides,
            out,
        } => {
            let cfg = run_config(config.as_deref(), epochs, &overrides)?;
            let train = dataset::load_samples(&Manifest::load(&manifest)?)?;
            let test = match test_manifest {
                Some(p) => dataset::load_samples(&Manifest::load(&p)?)?,
                None => train.clone(),
            };
            let rows = pipeline::ablate(&cfg, &train, &test, &out, |a, l| {
                eprintln!("{a} {}", pipeline::loss_row(l));
            })?;
            print!("{}", pipeline::ablation_csv(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
