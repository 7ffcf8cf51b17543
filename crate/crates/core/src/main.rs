use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bovw::dataset::{load_grayscale, load_manifest, split_identity_disjoint, write_manifest, ManifestEntry};
use bovw::features::{describe_all, detect, write_keypoints_csv, DetectorKind};
use bovw::pipeline::svg::bar_chart;
use bovw::pipeline::{
    benchmark_timing, cross_validate, evaluate, samples, train_pipeline, write_corpus, BenchFile, Bundle, GridFile,
    RunConfig, Sample, SynthParams,
};
use bovw::{Error, Result};

#[derive(Parser)]
#[command(name = "vv", version, about = "Bag-of-visual-words image classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic textured-pattern corpus with a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 60)]
        per_class: usize,
        #[arg(long, default_value_t = 20)]
        identities: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Split a manifest into identity-disjoint train.csv and test.csv.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        train_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to the manifest's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a bundle on every image of a manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `train_manifest` from the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write phase timings to this CSV file.
        #[arg(long)]
        timings: Option<PathBuf>,
    },
    /// Evaluate a bundle on a test manifest.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        /// Defaults to `test_manifest` from the bundle config.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Defaults to `<bundle>/eval`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a per-class recall bar chart.
        #[arg(long)]
        svg: bool,
    },
    /// Identity-level leave-one-out cross-validation over a hyper-parameter grid.
    Cv {
        #[arg(long = "config-grid")]
        config_grid: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the training phases of several configurations.
    Bench {
        #[arg(long)]
        configs: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Overrides `runs` in the configs file.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        svg: bool,
    },
    /// Train and evaluate several configurations on one split and tabulate accuracy.
    Compare {
        #[arg(long)]
        configs: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: bool,
    },
    /// Detect and describe keypoints in one image and write them as CSV.
    Keypoints {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = "harris")]
        detector: DetectorKind,
        /// Detector parameters are taken from this run config when given.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_samples(path: &Path) -> Result<Vec<Sample>> {
    let manifest = load_manifest(path)?;
    Ok(samples(&manifest, &manifest.entries))
}

fn write_file(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("VV_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::Config(format!("VV_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth {
            out,
            classes,
            per_class,
            identities,
            size,
            seed,
        } => {
            let params = SynthParams {
                classes,
                per_class,
                identities,
                size,
                seed,
            };
            let manifest = write_corpus(&params, &out)?;
            println!("wrote {} images and {}", classes * per_class, manifest.display());
        }
        Command::Split {
            manifest,
            train_fraction,
            seed,
            out,
        } => {
            let m = load_manifest(&manifest)?;
            let split = split_identity_disjoint(&m.entries, train_fraction, seed)?;
            let out = out.unwrap_or_else(|| m.base_dir.clone());
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            // Paths stay as written when the split lands next to the manifest.
            let same_dir = fs::canonicalize(&out).ok() == fs::canonicalize(&m.base_dir).ok();
            let rewrite = |entries: &[ManifestEntry]| -> Vec<ManifestEntry> {
                entries
                    .iter()
                    .map(|e| ManifestEntry {
                        image_path: if same_dir {
                            e.image_path.clone()
                        } else {
                            fs::canonicalize(m.resolve(e)).unwrap_or_else(|_| m.resolve(e))
                        },
                        ..e.clone()
                    })
                    .collect()
            };
            write_manifest(&rewrite(&split.train), &out.join("train.csv"))?;
            write_manifest(&rewrite(&split.test), &out.join("test.csv"))?;
            println!(
                "train: {} images, test: {} images -> {}",
                split.train.len(),
                split.test.len(),
                out.display()
            );
        }
        Command::Train {
            config,
            manifest,
            out,
            timings,
        } => {
            let cfg = RunConfig::load(&config)?;
            let manifest = manifest
                .or_else(|| cfg.train_manifest.clone())
                .ok_or_else(|| Error::Config("no training manifest given".into()))?;
            let samples = load_samples(&manifest)?;
            let outcome = train_pipeline(&cfg, &samples)?;
            outcome.bundle.save(&out)?;
            print!("{}", outcome.timings.csv());
            if let Some(path) = timings {
                write_file(&path, outcome.timings.csv())?;
            }
            println!("bundle written to {}", out.display());
        }
        Command::Eval {
            bundle,
            manifest,
            out,
            svg,
        } => {
            let b = Bundle::load(&bundle)?;
            let manifest = manifest
                .or_else(|| b.config.test_manifest.clone())
                .ok_or_else(|| Error::Config("no test manifest given".into()))?;
            let samples = load_samples(&manifest)?;
            let report = evaluate(&b, &samples)?;
            let out = out.unwrap_or_else(|| bundle.join("eval"));
            report.write(&out)?;
            if svg {
                let bars: Vec<(String, f64)> = report
                    .classes
                    .iter()
                    .zip(&report.recall)
                    .map(|(c, r)| (c.clone(), 100.0 * r.unwrap_or(0.0)))
                    .collect();
                write_file(&out.join("recall.svg"), bar_chart("Per-class recall", "%", &bars, Some(100.0)))?;
            }
            print!("{}", report.summary());
        }
        Command::Cv {
            config_grid,
            manifest,
            out,
        } => {
            let grid = GridFile::load(&config_grid)?.expand()?;
            let samples = load_samples(&manifest)?;
            let result = cross_validate(&grid, &samples)?;
            if let Some(out) = out {
                result.write(&out)?;
            }
            print!("{}", result.summary_csv());
            println!("best: {}", result.best_config().label());
        }
        Command::Bench {
            configs,
            manifest,
            runs,
            out,
            svg,
        } => {
            let file = BenchFile::load(&configs)?;
            let samples = load_samples(&manifest)?;
            let table = benchmark_timing(&file.variants, runs.unwrap_or(file.runs), &samples)?;
            let csv = table.csv();
            if let Some(out) = out {
                write_file(&out.join("bench.csv"), &csv)?;
                if svg {
                    let bars: Vec<(String, f64)> =
                        table.rows.iter().map(|r| (r.label.clone(), r.total)).collect();
                    write_file(&out.join("bench.svg"), bar_chart("Training time", "s", &bars, None))?;
                }
            }
            print!("{csv}");
        }
        Command::Compare {
            configs,
            train,
            test,
            out,
            svg,
        } => {
            let file = BenchFile::load(&configs)?;
            let train = load_samples(&train)?;
            let test = load_samples(&test)?;
            let mut csv = String::from("config,mode,detector,clustering,kernel,rate\n");
            let mut bars = Vec::new();
            for v in &file.variants {
                let outcome = train_pipeline(&v.config, &train)?;
                let report = evaluate(&outcome.bundle, &test)?;
                let c = &v.config;
                writeln!(
                    csv,
                    "{},{},{},{},{},{:.4}",
                    v.label.replace(',', ";"),
                    c.mode,
                    c.detector,
                    c.clustering,
                    c.kernel_choice().name(),
                    report.rate
                )
                .unwrap();
                bars.push((v.label.clone(), report.rate));
            }
            write_file(&out.join("comparison.csv"), &csv)?;
            if svg {
                write_file(
                    &out.join("comparison.svg"),
                    bar_chart("Average recognition rate", "%", &bars, Some(100.0)),
                )?;
            }
            print!("{csv}");
        }
        Command::Keypoints {
            image,
            detector,
            config,
            out,
        } => {
            let mut det = match config {
                Some(p) => RunConfig::load(&p)?.detector_config(),
                None => RunConfig::default().detector_config(),
            };
            det.kind = detector;
            let img = load_grayscale(&image)?;
            let kps = detect(&img, &det)?;
            let (kept, _) = describe_all(&img, &kps);
            write_keypoints_csv(&kept, &out)?;
            println!("{} keypoints ({} detected) -> {}", kept.len(), kps.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
