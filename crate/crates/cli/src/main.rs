use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use desmoke::bench::{
    ab_experiment, evaluate_with_samples, render_report, report_csv, Config, EvalConfig, Method, Metric, ReportRow,
};
use desmoke::classic::{dehaze_dcp, remove_veil};
use desmoke::imgio::{load_image, save_image, Image};
use desmoke::neuro::train::write_log;
use desmoke::neuro::{train, Model, SsimVariant};
use desmoke::scenes::write_scenes;
use desmoke::smokesim::{build_dataset, list_images, DatasetManifest, MANIFEST_FILE};
use desmoke::spectral::{detect_periodic_peaks, fft_magnitude, score_spectrum, Peak, SCORE_PROMINENCE};
use desmoke::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "desmoke", version, about = "Synthetic smoke, classical and learned desmoking, and evaluation")]
struct Cli {
    /// Global seed; overrides `seed` in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for per-image parallel work.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write procedural tissue scenes to use as clean images.
    Scenes(ScenesArgs),
    /// Build a paired clean/smoky dataset and its manifest.
    Synth(SynthArgs),
    /// Train the generator and discriminator.
    Train(TrainArgs),
    /// Desmoke every image in a directory.
    Run(RunArgs),
    /// Score methods on a dataset split.
    Eval(EvalArgs),
    /// Train with and without the MS-SSIM term and compare.
    Ab(AbArgs),
    /// Magnitude spectrum and grid-artifact peaks of one image.
    Spectrum(SpectrumArgs),
    /// Render the CSV and HTML report of an evaluation.
    Report(ReportArgs),
}

#[derive(Args)]
struct ScenesArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory of clean images.
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest (or the directory holding it).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    ssim_variant: Option<SsimVariant>,
}

#[derive(Args)]
struct RunArgs {
    /// dcp, veil or model:FILE
    #[arg(long)]
    method: Method,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML file whose [eval] section sets the method parameters.
    #[arg(long, value_name = "FILE")]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Repeatable; replaces the configured method list.
    #[arg(long = "method")]
    methods: Vec<Method>,
    /// Repeatable; replaces the configured metric list.
    #[arg(long = "metric")]
    metrics: Vec<Metric>,
}

#[derive(Args)]
struct AbArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_spectrum: PathBuf,
    /// JSON record of the detected peaks and the grid score.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// `eval.json` written by `desmoke eval`.
    #[arg(long)]
    eval: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Pairs shown as image strips.
    #[arg(long, default_value_t = 4)]
    samples: usize,
}

/// What `eval` leaves behind for `report`.
#[derive(Serialize, Deserialize)]
struct EvalRecord {
    manifest: PathBuf,
    config: EvalConfig,
    rows: Vec<ReportRow>,
}

#[derive(Serialize)]
struct SpectrumRecord {
    width: usize,
    height: usize,
    protect_radius: f64,
    prominence: f64,
    grid_score: Option<f64>,
    peaks: Vec<Peak>,
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if path.is_dir() {
        DatasetManifest::load(path.join(MANIFEST_FILE))
    } else {
        DatasetManifest::load(path)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Argument(e.to_string()))?;
    io(path, fs::write(path, text + "\n"))
}

fn run_method(method: &Method, model: Option<&Model<f32>>, config: &EvalConfig, img: &Image<f64>) -> Result<Image<f64>> {
    match method {
        Method::Identity => Ok(img.clone()),
        Method::Dcp => dehaze_dcp(&img.to_rgb(), &config.dcp),
        Method::Veil => remove_veil(&img.to_rgb(), config.veil_strength),
        Method::Model(_) => model
            .expect("model loaded for model method")
            .predict(&img.to_rgb().cast::<f32>())
            .map(|o| o.cast::<f64>()),
    }
}

fn execute(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    if let Some(n) = cli.threads.or(config.threads) {
        if n == 0 {
            return Err(Error::Argument("--threads must be positive".into()));
        }
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    match cli.command {
        Command::Scenes(a) => {
            write_scenes(&a.out, a.count, a.size, seed)?;
            println!("wrote {} scenes to {}", a.count, a.out.display());
        }
        Command::Synth(a) => {
            let m = build_dataset(&a.clean, &a.out, &config.synth, seed)?;
            println!("wrote {} pairs to {}", m.len(), a.out.join(MANIFEST_FILE).display());
        }
        Command::Train(a) => {
            let data = load_manifest(&a.data)?;
            let mut tc = config.train.clone();
            tc.seed = seed;
            if let Some(e) = a.epochs {
                tc.epochs = e;
            }
            let mut weights = config.loss.clone();
            if let Some(v) = a.ssim_variant {
                weights.ssim_variant = v;
            }
            let spec = config.network.spec(tc.image_size)?;
            io(&a.out, fs::create_dir_all(&a.out))?;
            let ckpt = a.out.join("model.ckpt");
            let outcome = train::<f32>(&data, &spec, &weights, &tc, |row, trainer| {
                println!("{}", row.csv_row());
                trainer.checkpoint().save(&ckpt)
            })?;
            write_log(a.out.join("train_log.csv"), &outcome.log)?;
            println!("checkpoint {}", ckpt.display());
        }
        Command::Run(a) => {
            let eval = match &a.params {
                Some(p) => Config::load(p)?.eval,
                None => config.eval.clone(),
            };
            eval.validate()?;
            let model = match &a.method {
                Method::Model(p) => Some(Model::<f32>::load(p)?),
                _ => None,
            };
            io(&a.out, fs::create_dir_all(&a.out))?;
            let files = list_images(&a.input)?;
            for f in &files {
                let img = load_image::<f64>(f)?;
                let out = run_method(&a.method, model.as_ref(), &eval, &img)?;
                let name = f.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
                save_image(&out, a.out.join(format!("{}.png", name)))?;
            }
            println!("desmoked {} images into {}", files.len(), a.out.display());
        }
        Command::Eval(a) => {
            let data = load_manifest(&a.data)?;
            let mut eval = config.eval.clone();
            if !a.methods.is_empty() {
                eval.methods = a.methods;
            }
            if !a.metrics.is_empty() {
                eval.metrics = a.metrics;
            }
            let (rows, _) = evaluate_with_samples(&data, &eval, 0)?;
            io(&a.out, fs::create_dir_all(&a.out))?;
            let csv = report_csv(&rows);
            io(&a.out, fs::write(a.out.join("report.csv"), &csv))?;
            let manifest = if a.data.is_dir() { a.data.join(MANIFEST_FILE) } else { a.data.clone() };
            write_json(
                &a.out.join("eval.json"),
                &EvalRecord {
                    manifest,
                    config: eval,
                    rows,
                },
            )?;
            print!("{}", csv);
        }
        Command::Ab(a) => {
            let data = load_manifest(&a.data)?;
            let mut tc = config.train.clone();
            tc.seed = seed;
            if let Some(e) = a.epochs {
                tc.epochs = e;
            }
            let spec = config.network.spec(tc.image_size)?;
            let r = ab_experiment(&data, &spec, &config.loss, &tc, &a.out)?;
            for arm in &r.arms {
                println!(
                    "{:<8} grid_score {:.5}  ssim {:.5}  epoch {:.2}s",
                    arm.name, arm.grid_score_mean, arm.ssim_mean, arm.mean_epoch_seconds
                );
            }
            println!(
                "ms_ssim epoch overhead {:.1}% (reference {:.0}%), held-out pairs {}",
                r.overhead_percent, r.reference_overhead_percent, r.held_out
            );
        }
        Command::Spectrum(a) => {
            let img = load_image::<f64>(&a.input)?;
            let spec = fft_magnitude(&img);
            save_image(&spec.to_image()?, &a.out_spectrum)?;
            let peaks = detect_periodic_peaks(&spec, SCORE_PROMINENCE);
            let scorable = img.width().min(img.height()) >= desmoke::spectral::MIN_SCORE_SIDE;
            let record = SpectrumRecord {
                width: spec.width,
                height: spec.height,
                protect_radius: spec.protect_radius(),
                prominence: SCORE_PROMINENCE,
                grid_score: scorable.then(|| score_spectrum(&spec, &peaks)),
                peaks,
            };
            write_json(&a.report, &record)?;
            match record.grid_score {
                Some(s) => println!("grid score {:.6}, {} peaks", s, record.peaks.len()),
                None => println!("image too small to score, {} peaks", record.peaks.len()),
            }
        }
        Command::Report(a) => {
            let text = io(&a.eval, fs::read_to_string(&a.eval))?;
            let record: EvalRecord =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", a.eval.display(), e)))?;
            let data = DatasetManifest::load(&record.manifest)?;
            let (_, triples) = evaluate_with_samples(&data, &record.config, a.samples)?;
            render_report(&record.rows, &triples, &a.out)?;
            println!("report written to {}", a.out.join("index.html").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
