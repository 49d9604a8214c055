use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lakd::erf::{compute_erf, extract_scanline, ErfMap, ErfOptions, InputSource};
use lakd::erfmeter::{erfm, fit_csv, fit_gnd, pearson_r, FitReport};
use lakd::lakdnet::checkpoint::read_config;
use lakd::lakdnet::{Checkpoint, LaKDNet, LAYER_NAMES};
use lakd::pipeline::image_io::{read_image, write_image};
use lakd::pipeline::{
    collect_runs, evaluate, infer_image, report_csv, synth_dataset, train, BlurSpec, RunConfig, RunMetrics,
    SharpSource,
};
use lakd::{Error, Result};

#[derive(Parser)]
#[command(name = "lakd", version, about = "Large-kernel deblurring networks and ERF measurement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network on synthetic blur pairs.
    Train(TrainArgs),
    /// Deblur one image.
    Infer(InferArgs),
    /// Measure the effective receptive field of a layer.
    Erf(ErfArgs),
    /// Fit a generalized normal curve to an ERF scanline.
    Fitgnd(FitArgs),
    /// Print the ERFM score of a fit.
    Erfm(ErfmArgs),
    /// Pearson correlation of the erfm and psnr columns of a CSV file.
    Correlate(CorrelateArgs),
    /// Collect per-run fits and metrics into one CSV table.
    Report(ReportArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON with `network`, `train` and `data` sections.
    #[arg(long)]
    config: PathBuf,
    /// Directory of sharp PPM/PGM images.
    #[arg(long, required_unless_present = "procedural", conflicts_with = "procedural")]
    data: Option<PathBuf>,
    /// Use generated textures of this size instead of a directory.
    #[arg(long, value_name = "SIZE")]
    procedural: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Also write held-out PSNR here (a `metrics.json` for `report`).
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    eval_pairs: usize,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Largest tile processed at once.
    #[arg(long, default_value_t = 256)]
    tile: usize,
}

#[derive(Args)]
struct ErfArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value = "bt_neck")]
    layer: String,
    #[arg(long, default_value_t = 4)]
    patches: usize,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Crop probe inputs from these images instead of uniform noise.
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    erf: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the profile and fitted curve as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ErfmArgs {
    #[arg(long)]
    fit: PathBuf,
}

#[derive(Args)]
struct CorrelateArgs {
    #[arg(long)]
    pairs: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    runs: PathBuf,
    /// Write the table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::UnknownLayer(_) => 2,
        Error::FitFailed { .. } | Error::Numerical(_) | Error::NonScalarRoot(_) => 4,
        _ => 3,
    }
}

fn read_fit(path: &Path) -> Result<FitReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn load_net(ckpt: &Path) -> Result<LaKDNet> {
    let config = read_config(ckpt)?;
    let params = Checkpoint::read(ckpt)?.to_params(&config)?;
    LaKDNet::from_params(config, params)
}

/// Creates the directories above `path` so long runs cannot fail at the end.
fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => Ok(fs::create_dir_all(dir)?),
        _ => Ok(()),
    }
}

fn run_train(args: TrainArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config)?;
    let cfg = RunConfig::from_json(&text)?;
    create_parent(&args.out)?;
    if let Some(path) = &args.metrics {
        create_parent(path)?;
    }
    let source = match (&args.data, args.procedural) {
        (Some(dir), _) => SharpSource::from_dir(dir)?,
        (None, Some(size)) => SharpSource::Procedural { height: size, width: size, seed: cfg.train.rng_seed },
        (None, None) => unreachable!("clap requires one source"),
    };
    let pairs = synth_dataset(&source, &cfg.data.blur, cfg.data.pairs)?;
    let quiet = args.quiet;
    let total = cfg.train.total_iters;
    let outcome = train(cfg.network, cfg.train.clone(), &pairs, Some(&args.out), |t, loss| {
        if !quiet && (t % 50 == 0 || t == total) {
            eprintln!("iter {t:>6}/{total}  loss {loss:.6}");
        }
    })?;
    println!("wrote {}", args.out.display());
    if let Some(path) = args.metrics {
        // held out: fresh procedural images, or the same directory images
        // under a different blur stream
        let held_source = match source {
            SharpSource::Procedural { height, width, seed } => {
                SharpSource::Procedural { height, width, seed: seed.wrapping_add(1) }
            }
            images => images,
        };
        let blur = BlurSpec { rng_seed: cfg.data.blur.rng_seed.wrapping_add(1), ..cfg.data.blur };
        let held = synth_dataset(&held_source, &blur, args.eval_pairs)?;
        let (before, after) = evaluate(&outcome.net, &held, 256)?;
        let metrics = RunMetrics { psnr: Some(after), psnr_input: Some(before) };
        fs::write(&path, serde_json::to_string_pretty(&metrics)?)?;
        println!("held-out PSNR {after:.3} dB (input {before:.3} dB)");
    }
    Ok(())
}

fn run_infer(args: InferArgs) -> Result<()> {
    let net = load_net(&args.ckpt)?;
    let image = read_image(&args.input)?;
    let restored = infer_image(&net, &image, args.tile)?;
    if !restored.is_finite() {
        return Err(Error::Numerical("network produced non-finite values".into()));
    }
    create_parent(&args.out)?;
    write_image(&args.out, &restored)
}

fn run_erf(args: ErfArgs) -> Result<()> {
    let net = load_net(&args.ckpt)?;
    if !LAYER_NAMES.contains(&args.layer.as_str()) {
        return Err(Error::UnknownLayer(format!("{} (known: {})", args.layer, LAYER_NAMES.join(", "))));
    }
    let source = match &args.images {
        Some(dir) => match SharpSource::from_dir(dir)? {
            SharpSource::Images(images) => InputSource::Images(images),
            SharpSource::Procedural { .. } => unreachable!(),
        },
        None => InputSource::Uniform,
    };
    let options = ErfOptions { layer: args.layer, patch_size: args.size, n_patches: args.patches, seed: args.seed };
    let map = compute_erf(&net, &options, &source)?;
    map.write_dir(&args.out)?;
    println!("wrote {} (max {})", args.out.display(), map.max_value);
    Ok(())
}

fn run_fitgnd(args: FitArgs) -> Result<()> {
    let map = ErfMap::read_dir(&args.erf)?;
    let profile = extract_scanline(&map);
    let params = fit_gnd(&profile).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::Numerical(format!("cannot fit profile: {m}")),
        e => e,
    })?;
    let report = FitReport::new(&params, f64::from(map.max_value), map.layer.clone())?;
    create_parent(&args.out)?;
    fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;
    if let Some(csv) = args.csv {
        create_parent(&csv)?;
        fs::write(csv, fit_csv(&params, &profile.xs, &profile.ys))?;
    }
    println!(
        "sigma {:.6} beta {:.6} mu {:.6} c1 {:.6e} c2 {:.6e} R2 {:.6} ERFM {:.6}",
        report.sigma, report.beta, report.mu, report.c1, report.c2, report.r_squared, report.erfm
    );
    Ok(())
}

fn run_erfm(args: ErfmArgs) -> Result<()> {
    let report = read_fit(&args.fit)?;
    let score = erfm(&report.params(), report.max_value)?;
    println!("{}", score.value);
    Ok(())
}

/// Reads the `erfm` and `psnr` columns, in any order, from a headed CSV.
fn read_pairs(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').map(str::trim).collect();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Format { format: "csv", offset: 0, reason: format!("missing column {name}") })
    };
    let (ie, ip) = (column("erfm")?, column("psnr")?);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for line in lines {
        let offset = line.as_ptr() as usize - text.as_ptr() as usize;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let cell = |i: usize| -> Result<f64> {
            cells.get(i).and_then(|c| c.parse().ok()).ok_or_else(|| Error::Format {
                format: "csv",
                offset,
                reason: format!("no number in column {}", i + 1),
            })
        };
        xs.push(cell(ie)?);
        ys.push(cell(ip)?);
    }
    Ok((xs, ys))
}

fn run_correlate(args: CorrelateArgs) -> Result<()> {
    let (xs, ys) = read_pairs(&args.pairs)?;
    // too few rows or a constant column is a problem with the file
    let result = pearson_r(&xs, &ys).map_err(|e| match e {
        Error::InvalidArgument(reason) => Error::Format { format: "csv", offset: 0, reason },
        e => e,
    })?;
    println!("{}", result.r);
    Ok(())
}

fn run_report(args: ReportArgs) -> Result<()> {
    let csv = report_csv(&collect_runs(&args.runs)?);
    match args.out {
        Some(path) => {
            create_parent(&path)?;
            fs::write(path, csv)?
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Infer(a) => run_infer(a),
        Command::Erf(a) => run_erf(a),
        Command::Fitgnd(a) => run_fitgnd(a),
        Command::Erfm(a) => run_erfm(a),
        Command::Correlate(a) => run_correlate(a),
        Command::Report(a) => run_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
