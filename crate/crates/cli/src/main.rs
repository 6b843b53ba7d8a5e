//! Command line front end. Every subcommand wraps one library entry point;
//! failures print a single machine-readable JSON line on stderr and exit
//! nonzero.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use cinepred::error::Error;
use cinepred::flow::{register_sequence, FlowGrid, FlowParams};
use cinepred::forecast::runner::{build_forecaster, run_forecaster, PairSplit};
use cinepred::forecast::{HyperParams, Method};
use cinepred::io::{load_sequence, read_dvf, read_pgm, save_sequence, write_dvf, write_pgm};
use cinepred::metrics::{cross_correlation, dvf_endpoint_errors, image_nrmse, ssim};
use cinepred::pca::{build_data_matrix, fit_motion_model, project, save_model};
use cinepred::pipeline::{self, report, ExperimentConfig};
use cinepred::warp::{warp_image, WarpFallback, WarpParams};
use cinepred::{generate_synthetic_sequence, SyntheticSpec};

#[derive(Parser)]
#[command(
    name = "cinepred",
    version,
    about = "Future-frame prediction for cine-MR style image sequences"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic image sequence with known deformation modes.
    Synth(SynthArgs),
    /// Register every frame of a sequence onto the first one.
    Flow(FlowArgs),
    /// Grid-search flow hyper-parameters on the training frames.
    FlowGrid(FlowGridArgs),
    /// Fit the PCA motion model and project the whole sequence.
    FitPca(FitPcaArgs),
    /// Forecast a weight series with one method and configuration.
    Forecast(ForecastArgs),
    /// Warp an image with a displacement field.
    Warp(WarpArgs),
    /// Score a predicted image (and optionally field) against the truth.
    Evaluate(EvaluateArgs),
    /// Run the full experiment and write all report files.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON spec of the generator; defaults to the built-in two-mode spec.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the spec's RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Clone)]
struct FlowFlags {
    #[arg(long, default_value_t = 0.5)]
    sigma_init: f64,
    #[arg(long, default_value_t = 0.5)]
    sigma_sub: f64,
    #[arg(long, default_value_t = 2.0)]
    sigma_lk: f64,
    #[arg(long, default_value_t = 2)]
    n_layers: usize,
    #[arg(long, default_value_t = 2)]
    n_iter: usize,
}

impl FlowFlags {
    fn params(&self) -> FlowParams {
        FlowParams {
            sigma_init: self.sigma_init,
            sigma_sub: self.sigma_sub,
            sigma_lk: self.sigma_lk,
            n_layers: self.n_layers,
            n_iter: self.n_iter,
        }
    }
}

#[derive(Args)]
struct FlowArgs {
    /// manifest.json of the input sequence.
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    flow: FlowFlags,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FlowGridArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// JSON grid of flow hyper-parameter ranges; defaults to the desk grid.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Frames whose pooled registration error drives the choice.
    #[arg(long, default_value_t = 90)]
    m_train: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FitPcaArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 90)]
    m_train: usize,
    /// Number of principal components to keep.
    #[arg(long, default_value_t = 3)]
    n_cp: usize,
    #[command(flatten)]
    flow: FlowFlags,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ForecastArgs {
    /// CSV of the weight series (optional leading `frame` column).
    #[arg(long)]
    weights: PathBuf,
    /// rtrl | uoro | snap1 | dni | lms | linreg | previous_weight | frozen_rnn
    #[arg(long)]
    method: String,
    /// Prediction horizon in steps.
    #[arg(long, default_value_t = 1)]
    horizon: usize,
    #[arg(long, default_value_t = 0.02)]
    eta: f64,
    /// Input window length (signal history length).
    #[arg(long, default_value_t = 6)]
    signal_length: usize,
    /// Hidden units for the RNN methods.
    #[arg(long, default_value_t = 10)]
    hidden: usize,
    #[arg(long, default_value_t = 90)]
    m_train: usize,
    #[arg(long, default_value_t = 180)]
    m_cv: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output CSV of truth and predictions per target frame.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WarpArgs {
    /// Reference image (PGM).
    #[arg(long)]
    image: PathBuf,
    /// Displacement field (DVF1).
    #[arg(long)]
    field: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    sigma_warp: f64,
    #[arg(long, default_value_t = 2.0)]
    cutoff_radius: f64,
    /// reference_intensity | nearest_source
    #[arg(long, default_value = "reference_intensity")]
    fallback: String,
    /// Output image (PGM).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predicted image (PGM).
    #[arg(long)]
    predicted: PathBuf,
    /// Ground-truth image (PGM).
    #[arg(long)]
    truth: PathBuf,
    /// Predicted displacement field (DVF1), for endpoint errors.
    #[arg(long, requires = "truth_field")]
    predicted_field: Option<PathBuf>,
    /// Reference displacement field (DVF1).
    #[arg(long, requires = "predicted_field")]
    truth_field: Option<PathBuf>,
    /// Pixel spacing in mm as `row,col`.
    #[arg(long, default_value = "1,1")]
    spacing_mm: String,
}

#[derive(Args)]
struct ExperimentArgs {
    /// desk (small synthetic default) or paper (full protocol).
    #[arg(long, default_value = "desk")]
    profile: String,
    /// JSON experiment configuration; overrides the profile preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let kind = e.kind();
            // Help and version requests are successes, not failures.
            if matches!(
                kind,
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) {
                let _ = e.print();
                std::process::exit(0);
            }
            let _ = e.print();
            eprintln!(
                "{}",
                serde_json::json!({"error": {"kind": "usage", "message": e.to_string().lines().next().unwrap_or("bad arguments")}})
            );
            std::process::exit(2);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("{}", error_line(&e));
        std::process::exit(1);
    }
}

fn error_line(e: &anyhow::Error) -> String {
    let kind = match e.downcast_ref::<Error>() {
        Some(Error::Io { .. }) => "io",
        Some(Error::Format { .. }) => "format",
        Some(Error::InvalidInput(_)) => "invalid_input",
        Some(Error::ShapeMismatch { .. }) => "shape_mismatch",
        Some(Error::RankExceeded { .. }) => "rank_exceeded",
        Some(Error::Divergence { .. }) => "divergence",
        Some(Error::DegenerateMetric(_)) => "degenerate_metric",
        Some(Error::Config(_)) => "config",
        None => "error",
    };
    serde_json::json!({"error": {"kind": kind, "message": format!("{e:#}")}}).to_string()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Synth(a) => synth(a),
        Cmd::Flow(a) => flow(a),
        Cmd::FlowGrid(a) => flow_grid(a),
        Cmd::FitPca(a) => fit_pca(a),
        Cmd::Forecast(a) => forecast(a),
        Cmd::Warp(a) => warp(a),
        Cmd::Evaluate(a) => evaluate(a),
        Cmd::Experiment(a) => experiment(a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let mut spec: SyntheticSpec = match &a.config {
        Some(path) => read_json(path)?,
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let truth = generate_synthetic_sequence(&spec)?;
    let manifest = save_sequence(&truth.sequence, &a.out_dir)?;
    report::write_weights_csv(
        &a.out_dir.join("weight_signals.csv"),
        truth.weight_signals.view(),
    )?;
    println!(
        "{}",
        serde_json::json!({
            "manifest": manifest,
            "frames": truth.sequence.len(),
            "modes": truth.weight_signals.ncols(),
        })
    );
    Ok(())
}

fn flow(a: FlowArgs) -> anyhow::Result<()> {
    let seq = load_sequence(&a.manifest)?;
    let dvfs = register_sequence(&seq, &a.flow.params())?;
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;
    for (k, field) in dvfs.fields.iter().enumerate() {
        write_dvf(field, &a.out_dir.join(format!("field_{k:03}.dvf")))?;
    }
    println!(
        "{}",
        serde_json::json!({"out_dir": a.out_dir, "fields": dvfs.fields.len()})
    );
    Ok(())
}

fn flow_grid(a: FlowGridArgs) -> anyhow::Result<()> {
    let seq = load_sequence(&a.manifest)?;
    let grid_spec: FlowGrid = match &a.config {
        Some(path) => read_json(path)?,
        None => ExperimentConfig::desk().flow_grid,
    };
    let grid = grid_spec.expand();
    let errors = cinepred::flow::flow_grid_errors(&seq, &grid, a.m_train)?;
    let wrapped: Vec<Option<f64>> = errors.iter().copied().map(Some).collect();
    let best = pipeline::choose_min_error(&wrapped)
        .ok_or_else(|| anyhow!("flow grid produced no finite error"))?;
    report::write_flow_grid_csv(&a.out_dir.join("flow_grid.csv"), &grid, &errors, best)?;
    println!(
        "{}",
        serde_json::json!({
            "csv": a.out_dir.join("flow_grid.csv"),
            "best": grid[best],
            "e_gt": errors[best],
        })
    );
    Ok(())
}

fn fit_pca(a: FitPcaArgs) -> anyhow::Result<()> {
    let seq = load_sequence(&a.manifest)?;
    let dvfs = register_sequence(&seq, &a.flow.params())?;
    let data = build_data_matrix(&dvfs.fields, a.m_train)?;
    let model = fit_motion_model(&data, a.n_cp)?;
    let mut weights = Array2::zeros((seq.len(), model.n_cp));
    for (k, field) in dvfs.fields.iter().enumerate() {
        weights.row_mut(k).assign(&project(&model, field)?);
    }
    save_model(&model, &a.out_dir)?;
    report::write_weights_csv(&a.out_dir.join("weights.csv"), weights.view())?;
    println!(
        "{}",
        serde_json::json!({
            "model": a.out_dir.join("model.json"),
            "weights": a.out_dir.join("weights.csv"),
            "eigenvalues": model.eigenvalues,
        })
    );
    Ok(())
}

/// Weight series CSV: optional header, optional leading `frame` column,
/// the rest are weight coordinates in time order.
fn read_weights_csv(path: &Path) -> anyhow::Result<Array2<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut skip_first_col = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if i == 0 && cells.iter().any(|c| c.parse::<f64>().is_err()) {
            skip_first_col = cells[0].eq_ignore_ascii_case("frame");
            continue;
        }
        let start = usize::from(skip_first_col);
        let row: Vec<f64> = cells[start..]
            .iter()
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("{}:{}: bad number", path.display(), i + 1))?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(anyhow!(
                    "{}:{}: expected {} columns, got {}",
                    path.display(),
                    i + 1,
                    first.len(),
                    row.len()
                ));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let p = rows.first().map(Vec::len).unwrap_or(0);
    if n == 0 || p == 0 {
        return Err(anyhow!("{}: no weight data", path.display()));
    }
    Ok(Array2::from_shape_fn((n, p), |(i, j)| rows[i][j]))
}

fn forecast(a: ForecastArgs) -> anyhow::Result<()> {
    let weights = read_weights_csv(&a.weights)?;
    let method: Method = a.method.parse()?;
    let hp = HyperParams {
        eta: a.eta,
        l: a.signal_length,
        q: a.hidden,
    };
    let split = PairSplit::new(weights.view(), hp.l, a.horizon, a.m_train, a.m_cv)?;
    let mut forecaster =
        build_forecaster(method, hp, weights.ncols(), split.train_pairs(), a.seed)?;
    let outcome = run_forecaster(forecaster.as_mut(), &split.pairs)?;
    if let Some(n) = outcome.diverged_at {
        return Err(Error::Divergence {
            context: format!("{} diverged at pair {n}", method.label()),
        }
        .into());
    }

    let p = weights.ncols();
    let mut out = String::from("frame");
    for j in 1..=p {
        out.push_str(&format!(",w_{j}"));
    }
    for j in 1..=p {
        out.push_str(&format!(",w_pred_{j}"));
    }
    out.push('\n');
    for (n, pair) in split.pairs.iter().enumerate() {
        let k = PairSplit::target_frame(n, hp.l, a.horizon);
        out.push_str(&k.to_string());
        for v in pair.target.iter() {
            out.push_str(&format!(",{}", report::fmt_f64(*v)));
        }
        for v in outcome.predictions.row(n) {
            out.push_str(&format!(",{}", report::fmt_f64(*v)));
        }
        out.push('\n');
    }
    if let Some(parent) = a.out.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "{}",
        serde_json::json!({"out": a.out, "pairs": split.pairs.len()})
    );
    Ok(())
}

fn parse_fallback(s: &str) -> anyhow::Result<WarpFallback> {
    match s.replace('-', "_").as_str() {
        "reference_intensity" => Ok(WarpFallback::ReferenceIntensity),
        "nearest_source" => Ok(WarpFallback::NearestSource),
        other => Err(anyhow!("unknown fallback '{other}'")),
    }
}

fn warp(a: WarpArgs) -> anyhow::Result<()> {
    let image = read_pgm(&a.image)?;
    let field = read_dvf(&a.field)?;
    let params = WarpParams {
        sigma_warp: a.sigma_warp,
        cutoff_radius: a.cutoff_radius,
        fallback: parse_fallback(&a.fallback)?,
    };
    let out = warp_image(&image, &field, &params)?;
    write_pgm(&out, &a.out)?;
    println!("{}", serde_json::json!({"out": a.out}));
    Ok(())
}

fn parse_spacing(s: &str) -> anyhow::Result<[f64; 2]> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [a] => {
            let v: f64 = a.trim().parse()?;
            Ok([v, v])
        }
        [a, b] => Ok([a.trim().parse()?, b.trim().parse()?]),
        _ => Err(anyhow!("spacing must be `s` or `row,col`")),
    }
}

fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let predicted = read_pgm(&a.predicted)?;
    let truth = read_pgm(&a.truth)?;
    let mut payload = serde_json::json!({
        "image_nrmse": image_nrmse(&predicted, &truth)?,
        "cross_correlation": cross_correlation(&predicted, &truth)?,
        "ssim": ssim(&predicted, &truth)?,
    });
    if let (Some(pf), Some(tf)) = (&a.predicted_field, &a.truth_field) {
        let pred_field = read_dvf(pf)?;
        let truth_field = read_dvf(tf)?;
        let spacing = parse_spacing(&a.spacing_mm)?;
        let (mean_mm, max_mm) = dvf_endpoint_errors(&pred_field, &truth_field, spacing)?;
        payload["mean_dvf_error_mm"] = serde_json::json!(mean_mm);
        payload["max_dvf_error_mm"] = serde_json::json!(max_mm);
    }
    println!("{payload}");
    Ok(())
}

fn experiment(a: ExperimentArgs) -> anyhow::Result<()> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::from_profile(&a.profile)?,
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let summary = pipeline::run_experiment(&cfg, &a.out_dir)?;
    println!(
        "{}",
        serde_json::json!({
            "out_dir": a.out_dir,
            "summary": a.out_dir.join("summary.json"),
            "methods": summary.methods.len(),
            "baselines": summary.baselines.len(),
        })
    );
    Ok(())
}
