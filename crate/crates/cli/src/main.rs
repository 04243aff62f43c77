use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use pillar::harness::{
    read_feature_table, run_sweep, write_feature_table, write_results, FeatureFormat, FeatureTable, ResultFormat,
    SweepConfig,
};
use pillar::linalg::norm;
use pillar::optim::{BatchSampling, LearningRate, SgdSchedule};
use pillar::pipeline::{estimate_margin_params, evaluate, fit_basis, pillar_fit, GdSettings, PillarParams};
use pillar::spectral::estimate_xi;
use pillar::synth::{gmm_theoretical_params, sample_gmm_with, sample_shifted_unlabeled_with, GmmSpec, Normalization};
use pillar::{Error, LabeledDataset, PrivacyBudget, PrivacyMode, Rng, UnlabeledDataset};

#[derive(Parser)]
#[command(name = "pillar", version, about = "Semi-private halfspace learning with public-data projections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the Gaussian mixture and write a feature file.
    GenGmm(GenGmm),
    /// Projection defect of a reference separator for a range of k.
    XiReport(XiReport),
    /// Train one model and print its run report.
    Fit(Fit),
    /// Run a configured grid and write a result file.
    Sweep(Sweep),
    /// Parse a feature file and print a summary.
    IngestCheck(IngestCheck),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    PackedBinary,
}

impl From<FormatArg> for FeatureFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => FeatureFormat::Csv,
            FormatArg::PackedBinary => FeatureFormat::PackedBinary,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    MaxNorm,
    UnitSphere,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    RdpDpsgd,
    TheoreticalNoisySgd,
}

#[derive(Args)]
struct FeatureInput {
    /// Feature file (CSV or packed binary).
    path: PathBuf,
    /// Overrides detection by extension (`.pilr`/`.bin` are packed).
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

impl FeatureInput {
    fn format(&self) -> FeatureFormat {
        self.format.map_or_else(|| FeatureFormat::from_path(&self.path), Into::into)
    }
}

#[derive(Args)]
struct GenGmm {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    n: usize,
    /// Uses θ = σ² = 1/(2c sqrt(d)); ignored when --theta and --sigma2 are given.
    #[arg(long, default_value_t = 5.0)]
    scale_c: f64,
    #[arg(long, requires = "sigma2")]
    theta: Option<f64>,
    #[arg(long, requires = "theta")]
    sigma2: Option<f64>,
    #[arg(long, value_enum, default_value = "max-norm")]
    normalization: NormArg,
    /// Write an unlabelled file, contaminated with probability eta.
    #[arg(long)]
    unlabeled_eta: Option<f64>,
    #[arg(long)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args)]
struct XiReport {
    /// Unlabelled public features.
    #[arg(long)]
    public: PathBuf,
    /// Labelled features used to fit the non-private reference separator.
    #[arg(long)]
    labeled: PathBuf,
    /// Class pair for multiclass label files.
    #[arg(long, num_args = 2)]
    classes: Option<Vec<i64>>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20,50")]
    k: Vec<usize>,
}

#[derive(Args)]
struct Fit {
    #[arg(long)]
    labeled: PathBuf,
    #[arg(long)]
    public: PathBuf,
    /// Held-out labelled features for the reported test error.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, num_args = 2)]
    classes: Option<Vec<i64>>,
    #[arg(long)]
    k: usize,
    /// `inf` trains without privacy.
    #[arg(long, default_value = "1.0")]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long, value_enum, default_value = "rdp-dpsgd")]
    backend: BackendArg,
    #[arg(long, default_value_t = 0.5)]
    gamma0: f64,
    #[arg(long, default_value_t = 0.0)]
    xi0: f64,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 3000)]
    steps: u64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 1.0)]
    clip_norm: f64,
    #[arg(long)]
    seed: u64,
    /// Write the weight vector as JSON.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args)]
struct Sweep {
    /// TOML sweep description.
    #[arg(long, short)]
    config: PathBuf,
    /// Master seed; every random stream of the sweep derives from it.
    #[arg(long)]
    seed: u64,
    /// Overrides the configured output path.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    record_wall_time: bool,
}

#[derive(Args)]
struct IngestCheck {
    #[command(flatten)]
    input: FeatureInput,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenGmm(a) => gen_gmm(a),
        Command::XiReport(a) => xi_report(a),
        Command::Fit(a) => fit(a),
        Command::Sweep(a) => sweep(a),
        Command::IngestCheck(a) => ingest_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Io { .. } => 3,
                Error::Config(_) => 2,
                _ => 1,
            })
        }
    }
}

fn print_json(v: &serde_json::Value) {
    let text = serde_json::to_string_pretty(v).expect("json values serialize");
    // a closed pipe (e.g. `| head`) is not an error
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn gen_gmm(a: GenGmm) -> pillar::Result<()> {
    let spec = match (a.theta, a.sigma2) {
        (Some(t), Some(s)) => GmmSpec::new(a.d, t, s)?,
        _ => GmmSpec::scaled(a.d, a.scale_c)?,
    };
    let normalization = match a.normalization {
        NormArg::MaxNorm => Normalization::MaxNorm,
        NormArg::UnitSphere => Normalization::UnitSphere,
    };
    let mut rng = Rng::new(a.seed);
    let format = a.format.map_or_else(|| FeatureFormat::from_path(&a.out), Into::into);
    let table = match a.unlabeled_eta {
        Some(eta) => FeatureTable::from(&sample_shifted_unlabeled_with(&spec, eta, a.n, normalization, &mut rng)?.data),
        None => FeatureTable::from(&sample_gmm_with(&spec, a.n, normalization, &mut rng)?.data),
    };
    write_feature_table(&table, &a.out, format)?;
    let theory = gmm_theoretical_params(&spec, a.n, 1e-5).ok();
    print_json(&json!({
        "path": a.out,
        "n": a.n,
        "d": a.d,
        "theta": spec.theta,
        "sigma2": spec.sigma2,
        "theory": theory,
    }));
    Ok(())
}

fn load_labeled(path: &Path, classes: &Option<Vec<i64>>) -> pillar::Result<LabeledDataset> {
    let table = read_feature_table(path, FeatureFormat::from_path(path))?;
    match classes.as_deref() {
        Some([a, b]) => table.one_vs_one(*a, *b),
        _ => table.to_labeled(),
    }
}

fn load_unlabeled(path: &Path) -> pillar::Result<UnlabeledDataset> {
    read_feature_table(path, FeatureFormat::from_path(path))?.to_unlabeled()
}

fn xi_report(a: XiReport) -> pillar::Result<()> {
    let public = load_unlabeled(&a.public)?;
    let labeled = load_labeled(&a.labeled, &a.classes)?;
    let max_k = a.k.iter().copied().max().unwrap_or(1).min(public.dim());
    let full = fit_basis(&public, max_k)?;
    let margin = estimate_margin_params(&labeled, &full, 0.05, &GdSettings::default())?;
    let reference = pillar::optim::gd_baseline(&labeled, 1.0, 1000, 0.5)?.into_weights();
    let n = norm(&reference);
    let unit: Vec<f64> = reference.iter().map(|v| v / n).collect();
    let mut rows = Vec::new();
    for &k in a.k.iter().filter(|k| **k >= 1 && **k <= max_k) {
        let basis = full.truncate(k)?;
        rows.push(json!({
            "k": k,
            "xi": estimate_xi(&basis, &unit)?,
            "delta_k_hat": basis.gap_to_next(),
        }));
    }
    print_json(&json!({
        "gamma0_heuristic": margin.gamma0,
        "rows": rows,
    }));
    Ok(())
}

fn fit(a: Fit) -> pillar::Result<()> {
    let labeled = load_labeled(&a.labeled, &a.classes)?;
    let public = load_unlabeled(&a.public)?;
    let budget = if a.epsilon.is_finite() {
        let mode = match a.backend {
            BackendArg::RdpDpsgd => PrivacyMode::RdpDpsgd,
            BackendArg::TheoreticalNoisySgd => PrivacyMode::TheoreticalNoisySgd,
        };
        PrivacyBudget::new(a.epsilon, a.delta, mode)?
    } else {
        PrivacyBudget::non_private()
    };
    let mut params = PillarParams::new(a.k, a.gamma0, a.xi0, budget);
    params.dpsgd.schedule = SgdSchedule {
        steps: a.steps,
        learning_rate: LearningRate::Constant(a.learning_rate),
        batch_size: a.batch_size,
        clip_norm: a.clip_norm,
        sampling: BatchSampling::Poisson,
    };
    let (model, report) = pillar_fit(&labeled, &public, &params, &mut Rng::new(a.seed))?;
    let test_error = match &a.test {
        Some(p) => Some(evaluate(&model, &load_labeled(p, &a.classes)?)?),
        None => None,
    };
    if let Some(p) = &a.model_out {
        let text = serde_json::to_string(&model).expect("model serializes");
        std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
    }
    print_json(&json!({
        "train_error": evaluate(&model, &labeled)?,
        "test_error": test_error,
        "report": report,
    }));
    Ok(())
}

fn sweep(a: Sweep) -> pillar::Result<()> {
    let mut config = SweepConfig::from_path(&a.config)?;
    if let Some(k) = a.k {
        config.k = k;
    }
    if let Some(s) = a.seeds {
        config.seeds = s;
    }
    config.record_wall_time |= a.record_wall_time;
    config.validate()?;
    let out = a
        .out
        .or_else(|| config.output.as_ref().map(|o| o.path.clone()))
        .ok_or_else(|| Error::Config("no output path: set [output] path or pass --out".into()))?;
    let format = config
        .output
        .as_ref()
        .and_then(|o| o.format)
        .unwrap_or_else(|| ResultFormat::from_path(&out));
    let rows = run_sweep(&config, a.seed)?;
    let failed = rows.iter().filter(|r| r.error_tag.is_some()).count();
    write_results(&rows, &out, format)?;
    eprintln!("{} rows written to {} ({failed} failed cells)", rows.len(), out.display());
    Ok(())
}

fn ingest_check(a: IngestCheck) -> pillar::Result<()> {
    let table = read_feature_table(&a.input.path, a.input.format())?;
    let norms: Vec<f64> = (0..table.len()).map(|i| norm(table.row(i))).collect();
    let zero_rows = norms.iter().filter(|v| **v == 0.0).count();
    let classes = table.labels.as_ref().map(|_| {
        table
            .class_counts()
            .into_iter()
            .map(|(c, n)| (c.to_string(), json!(n)))
            .collect::<serde_json::Map<_, _>>()
    });
    print_json(&json!({
        "rows": table.len(),
        "dim": table.dim,
        "labels": table.labels.is_some(),
        "class_counts": classes,
        "min_norm": norms.iter().copied().fold(f64::INFINITY, f64::min),
        "max_norm": norms.iter().copied().fold(0.0, f64::max),
        "zero_rows": zero_rows,
    }));
    if zero_rows > 0 {
        return Err(Error::InvalidData(format!("{zero_rows} rows cannot be normalized")));
    }
    Ok(())
}
