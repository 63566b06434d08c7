use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ldpe_core::diagnostics::{regularity_report, DiagnoseOptions};
use ldpe_core::inference::{confidence_interval, ldpe_estimate, threshold_ldpe, FitReport, LdpeFit, ThresholdMode};
use ldpe_core::io::{read_matrix_csv, read_vector_csv, write_atomic};
use ldpe_core::lasso::PreparedDesign;
use ldpe_core::numerics::{center_columns, center_vector, standardize_columns};
use ldpe_core::scaled_lasso::{fit_initial, lambda_univ, InitMethod};
use ldpe_core::scores::{build_all_scores, load_score_cache, save_score_cache, ScoreKind, ScoreSet, ScoreSettings};
use ldpe_core::sim::{run_setting_with_progress, Estimator, Scale, SimSetting};
use ldpe_core::Error;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "ldpe", version, about = "Debiased inference for high-dimensional linear regression")]
struct Cli {
    /// Worker threads; 0 or `auto` uses every core.
    #[arg(long, global = true, env = "LDPE_THREADS", value_parser = parse_threads)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Debiased estimates, standard errors and intervals for every coefficient.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Bonferroni intervals at familywise level alpha.
        #[arg(long)]
        simultaneous: bool,
        /// Report values for the unstandardized design.
        #[arg(long)]
        original_scale: bool,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Intervals for sparse contrasts `a^T beta`.
    Ci {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// A contrast as `j:a,k:b` with 1-based indices; repeatable.
        #[arg(long = "contrast", required = true)]
        contrasts: Vec<String>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Thresholded estimates and the selected set.
    Select {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = Mode::Hard)]
        mode: Mode,
        /// Inflation `c_n` of the thresholds.
        #[arg(long, default_value_t = 0.0)]
        cn: f64,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Builds the score vectors of a design and writes them to a cache file.
    Scores {
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        header: bool,
        #[arg(long)]
        center: bool,
        #[command(flatten)]
        score: ScoreArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs one of the simulation settings and writes an output directory.
    Simulate(SimulateArgs),
    /// Compatibility factor, sparse eigenvalues and thresholded-Gram checks.
    Diagnose {
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        header: bool,
        #[arg(long)]
        center: bool,
        /// Comma-separated 1-based indices.
        #[arg(long)]
        support: String,
        #[arg(long, default_value_t = 3.0)]
        xi: f64,
        #[arg(long, default_value_t = 4)]
        m: usize,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        sparsity: Option<f64>,
        /// Random search instead of enumeration; gives a one-sided bound.
        #[arg(long)]
        sampling: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    design: PathBuf,
    #[arg(long)]
    response: PathBuf,
    /// Skip one header line in each input file.
    #[arg(long)]
    header: bool,
    /// Center the columns and the response before standardizing.
    #[arg(long)]
    center: bool,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long = "score", value_enum, default_value_t = ScoreMethod::Ldpe)]
    method: ScoreMethod,
    /// Removed columns for the restricted score.
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long, default_value_t = 0.25)]
    kappa0: f64,
    #[arg(long, default_value_t = 0.25)]
    kappa1: f64,
    /// Initial bias-factor bound; defaults to sqrt(2 ln p).
    #[arg(long)]
    eta_star: Option<f64>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = Init::ScaledLassoLse)]
    init: Init,
    /// `univ` for sqrt(2 ln p / n) or a positive number.
    #[arg(long, default_value = "univ")]
    lambda0: String,
    #[command(flatten)]
    score: ScoreArgs,
    /// Reuse scores from this file when it matches the design, otherwise
    /// build and store them there.
    #[arg(long)]
    score_cache: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    setting: String,
    /// n = 100, p = 500, 50 replications (the default).
    #[arg(long, conflicts_with = "full")]
    desk: bool,
    /// n = 200, p = 3000, 100 replications, every estimator.
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// Comma-separated estimator names, or `all`.
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    /// Set every coefficient to zero.
    #[arg(long)]
    null: bool,
    /// Reuse one design across replications.
    #[arg(long)]
    fixed_design: bool,
    /// Familywise level of the hard thresholds.
    #[arg(long)]
    threshold_alpha: Option<f64>,
    /// Output directory; defaults to `sim_<setting>`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Hard,
    Soft,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreMethod {
    Ldpe,
    RLdpe,
    /// Unrelaxed projection; needs p < n.
    Projection,
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    ScaledLasso,
    ScaledLassoLse,
}

fn parse_threads(s: &str) -> std::result::Result<usize, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(0);
    }
    s.parse().map_err(|_| format!("'{s}' is not a thread count"))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::DegenerateResponse => 3,
        Error::NoConvergence(_) | Error::AllDegenerate(_) | Error::TooManyFailures { .. } => 4,
        Error::Size(_) => 5,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: could not start {t} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Size(_)) {
                eprintln!("hint: rerun with --sampling for a randomized bound");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

type Result<T> = ldpe_core::Result<T>;

fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit { data, model, alpha, simultaneous, original_scale, format } => {
            let (design, y) = load_data(&data)?;
            let fit = fit_model(&design, &y, &model)?;
            let mut report = FitReport::new(&fit, design.n(), alpha, simultaneous)?;
            if original_scale {
                report.to_original_scale(design.design().original_scales());
            }
            let body = match format {
                Format::Json => report.to_json()?,
                Format::Csv => report.to_csv(),
            };
            emit(data.out.as_deref(), &body)
        }
        Command::Ci { data, model, contrasts, alpha, format } => {
            let (design, y) = load_data(&data)?;
            let parsed = contrasts.iter().map(|c| parse_contrast(c, design.p())).collect::<Result<Vec<_>>>()?;
            let fit = fit_model(&design, &y, &model)?;
            let rows = parsed
                .iter()
                .map(|a| {
                    let ci = confidence_interval(&fit, a, alpha)?;
                    Ok(ContrastRow {
                        contrast: a.iter().map(|&(j, v)| (j + 1, v)).collect(),
                        point: ci.point,
                        half_width: ci.half_width,
                        low: ci.low(),
                        high: ci.high(),
                        level: ci.level,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let body = match format {
                Format::Json => serde_json::to_string_pretty(&rows)? + "\n",
                Format::Csv => {
                    let mut s = String::from("contrast,point,half_width,low,high,level\n");
                    for r in &rows {
                        let c: Vec<String> = r.contrast.iter().map(|(j, v)| format!("{j}:{v}")).collect();
                        s += &format!("{},{},{},{},{},{}\n", c.join(";"), r.point, r.half_width, r.low, r.high, r.level);
                    }
                    s
                }
            };
            emit(data.out.as_deref(), &body)
        }
        Command::Select { data, model, alpha, mode, cn, format } => {
            let (design, y) = load_data(&data)?;
            let fit = fit_model(&design, &y, &model)?;
            let mode = match mode {
                Mode::Hard => ThresholdMode::Hard,
                Mode::Soft => ThresholdMode::Soft,
            };
            let sel = threshold_ldpe(&fit, alpha, mode, cn)?;
            let body = match format {
                Format::Json => {
                    let out = SelectionOut {
                        mode,
                        alpha,
                        selected: sel.selected.iter().map(|j| j + 1).collect(),
                        thresholds: sel.thresholds.iter().map(|t| t.is_finite().then_some(*t)).collect(),
                        estimates: sel.estimates.clone(),
                    };
                    serde_json::to_string_pretty(&out)? + "\n"
                }
                Format::Csv => {
                    let mut s = String::from("j,beta_hat,threshold,estimate,selected\n");
                    for j in 0..fit.p() {
                        let t = if sel.thresholds[j].is_finite() { sel.thresholds[j].to_string() } else { String::new() };
                        let chosen = u8::from(sel.selected.binary_search(&j).is_ok());
                        s += &format!("{},{},{t},{},{chosen}\n", j + 1, fit.beta_hat[j], sel.estimates[j]);
                    }
                    s
                }
            };
            emit(data.out.as_deref(), &body)
        }
        Command::Scores { design, header, center, score, out } => {
            let design = load_design(&design, header, center)?;
            let (kind, settings) = score_config(&score);
            let set = build_all_scores(&design, kind, &settings);
            report_failures(&set);
            save_score_cache(&set, &settings, &out)
        }
        Command::Simulate(args) => simulate(args),
        Command::Diagnose { design, header, center, support, xi, m, lambda1, sparsity, sampling, seed, out } => {
            let design = load_design(&design, header, center)?;
            let opts = DiagnoseOptions { support: parse_support(&support, design.p())?, xi, m, lambda1, sparsity, sampling, seed };
            let report = regularity_report(&design, &opts)?;
            emit(out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))
        }
    }
}

#[derive(Serialize)]
struct ContrastRow {
    /// 1-based `(j, a_j)`.
    contrast: Vec<(usize, f64)>,
    point: f64,
    half_width: f64,
    low: f64,
    high: f64,
    level: f64,
}

#[derive(Serialize)]
struct SelectionOut {
    mode: ThresholdMode,
    alpha: f64,
    /// 1-based.
    selected: Vec<usize>,
    /// `null` where the coefficient has no score.
    thresholds: Vec<Option<f64>>,
    estimates: Vec<f64>,
}

fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, body.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(body.as_bytes()).map_err(|e| Error::Io(e.to_string()))
        }
    }
}

fn load_design(path: &Path, header: bool, center: bool) -> Result<PreparedDesign> {
    let mut x = read_matrix_csv(path, header)?;
    if center {
        x = center_columns(&x);
    }
    Ok(PreparedDesign::new(standardize_columns(&x)?))
}

fn load_data(data: &DataArgs) -> Result<(PreparedDesign, Vec<f64>)> {
    let design = load_design(&data.design, data.header, data.center)?;
    let mut y = read_vector_csv(&data.response, data.header)?;
    if y.len() != design.n() {
        return Err(Error::Dimension(format!(
            "{} has {} values but the design has {} rows",
            data.response.display(),
            y.len(),
            design.n()
        )));
    }
    if data.center {
        y = center_vector(&y);
    }
    Ok((design, y))
}

fn score_config(args: &ScoreArgs) -> (ScoreKind, ScoreSettings) {
    let kind = match args.method {
        ScoreMethod::Ldpe => ScoreKind::Ldpe,
        ScoreMethod::RLdpe => ScoreKind::Restricted { m: args.m },
        ScoreMethod::Projection => ScoreKind::Projection,
    };
    let settings = ScoreSettings { eta_star: args.eta_star, kappa0: args.kappa0, kappa1: args.kappa1, ..ScoreSettings::default() };
    (kind, settings)
}

fn report_failures(set: &ScoreSet) {
    let failed = set.failures();
    if !failed.is_empty() {
        let idx: Vec<String> = failed.iter().take(10).map(|(j, _)| (j + 1).to_string()).collect();
        let more = if failed.len() > 10 { ", ..." } else { "" };
        eprintln!("warning: {} columns have no score and get no interval: {}{more}", failed.len(), idx.join(", "));
    }
}

fn scores_for(design: &PreparedDesign, args: &ModelArgs) -> Result<ScoreSet> {
    let (kind, settings) = score_config(&args.score);
    if let Some(path) = &args.score_cache {
        if path.exists() {
            match load_score_cache(design, kind, &settings, path) {
                Ok(set) => return Ok(set),
                Err(e) => eprintln!("warning: rebuilding scores, cache not usable: {e}"),
            }
        }
    }
    let set = build_all_scores(design, kind, &settings);
    if let Some(path) = &args.score_cache {
        save_score_cache(&set, &settings, path)?;
    }
    Ok(set)
}

fn fit_model(design: &PreparedDesign, y: &[f64], args: &ModelArgs) -> Result<LdpeFit> {
    let lambda0 = if args.lambda0.eq_ignore_ascii_case("univ") {
        lambda_univ(design.n(), design.p())?
    } else {
        args.lambda0
            .parse::<f64>()
            .map_err(|_| Error::Parse(format!("--lambda0 expects 'univ' or a number, got '{}'", args.lambda0)))?
    };
    let method = match args.init {
        Init::ScaledLasso => InitMethod::ScaledLasso,
        Init::ScaledLassoLse => InitMethod::ScaledLassoLse,
    };
    let init = fit_initial(design, y, lambda0, method)?;
    let scores = scores_for(design, args)?;
    if scores.failures().len() == design.p() {
        return Err(Error::AllDegenerate(design.p()));
    }
    report_failures(&scores);
    ldpe_estimate(design, y, &scores, &init)
}

fn parse_index(s: &str, p: usize) -> Result<usize> {
    let j: usize = s.trim().parse().map_err(|_| Error::Parse(format!("'{}' is not an index", s.trim())))?;
    if j == 0 || j > p {
        return Err(Error::Parse(format!("index {j} is outside 1..={p}")));
    }
    Ok(j - 1)
}

fn parse_support(s: &str, p: usize) -> Result<Vec<usize>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(|t| parse_index(t, p)).collect()
}

fn parse_contrast(s: &str, p: usize) -> Result<Vec<(usize, f64)>> {
    s.split(',')
        .map(|term| {
            let (j, a) = term
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("contrast term '{term}' should look like j:a")))?;
            let a: f64 = a.trim().parse().map_err(|_| Error::Parse(format!("'{}' is not a number", a.trim())))?;
            Ok((parse_index(j, p)?, a))
        })
        .collect()
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let scale = if args.full { Scale::Full } else { Scale::Desk };
    let mut setting = SimSetting::preset(&args.setting, scale, args.seed)?;
    if let Some(r) = args.reps {
        setting.reps = r;
    }
    if let Some(n) = args.n {
        setting.n = n;
    }
    if let Some(p) = args.p {
        setting.p = p;
    }
    if let Some(list) = &args.estimators {
        setting.estimators = if list.trim().eq_ignore_ascii_case("all") {
            Estimator::ALL.to_vec()
        } else {
            let mut v = list.split(',').map(str::parse).collect::<Result<Vec<Estimator>>>()?;
            v.sort();
            v.dedup();
            v
        };
    }
    if let Some(l) = args.level {
        setting.level = l;
    }
    if let Some(m) = args.m {
        setting.m = m;
    }
    if let Some(a) = args.threshold_alpha {
        setting.threshold_alpha = a;
    }
    setting.zero_signal = args.null;
    setting.fixed_design = args.fixed_design;
    let out_dir = args.out.unwrap_or_else(|| PathBuf::from(format!("sim_{}", setting.label)));
    let total = setting.reps;
    let done = std::sync::atomic::AtomicUsize::new(0);
    let quiet = args.quiet;
    let output = run_setting_with_progress(&setting, |r| {
        let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        if quiet {
            return;
        }
        match r {
            Ok(rec) => eprintln!("replication {} done in {:.1}s ({k}/{total})", rec.rep_id, rec.timing),
            Err(f) => eprintln!("replication {} failed: {} ({k}/{total})", f.rep_id, f.message),
        }
    })?;
    output.write_dir(&out_dir)?;
    if !quiet {
        for c in &output.tables.coverage {
            eprintln!("mean coverage {}: {:.4}", c.estimator.label(), c.all);
        }
        eprintln!("wrote {}", out_dir.display());
    }
    Ok(())
}
