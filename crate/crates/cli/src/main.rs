use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use climb_core::eval::report::timing_csv;
use climb_core::eval::{
    bench_explainers, run_full_evaluation_with_jobs, write_reports, EvalConfig, Phase, RunManifest,
};
use climb_core::explainers::explain_lime_and_climb;
use climb_core::recmodel::{
    fit_cooc, generate_synthetic, ingest_interactions, top_recommendation, CoocParams, SyntheticConfig,
    DEFAULT_RATING_THRESHOLD,
};
use climb_core::types::COMPLETENESS_TOLERANCE;
use climb_core::{derive_seed, explain, CoocModel, ExplainConfig, Instance, InteractionDataset, Method};
use log::{info, warn};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "climb", version, about = "LIME, KernelSHAP and CLIMB explanations for a co-occurrence recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic interaction CSV.
    GenData(GenDataArgs),
    /// Fit the co-occurrence model on an interaction CSV.
    Train(TrainArgs),
    /// Explain one user's top (or given) recommendation.
    Explain(ExplainArgs),
    /// Run the full evaluation protocol and write reports.
    Evaluate(EvaluateArgs),
    /// Time the explainers phase by phase.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 1000)]
    users: usize,
    #[arg(long, default_value_t = 2000)]
    items: usize,
    #[arg(long, default_value_t = 1.1)]
    zipf: f64,
    #[arg(long, default_value_t = 20.0)]
    mean_basket: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Minimum rating kept when the CSV has a rating column.
    #[arg(long, default_value_t = DEFAULT_RATING_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 10.0)]
    shrinkage: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 0.75)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RATING_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    user: String,
    /// lime, shap, climb or all
    #[arg(long, default_value = "all")]
    method: String,
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Item label to explain instead of the top recommendation.
    #[arg(long)]
    target: Option<String>,
    /// Write JSON lines here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// JSON evaluation config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Worker threads; reports do not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Comma-separated methods, or "all".
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated removal counts.
    #[arg(long)]
    ks: Option<String>,
    #[arg(long)]
    bootstraps: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    buckets: Option<usize>,
    #[arg(long)]
    bv_cap: Option<usize>,
    #[arg(long)]
    timing_users: Option<usize>,
    #[arg(long)]
    timing_reps: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 20)]
    n_users: usize,
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "all")]
    methods: String,
    /// Only users with at least this many items.
    #[arg(long, default_value_t = 2)]
    min_items: usize,
    /// Write the timing CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit status 2 for usage and configuration problems, 1 for everything else.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<climb_core::Error> for Failure {
    fn from(e: climb_core::Error) -> Self {
        match e {
            climb_core::Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn parse_methods(raw: &str) -> CliResult<Vec<Method>> {
    let raw = raw.trim();
    if raw.eq_ignore_ascii_case("all") {
        return Ok(Method::ALL.to_vec());
    }
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',').map(|m| m.trim().parse::<Method>().map_err(Failure::from)).collect()
}

fn parse_ks(raw: &str) -> CliResult<Vec<usize>> {
    raw.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse().map_err(|_| Failure::Usage(format!("bad k value {s:?}"))))
        .collect()
}

fn manifest(command: &str, seed: u64, config: Value) -> CliResult<RunManifest> {
    Ok(RunManifest::new(command, seed, config)?)
}

fn load_inputs(input: &InputArgs) -> CliResult<(CoocModel, InteractionDataset)> {
    let model = CoocModel::load(&input.model)?;
    let (data, stats) = ingest_interactions(&input.data, input.threshold)?;
    info!(
        "{}: kept {} of {} rows, {} users",
        input.data.display(),
        stats.rows_kept,
        stats.rows_read,
        data.user_count()
    );
    let aligned = data.align_to(model.catalog())?;
    if aligned.interaction_count() < data.interaction_count() {
        warn!(
            "{} interactions refer to items unknown to the model and were dropped",
            data.interaction_count() - aligned.interaction_count()
        );
    }
    Ok((model, aligned))
}

fn cmd_gen_data(a: GenDataArgs) -> CliResult<()> {
    let cfg = SyntheticConfig::new(a.users, a.items, a.zipf, a.mean_basket, a.seed);
    let data = generate_synthetic(&cfg)?;
    let m = manifest(
        "gen-data",
        a.seed,
        json!({
            "users": a.users, "items": a.items, "zipf": a.zipf, "mean_basket": a.mean_basket, "seed": a.seed,
        }),
    )?;
    data.write_csv(&a.out, &[format!("manifest: {}", serde_json::to_string(&m)?)])?;
    info!("wrote {} interactions for {} users to {}", data.interaction_count(), data.user_count(), a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let (data, stats) = ingest_interactions(&a.data, a.threshold)?;
    info!(
        "read {} rows, kept {} at threshold {}, dropped {} single-item users",
        stats.rows_read, stats.rows_kept, a.threshold, stats.users_dropped
    );
    let params = CoocParams { shrinkage: a.shrinkage, tau: a.tau, alpha: a.alpha };
    let model = fit_cooc(&data, params)?;
    let m = manifest(
        "train",
        0,
        json!({
            "data": a.data, "threshold": a.threshold, "shrinkage": a.shrinkage, "tau": a.tau, "alpha": a.alpha,
        }),
    )?;
    model.save(&a.out, Some(m.to_value()))?;
    info!(
        "{} items, {} nonzero affinities -> {}",
        model.catalog().item_count(),
        model.nonzero_count(),
        a.out.display()
    );
    Ok(())
}

fn find_user<'a>(data: &'a InteractionDataset, user: &str) -> CliResult<(usize, &'a Instance)> {
    data.find_user(user).ok_or_else(|| Failure::Runtime(format!("unknown user {user:?}")))
}

fn cmd_explain(a: ExplainArgs) -> CliResult<()> {
    let methods = parse_methods(&a.method)?;
    if methods.is_empty() {
        return Err(Failure::Usage("no method given".into()));
    }
    let (model, data) = load_inputs(&a.input)?;
    let (index, instance) = find_user(&data, &a.user)?;
    let target = match &a.target {
        Some(label) => {
            model.catalog().index_of(label).ok_or_else(|| Failure::Runtime(format!("unknown item {label:?}")))?
        }
        None => top_recommendation(&model, instance)?,
    };
    let cfg = ExplainConfig::with_samples(a.samples);
    // Same streams as the evaluation harness, so outputs line up with its reports.
    let sampler = derive_seed(a.seed, "explain-sampler", index as u64);
    let shap_seed = derive_seed(a.seed, "explain-shap", index as u64);
    let pair = if methods.contains(&Method::Lime) && methods.contains(&Method::Climb) {
        Some(explain_lime_and_climb(&model, instance, target, &cfg, sampler)?)
    } else {
        None
    };
    let m = manifest(
        "explain",
        a.seed,
        json!({
            "model": a.input.model, "data": a.input.data, "threshold": a.input.threshold, "user": a.user,
            "methods": methods, "samples": a.samples, "seed": a.seed, "target": target,
        }),
    )?;

    let mut out = String::new();
    for &method in &methods {
        let e = match (&pair, method) {
            (Some((lime, _)), Method::Lime) => lime.clone(),
            (Some((_, climb)), Method::Climb) => climb.clone(),
            (_, Method::Shap) => explain(&model, instance, target, method, &cfg, shap_seed)?,
            _ => explain(&model, instance, target, method, &cfg, sampler)?,
        };
        let residual = e.completeness_residual();
        if method.is_constrained() && residual.abs() > COMPLETENESS_TOLERANCE {
            return Err(Failure::Runtime(format!("{method} completeness residual {residual:e} exceeds tolerance")));
        }
        let mut v = serde_json::to_value(e.to_record(model.catalog()))?;
        v["completeness_residual"] = json!(residual);
        v["manifest"] = m.to_value();
        out.push_str(&serde_json::to_string(&v)?);
        out.push('\n');
    }
    match &a.out {
        Some(p) => fs::write(p, out)?,
        None => io::stdout().write_all(out.as_bytes())?,
    }
    Ok(())
}

fn read_config(path: &Path) -> CliResult<EvalConfig> {
    let raw = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&raw).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    let mut cfg = match &a.config {
        Some(p) => read_config(p)?,
        None => EvalConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.samples {
        cfg.samples = v;
    }
    if let Some(v) = &a.methods {
        cfg.methods = parse_methods(v)?;
    }
    if let Some(v) = &a.ks {
        cfg.ks = parse_ks(v)?;
    }
    if let Some(v) = a.bootstraps {
        cfg.bootstraps = v;
    }
    if let Some(v) = a.rho {
        cfg.rho = v;
    }
    if let Some(v) = a.buckets {
        cfg.buckets = v;
    }
    if let Some(v) = a.bv_cap {
        cfg.bias_variance_cap = v;
    }
    if let Some(v) = a.timing_users {
        cfg.timing_users = v;
    }
    if let Some(v) = a.timing_reps {
        cfg.timing_reps = v;
    }
    cfg.validate()?;
    if a.jobs == 0 {
        return Err(Failure::Usage("--jobs must be positive".into()));
    }
    let (model, data) = load_inputs(&a.input)?;
    let started = std::time::Instant::now();
    let eval = run_full_evaluation_with_jobs(&data, &model, &cfg, a.jobs)?;
    info!("evaluated {} users in {:.1}s", data.user_count(), started.elapsed().as_secs_f64());
    for f in &eval.failures {
        warn!("user {:?} failed at {}: {}", f.user_id, f.stage, f.message);
    }
    // The manifest deliberately leaves out --jobs: reports must not depend on it.
    let m = manifest(
        "evaluate",
        cfg.seed,
        json!({
            "model": a.input.model, "data": a.input.data, "threshold": a.input.threshold, "evaluation": cfg,
        }),
    )?;
    for p in write_reports(&eval, &m, &a.out_dir)? {
        info!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> CliResult<()> {
    let methods = parse_methods(&a.methods)?;
    let (model, data) = load_inputs(&a.input)?;
    let mut pool: Vec<(u64, &Instance)> = data
        .users()
        .iter()
        .enumerate()
        .filter(|(_, u)| u.d_prime() >= a.min_items.max(2))
        .map(|(i, u)| (derive_seed(a.seed, "bench-users", i as u64), u))
        .collect();
    pool.sort_by_key(|&(k, _)| k);
    let mut users = Vec::new();
    for (_, u) in pool.into_iter().take(a.n_users) {
        users.push((u.clone(), top_recommendation(&model, u)?));
    }
    if users.is_empty() {
        return Err(Failure::Runtime(format!("no user has at least {} items", a.min_items)));
    }
    let cfg = ExplainConfig::with_samples(a.samples);
    let report = bench_explainers(&model, &users, &methods, &cfg, a.reps, a.seed)?;
    let m = manifest(
        "bench",
        a.seed,
        json!({
            "model": a.input.model, "data": a.input.data, "n_users": users.len(), "samples": a.samples,
            "reps": a.reps, "seed": a.seed, "methods": methods, "min_items": a.min_items,
        }),
    )?;
    let bytes = timing_csv(&report, &m)?;
    match &a.out {
        Some(p) => fs::write(p, bytes)?,
        None => io::stdout().write_all(&bytes)?,
    }
    for phase in [Phase::Solving, Phase::Total] {
        if let (Some(c), Some(l)) = (report.median_ms(Method::Climb, phase), report.median_ms(Method::Lime, phase)) {
            eprintln!("CLIMB/LIME median {phase} time ratio: {:.3}", c / l);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    let result = match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
