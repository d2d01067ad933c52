//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 on a runtime failure (an invariant or
//! backend failed, every seed errored), 2 on a usage or configuration
//! error (bad flags, unparsable input, a window no batch can fit).

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::backend::{parse_backend_spec, BackendPool};
use crate::costmodel::{
    cross_cluster_window, predict, validate_predictions, CostScenario, Pricing,
};
use crate::embedding::HashedTfEmbedder;
use crate::error::{Error, Result};
use crate::harness::dataset::{duplicate_with_rename, load_dataset, save_dataset, synthetic_dataset, SyntheticSpec};
use crate::harness::experiment::{
    read_validation_csv, render_results_csv, run_experiment, write_results_csv,
    write_usage_csv, write_validation_csv, RunConfig,
};
use crate::harness::invariants::{all_passed, run_invariants};
use crate::model::TokenBudget;
use crate::qoe::{
    assign, run_calibration, write_calibration_csv, QoeWeights, Strategy,
};
use crate::router::{optimize_subscriptions, Assignment, PipelineConfig, Preset};

#[derive(Parser)]
#[command(name = "semmatch", version, about = "Semantic publish/subscribe matching over LLM backends")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Match a dataset's events against its subscriptions.
    Match(MatchArgs),
    /// Evaluate the analytic cost model, or validate it against a usage log.
    Cost(CostArgs),
    /// Calibrate candidate backends and assign one per cluster.
    Calibrate(CalibrateArgs),
    /// Run the invariant suite (I1 through I5).
    Invariants(InvariantArgs),
    /// Generate a synthetic dataset.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct MatchArgs {
    /// JSONL dataset of subscriptions and events.
    #[arg(long)]
    dataset: PathBuf,
    /// Pipeline preset A0 through A6.
    #[arg(long, default_value = "A3")]
    preset: String,
    /// Backend spec, repeatable; the first one serves every cluster.
    /// Grammar: sim:oracle[,key=v...] | sim:collapse[,key=v...] | http:URL
    #[arg(long = "backend", default_value = "sim:oracle")]
    backends: Vec<String>,
    /// Comma-separated seed list.
    #[arg(long, default_value = "42", value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Subscription cluster count override.
    #[arg(long)]
    k: Option<usize>,
    /// Prefilter cosine threshold override.
    #[arg(long)]
    tau: Option<f64>,
    /// Per-event match cap override.
    #[arg(long)]
    kappa: Option<usize>,
    /// Context window override in tokens; other budget terms keep defaults.
    #[arg(long)]
    window: Option<u64>,
    /// Concurrent backend calls for latency accounting.
    #[arg(long)]
    parallel: Option<usize>,
    /// Truncate oversized subscription blocks instead of failing.
    #[arg(long)]
    truncate: bool,
    /// Result CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-cluster usage CSV path.
    #[arg(long = "usage-out")]
    usage_out: Option<PathBuf>,
    /// Predicted-versus-measured invocation cells CSV path.
    #[arg(long = "validation-out")]
    validation_out: Option<PathBuf>,
}

#[derive(Args)]
struct CostArgs {
    /// Validate a prior run's cell log instead of predicting a scenario.
    #[arg(long)]
    validate: Option<PathBuf>,
    #[arg(long, default_value_t = 128_000)]
    window: u64,
    #[arg(long = "t-inst", default_value_t = 200)]
    t_inst: u64,
    #[arg(long = "t-s", default_value_t = 80)]
    t_s: u64,
    #[arg(long = "t-e", default_value_t = 50)]
    t_e: u64,
    #[arg(long = "t-resp", default_value_t = 500)]
    t_resp: u64,
    #[arg(long, default_value_t = 1)]
    clusters: u64,
    #[arg(long = "subs-per-cluster")]
    subs_per_cluster: Option<u64>,
    /// Total events, spread evenly across clusters.
    #[arg(long)]
    events: Option<u64>,
    /// Assumed compression ratio in (0, 1].
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value_t = 4)]
    parallel: u64,
    /// Mean seconds per backend call.
    #[arg(long = "t-llm", default_value_t = 1.5)]
    t_llm: f64,
    /// Also report the window needed to merge k clusters into one prompt.
    #[arg(long = "w-cross-k")]
    w_cross_k: Option<u64>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Candidate backend spec, repeatable.
    #[arg(long = "backend", required = true)]
    backends: Vec<String>,
    /// Calibration fraction in (0, 1]; 1.0 reuses every event and is
    /// flagged non-disjoint in the output.
    #[arg(long, default_value_t = 0.1)]
    fraction: f64,
    /// qoe | round_robin | homogeneous
    #[arg(long, default_value = "qoe")]
    strategy: String,
    /// accuracy_first | balanced | cost_first
    #[arg(long, default_value = "balanced")]
    weights: String,
    /// Subscription cluster count.
    #[arg(long, default_value_t = 19)]
    k: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Assignment CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Calibration record CSV path.
    #[arg(long = "calibration-out")]
    calibration_out: Option<PathBuf>,
}

#[derive(Args)]
struct InvariantArgs {
    /// Run one invariant (1-5) in its negative-control variant; the
    /// suite must then fail and the process exits 1.
    #[arg(long)]
    control: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 19)]
    subs: usize,
    #[arg(long, default_value_t = 1000)]
    events: usize,
    /// Distinct description count; omitted means one per subscription.
    #[arg(long)]
    distinct: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Grow the subscription set to this size by duplication-with-rename.
    #[arg(long = "duplicate-to")]
    duplicate_to: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(_)
        | Error::Parse { .. }
        | Error::Io(_)
        | Error::BatchInfeasible
        | Error::MissingEmbedding(_) => 2,
        Error::SubscriptionsExceedWindow { .. }
        | Error::BackendProtocol(_)
        | Error::BackendUnavailable(_)
        | Error::NoViableBackend
        | Error::MissingDescription(_) => 1,
    }
}

/// Parses argv and runs; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Match(args) => cmd_match(args),
        Command::Cost(args) => cmd_cost(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Invariants(args) => cmd_invariants(args),
        Command::Generate(args) => cmd_generate(args),
    }
}

fn build_pool(specs: &[String]) -> Result<(BackendPool, Vec<String>)> {
    let mut pool = BackendPool::new();
    let mut names = Vec::new();
    for spec in specs {
        let backend = parse_backend_spec(spec)?;
        let name = backend.name().to_string();
        if pool.insert(name.clone(), backend).is_some() {
            return Err(Error::InvalidInput(format!("duplicate backend name {name:?}")));
        }
        names.push(name);
    }
    Ok((pool, names))
}

fn budget_with_window(window: Option<u64>) -> Result<Option<TokenBudget>> {
    match window {
        None => Ok(None),
        Some(w) => {
            let d = TokenBudget::default();
            Ok(Some(TokenBudget::new(w, d.t_inst, d.t_s, d.t_e, d.t_resp)?))
        }
    }
}

fn emit(out: Option<&PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, content)?;
            Ok(())
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_match(args: MatchArgs) -> Result<i32> {
    let preset = Preset::from_str(&args.preset)?;
    let (subs, events) = load_dataset(&args.dataset)?;
    let (pool, names) = build_pool(&args.backends)?;
    let assignment = Assignment::Uniform(names[0].clone());
    let provider = HashedTfEmbedder::default();

    let mut run = RunConfig::new(preset, args.seeds.clone());
    run.k = args.k;
    run.tau = args.tau;
    run.kappa = args.kappa;
    run.budget = budget_with_window(args.window)?;
    run.parallel = args.parallel;
    run.truncate_to_fit = args.truncate;

    let out = run_experiment(&subs, &events, &run, &provider, &assignment, &pool)?;
    for (seed, message) in &out.failures {
        eprintln!("seed {seed} failed: {message}");
    }
    match &args.out {
        Some(path) => write_results_csv(path, &out.rows)?,
        None => print!("{}", render_results_csv(&out.rows)?),
    }
    if let Some(path) = &args.usage_out {
        write_usage_csv(path, &out.usage)?;
    }
    if let Some(path) = &args.validation_out {
        write_validation_csv(path, &out.validation)?;
    }
    Ok(if out.failures.len() == args.seeds.len() { 1 } else { 0 })
}

fn metric_rows(rows: &[(String, String)]) -> String {
    let mut out = String::from("metric,value\n");
    for (name, value) in rows {
        out.push_str(name);
        out.push(',');
        out.push_str(value);
        out.push('\n');
    }
    out
}

fn cmd_cost(args: CostArgs) -> Result<i32> {
    if let Some(path) = &args.validate {
        let cells = read_validation_csv(path)?;
        let summary = validate_predictions(&cells)?;
        let mut rows = vec![
            ("cells".to_string(), summary.cells.to_string()),
            ("median_ratio".to_string(), format!("{:.6}", summary.median_ratio)),
            ("in_band_fraction".to_string(), format!("{:.6}", summary.in_band_fraction)),
            ("under_predictions".to_string(), summary.under_predictions.to_string()),
        ];
        for (stratum, median) in &summary.strata {
            rows.push((format!("median_ratio[{stratum}]"), format!("{median:.6}")));
        }
        emit(args.out.as_ref(), &metric_rows(&rows))?;
        return Ok(0);
    }

    let subs_per_cluster = args.subs_per_cluster.ok_or_else(|| {
        Error::InvalidInput("--subs-per-cluster is required without --validate".into())
    })?;
    let events = args
        .events
        .ok_or_else(|| Error::InvalidInput("--events is required without --validate".into()))?;
    let budget = TokenBudget::new(args.window, args.t_inst, args.t_s, args.t_e, args.t_resp)?;
    let scenario = CostScenario {
        budget,
        clusters: args.clusters,
        subs_per_cluster,
        events,
        rho: args.rho,
        parallel: args.parallel,
        t_llm: args.t_llm,
        pricing: Pricing::default(),
    };
    let p = predict(&scenario)?;

    let mut rows = vec![
        ("effective_subs".to_string(), p.effective_subs.to_string()),
        ("b_max".to_string(), p.b_max.to_string()),
    ];
    if let Some(delta_b) = p.delta_b {
        rows.push(("delta_b".to_string(), delta_b.to_string()));
    }
    rows.extend([
        ("invocations_per_cluster".to_string(), p.invocations_per_cluster.to_string()),
        ("invocations".to_string(), p.invocations.to_string()),
        ("rounds".to_string(), p.rounds.to_string()),
        ("latency_s".to_string(), format!("{:.6}", p.latency_seconds)),
        ("prompt_tokens".to_string(), p.prompt_tokens.to_string()),
        ("response_tokens".to_string(), p.response_tokens.to_string()),
        ("cost_per_event".to_string(), format!("{:.9}", p.cost_per_event)),
    ]);
    if let Some(k) = args.w_cross_k {
        let rho = args.rho.ok_or_else(|| {
            Error::InvalidInput("--w-cross-k needs --rho for the merged prompt size".into())
        })?;
        let w = cross_cluster_window(&budget, subs_per_cluster, rho, k)?;
        rows.push(("w_cross".to_string(), format!("{w:.6}")));
    }
    emit(args.out.as_ref(), &metric_rows(&rows))?;
    Ok(0)
}

fn parse_weights(name: &str) -> Result<QoeWeights> {
    match name {
        "accuracy_first" => Ok(QoeWeights::accuracy_first()),
        "balanced" => Ok(QoeWeights::balanced()),
        "cost_first" => Ok(QoeWeights::cost_first()),
        other => Err(Error::InvalidInput(format!(
            "unknown weights {other:?}; expected accuracy_first, balanced, or cost_first"
        ))),
    }
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<i32> {
    let (subs, events) = load_dataset(&args.dataset)?;
    let (pool, names) = build_pool(&args.backends)?;
    let provider = HashedTfEmbedder::default();

    // Cluster with compression off so calibration sees raw subscriptions.
    let mut cfg = PipelineConfig::preset(Preset::A1, args.seed);
    cfg.k = args.k;
    let bootstrap = Assignment::Uniform(names[0].clone());
    let plan = optimize_subscriptions(&subs, &provider, &cfg, &bootstrap, &pool)?;
    let cluster_ids: Vec<usize> = plan.clusters.iter().map(|c| c.id).collect();

    let (assignment, disjoint) = match args.strategy.as_str() {
        // Baseline strategies skip calibration entirely: zero probe calls.
        "round_robin" => (assign(&Strategy::RoundRobin(names.clone()), &cluster_ids, &[])?, true),
        "homogeneous" => {
            (assign(&Strategy::Homogeneous(names[0].clone()), &cluster_ids, &[])?, true)
        }
        "qoe" => {
            let weights = parse_weights(&args.weights)?;
            let outcome = run_calibration(
                &plan.clusters,
                &events,
                &provider,
                &cfg,
                &pool,
                &names,
                args.fraction,
            )?;
            if let Some(path) = &args.calibration_out {
                let file = std::fs::File::create(path)?;
                write_calibration_csv(&outcome.records, file)?;
            }
            let disjoint = outcome.splits.values().all(|s| s.disjoint);
            (assign(&Strategy::Qoe(weights), &cluster_ids, &outcome.records)?, disjoint)
        }
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown strategy {other:?}; expected qoe, round_robin, or homogeneous"
            )))
        }
    };

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cluster", "backend", "strategy", "fraction", "disjoint"])
        .map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    for (cluster, backend) in &assignment {
        w.write_record([
            cluster.to_string(),
            backend.clone(),
            args.strategy.clone(),
            args.fraction.to_string(),
            disjoint.to_string(),
        ])
        .map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    }
    let bytes =
        w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    let out =
        String::from_utf8(bytes).map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    emit(args.out.as_ref(), &out)?;
    Ok(0)
}

fn cmd_invariants(args: InvariantArgs) -> Result<i32> {
    let outcomes = run_invariants(args.control)?;
    for o in &outcomes {
        println!("{} {} {}", o.name, if o.passed { "PASS" } else { "FAIL" }, o.details);
    }
    Ok(if all_passed(&outcomes) { 0 } else { 1 })
}

fn cmd_generate(args: GenerateArgs) -> Result<i32> {
    let (mut subs, events) = synthetic_dataset(&SyntheticSpec {
        n_subscriptions: args.subs,
        n_events: args.events,
        distinct_descriptions: args.distinct,
        seed: args.seed,
    })?;
    if let Some(target) = args.duplicate_to {
        subs = duplicate_with_rename(&subs, target)?;
    }
    save_dataset(&args.out, &subs, &events)?;
    eprintln!("wrote {} subscriptions and {} events", subs.len(), events.len());
    Ok(0)
}
