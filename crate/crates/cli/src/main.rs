//! `tpc`: data generation, identification, verification and Monte Carlo sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tpc::hankel::{min_examples, param_count};
use tpc::io::{
    data_digest, read_trajectory, write_trajectory, PredictorFile, Provenance, TrajectoryMeta,
};
use tpc::predictors::{fit_predictor, select_memory};
use tpc::simbench::montecarlo::write_output;
use tpc::simbench::runner::EXCITATION_VARIANCE;
use tpc::simbench::{
    collect_training_data, generate_reference, monte_carlo, ExperimentConfig, PlantModel,
};
use tpc::statespace::fit_statespace;
use tpc::verify::{self, VerifyOptions};
use tpc::{build_hankel, DataLabel, PredictorKind, TpcError};

#[derive(Parser)]
#[command(
    name = "tpc",
    version,
    about = "Trajectory predictive control experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the plant and write a trajectory CSV with a metadata sidecar.
    Generate(GenerateArgs),
    /// Fit a predictor to a trajectory file.
    Identify(IdentifyArgs),
    /// Run the numerical verification suites.
    Verify(VerifyArgs),
    /// Monte Carlo comparison against the LQG benchmark.
    Sweep(SweepArgs),
    /// Parameter counts and minimum data lengths per predictor kind.
    Counts(CountsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Open,
    Closed,
}

impl From<Mode> for DataLabel {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Open => DataLabel::OpenLoop,
            Mode::Closed => DataLabel::ClosedLoop,
        }
    }
}

fn parse_kind(s: &str) -> Result<PredictorKind, String> {
    s.parse::<PredictorKind>().map_err(|e| e.to_string())
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    /// Number of samples.
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Experiment config whose plant is used; defaults to the double integrator.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = EXCITATION_VARIANCE)]
    excitation: f64,
    /// Output CSV path.
    #[arg(long, default_value = "trajectory.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct IdentifyArgs {
    /// Trajectory CSV written by `generate` or in the same layout.
    data: PathBuf,
    #[arg(long, value_parser = parse_kind)]
    kind: PredictorKind,
    #[arg(long, default_value_t = 10)]
    h: usize,
    /// Memory; with --select-m the largest candidate considered.
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Choose the memory in 1..=m by AIC and record the table.
    #[arg(long)]
    select_m: bool,
    /// Training mode for files without a sidecar.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, default_value = "predictor.json")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Overrides every check's tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Overrides every check's number of random instances.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = VerifyOptions::default().seed)]
    seed: u64,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment config (JSON). Without it, defaults plus the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "sweep")]
    out: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Training lengths (repeatable).
    #[arg(long)]
    d: Vec<usize>,
    /// Predictor kinds (repeatable).
    #[arg(long, value_parser = parse_kind)]
    kind: Vec<PredictorKind>,
    /// Training modes (repeatable).
    #[arg(long, value_enum)]
    mode: Vec<Mode>,
    #[arg(long)]
    h: Option<usize>,
    /// Fixes the memory instead of selecting it from the config candidates.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    /// Also run the relaxed controller with this weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Write per-step trajectories of the first N runs to runs/<id>.csv.
    #[arg(long)]
    trajectories: Option<usize>,
}

#[derive(Args)]
struct CountsArgs {
    #[arg(long, default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = 15)]
    h: usize,
    /// Largest output dimension; inputs are half the outputs, at least one.
    #[arg(long, default_value_t = 20)]
    max_ny: usize,
    /// CSV path; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit 1 for numerical failures, 2 for configuration, data or I/O problems.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<TpcError>() {
        Some(
            TpcError::RankDeficient { .. }
            | TpcError::Singular(_)
            | TpcError::NotPositiveDefinite(_)
            | TpcError::NonConvergence { .. },
        ) => 1,
        _ => 2,
    }
}

fn load_plant(config: Option<&Path>) -> anyhow::Result<PlantModel> {
    Ok(match config {
        Some(p) => ExperimentConfig::load(p)?.plant,
        None => PlantModel::double_integrator(),
    })
}

fn generate(args: GenerateArgs) -> anyhow::Result<()> {
    if args.d == 0 {
        return Err(TpcError::Config("--d must be positive".into()).into());
    }
    let plant = load_plant(args.config.as_deref())?;
    let label = DataLabel::from(args.mode);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let reference = generate_reference(&mut rng, args.d, plant.n_y());
    let data = collect_training_data(&plant, label, args.d, &mut rng, &reference, args.excitation)?;
    let mut settings = serde_json::Map::new();
    settings.insert("excitation_variance".into(), args.excitation.into());
    settings.insert("plant".into(), serde_json::to_value(&plant)?);
    let meta = TrajectoryMeta {
        label,
        n_u: data.n_u(),
        n_y: data.n_y(),
        len: data.len(),
        seed: Some(args.seed),
        settings,
    };
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_trajectory(&args.out, &data, &meta)?;
    log::info!("wrote {} samples to {}", data.len(), args.out.display());
    Ok(())
}

fn identify(args: IdentifyArgs) -> anyhow::Result<()> {
    let (data, _) = read_trajectory(&args.data, args.mode.map(DataLabel::from))
        .with_context(|| format!("reading {}", args.data.display()))?;
    let selection = if args.select_m {
        let candidates: Vec<usize> = (1..=args.m).collect();
        Some(select_memory(&data, args.kind, args.h, &candidates)?)
    } else {
        None
    };
    let m = selection.as_ref().map_or(args.m, |s| s.m);
    let needed = min_examples(args.kind, m, args.h, data.n_u(), data.n_y());
    if data.len() < needed {
        return Err(TpcError::InsufficientData {
            context: format!("{} predictor with m = {m}, h = {}", args.kind, args.h),
            needed,
            got: data.len(),
        }
        .into());
    }
    let hs = build_hankel(&data, m, args.h)?;
    let mut file = if args.kind == PredictorKind::StateSpace {
        let (pred, model) = fit_statespace(&hs)?;
        let mut f = PredictorFile::new(&pred);
        f.innovations = Some((&model).into());
        f
    } else {
        PredictorFile::new(&fit_predictor(args.kind, &hs)?)
    };
    file.provenance = Some(Provenance {
        data_sha256: data_digest(&data),
        data_len: data.len(),
        label: data.label(),
        memory_selection: selection,
    });
    file.write(&args.out)?;
    println!(
        "{} predictor, m = {m}, h = {}, {} parameters -> {}",
        args.kind,
        args.h,
        file.param_count,
        args.out.display()
    );
    Ok(())
}

fn run_verify(args: VerifyArgs) -> anyhow::Result<ExitCode> {
    let opts = VerifyOptions {
        tol: args.tol,
        trials: args.trials,
        seed: args.seed,
    };
    let report = verify::run_all(&opts)?;
    for c in &report.checks {
        eprintln!(
            "{} {}: {:.3e} (tol {:.1e}, {} instances) {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.metric,
            c.tolerance,
            c.instances,
            c.detail
        );
    }
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &args.out {
        fs::write(path, &json)?;
    }
    println!("{json}");
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn sweep(args: SweepArgs) -> anyhow::Result<()> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            if args.d.is_empty() {
                return Err(TpcError::Config("either --config or --d is required".into()).into());
            }
            ExperimentConfig::new(PredictorKind::ALL.to_vec(), args.d.clone(), 200)
        }
    };
    if !args.d.is_empty() {
        cfg.d_values = args.d.clone();
    }
    if !args.kind.is_empty() {
        cfg.predictors = args.kind.clone();
    }
    if !args.mode.is_empty() {
        cfg.training_modes = args.mode.iter().map(|&m| m.into()).collect();
    }
    if let Some(h) = args.h {
        cfg.h = h;
    }
    if let Some(m) = args.m {
        cfg.m_candidates = vec![m];
    }
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if args.lambda.is_some() {
        cfg.lambda = args.lambda;
    }
    if let Some(n) = args.trajectories {
        cfg.record_trajectories = n;
    }
    cfg.validate()?;

    let start = Instant::now();
    let out = monte_carlo(&cfg, args.jobs)?;
    write_output(&args.out, &out)?;
    fs::write(
        args.out.join("config.json"),
        serde_json::to_string_pretty(&cfg)?,
    )?;
    log::info!("sweep finished in {:.1} s", start.elapsed().as_secs_f64());

    println!("predictor,training_mode,d,cost_ratio_vs_lqg,diverged,fit_failures");
    for r in &out.summary {
        println!(
            "{},{},{},{:.4},{},{}",
            r.predictor,
            r.training_mode,
            r.d,
            r.cost_ratio_vs_lqg,
            r.diverged_count,
            r.fit_failures
        );
    }
    Ok(())
}

fn counts(args: CountsArgs) -> anyhow::Result<()> {
    if args.m == 0 || args.h == 0 || args.max_ny == 0 {
        return Err(TpcError::Config("--m, --h and --max-ny must be positive".into()).into());
    }
    let mut text = String::from("predictor,m,h,n_u,n_y,param_count,min_examples\n");
    for n_y in 1..=args.max_ny {
        let n_u = (n_y / 2).max(1);
        for kind in PredictorKind::ALL {
            text.push_str(&format!(
                "{kind},{},{},{n_u},{n_y},{},{}\n",
                args.m,
                args.h,
                param_count(kind, args.m, args.h, n_u, n_y),
                min_examples(kind, args.m, args.h, n_u, n_y)
            ));
        }
    }
    match &args.out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TPC_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a).map(|_| ExitCode::SUCCESS),
        Command::Identify(a) => identify(a).map(|_| ExitCode::SUCCESS),
        Command::Verify(a) => run_verify(a),
        Command::Sweep(a) => sweep(a).map(|_| ExitCode::SUCCESS),
        Command::Counts(a) => counts(a).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
