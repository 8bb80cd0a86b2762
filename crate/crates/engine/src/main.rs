use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use vidpriv::config::Config;
use vidpriv::explain;
use vidpriv::pipeline::{execute, prepare, Baseline, PipelineError, QueryOptions};
use vidpriv::scene::{gen_scene, ParkedConfig, SceneConfig};
use vidpriv::state::{JournaledLedger, StateDir};
use vidpriv::sweep::{run_sweep, SweepParam};
use vidpriv::trace_io::{load_trace, save_trace};
use vidpriv_core::chunking::RegionScheme;
use vidpriv_core::owner::{estimate_policy, mask_ladder, CameraMeta, EstimateOptions};
use vidpriv_core::{FrameStream, Policy};

/// Exit status when the budget ledger denies a query.
const EXIT_DENIED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "vidpriv",
    version,
    about = "Privacy-preserving aggregate queries over camera traces"
)]
struct Cli {
    /// TOML settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic trace.
    GenScene(GenScene),
    /// Register a camera from its trace: estimated policy, masks, regions.
    RegisterCamera(RegisterCamera),
    /// Print the (rho, K) bound observed in a trace.
    EstimatePolicy(EstimateArgs),
    /// Print the greedy mask ladder of a trace.
    GenMasks(GenMasks),
    /// Run a query and print its noisy releases.
    SubmitQuery(SubmitQuery),
    /// Inspect the budget ledger.
    Budget {
        #[command(subcommand)]
        cmd: BudgetCmd,
    },
    /// Noise error as a function of chunk size, range or window.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenScene {
    /// Scene settings (TOML); flags override it.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    camera: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Seconds.
    #[arg(long)]
    duration: Option<u64>,
    #[arg(long)]
    fps: Option<u32>,
    /// Arrivals per second.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    dwell_min: Option<f64>,
    #[arg(long)]
    dwell_max: Option<f64>,
    /// Number of long-parked entities.
    #[arg(long)]
    parked: Option<usize>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Multiplier on the longest observed segment.
    #[arg(long, default_value_t = 1.0)]
    safety: f64,
    /// Fraction of entities the bound must cover.
    #[arg(long, default_value_t = 1.0)]
    coverage: f64,
    /// Ignore entities visible for the entire trace.
    #[arg(long)]
    exclude_parked: bool,
}

impl EstimateArgs {
    fn options(&self) -> Result<EstimateOptions> {
        if self.safety.is_nan() || self.safety < 1.0 {
            bail!("--safety must be at least 1");
        }
        Ok(EstimateOptions {
            safety: self.safety,
            coverage: self.coverage,
            exclude_parked: self.exclude_parked,
        })
    }
}

#[derive(Args)]
struct RegisterCamera {
    #[command(flatten)]
    estimate: EstimateArgs,
    /// Per-frame budget.
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Override the estimated rho (seconds).
    #[arg(long)]
    rho: Option<f64>,
    /// Override the estimated K.
    #[arg(long)]
    k: Option<u32>,
    /// Publish ladder prefixes of these lengths as masks `mask<n>`.
    #[arg(long, value_delimiter = ',')]
    masks: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    mask_threshold: f64,
    /// JSON array of region schemes.
    #[arg(long)]
    regions: Option<PathBuf>,
}

#[derive(Args)]
struct GenMasks {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 16)]
    max_steps: usize,
}

#[derive(Args)]
struct SubmitQuery {
    #[arg(long)]
    query: PathBuf,
    /// One trace per camera the query reads.
    #[arg(long, required = true)]
    trace: Vec<PathBuf>,
    /// Print the sensitivity breakdown and stop without spending budget.
    #[arg(long)]
    explain: bool,
    /// Hold each chunk's result until its timeout has elapsed.
    #[arg(long)]
    pad_to_timeout: bool,
    /// Also print raw values, belts and baseline accuracy. For
    /// experiments on synthetic data only.
    #[arg(long)]
    experiment: bool,
    /// Baseline chunk length in seconds (default: the whole window).
    #[arg(long, requires = "experiment")]
    baseline_chunk: Option<f64>,
    #[arg(long)]
    query_id: Option<String>,
    /// Noise seed (experiments only).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum BudgetCmd {
    /// Smallest and largest remaining budget of a camera.
    Status {
        #[arg(long)]
        camera: String,
        #[arg(long)]
        first: Option<u64>,
        #[arg(long)]
        end: Option<u64>,
    },
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    param: SweepParam,
    /// Parameter values substituted for `{value}` in the query.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long)]
    query: PathBuf,
    #[arg(long, required = true)]
    trace: Vec<PathBuf>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Required: sweeps run against a throwaway ledger.
    #[arg(long)]
    fresh_ledger: bool,
}

fn load_traces(paths: &[PathBuf]) -> Result<BTreeMap<String, FrameStream>> {
    let mut out = BTreeMap::new();
    for p in paths {
        let t = load_trace(p).with_context(|| format!("reading {}", p.display()))?;
        if out.contains_key(&t.camera_id) {
            bail!("two traces for camera {}", t.camera_id);
        }
        out.insert(t.camera_id.clone(), t);
    }
    Ok(out)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn gen(args: GenScene) -> Result<()> {
    let mut cfg = match &args.scene {
        Some(p) => toml::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("{}", p.display()))?,
        None => SceneConfig::default(),
    };
    if let Some(v) = args.camera {
        cfg.camera_id = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.duration {
        cfg.duration_secs = v;
    }
    if let Some(v) = args.fps {
        cfg.fps = v;
    }
    if let Some(v) = args.rate {
        cfg.arrival_rate = v;
    }
    if let Some(v) = args.dwell_min {
        cfg.dwell_min = v;
    }
    if let Some(v) = args.dwell_max {
        cfg.dwell_max = v;
    }
    if let Some(n) = args.parked {
        cfg.parked.get_or_insert_with(ParkedConfig::default).count = n;
    }
    let stream = gen_scene(&cfg)?;
    save_trace(&args.out, &stream)?;
    eprintln!(
        "wrote {} frames of camera {} to {}",
        stream.len(),
        stream.camera_id,
        args.out.display()
    );
    Ok(())
}

fn register(args: RegisterCamera, state: &StateDir) -> Result<()> {
    let stream = load_trace(&args.estimate.trace)?;
    let opts = args.estimate.options()?;
    let (rho, k) = estimate_policy(&stream, &opts);
    let policy = Policy::new(args.rho.unwrap_or(rho), args.k.unwrap_or(k), args.epsilon).map_err(|e| anyhow!("{e}"))?;
    let mut masks = Vec::new();
    if !args.masks.is_empty() {
        let longest = args.masks.iter().copied().max().unwrap_or(0);
        let ladder = mask_ladder(&stream, args.mask_threshold, longest);
        for n in &args.masks {
            let Some(mut entry) = ladder.mask_entry(&format!("mask{n}"), *n) else {
                eprintln!("ladder has only {} steps; skipping mask{n}", ladder.steps.len());
                continue;
            };
            entry.rho *= opts.safety;
            masks.push(entry);
        }
    }
    let region_schemes: Vec<RegionScheme> = match &args.regions {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("{}", p.display()))?,
        None => Vec::new(),
    };
    for s in &region_schemes {
        s.cell_lookup(stream.grid)
            .map_err(|e| anyhow!("region scheme {}: {e}", s.scheme_id))?;
    }
    let meta = CameraMeta {
        camera_id: stream.camera_id.clone(),
        fps: stream.fps,
        start_time: stream.start_time,
        n_frames: stream.len() as u64,
        grid: stream.grid,
        policy,
        masks,
        region_schemes,
    };
    state.register(meta.clone())?;
    eprintln!(
        "registered {}: rho {} s, K {}, epsilon {}, {} masks",
        meta.camera_id,
        policy.rho,
        policy.k,
        policy.epsilon,
        meta.masks.len()
    );
    Ok(())
}

fn submit(args: SubmitQuery, cfg: &Config, state: &StateDir) -> Result<ExitCode> {
    let registry = state.registry()?;
    let text = std::fs::read_to_string(&args.query).with_context(|| format!("{}", args.query.display()))?;
    let plan = match prepare(&text, &registry, cfg.query_epsilon) {
        Ok(p) => p,
        Err(e) => bail!("{e}"),
    };
    if args.explain {
        print!("{}", explain::render(&plan));
        return Ok(ExitCode::SUCCESS);
    }
    let traces = load_traces(&args.trace)?;
    let mut run = cfg.run_options();
    run.pad_to_timeout |= args.pad_to_timeout;
    let opts = QueryOptions {
        run,
        query_epsilon: cfg.query_epsilon,
        baseline: args.experiment.then_some(Baseline {
            chunk_secs: args.baseline_chunk,
        }),
    };
    let query_id = args.query_id.unwrap_or_else(|| {
        let t = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        format!("q{}-{}", t.as_nanos(), std::process::id())
    });
    let mut rng = match args.seed.or(cfg.seed) {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    };
    let mut store = JournaledLedger::new(state.clone(), registry);
    let report = match execute(&plan, &traces, &mut store, &query_id, &opts, &mut rng) {
        Ok(r) => r,
        Err(e @ PipelineError::Denied(_)) => {
            eprintln!("{e}");
            return Ok(ExitCode::from(EXIT_DENIED));
        }
        Err(e) => return Err(e.into()),
    };
    if args.experiment {
        for r in &report.releases {
            print_json(r)?;
        }
    } else {
        for r in report.public() {
            print_json(&r)?;
        }
    }
    eprintln!("query {} spent epsilon {}", report.query_id, report.total_epsilon);
    for r in &report.releases {
        let key = if r.key.is_empty() {
            String::new()
        } else {
            format!("[{}] ", r.key.join(","))
        };
        match &r.choice {
            Some(c) => eprintln!("  #{} {} {key}-> {c}", r.select + 1, r.aggregate),
            None => eprintln!(
                "  #{} {} {key}= {:.3} (b = {:.3})",
                r.select + 1,
                r.aggregate,
                r.noised,
                r.scale
            ),
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn budget(cmd: BudgetCmd, state: &StateDir) -> Result<()> {
    let BudgetCmd::Status { camera, first, end } = cmd;
    let registry = state.registry()?;
    let ledger = state.ledger(&registry)?;
    let n = ledger
        .frame_count(&camera)
        .ok_or_else(|| anyhow!("unknown camera {camera}"))?;
    let first = first.unwrap_or(0);
    let end = end.unwrap_or(n).min(n);
    let min = ledger.min_remaining(&camera, first, end);
    let max = ledger.max_remaining(&camera, first, end);
    print_json(&serde_json::json!({
        "camera": camera,
        "first": first,
        "end": end,
        "min_remaining": min,
        "max_remaining": max,
    }))?;
    match (min, max) {
        (Some(lo), Some(hi)) => eprintln!("{camera} frames [{first}, {end}): remaining between {lo} and {hi}"),
        _ => eprintln!("{camera}: empty interval"),
    }
    Ok(())
}

fn sweep(args: SweepArgs, cfg: &Config, state: &StateDir) -> Result<()> {
    if !args.fresh_ledger {
        bail!("sweeps draw repeated noise from one run and only work against a throwaway ledger; pass --fresh-ledger");
    }
    let registry = state.registry()?;
    let template = std::fs::read_to_string(&args.query)?;
    let traces = load_traces(&args.trace)?;
    let points = run_sweep(
        &template,
        args.param,
        &args.values,
        &registry,
        &traces,
        args.reps,
        args.seed,
        &cfg.run_options(),
    )?;
    for p in &points {
        print_json(p)?;
    }
    for p in &points {
        eprintln!(
            "{:?} = {}: b = {:.3}, rmse = {:.3}, relative rmse = {:.4}",
            p.param, p.value, p.scale, p.rmse, p.relative_rmse
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let state = StateDir::locate(cfg.state_dir.as_deref());
    match cli.cmd {
        Cmd::GenScene(a) => gen(a)?,
        Cmd::RegisterCamera(a) => register(a, &state)?,
        Cmd::EstimatePolicy(a) => {
            let (rho, k) = estimate_policy(&load_trace(&a.trace)?, &a.options()?);
            print_json(&serde_json::json!({ "rho": rho, "k": k }))?;
        }
        Cmd::GenMasks(a) => {
            let stream = load_trace(&a.trace)?;
            let ladder = mask_ladder(&stream, a.threshold, a.max_steps);
            let fps = f64::from(stream.fps);
            for s in &ladder.steps {
                print_json(&serde_json::json!({
                    "cell": s.cell,
                    "max_persistence": s.max_persistence,
                    "rho": s.max_persistence as f64 / fps,
                    "k": s.max_segments,
                    "identities_retained": s.identities_retained,
                }))?;
            }
            eprintln!(
                "longest segment {} s unmasked, {} s after {} cells",
                ladder.initial_persistence as f64 / fps,
                ladder
                    .steps
                    .last()
                    .map_or(ladder.initial_persistence, |s| s.max_persistence) as f64
                    / fps,
                ladder.steps.len()
            );
        }
        Cmd::SubmitQuery(a) => return submit(a, &cfg, &state),
        Cmd::Budget { cmd } => budget(cmd, &state)?,
        Cmd::Sweep(a) => sweep(a, &cfg, &state)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
