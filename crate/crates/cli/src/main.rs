//! `hdprisk`: generate populations, draw samples, compute exact risk and fit
//! the HDP risk model from the command line.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hdprisk::data::{
    build_frequency_table, condition_cardinality, disjointify_conditions, exact_tau_oracle, CategoryLayout,
    DisjointConditionSet, MicrodataSample,
};
use hdprisk::hdp::{ChainConfig, Estimator, Hyper, Sampler, StructuralZeros};
use hdprisk::io;
use hdprisk::rng::{Purpose, SweepRng};
use hdprisk::synth::{generate_gom_population, subsample, GomParams};
use hdprisk::sz::SzMode;

use manifest::Manifest;

#[derive(Parser, Debug)]
#[command(
    name = "hdprisk",
    version,
    about = "Disclosure risk (tau1) for categorical microdata"
)]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a population from a random grade-of-membership model.
    Synth(SynthArgs),
    /// Draw a simple random sample from a population.
    Sample(SampleArgs),
    /// Exact tau1 and tau2 from a sample and its population.
    Oracle(OracleArgs),
    /// Rewrite overlapping structural-zero conditions as disjoint ones.
    Disjointify(DisjointifyArgs),
    /// Fit the model to a sample and record tau1 draws.
    Fit(FitArgs),
    /// Fit with structural-zero augmentation.
    FitSz(FitSzArgs),
    /// Summarise a trace file.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of mixture components.
    #[arg(long = "K")]
    k: usize,
    /// Layout file (`name,levels` per line).
    #[arg(long, conflicts_with = "levels", required_unless_present = "levels")]
    layout: Option<PathBuf>,
    /// Comma-separated level counts, instead of a layout file.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<u32>>,
    /// Population size.
    #[arg(long = "N")]
    n_pop: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Conditions whose cells the population must avoid.
    #[arg(long)]
    exclude: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    population: PathBuf,
    #[arg(long)]
    layout: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output microdata file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long)]
    sample: PathBuf,
    #[arg(long)]
    population: PathBuf,
    #[arg(long)]
    layout: PathBuf,
}

#[derive(Args, Debug)]
struct DisjointifyArgs {
    #[arg(long)]
    conditions: PathBuf,
    #[arg(long)]
    layout: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EstimatorArg {
    Pop,
    Mc,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Exact,
    Approx,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    sample: PathBuf,
    #[arg(long)]
    layout: PathBuf,
    #[arg(long, default_value_t = 2000)]
    iterations: u64,
    #[arg(long, default_value_t = 1000)]
    burn_in: u64,
    #[arg(long, default_value_t = 1)]
    thin: u64,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Mc)]
    estimator: EstimatorArg,
    /// Monte Carlo draws per evaluation.
    #[arg(long = "T", default_value_t = 100)]
    t_mc: usize,
    /// Population size.
    #[arg(long = "N")]
    n_pop: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Gamma hyperparameters `a,b,a0,b0` (shape, rate).
    #[arg(long, value_delimiter = ',', num_args = 1, default_value = "1,1,1,1")]
    hyper: Vec<f64>,
    /// Initial number of components.
    #[arg(long, default_value_t = hdprisk::hdp::DEFAULT_K_INIT)]
    k_init: usize,
    /// Write a checkpoint every this many iterations (0 disables).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: u64,
    /// Continue from a checkpoint instead of starting afresh.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Check every state invariant after each sweep.
    #[arg(long)]
    validate: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct FitSzArgs {
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long)]
    conditions: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
    mode: ModeArg,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = 30)]
    bins: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Failure classes, mapped to exit codes 1 and 2.
#[derive(Debug)]
enum Failure {
    Input(String),
    Abort(String),
}

type CliResult<T = ()> = Result<T, Failure>;

fn input<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Input(format!("{context}: {e}"))
}

fn sampler_failure(e: hdprisk::Error) -> Failure {
    use hdprisk::Error as E;
    match e {
        E::ProbabilityMassExceedsOne { .. } | E::DegenerateMass | E::InvariantViolated { .. } => {
            Failure::Abort(format!("sampler aborted: {e}"))
        }
        other => Failure::Input(other.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        builder = builder.num_threads(t);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Abort(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> CliResult {
    match command {
        Command::Synth(a) => synth(a),
        Command::Sample(a) => sample(a),
        Command::Oracle(a) => oracle(a),
        Command::Disjointify(a) => disjointify(a),
        Command::Fit(a) => fit(a, None),
        Command::FitSz(a) => {
            let mode = match a.mode {
                ModeArg::Exact => SzMode::Exact,
                ModeArg::Approx => SzMode::Approximate,
            };
            let conditions = a.conditions;
            fit(a.fit, Some((conditions, mode)))
        }
        Command::Report(a) => report(a),
    }
}

fn load_layout(path: &Path) -> CliResult<CategoryLayout> {
    io::read_layout(path).map_err(input(format!("--layout {}", path.display())))
}

fn load_microdata(flag: &str, path: &Path, layout: &CategoryLayout) -> CliResult<MicrodataSample> {
    io::read_microdata(path, layout).map_err(input(format!("{flag} {}", path.display())))
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(input(format!("--out-dir {}", dir.display())))
}

fn write(path: &Path, contents: &str) -> CliResult {
    io::write_atomic(path, contents.as_bytes()).map_err(input(format!("writing {}", path.display())))
}

fn synth(a: SynthArgs) -> CliResult {
    let started = Instant::now();
    let mut manifest = Manifest::new("synth", a.seed);
    let layout = match (&a.layout, &a.levels) {
        (Some(p), _) => {
            manifest.input("--layout", p)?;
            load_layout(p)?
        }
        (None, Some(levels)) => CategoryLayout::from_levels(levels.clone()).map_err(input("--levels"))?,
        (None, None) => return Err(Failure::Input("one of --layout or --levels is required".into())),
    };
    let excluded = match &a.exclude {
        Some(p) => {
            manifest.input("--exclude", p)?;
            let conds = io::read_conditions(p, &layout).map_err(input(format!("--exclude {}", p.display())))?;
            Some(disjointify_conditions(&conds, &layout).map_err(input(format!("--exclude {}", p.display())))?)
        }
        None => None,
    };
    let mut rng = SweepRng::new(a.seed, 1).stream(Purpose::Synthesis, 0);
    let params = GomParams::random(a.k, &layout, &mut rng).map_err(input("--K"))?;
    let population =
        generate_gom_population(&params, &layout, a.n_pop, a.seed, excluded.as_ref()).map_err(input("--N"))?;
    create_dir(&a.out_dir)?;
    let files = [
        ("layout.txt", io::format_layout(&layout)),
        ("population.csv", io::format_microdata(&population)),
        (
            "params.json",
            serde_json::to_string_pretty(&params).expect("parameters serialise") + "\n",
        ),
    ];
    for (name, body) in &files {
        let path = a.out_dir.join(name);
        write(&path, body)?;
        manifest.output(&path);
    }
    manifest.config(serde_json::json!({
        "K": a.k,
        "levels": layout.levels(),
        "N": a.n_pop,
        "excluded_conditions": excluded.as_ref().map(|e| e.len()),
    }));
    manifest.finish(&a.out_dir.join("manifest.json"), started)
}

fn sample(a: SampleArgs) -> CliResult {
    let started = Instant::now();
    let mut manifest = Manifest::new("sample", a.seed);
    manifest.input("--layout", &a.layout)?;
    manifest.input("--population", &a.population)?;
    let layout = load_layout(&a.layout)?;
    let population = load_microdata("--population", &a.population, &layout)?;
    let mut rng = SweepRng::new(a.seed, 0).stream(Purpose::Subsample, 0);
    let s = subsample(&population, a.n, &mut rng).map_err(input("--n"))?;
    write(&a.out, &io::format_microdata(&s))?;
    manifest.output(&a.out);
    manifest.config(serde_json::json!({ "n": a.n }));
    manifest.finish(&sidecar(&a.out), started)
}

/// `<file>.manifest.json` next to a single output file.
fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn oracle(a: OracleArgs) -> CliResult {
    let layout = load_layout(&a.layout)?;
    let s = load_microdata("--sample", &a.sample, &layout)?;
    let p = load_microdata("--population", &a.population, &layout)?;
    let risk = exact_tau_oracle(&build_frequency_table(&s), &build_frequency_table(&p))
        .map_err(input("--sample/--population"))?;
    println!("tau1={} tau2={}", risk.tau1, risk.tau2);
    Ok(())
}

fn disjointify(a: DisjointifyArgs) -> CliResult {
    let layout = load_layout(&a.layout)?;
    let conds = io::read_conditions(&a.conditions, &layout)
        .map_err(input(format!("--conditions {}", a.conditions.display())))?;
    let disjoint = disjointify_conditions(&conds, &layout).map_err(input("--conditions"))?;
    write(&a.out, &io::format_conditions(&disjoint))?;
    for mu in disjoint.conditions() {
        println!("{} cells={}", mu.to_tokens(), condition_cardinality(mu, &layout));
    }
    let covered = disjoint.total_cardinality(&layout);
    let total = layout.cardinality();
    println!(
        "conditions_in={} conditions_out={} structural_zero_cells={} total_cells={} fraction={:.6}",
        conds.len(),
        disjoint.len(),
        covered,
        total,
        covered as f64 / total as f64
    );
    Ok(())
}

fn chain_config(a: &FitArgs) -> CliResult<ChainConfig> {
    let [ha, hb, ha0, hb0] = a.hyper[..] else {
        return Err(Failure::Input(format!(
            "--hyper expects four values a,b,a0,b0, got {}",
            a.hyper.len()
        )));
    };
    let mut config = ChainConfig::new(a.n_pop, a.seed);
    config.iterations = a.iterations;
    config.burn_in = a.burn_in;
    config.thinning = a.thin;
    config.t_mc = a.t_mc;
    config.hyper = Hyper {
        a: ha,
        b: hb,
        a0: ha0,
        b0: hb0,
    };
    config.estimator = match a.estimator {
        EstimatorArg::Pop => Estimator::PopulationSampling,
        EstimatorArg::Mc => Estimator::MonteCarlo,
    };
    config.k_init = a.k_init;
    config.validate = a.validate;
    Ok(config)
}

fn fit(a: FitArgs, sz: Option<(PathBuf, SzMode)>) -> CliResult {
    let started = Instant::now();
    let command = if sz.is_some() { "fit-sz" } else { "fit" };
    let mut manifest = Manifest::new(command, a.seed);
    manifest.input("--layout", &a.layout)?;
    manifest.input("--sample", &a.sample)?;
    let layout = load_layout(&a.layout)?;
    let sample = load_microdata("--sample", &a.sample, &layout)?;
    let structural = match &sz {
        Some((path, mode)) => {
            manifest.input("--conditions", path)?;
            let conds =
                io::read_conditions(path, &layout).map_err(input(format!("--conditions {}", path.display())))?;
            let conditions = if conds.is_empty() {
                DisjointConditionSet::empty()
            } else {
                disjointify_conditions(&conds, &layout).map_err(input("--conditions"))?
            };
            Some(StructuralZeros {
                conditions,
                mode: *mode,
            })
        }
        None => None,
    };
    create_dir(&a.out_dir)?;
    let mut sampler = match &a.resume {
        Some(path) => {
            manifest.input("--resume", path)?;
            let cp = io::load_checkpoint(path).map_err(input(format!("--resume {}", path.display())))?;
            if cp.structural_zeros != structural {
                return Err(Failure::Input(format!(
                    "--resume {}: checkpoint was taken with different structural-zero settings",
                    path.display()
                )));
            }
            Sampler::resume(&sample, cp).map_err(input(format!("--resume {}", path.display())))?
        }
        None => {
            let config = chain_config(&a)?;
            Sampler::new(&sample, config, structural).map_err(input("chain configuration"))?
        }
    };
    let config = sampler.config().clone();
    let report_every = (config.iterations / 10).max(1);
    let checkpoint_path = a.out_dir.join("checkpoint.json");
    while !sampler.is_done() {
        sampler.step().map_err(sampler_failure)?;
        let it = sampler.iteration();
        if it % report_every == 0 {
            eprintln!("iteration {it}/{} K_n={}", config.iterations, sampler.state().k);
        }
        if a.checkpoint_every > 0 && it % a.checkpoint_every == 0 {
            io::save_checkpoint(&checkpoint_path, &sampler.checkpoint())
                .map_err(input(format!("writing {}", checkpoint_path.display())))?;
        }
    }
    let trace = sampler.trace();
    let summary = trace.summary();
    let trace_path = a.out_dir.join("trace.csv");
    write(&trace_path, &io::format_trace(trace))?;
    manifest.output(&trace_path);
    let mut extra = vec![
        ("command", command.to_string()),
        ("seed", config.seed.to_string()),
        ("iterations", config.iterations.to_string()),
        ("burn_in", config.burn_in.to_string()),
        ("thinning", config.thinning.to_string()),
        ("estimator", format!("{:?}", config.estimator)),
        ("T", config.t_mc.to_string()),
        ("N", config.n_population.to_string()),
        ("n", sample.len().to_string()),
        ("sample_uniques", trace.sample_uniques.to_string()),
    ];
    if let Some((_, mode)) = &sz {
        extra.push(("mode", format!("{mode:?}")));
    }
    let summary_path = a.out_dir.join("summary.txt");
    write(&summary_path, &io::format_summary(&summary, &extra))?;
    manifest.output(&summary_path);
    if sz.is_some() {
        let mut diag = io::version_line();
        diag.push_str("iteration,p0,n0\n");
        for r in &trace.augmentation {
            diag.push_str(&format!("{},{},{}\n", r.iteration, r.p0, r.n0));
        }
        let diag_path = a.out_dir.join("augmentation.csv");
        write(&diag_path, &diag)?;
        manifest.output(&diag_path);
    }
    if a.checkpoint_every > 0 {
        manifest.output(&checkpoint_path);
    }
    manifest.config(serde_json::to_value(&config).expect("config serialises"));
    manifest.sampler_timing(trace.seconds, sz.is_some().then_some(trace.augmentation_seconds));
    manifest.finish(&a.out_dir.join("manifest.json"), started)?;
    println!(
        "tau1 mean={} std={} q025={} q975={} draws={}",
        summary.mean, summary.std, summary.q025, summary.q975, summary.draws
    );
    Ok(())
}

fn report(a: ReportArgs) -> CliResult {
    let rows = io::read_trace(&a.trace).map_err(input(format!("--trace {}", a.trace.display())))?;
    if rows.is_empty() {
        return Err(Failure::Input(format!("--trace {}: no draws", a.trace.display())));
    }
    let tau: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let k: Vec<f64> = rows.iter().map(|r| r.2 as f64).collect();
    let summary = hdprisk::risk::TraceSummary::from_draws(&tau);
    let k_summary = hdprisk::risk::TraceSummary::from_draws(&k);
    create_dir(&a.out_dir)?;
    let extra = [
        ("trace", a.trace.display().to_string()),
        ("K_n_mean", k_summary.mean.to_string()),
    ];
    write(&a.out_dir.join("summary.txt"), &io::format_summary(&summary, &extra))?;
    write(&a.out_dir.join("histogram.csv"), &io::format_histogram(&tau, a.bins))?;
    write(&a.out_dir.join("k_histogram.csv"), &io::format_histogram(&k, a.bins))?;
    println!(
        "tau1 mean={} std={} q025={} q975={} draws={}",
        summary.mean, summary.std, summary.q025, summary.q975, summary.draws
    );
    Ok(())
}
