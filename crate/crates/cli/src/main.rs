//! `geoscale`: generate toy data, train model ladders, and fit scaling laws.

use clap::{Args, Parser, Subcommand, ValueEnum};
use geoscale::fit::{allocate, allocation_table, consistency_check, Axis, FamilyReport, FrontierPoint, PowerLawFit, SumPowerLawFit};
use geoscale::flops::KappaFit;
use geoscale::model::{checkpoint, Family};
use geoscale::pipeline::{
    analyze, fit_flops, fit_frontier, fit_sum, gen_data, group_by_arch, load_split, train_run, write_report, write_runlog, BootstrapSettings,
    FlopsSettings, FrontierSettings, GenDataSettings, ReportSettings, Stamped, SumSettings, TrainSettings,
};
use geoscale::train::sweep::{depth_width_grid, format_sweep_table, lr_batch_grid, sweep};
use geoscale::train::{read_runlogs, RunLog};
use geoscale::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_OTHER: u8 = 1;
const EXIT_BAD_INPUT: u8 = 2;
const EXIT_NON_IDENTIFIABLE: u8 = 3;
const EXIT_DIVERGED: u8 = 4;
const EXIT_CONFIG: u8 = 5;

#[derive(Parser)]
#[command(name = "geoscale", version, about = "Geometric message-passing potentials and their scaling laws")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled Lennard-Jones dataset and split it.
    GenData(GenDataArgs),
    /// Train one model for a single pass and write its learning curve.
    Train(TrainArgs),
    /// Train a grid of models and tabulate their final losses.
    Sweep(SweepArgs),
    /// Measure κ on a width ladder by counting FLOPs.
    FitFlops(FitFlopsArgs),
    /// Fit a power law to the loss-versus-budget frontier.
    FitFrontier(FitFrontierArgs),
    /// Fit the separable law in model size and data size.
    FitSum(FitSumArgs),
    /// Compute-optimal model and data sizes from a separable fit.
    Allocate(AllocateArgs),
    /// All fits for every architecture, rendered as tables and plots.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKindArg {
    LennardJones,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum, default_value = "lennard-jones")]
    kind: DataKindArg,
    #[arg(long)]
    n_systems: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.02)]
    val_fraction: f64,
    #[arg(long, default_value_t = 4)]
    min_atoms: usize,
    #[arg(long, default_value_t = 24)]
    max_atoms: usize,
    /// Directory for the train and validation files.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Clone)]
struct TrainingFlags {
    /// Directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    family: Family,
    /// Defaults to the family's saturation depth.
    #[arg(long)]
    depth: Option<usize>,
    /// Learning rate at the base width.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    base_width: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rotated copies per system for the symmetry term (0 = off).
    #[arg(long, default_value_t = 0)]
    symmetry_samples: usize,
    #[arg(long, default_value_t = 1.0)]
    symmetry_weight: f64,
    #[arg(long, default_value_t = 0.02)]
    eval_fraction: f64,
    #[arg(long)]
    max_val_systems: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    data_fraction: f64,
}

impl TrainingFlags {
    fn settings(&self, width: usize) -> TrainSettings {
        let mut s = TrainSettings::new(self.family, width, self.seed);
        if let Some(d) = self.depth {
            s.depth = d;
        }
        if let Some(lr) = self.lr {
            s.lr = lr;
        }
        if let Some(b) = self.base_width {
            s.base_width = b;
        }
        if let Some(b) = self.batch_size {
            s.batch_size = b;
        }
        s.symmetry_samples = self.symmetry_samples;
        s.symmetry_weight = self.symmetry_weight;
        s.eval_fraction = self.eval_fraction;
        s.max_val_systems = self.max_val_systems;
        s.data_fraction = self.data_fraction;
        s
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    flags: TrainingFlags,
    /// Scalar width (channels for spherical tensors).
    #[arg(long)]
    width: usize,
    /// Run log to write.
    #[arg(long)]
    output: PathBuf,
    /// Also save the averaged parameters here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Grid {
    /// Learning rate × batch size at one width.
    LrBatch,
    /// Depths at a fixed parameter budget.
    DepthWidth,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    flags: TrainingFlags,
    #[arg(long, value_enum, default_value = "lr-batch")]
    grid: Grid,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [1e-3, 3e-3, 1e-2, 3e-2])]
    lrs: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [32, 64, 128])]
    batch_sizes: Vec<usize>,
    #[arg(long, default_value_t = 50_000)]
    target_params: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 6])]
    depths: Vec<usize>,
    /// Directory for one run log per cell and the summary table.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct FitFlopsArgs {
    #[arg(long)]
    family: Family,
    #[arg(long, value_delimiter = ',', required = true)]
    widths: Vec<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 8)]
    n_systems: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0])]
    fractions: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Clone, Copy)]
struct FitFlags {
    /// Fit the irreducible loss instead of fixing it.
    #[arg(long, conflicts_with = "l_inf")]
    free_l_inf: bool,
    /// Value the irreducible loss is fixed at.
    #[arg(long, default_value_t = 0.0)]
    l_inf: f64,
    /// Bootstrap replicates (0 = no intervals, otherwise at least 100).
    #[arg(long, default_value_t = 1000)]
    n_boot: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl FitFlags {
    fn fix(&self) -> Option<f64> {
        (!self.free_l_inf).then_some(self.l_inf)
    }

    fn bootstrap(&self) -> BootstrapSettings {
        BootstrapSettings { n_boot: self.n_boot, level: self.level, seed: self.seed }
    }

    fn validate(&self) -> Result<()> {
        if self.n_boot != 0 && self.n_boot < geoscale::fit::bootstrap::MIN_REPLICATES {
            return Err(Error::Config(format!("--n-boot must be 0 or at least {}", geoscale::fit::bootstrap::MIN_REPLICATES)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config("--level must lie in (0, 1)".into()));
        }
        if self.l_inf.is_nan() || self.l_inf < 0.0 {
            return Err(Error::Config("--l-inf must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Flops,
    Hours,
}

#[derive(Args)]
struct FitFrontierArgs {
    /// A run log file or a directory of them.
    #[arg(long)]
    runs: PathBuf,
    /// Architecture to fit when the logs hold several.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long, value_enum, default_value = "flops")]
    axis: AxisArg,
    #[command(flatten)]
    fit: FitFlags,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct FitSumArgs {
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    arch: Option<String>,
    /// Data fractions at which each learning curve is read.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])]
    fractions: Vec<f64>,
    /// Smoothing factor for the learning curves.
    #[arg(long, default_value_t = 0.9)]
    theta: f64,
    #[command(flatten)]
    fit: FitFlags,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct AllocateArgs {
    /// Output of fit-sum.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    kappa: f64,
    /// Output of fit-frontier, for the consistency check.
    #[arg(long)]
    frontier: Option<PathBuf>,
    /// Budgets to tabulate, in PFLOPs.
    #[arg(long, value_delimiter = ',', default_values_t = [1e-3, 1.0, 1e3])]
    budgets: Vec<f64>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    runs: PathBuf,
    /// Use this κ for every architecture instead of measuring it from the logs.
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long, default_value_t = 0.9)]
    theta: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [1e-3, 1.0, 1e3])]
    budgets: Vec<f64>,
    #[command(flatten)]
    fit: FitFlags,
    /// Directory for report.json, tables.txt and the plots.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct FrontierOutput {
    arch: String,
    frontier: Vec<FrontierPoint>,
    fit: PowerLawFit,
}

#[derive(Serialize, Deserialize)]
struct SumOutput {
    arch: String,
    triples: Vec<(f64, f64, f64)>,
    fit: SumPowerLawFit,
}

#[derive(Serialize, Deserialize)]
struct FrontierFileSettings {
    arch: String,
    settings: FrontierSettings,
}

#[derive(Serialize, Deserialize)]
struct SumFileSettings {
    arch: String,
    settings: SumSettings,
}

#[derive(Serialize, Deserialize)]
struct AllocateSettings {
    kappa: f64,
    budgets_pflops: Vec<f64>,
    sum_fit_hash: String,
    frontier_fit_hash: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct AllocateOutput {
    arch: String,
    allocation: geoscale::fit::AllocationResult,
    consistency: Option<geoscale::fit::ConsistencyReport>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } | Error::Io(_) | Error::Json(_) | Error::InvalidSystem(_) | Error::NoData(_) | Error::Shape(_) => EXIT_BAD_INPUT,
        Error::NonIdentifiable(_) | Error::RankDeficient { .. } => EXIT_NON_IDENTIFIABLE,
        Error::Diverged { .. } | Error::NonFiniteGradient { .. } => EXIT_DIVERGED,
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_OTHER,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::FitFlops(a) => cmd_fit_flops(a),
        Command::FitFrontier(a) => cmd_fit_frontier(a),
        Command::FitSum(a) => cmd_fit_sum(a),
        Command::Allocate(a) => cmd_allocate(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p)?;
    }
    Ok(())
}

fn cmd_gen_data(a: GenDataArgs) -> Result<()> {
    let DataKindArg::LennardJones = a.kind;
    let mut s = GenDataSettings::new(a.n_systems, a.seed, a.val_fraction);
    s.min_atoms = a.min_atoms;
    s.max_atoms = a.max_atoms;
    let out = gen_data(&s, &a.output)?;
    out.write(&a.output.join("dataset.json"))?;
    let r = &out.result;
    println!(
        "wrote {} train systems ({} atoms) and {} validation systems ({} atoms) to {}",
        r.train_systems,
        r.train_tokens,
        r.validation_systems,
        r.validation_tokens,
        a.output.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let settings = a.flags.settings(a.width);
    settings.validate()?;
    let (tr, va) = load_split(&a.flags.data)?;
    let out = train_run(&settings, &tr, &va)?;
    ensure_parent(&a.output)?;
    write_runlog(&out.log, &a.output)?;
    if let Some(path) = &a.checkpoint {
        ensure_parent(path)?;
        checkpoint::save(&out.state, path)?;
    }
    let meta = out.log.meta();
    if let Some(f) = &out.log.failure {
        eprintln!("{} w={} diverged at step {}", meta.arch, meta.width, f.step);
        return Err(Error::Diverged { step: f.step as usize, loss: f.loss.unwrap_or(f64::NAN) });
    }
    println!(
        "{} w={} N={} seed={} hash={}: final validation loss {}",
        meta.arch,
        meta.width,
        meta.n_params,
        meta.seed,
        meta.config_hash,
        out.log.final_loss().map_or("n/a".into(), |l| format!("{l:.6}"))
    );
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let base = a.flags.settings(a.width);
    base.validate()?;
    let cells = match a.grid {
        Grid::LrBatch => lr_batch_grid(&base.config(), &base.spec(), &a.lrs, &a.batch_sizes),
        Grid::DepthWidth => depth_width_grid(a.flags.family, a.target_params, &a.depths, &base.spec())?,
    };
    for c in &cells {
        c.config.validate()?;
        c.spec.validate()?;
    }
    let (tr, va) = load_split(&a.flags.data)?;
    let train_set = geoscale::data::prefix_fraction(&tr, base.data_fraction);
    let results = sweep(&cells, train_set, &va)?;
    std::fs::create_dir_all(&a.output)?;
    for (i, r) in results.iter().enumerate() {
        write_runlog(&r.log, &a.output.join(format!("cell{i:03}.jsonl")))?;
    }
    let table = format_sweep_table(&results);
    std::fs::write(a.output.join("sweep.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_fit_flops(a: FitFlopsArgs) -> Result<()> {
    let settings = FlopsSettings {
        family: a.family,
        widths: a.widths,
        depth: a.depth.unwrap_or(a.family.saturation_depth()),
        n_systems: a.n_systems,
        fractions: a.fractions,
    };
    let (tr, _) = load_split(&a.data)?;
    let fit: KappaFit = fit_flops(&settings, &tr)?;
    ensure_parent(&a.output)?;
    Stamped::new("kappa", a.seed, settings, fit.clone())?.write(&a.output)?;
    println!("{}: kappa = {:.4}, R² = {:.6} over {} points", a.family, fit.kappa, fit.r_squared, fit.points.len());
    Ok(())
}

/// Runs of one architecture: the one named, or the only one present.
fn select_arch(runs: Vec<RunLog>, arch: Option<&str>) -> Result<(String, Vec<RunLog>)> {
    let mut groups = group_by_arch(runs);
    if groups.is_empty() {
        return Err(Error::NoData("no runs in the given logs".into()));
    }
    match arch {
        Some(name) => {
            let name = name.parse::<Family>().map(|f| f.name().to_string()).unwrap_or_else(|_| name.to_string());
            groups.remove(&name).map(|g| (name.clone(), g)).ok_or_else(|| Error::NoData(format!("no runs for architecture {name}")))
        }
        None if groups.len() == 1 => Ok(groups.pop_first().expect("one group")),
        None => Err(Error::Config(format!(
            "logs hold several architectures ({}); pick one with --arch",
            groups.keys().cloned().collect::<Vec<_>>().join(", ")
        ))),
    }
}

fn cmd_fit_frontier(a: FitFrontierArgs) -> Result<()> {
    let axis = match a.axis {
        AxisArg::Flops => Axis::Flops,
        AxisArg::Hours => Axis::Hours,
    };
    a.fit.validate()?;
    let settings = FrontierSettings { axis, fix_l_inf: a.fit.fix(), bootstrap: a.fit.bootstrap() };
    let (arch, runs) = select_arch(read_runlogs(&a.runs)?, a.arch.as_deref())?;
    let (frontier, fit) = fit_frontier(&runs, &settings)?;
    ensure_parent(&a.output)?;
    let out = Stamped::new(
        "frontier-fit",
        a.fit.seed,
        FrontierFileSettings { arch: arch.clone(), settings },
        FrontierOutput { arch: arch.clone(), frontier, fit: fit.clone() },
    )?;
    out.write(&a.output)?;
    let prefactor = match axis {
        Axis::Flops => fit.prefactor_in_units(geoscale::fit::PFLOPS),
        Axis::Hours => fit.f,
    };
    println!("{arch}: gamma_{} = {:.4}, F = {:.4}, L_inf = {:.4}", axis.symbol().to_lowercase(), fit.gamma, prefactor, fit.l_inf);
    Ok(())
}

fn cmd_fit_sum(a: FitSumArgs) -> Result<()> {
    a.fit.validate()?;
    if a.fractions.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) || !(a.theta >= 0.0 && a.theta < 1.0) {
        return Err(Error::Config("fractions must lie in (0, 1] and theta in [0, 1)".into()));
    }
    let settings = SumSettings { fractions: a.fractions, theta: a.theta, fix_l_inf: a.fit.fix(), bootstrap: a.fit.bootstrap() };
    let (arch, runs) = select_arch(read_runlogs(&a.runs)?, a.arch.as_deref())?;
    let (triples, fit) = fit_sum(&runs, &settings)?;
    ensure_parent(&a.output)?;
    Stamped::new(
        "sum-fit",
        a.fit.seed,
        SumFileSettings { arch: arch.clone(), settings },
        SumOutput { arch: arch.clone(), triples, fit: fit.clone() },
    )?
    .write(&a.output)?;
    println!(
        "{arch}: alpha = {:.4}, beta = {:.4}, log10 A = {:.3}, log10 B = {:.3}, L_inf = {:.4}",
        fit.alpha,
        fit.beta,
        fit.a.log10(),
        fit.b.log10(),
        fit.l_inf
    );
    Ok(())
}

fn cmd_allocate(a: AllocateArgs) -> Result<()> {
    let sum = Stamped::<SumFileSettings, SumOutput>::read(&a.fit)?;
    let frontier = a.frontier.as_deref().map(Stamped::<FrontierFileSettings, FrontierOutput>::read).transpose()?;
    if let Some(f) = &frontier {
        if f.result.fit.variable != Axis::Flops {
            return Err(Error::Config("the consistency check needs a frontier fitted on FLOPs".into()));
        }
    }
    let allocation = allocate(&sum.result.fit, a.kappa)?;
    let consistency = frontier.as_ref().map(|f| {
        consistency_check(&f.result.fit, &allocation, geoscale::fit::allocation::GAMMA_TOLERANCE, geoscale::fit::allocation::F_RELATIVE_TOLERANCE)
    });
    let settings = AllocateSettings {
        kappa: a.kappa,
        budgets_pflops: a.budgets.clone(),
        sum_fit_hash: sum.config_hash.clone(),
        frontier_fit_hash: frontier.as_ref().map(|f| f.config_hash.clone()),
    };
    let arch = sum.result.arch.clone();
    ensure_parent(&a.output)?;
    Stamped::new(
        "allocation",
        sum.seed,
        settings,
        AllocateOutput { arch: arch.clone(), allocation: allocation.clone(), consistency: consistency.clone() },
    )?
    .write(&a.output)?;
    let family = FamilyReport { arch, allocation: Some(allocation), consistency, ..FamilyReport::default() };
    print!("{}", allocation_table(&[family], &a.budgets));
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    a.fit.validate()?;
    let runs = read_runlogs(&a.runs)?;
    let settings = ReportSettings {
        fix_l_inf: a.fit.fix(),
        sum: SumSettings { theta: a.theta, fix_l_inf: a.fit.fix(), bootstrap: a.fit.bootstrap(), ..SumSettings::default() },
        bootstrap: a.fit.bootstrap(),
        kappa: a.kappa,
        budgets_pflops: a.budgets,
    };
    let outcomes = analyze(runs, &settings)?;
    write_report(&outcomes, &settings, a.fit.seed, &a.output)?;
    print!("{}", std::fs::read_to_string(a.output.join("tables.txt"))?);
    Ok(())
}
