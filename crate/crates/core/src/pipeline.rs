//! File-level steps of a scaling study: generate data, train, measure κ, fit,
//! allocate, and report. The command line is a thin layer over these.

use crate::data::{generate, prefix_fraction, split, ToyPotentialSpec};
use crate::error::{Error, Result};
use crate::fit::{
    allocate, allocation_table, bootstrap_ci, consistency_check, fit_power_law, fit_sum_power_law, frontier_svg, frontier_table, pareto_frontier,
    sum_law_table, sum_law_triples, Axis, FamilyReport, FrontierPoint, PowerLawFit, SumPowerLawFit,
};
use crate::flops::{estimate_kappa, ladder_points, KappaFit};
use crate::graph::io::{read_dataset, write_dataset};
use crate::graph::AtomicSystem;
use crate::model::{build_ladder_at_depth, Family, ModelConfig};
use crate::train::optim::{DEFAULT_BASE_WIDTH, DEFAULT_LR};
use crate::train::runlog::config_hash;
use crate::train::{train, LossSpec, OptimizerSpec, RunLog, SymmetrySpec, TrainOutcome, TrainSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALIDATION_FILE: &str = "validation.jsonl";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A result together with the settings and seed that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<S, T> {
    pub kind: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub settings: S,
    pub result: T,
}

impl<S: Serialize + DeserializeOwned, T: Serialize + DeserializeOwned> Stamped<S, T> {
    pub fn new(kind: &str, seed: u64, settings: S, result: T) -> Result<Self> {
        let config_hash = config_hash(&(kind, &settings))?;
        Ok(Self { kind: kind.into(), version: VERSION.into(), seed, config_hash, settings, result })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    LennardJones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenDataSettings {
    pub kind: DataKind,
    pub n_systems: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub min_atoms: usize,
    pub max_atoms: usize,
}

impl GenDataSettings {
    pub fn new(n_systems: usize, seed: u64, val_fraction: f64) -> Self {
        let d = ToyPotentialSpec::default();
        Self { kind: DataKind::LennardJones, n_systems, seed, val_fraction, min_atoms: d.min_atoms, max_atoms: d.max_atoms }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub train_systems: usize,
    pub validation_systems: usize,
    pub train_tokens: u64,
    pub validation_tokens: u64,
}

/// Writes the train and validation splits into `out_dir`.
pub fn gen_data(settings: &GenDataSettings, out_dir: &Path) -> Result<Stamped<GenDataSettings, DataSummary>> {
    if settings.n_systems < 2 {
        return Err(Error::Config("need at least 2 systems to split".into()));
    }
    if settings.min_atoms < 2 || settings.max_atoms < settings.min_atoms {
        return Err(Error::Config("atom counts need 2 ≤ min_atoms ≤ max_atoms".into()));
    }
    let spec = ToyPotentialSpec { min_atoms: settings.min_atoms, max_atoms: settings.max_atoms, ..ToyPotentialSpec::default() };
    let parts = split(&generate(&spec, settings.n_systems, settings.seed).0, settings.val_fraction, settings.seed)?;
    std::fs::create_dir_all(out_dir)?;
    write_dataset(&out_dir.join(TRAIN_FILE), &parts.train)?;
    write_dataset(&out_dir.join(VALIDATION_FILE), &parts.validation)?;
    let summary = DataSummary {
        train_systems: parts.train.len(),
        validation_systems: parts.validation.len(),
        train_tokens: parts.train_tokens,
        validation_tokens: parts.validation_tokens,
    };
    Stamped::new("dataset", settings.seed, settings.clone(), summary)
}

pub fn load_split(data_dir: &Path) -> Result<(Vec<AtomicSystem>, Vec<AtomicSystem>)> {
    Ok((read_dataset(&data_dir.join(TRAIN_FILE))?, read_dataset(&data_dir.join(VALIDATION_FILE))?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub family: Family,
    pub width: usize,
    pub depth: usize,
    pub lr: f64,
    pub base_width: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Rotated copies per system; 0 turns the symmetry term off.
    pub symmetry_samples: usize,
    pub symmetry_weight: f64,
    pub eval_fraction: f64,
    pub max_val_systems: Option<usize>,
    /// Leading fraction of the training stream to use.
    pub data_fraction: f64,
}

impl TrainSettings {
    /// Family defaults at `width` (channels for spherical tensors).
    pub fn new(family: Family, width: usize, seed: u64) -> Self {
        Self {
            family,
            width,
            depth: family.saturation_depth(),
            lr: DEFAULT_LR,
            base_width: DEFAULT_BASE_WIDTH,
            batch_size: family.default_batch_size(),
            seed,
            symmetry_samples: 0,
            symmetry_weight: 1.0,
            eval_fraction: 0.02,
            max_val_systems: None,
            data_fraction: 1.0,
        }
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig::for_family(self.family, self.depth, self.width)
    }

    pub fn spec(&self) -> TrainSpec {
        let mut spec = TrainSpec::new(OptimizerSpec::new(self.lr, self.base_width, self.batch_size), self.seed);
        spec.eval_fraction = self.eval_fraction;
        spec.max_val_systems = self.max_val_systems;
        if self.symmetry_samples > 0 {
            spec.loss =
                LossSpec { symmetry: Some(SymmetrySpec { samples: self.symmetry_samples, weight: self.symmetry_weight }), ..LossSpec::default() };
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(Error::Config(format!("data fraction {} outside (0, 1]", self.data_fraction)));
        }
        self.config().validate()?;
        self.spec().validate()
    }
}

/// One single-pass training run over the leading `data_fraction` of `train_set`.
pub fn train_run(settings: &TrainSettings, train_set: &[AtomicSystem], validation: &[AtomicSystem]) -> Result<TrainOutcome> {
    settings.validate()?;
    train(&settings.config(), prefix_fraction(train_set, settings.data_fraction), validation, &settings.spec())
}

pub fn write_runlog(log: &RunLog, path: &Path) -> Result<()> {
    std::fs::write(path, log.to_jsonl()?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsSettings {
    pub family: Family,
    pub widths: Vec<usize>,
    pub depth: usize,
    /// Systems from the front of the training split to count over.
    pub n_systems: usize,
    pub fractions: Vec<f64>,
}

/// Instrumented κ fit over a width ladder and nested data prefixes.
pub fn fit_flops(settings: &FlopsSettings, systems: &[AtomicSystem]) -> Result<KappaFit> {
    let configs = build_ladder_at_depth(settings.family, &settings.widths, settings.depth)?;
    let pool = &systems[..settings.n_systems.min(systems.len())];
    estimate_kappa(&ladder_points(&configs, pool, &settings.fractions)?)
}

/// κ from logged training runs: every checkpoint contributes `(N, D, C)`.
pub fn kappa_from_runs(runs: &[RunLog]) -> Result<KappaFit> {
    let pts: Vec<(u64, u64, u64)> = runs
        .iter()
        .filter(|r| !r.diverged())
        .flat_map(|r| {
            let n = r.meta().n_params;
            let m = crate::train::symmetry_flops_multiplier(r.meta().m);
            r.points.iter().map(move |p| (n, p.tokens, p.flops / m))
        })
        .collect();
    estimate_kappa(&pts)
}

/// Resampling settings; `n_boot = 0` skips the intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub n_boot: usize,
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierSettings {
    pub axis: Axis,
    /// `None` fits the floor as well.
    pub fix_l_inf: Option<f64>,
    pub bootstrap: BootstrapSettings,
}

/// Frontier over the runs and its power law, with intervals if requested.
pub fn fit_frontier(runs: &[RunLog], settings: &FrontierSettings) -> Result<(Vec<FrontierPoint>, PowerLawFit)> {
    if runs.iter().all(|r| r.points.is_empty()) {
        return Err(Error::NoData("no checkpoints in the run logs".into()));
    }
    let frontier = pareto_frontier(runs, settings.axis);
    let mut fit = fit_power_law(&frontier, settings.fix_l_inf, settings.axis)?;
    let b = settings.bootstrap;
    if b.n_boot > 0 {
        let refit = |d: &[FrontierPoint]| {
            let mut pts = d.to_vec();
            pts.sort_by(|x, y| x.budget.total_cmp(&y.budget));
            fit_power_law(&pts, settings.fix_l_inf, settings.axis).map(|f| f.params())
        };
        fit.ci = Some(bootstrap_ci(&frontier, &PowerLawFit::PARAM_NAMES, refit, b.n_boot, b.level, b.seed)?);
    }
    Ok((frontier, fit))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumSettings {
    pub fractions: Vec<f64>,
    /// EMA factor applied to each learning curve before reading losses.
    pub theta: f64,
    pub fix_l_inf: Option<f64>,
    pub bootstrap: BootstrapSettings,
}

impl Default for SumSettings {
    fn default() -> Self {
        Self {
            fractions: (1..=10).map(|k| k as f64 / 10.0).collect(),
            theta: 0.9,
            fix_l_inf: Some(0.0),
            bootstrap: BootstrapSettings { n_boot: 0, level: 0.95, seed: 0 },
        }
    }
}

/// One `(N, D, L)` observation.
pub type Triple = (f64, f64, f64);

/// Separable law over `(N, D, L)` triples read from the runs.
pub fn fit_sum(runs: &[RunLog], settings: &SumSettings) -> Result<(Vec<Triple>, SumPowerLawFit)> {
    let triples = sum_law_triples(runs, &settings.fractions, settings.theta);
    if triples.is_empty() {
        return Err(Error::NoData("no converged runs with checkpoints".into()));
    }
    let mut fit = fit_sum_power_law(&triples, settings.fix_l_inf)?;
    let b = settings.bootstrap;
    if b.n_boot > 0 {
        let refit = |d: &[(f64, f64, f64)]| fit_sum_power_law(d, settings.fix_l_inf).map(|f| f.params());
        fit.ci = Some(bootstrap_ci(&triples, &SumPowerLawFit::PARAM_NAMES, refit, b.n_boot, b.level, b.seed)?);
    }
    Ok((triples, fit))
}

/// Runs keyed by architecture, names in sorted order.
pub fn group_by_arch(runs: Vec<RunLog>) -> BTreeMap<String, Vec<RunLog>> {
    let mut out: BTreeMap<String, Vec<RunLog>> = BTreeMap::new();
    for r in runs {
        out.entry(r.meta().arch.clone()).or_default().push(r);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    pub fix_l_inf: Option<f64>,
    pub sum: SumSettings,
    pub bootstrap: BootstrapSettings,
    /// Overrides the κ measured from the runs.
    pub kappa: Option<f64>,
    pub budgets_pflops: Vec<f64>,
}

/// Every fit for every architecture; failures are kept as notes so one bad
/// family does not hide the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyOutcome {
    pub report: FamilyReport,
    pub kappa: Option<KappaFit>,
    pub notes: Vec<String>,
}

impl FamilyOutcome {
    /// True when the frontier, sum-law and allocation steps all produced a result.
    pub fn complete(&self) -> bool {
        self.report.fit_flops.is_some() && self.report.fit_hours.is_some() && self.report.sum_law.is_some() && self.report.allocation.is_some()
    }
}

pub fn analyze(runs: Vec<RunLog>, settings: &ReportSettings) -> Result<Vec<FamilyOutcome>> {
    if runs.iter().all(|r| r.points.is_empty()) {
        return Err(Error::NoData("no checkpoints in the run logs".into()));
    }
    let mut out = Vec::new();
    for (arch, group) in group_by_arch(runs) {
        let mut notes = Vec::new();
        let mut report = FamilyReport { arch: arch.clone(), ..FamilyReport::default() };
        for axis in [Axis::Flops, Axis::Hours] {
            let fs = FrontierSettings { axis, fix_l_inf: settings.fix_l_inf, bootstrap: settings.bootstrap };
            let frontier = pareto_frontier(&group, axis);
            let fit = match fit_frontier(&group, &fs) {
                Ok((_, f)) => Some(f),
                Err(e) => {
                    notes.push(format!("{} frontier: {e}", axis.symbol()));
                    None
                }
            };
            match axis {
                Axis::Flops => (report.frontier_flops, report.fit_flops) = (frontier, fit),
                Axis::Hours => (report.frontier_hours, report.fit_hours) = (frontier, fit),
            }
        }
        let mut sum = settings.sum.clone();
        sum.bootstrap = settings.bootstrap;
        match fit_sum(&group, &sum) {
            Ok((_, f)) => report.sum_law = Some(f),
            Err(e) => notes.push(format!("sum law: {e}")),
        }
        let kappa = match kappa_from_runs(&group) {
            Ok(k) => Some(k),
            Err(e) => {
                notes.push(format!("kappa: {e}"));
                None
            }
        };
        let k = settings.kappa.or(kappa.as_ref().map(|k| k.kappa));
        if let (Some(s), Some(k)) = (&report.sum_law, k) {
            match allocate(s, k) {
                Ok(a) => report.allocation = Some(a),
                Err(e) => notes.push(format!("allocation: {e}")),
            }
        }
        if let (Some(f), Some(a)) = (&report.fit_flops, &report.allocation) {
            report.consistency = Some(consistency_check(f, a, crate::fit::allocation::GAMMA_TOLERANCE, crate::fit::allocation::F_RELATIVE_TOLERANCE));
        }
        out.push(FamilyOutcome { report, kappa, notes });
    }
    Ok(out)
}

/// Writes `report.json`, `tables.txt` and one SVG per budget axis into `out_dir`.
pub fn write_report(outcomes: &[FamilyOutcome], settings: &ReportSettings, seed: u64, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    Stamped::new("report", seed, settings.clone(), outcomes.to_vec())?.write(&out_dir.join("report.json"))?;
    let families: Vec<FamilyReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    let mut text = String::from("Compute-frontier power laws (compute in PFLOPs)\n");
    text += &frontier_table(&families);
    text += "\nSum power laws\n";
    text += &sum_law_table(&families);
    text += "\nCompute-optimal allocation\n";
    text += &allocation_table(&families, &settings.budgets_pflops);
    for o in outcomes {
        if let Some(k) = &o.kappa {
            text += &format!("{}: kappa={:.4} (R²={:.5})\n", o.report.arch, k.kappa, k.r_squared);
        }
        for n in &o.notes {
            text += &format!("{}: {n}\n", o.report.arch);
        }
    }
    std::fs::write(out_dir.join("tables.txt"), text)?;
    for (axis, name) in [(Axis::Flops, "frontier_flops.svg"), (Axis::Hours, "frontier_hours.svg")] {
        match frontier_svg(&families, axis) {
            Ok(svg) => std::fs::write(out_dir.join(name), svg)?,
            Err(Error::NoData(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// A whole desk-scale study: one dataset, width ladders for a few families,
/// single-epoch training, and every fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskSettings {
    pub data: GenDataSettings,
    /// Families and the widths of their ladders.
    pub ladders: Vec<(Family, Vec<usize>)>,
    /// Depth shared by every run; `None` uses each family's saturation depth.
    pub depth: Option<usize>,
    pub eval_fraction: f64,
    pub max_val_systems: Option<usize>,
    pub seed: u64,
    pub report: ReportSettings,
}

/// Runs the study under `out_dir` (`data/`, `runs/`, `report/`) and returns the analysis.
pub fn run_desk(settings: &DeskSettings, out_dir: &Path) -> Result<Vec<FamilyOutcome>> {
    let data_dir = out_dir.join("data");
    gen_data(&settings.data, &data_dir)?.write(&data_dir.join("dataset.json"))?;
    let (tr, va) = load_split(&data_dir)?;
    let runs_dir = out_dir.join("runs");
    std::fs::create_dir_all(&runs_dir)?;
    for (family, widths) in &settings.ladders {
        for &w in widths {
            let mut s = TrainSettings::new(*family, w, settings.seed);
            if let Some(d) = settings.depth {
                s.depth = d;
            }
            s.eval_fraction = settings.eval_fraction;
            s.max_val_systems = settings.max_val_systems;
            let out = train_run(&s, &tr, &va)?;
            write_runlog(&out.log, &runs_dir.join(format!("{}-w{w:04}.jsonl", family.name())))?;
        }
    }
    let outcomes = analyze(crate::train::read_runlogs(&runs_dir)?, &settings.report)?;
    write_report(&outcomes, &settings.report, settings.seed, &out_dir.join("report"))?;
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::read_runlogs;

    fn tmp(name: &str) -> std::path::PathBuf {
        let p = std::env::temp_dir().join(format!("geoscale-pipeline-{name}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&p);
        p
    }

    #[test]
    fn small_study_end_to_end() {
        let dir = tmp("study");
        let data = dir.join("data");
        let mut g = GenDataSettings::new(240, 3, 0.1);
        g.max_atoms = 8;
        let summary = gen_data(&g, &data).unwrap();
        assert_eq!(summary.result.train_systems + summary.result.validation_systems, 240);
        let (tr, va) = load_split(&data).unwrap();
        let runs_dir = dir.join("runs");
        std::fs::create_dir_all(&runs_dir).unwrap();
        for w in [4, 8, 16, 32] {
            let mut s = TrainSettings::new(Family::Unconstrained, w, 1);
            s.depth = 1;
            s.batch_size = 8;
            s.eval_fraction = 0.05;
            let out = train_run(&s, &tr, &va).unwrap();
            write_runlog(&out.log, &runs_dir.join(format!("w{w:03}.jsonl"))).unwrap();
        }
        let runs = read_runlogs(&runs_dir).unwrap();
        assert_eq!(runs.len(), 4);
        let settings = ReportSettings {
            fix_l_inf: Some(0.0),
            sum: SumSettings::default(),
            bootstrap: BootstrapSettings { n_boot: 100, level: 0.95, seed: 2 },
            kappa: None,
            budgets_pflops: vec![1.0],
        };
        let outcomes = analyze(runs.clone(), &settings).unwrap();
        assert_eq!(outcomes.len(), 1);
        let o = &outcomes[0];
        assert!(o.report.frontier_flops.windows(2).all(|w| w[1].loss < w[0].loss));
        assert!(o.report.sum_law.is_some(), "{:?}", o.notes);
        let out = dir.join("report");
        write_report(&outcomes, &settings, 2, &out).unwrap();
        let first = std::fs::read(out.join("report.json")).unwrap();
        write_report(&analyze(runs, &settings).unwrap(), &settings, 2, &out).unwrap();
        assert_eq!(first, std::fs::read(out.join("report.json")).unwrap());
        assert!(out.join("frontier_flops.svg").exists());
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn empty_logs_are_no_data() {
        assert!(matches!(
            analyze(
                vec![],
                &ReportSettings {
                    fix_l_inf: Some(0.0),
                    sum: SumSettings::default(),
                    bootstrap: BootstrapSettings { n_boot: 0, level: 0.95, seed: 0 },
                    kappa: None,
                    budgets_pflops: vec![],
                }
            ),
            Err(Error::NoData(_))
        ));
    }

    #[test]
    fn stamp_round_trips() {
        let s = Stamped::new("x", 4, GenDataSettings::new(10, 4, 0.5), 7u32).unwrap();
        let p = tmp("stamp");
        std::fs::create_dir_all(&p).unwrap();
        s.write(&p.join("s.json")).unwrap();
        assert_eq!(Stamped::<GenDataSettings, u32>::read(&p.join("s.json")).unwrap(), s);
        let _ = std::fs::remove_dir_all(&p);
    }
}
