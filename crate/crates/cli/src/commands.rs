use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::info;
use serde::Serialize;

use contract_core::analysis::{
    exceedance, solve_seeds, sweep, transfer_curve, utility_table, write_transfer_csv, MultiSeed,
    MIN_EXCEEDANCE_SAMPLES,
};
use contract_core::best_response::EffortSolver;
use contract_core::calibration::{
    calibrate, fit_linear_model, synthetic_satellite_series, CalibrationResult, HistoricalSeries, LinearFit,
};
use contract_core::model::{ProblemSpec, ValueKind, ValueSpec};
use contract_core::optimizer::{
    verify_solution, AnnealerConfig, ConstraintReport, ContractObjective, ContractOptimizer, SolveResult,
    VerifyTolerances,
};
use contract_core::quadrature::{gauss_hermite_1d, sparse_grid, QuadratureRule};
use contract_core::registry::Registry;

use crate::bundled;
use crate::document::{load_document, parse_document, render_problem, Document, SeriesSource};
use crate::error::{CliError, Result};
use crate::manifest::{sha256_hex, Manifest, OutputDir};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Calibrate,
    Sweep,
    Exceedance,
    ReproducePaper,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Calibrate => "calibrate",
            Command::Sweep => "sweep",
            Command::Exceedance => "exceedance",
            Command::ReproducePaper => "reproduce-paper",
        }
    }
}

/// Command-line values that take precedence over the document.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub particles: Option<usize>,
    pub gamma_start: Option<f64>,
    pub gamma_end: Option<f64>,
    pub samples: Option<usize>,
    pub seeds: Option<usize>,
    pub optimizer: Option<String>,
    pub effort_solver: Option<String>,
}

impl Overrides {
    fn apply(&self, doc: &mut Document) -> Result<()> {
        let a = &mut doc.annealer;
        if let Some(v) = self.seed {
            a.seed = v;
        }
        if let Some(v) = self.particles {
            a.particle_count = v;
        }
        if let Some(v) = self.gamma_start {
            a.gamma_start = v;
        }
        if let Some(v) = self.gamma_end {
            a.gamma_end = v;
        }
        if let Some(v) = self.samples {
            doc.exceedance_samples = v;
        }
        if let Some(v) = self.seeds {
            if v == 0 {
                return Err(CliError::Usage("--seeds must be at least 1".into()));
            }
            doc.solver.seeds = v;
        }
        if let Some(v) = &self.optimizer {
            doc.solver.optimizer = v.clone();
        }
        if let Some(v) = &self.effort_solver {
            doc.solver.effort_solver = v.clone();
        }
        doc.annealer
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub overrides: Overrides,
}

#[derive(Debug)]
pub struct Outcome {
    pub audits_passed: bool,
    pub manifest: Manifest,
}

pub fn run(inv: &Invocation) -> Result<Outcome> {
    let start = Instant::now();
    let mut doc = match (&inv.config, inv.command) {
        (Some(path), _) => load_document(path)?,
        (None, Command::ReproducePaper) => parse_document("", Path::new("<defaults>"))?,
        (None, cmd) => {
            return Err(CliError::Usage(format!("`{}` needs --config PATH", cmd.name())));
        }
    };
    inv.overrides.apply(&mut doc)?;
    if inv.command == Command::Exceedance && doc.exceedance_samples < MIN_EXCEEDANCE_SAMPLES {
        return Err(CliError::Usage(format!(
            "exceedance needs at least {MIN_EXCEEDANCE_SAMPLES} samples, got {}",
            doc.exceedance_samples
        )));
    }
    let config_sha256 = sha256_hex(&serde_json::to_vec(&(inv.command.name(), &doc))?);
    let ctx = Context::new(&doc)?;
    let mut out = OutputDir::create(&inv.out)?;
    let path = inv.config.as_deref().unwrap_or(Path::new("<defaults>"));
    let audits_passed = match inv.command {
        Command::Solve => cmd_solve(&ctx, &doc, path, &mut out)?,
        Command::Calibrate => cmd_calibrate(&doc, path, &mut out)?,
        Command::Sweep => cmd_sweep(&ctx, &doc, path, &mut out)?,
        Command::Exceedance => cmd_exceedance(&ctx, &doc, path, &mut out)?,
        Command::ReproducePaper => cmd_reproduce(&ctx, &doc, &mut out)?,
    };
    let manifest = out.finish(
        inv.command.name(),
        inv.config.as_deref(),
        config_sha256,
        doc.annealer.seed,
        start.elapsed().as_secs_f64(),
        audits_passed,
    )?;
    Ok(Outcome {
        audits_passed,
        manifest,
    })
}

/// Strategies and settings shared by every solve of one invocation.
pub struct Context {
    optimizer: Arc<dyn ContractOptimizer>,
    effort: Arc<dyn EffortSolver>,
    annealer: AnnealerConfig,
    seeds: Vec<u64>,
    quadrature_points: usize,
    sparse_level: usize,
}

impl Context {
    pub fn new(doc: &Document) -> Result<Self> {
        let registry = Registry::default();
        let seeds = (0..doc.solver.seeds as u64)
            .map(|j| doc.annealer.seed.wrapping_add(j))
            .collect();
        Ok(Self {
            optimizer: registry.optimizer(&doc.solver.optimizer)?,
            effort: registry.effort_solver(&doc.solver.effort_solver)?,
            annealer: doc.annealer.clone(),
            seeds,
            quadrature_points: doc.solver.quadrature_points,
            sparse_level: doc.solver.sparse_level,
        })
    }

    fn with_seeds(&self, n: usize) -> Self {
        Self {
            optimizer: self.optimizer.clone(),
            effort: self.effort.clone(),
            annealer: self.annealer.clone(),
            seeds: (0..n as u64).map(|j| self.annealer.seed.wrapping_add(j)).collect(),
            quadrature_points: self.quadrature_points,
            sparse_level: self.sparse_level,
        }
    }

    /// Gauss–Hermite for one agent, a sparse grid otherwise.
    pub fn rule(&self, problem: &ProblemSpec) -> contract_core::Result<QuadratureRule> {
        match problem.agent_count() {
            1 => gauss_hermite_1d(self.quadrature_points),
            n => sparse_grid(n, self.sparse_level),
        }
    }

    pub fn objective(&self, problem: &ProblemSpec) -> contract_core::Result<ContractObjective> {
        let rule = self.rule(problem)?;
        ContractObjective::with_solver(problem, &rule, self.effort.clone(), self.annealer.penalty_weight)
    }

    pub fn solve(&self, problem: &ProblemSpec) -> Result<(MultiSeed, ConstraintReport)> {
        let objective = self.objective(problem)?;
        let multi = solve_seeds(&objective, self.optimizer.as_ref(), &self.annealer, &self.seeds)?;
        let report = verify_solution(&multi.best, problem, objective.rule(), &VerifyTolerances::default())?;
        Ok((multi, report))
    }
}

/// Quality range of exported transfer curves.
const CURVE_RANGE: (f64, f64) = (0.0, 2.5);
const CURVE_POINTS: usize = 251;

#[derive(Serialize)]
struct SeedSummary<'a> {
    optimizer: &'a str,
    best_seed: u64,
    seeds: &'a [u64],
    principal_utilities: &'a [f64],
    penalized_objectives: &'a [f64],
    spread: f64,
}

fn write_solution(
    out: &mut OutputDir,
    prefix: &str,
    problem: &ProblemSpec,
    multi: &MultiSeed,
    report: &ConstraintReport,
) -> Result<()> {
    out.write_json(&format!("{prefix}solve_result.json"), &multi.best)?;
    out.write_json(&format!("{prefix}verification.json"), report)?;
    out.write_json(
        &format!("{prefix}seeds.json"),
        &SeedSummary {
            optimizer: &multi.best.optimizer,
            best_seed: multi.best_seed,
            seeds: &multi.seeds,
            principal_utilities: &multi.principal_utilities,
            penalized_objectives: &multi.penalized_objectives,
            spread: multi.spread,
        },
    )?;
    for (i, k, c) in multi.best.contracts.iter() {
        let curve = transfer_curve(c, problem, CURVE_RANGE, CURVE_POINTS);
        out.write_csv(&format!("{prefix}transfer_agent{i}_type{k}.csv"), |w| {
            write_transfer_csv(&curve, w)
        })?;
    }
    Ok(())
}

fn audited(label: &str, result: &SolveResult, report: &ConstraintReport) -> bool {
    if !report.feasible {
        log::warn!(
            "{label}: post-hoc audit failed (worst violation {:.3e})",
            report.worst_violation()
        );
    }
    info!(
        "{label}: E[u0] = {:.4}, contracts {:?}",
        result.principal_expected_utility,
        result
            .contracts
            .iter()
            .map(|(_, _, c)| c.as_array())
            .collect::<Vec<_>>()
    );
    report.feasible
}

fn cmd_solve(ctx: &Context, doc: &Document, path: &Path, out: &mut OutputDir) -> Result<bool> {
    let problem = doc.problem(path)?;
    let (multi, report) = ctx.solve(problem)?;
    write_solution(out, "", problem, &multi, &report)?;
    Ok(audited("solve", &multi.best, &report))
}

fn cmd_exceedance(ctx: &Context, doc: &Document, path: &Path, out: &mut OutputDir) -> Result<bool> {
    let problem = doc.problem(path)?;
    let (multi, report) = ctx.solve(problem)?;
    write_solution(out, "", problem, &multi, &report)?;
    let curve = exceedance(&multi.best, problem, doc.exceedance_samples, doc.annealer.seed)?;
    out.write_csv("exceedance.csv", |w| curve.write_csv(w))?;
    out.write_json("exceedance.json", &curve)?;
    Ok(audited("exceedance", &multi.best, &report))
}

fn cmd_sweep(ctx: &Context, doc: &Document, path: &Path, out: &mut OutputDir) -> Result<bool> {
    let problem = doc.problem(path)?;
    let settings = doc.sweep.as_ref().ok_or_else(|| CliError::Document {
        path: path.to_path_buf(),
        line: None,
        column: None,
        message: "`sweep` needs a [sweep] section with `axis` and `levels`".into(),
    })?;
    let build = |p: &ProblemSpec| ctx.objective(p);
    let result = sweep(
        problem,
        settings.axis,
        &settings.levels,
        &ctx.annealer,
        &build,
        ctx.optimizer.as_ref(),
    )?;
    out.write_csv("sweep.csv", |w| result.write_csv(w))?;
    out.write_json("sweep.json", &result)?;
    let mut ok = true;
    for (level, p) in settings.levels.iter().zip(&result.points) {
        match p {
            Ok(p) => {
                let rule = ctx.rule(problem)?;
                let mut level_problem = problem.clone();
                level_problem
                    .agents
                    .iter_mut()
                    .flat_map(|a| a.types.iter_mut())
                    .for_each(|t| settings.axis.apply(t, *level));
                let report = verify_solution(&p.result, &level_problem, &rule, &VerifyTolerances::default())?;
                ok &= audited(&format!("sweep level {level}"), &p.result, &report);
            }
            Err(e) => {
                log::warn!("sweep level {level} failed: {e}");
                ok = false;
            }
        }
    }
    Ok(ok)
}

#[derive(Serialize)]
struct CalibrationOutput<'a> {
    series_source: String,
    record_count: usize,
    fit: &'a LinearFit,
    result: &'a CalibrationResult,
}

fn load_series(source: &SeriesSource) -> Result<HistoricalSeries> {
    match source {
        SeriesSource::Synthetic => Ok(synthetic_satellite_series()),
        SeriesSource::File(p) => {
            let file = std::fs::File::open(p).map_err(|e| CliError::io(p, e))?;
            Ok(HistoricalSeries::from_csv(file)?)
        }
    }
}

fn run_calibration(doc: &Document, path: &Path) -> Result<(HistoricalSeries, LinearFit, CalibrationResult)> {
    let settings = doc.calibration.as_ref().ok_or_else(|| CliError::Document {
        path: path.to_path_buf(),
        line: None,
        column: None,
        message: "`calibrate` needs a [calibration] section".into(),
    })?;
    let series = load_series(&settings.series)?;
    let last = series.last();
    let inputs = settings.inputs((last.investment, last.performance));
    let result = calibrate(&series, &inputs, settings.sigma_convention)?;
    let fit = fit_linear_model(
        &series,
        Some((inputs.state_of_art_investment, inputs.state_of_art_performance)),
    )?;
    Ok((series, fit, result))
}

fn write_calibration(
    out: &mut OutputDir,
    prefix: &str,
    doc: &Document,
    series: &HistoricalSeries,
    fit: &LinearFit,
    result: &CalibrationResult,
) -> Result<()> {
    let settings = doc.calibration.as_ref().expect("checked by run_calibration");
    out.write_json(
        &format!("{prefix}calibration.json"),
        &CalibrationOutput {
            series_source: match &settings.series {
                SeriesSource::Synthetic => "synthetic".into(),
                SeriesSource::File(p) => p.display().to_string(),
            },
            record_count: series.len(),
            fit,
            result,
        },
    )?;
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let io = |e: csv::Error| CliError::Usage(format!("writing fit: {e}"));
        w.write_record(["year", "investment", "performance", "fitted", "band_low", "band_high"])
            .map_err(io)?;
        for r in series.records() {
            let (lo, hi) = fit.prediction_band(r.investment, 1.96);
            w.write_record([
                r.year.map(|y| y.to_string()).unwrap_or_default(),
                r.investment.to_string(),
                r.performance.to_string(),
                fit.predict(r.investment).to_string(),
                lo.to_string(),
                hi.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| CliError::io("fit.csv", e))?;
    }
    out.write(&format!("{prefix}fit.csv"), &buf)?;
    let value = match settings.value {
        ValueKind::Rb => ValueSpec::rb(),
        ValueKind::Rpi => ValueSpec::rpi(),
    };
    let name = doc.name.clone().unwrap_or_else(|| "calibrated".into());
    out.write(
        &format!("{prefix}problem.toml"),
        render_problem(&name, &result.to_problem(value)).as_bytes(),
    )?;
    Ok(())
}

fn cmd_calibrate(doc: &Document, path: &Path, out: &mut OutputDir) -> Result<bool> {
    let (series, fit, result) = run_calibration(doc, path)?;
    info!(
        "calibrated: A = {:.6}, Sigma = {:.6} ({:?}) -> kappa = {:.4}, sigma = {:.4}, c = {:.4}",
        result.a_hat, result.sigma_hat, result.sigma_convention, result.kappa, result.sigma, result.cost_coeff
    );
    write_calibration(out, "", doc, &series, &fit, &result)?;
    Ok(true)
}

const REPRODUCTION_SEEDS: usize = 5;

#[derive(Serialize)]
struct TableSummary {
    name: String,
    cost: f64,
    value_kind: ValueKind,
    kappas: [f64; 2],
    sigmas: [f64; 2],
    utilities: [[f64; 2]; 2],
    spreads: [[f64; 2]; 2],
}

#[derive(Serialize)]
struct CaseSummary {
    name: String,
    principal_utility: f64,
    agent_utilities: Vec<Vec<f64>>,
    contracts: Vec<[f64; 4]>,
    spread: f64,
    feasible: bool,
}

#[derive(Serialize)]
struct CalibrationRow {
    name: String,
    kappa: f64,
    sigma: f64,
    cost_coeff: f64,
}

#[derive(Serialize)]
struct Reproduction {
    seeds: Vec<u64>,
    tables: Vec<TableSummary>,
    cases: Vec<CaseSummary>,
    calibration: Vec<CalibrationRow>,
}

fn cmd_reproduce(ctx: &Context, doc: &Document, out: &mut OutputDir) -> Result<bool> {
    let ctx = if doc.solver.seeds == 1 {
        ctx.with_seeds(REPRODUCTION_SEEDS)
    } else {
        ctx.with_seeds(doc.solver.seeds)
    };
    let mut ok = true;
    let mut summary = Reproduction {
        seeds: ctx.seeds.clone(),
        tables: Vec::new(),
        cases: Vec::new(),
        calibration: Vec::new(),
    };
    let build = |p: &ProblemSpec| ctx.objective(p);

    // single known type, 2x2 complexity x uncertainty grids
    for (name, cost, kind) in [
        ("mh_rb_low_cost", 0.1, ValueKind::Rb),
        ("mh_rb_high_cost", 0.4, ValueKind::Rb),
        ("mh_rpi_low_cost", 0.1, ValueKind::Rpi),
        ("mh_rpi_high_cost", 0.4, ValueKind::Rpi),
    ] {
        info!("{name}: solving 4 cells x {} seeds", ctx.seeds.len());
        let table = utility_table(cost, kind, &ctx.annealer, &ctx.seeds, &build, ctx.optimizer.as_ref())?;
        out.write_csv(&format!("{name}.csv"), |w| table.write_csv(w))?;
        let mut spreads = [[0.0; 2]; 2];
        for (r, &kappa) in table.kappas.iter().enumerate() {
            for (c, &sigma) in table.sigmas.iter().enumerate() {
                let cell = table.cell(r, c);
                spreads[r][c] = cell.spread;
                let problem = contract_core::analysis::table_problem(kappa, sigma, cost, kind);
                let rule = ctx.rule(&problem)?;
                let report = verify_solution(&cell.best, &problem, &rule, &VerifyTolerances::default())?;
                let prefix = format!("{name}_k{kappa}_s{sigma}_");
                ok &= audited(&prefix, &cell.best, &report);
                write_solution(out, &prefix, &problem, cell, &report)?;
                let curve = exceedance(&cell.best, &problem, doc.exceedance_samples, doc.annealer.seed)?;
                out.write_csv(&format!("{prefix}exceedance.csv"), |w| curve.write_csv(w))?;
            }
        }
        summary.tables.push(TableSummary {
            name: name.into(),
            cost,
            value_kind: kind,
            kappas: table.kappas,
            sigmas: table.sigmas,
            utilities: table.utilities,
            spreads,
        });
    }

    // one agent of unknown type, and the calibrated satellite rows
    for (name, text) in bundled::REPRODUCTION_CASES {
        let case = parse_document(text, Path::new(name))?;
        let problem = case.problem(Path::new(name))?;
        info!("{name}: solving with {} seeds", ctx.seeds.len());
        let (multi, report) = ctx.solve(problem)?;
        let prefix = format!("{}_", name.trim_end_matches(".toml"));
        ok &= audited(&prefix, &multi.best, &report);
        write_solution(out, &prefix, problem, &multi, &report)?;
        let curve = exceedance(&multi.best, problem, doc.exceedance_samples, doc.annealer.seed)?;
        out.write_csv(&format!("{prefix}exceedance.csv"), |w| curve.write_csv(w))?;
        summary.cases.push(CaseSummary {
            name: prefix.trim_end_matches('_').into(),
            principal_utility: multi.best.principal_expected_utility,
            agent_utilities: multi.best.agent_expected_utilities.clone(),
            contracts: multi.best.contracts.iter().map(|(_, _, c)| c.as_array()).collect(),
            spread: multi.spread,
            feasible: report.feasible,
        });
    }

    for (name, text) in bundled::CALIBRATIONS {
        let cal = parse_document(text, Path::new(name))?;
        let (series, fit, result) = run_calibration(&cal, Path::new(name))?;
        let prefix = format!("{}_", name.trim_end_matches(".toml"));
        write_calibration(out, &prefix, &cal, &series, &fit, &result)?;
        summary.calibration.push(CalibrationRow {
            name: prefix.trim_end_matches('_').into(),
            kappa: result.kappa,
            sigma: result.sigma,
            cost_coeff: result.cost_coeff,
        });
    }
    out.write_json("summary.json", &summary)?;
    Ok(ok)
}
