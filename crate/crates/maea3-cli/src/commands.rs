//! The four subcommands.  Each returns an [`Outcome`] (exit code plus the
//! text to print) so that tests can drive them without a subprocess.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rkfusion::diagnostics::{self, Convergence, Operator};
use rkfusion::fusion::spectral_check;
use rkfusion::io::{self, ModelFile};
use rkfusion::maea3::{self, IterationTrace, Model, Validity};
use rkfusion::spaces::RkhsFunction;

use crate::config::{ConfigError, ExperimentConfig};
use crate::datagen::Generator;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NEGATIVE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;
/// A module failed mid-run (singular system, I/O, ...).
pub const EXIT_FAILURE: i32 = 4;

pub const DEFAULT_HORIZON: usize = 400;
pub const DEFAULT_DECADES: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Module(#[from] rkfusion::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Module(rkfusion::Error::HorizonTooShort(_)) => EXIT_USAGE,
            CliError::Module(_) | CliError::Io(_) => EXIT_FAILURE,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub text: String,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
}

impl Common {
    pub fn context(&self) -> CliResult<Context> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        let out = self.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
        Ok(Context { cfg, out })
    }
}

impl Context {
    pub fn generator(&self) -> CliResult<Generator> {
        Ok(Generator::new(self.cfg.data.clone(), self.cfg.domain()?, self.cfg.seed))
    }

    fn out_dir(&self) -> CliResult<&Path> {
        fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn write_pair(dir: &Path, model: &Model, pair: &[RkhsFunction; 2], stem: &str) -> CliResult<()> {
    for i in 0..2 {
        let file = ModelFile::agent(model.agent(i + 1), &pair[i])?.with_label(format!("{stem} agent {}", i + 1));
        file.write(&dir.join(format!("{stem}agent{}.toml", i + 1)))?;
    }
    Ok(())
}

pub fn run(common: &Common) -> CliResult<Outcome> {
    let ctx = common.context()?;
    let model = ctx.cfg.build_model()?;
    let algo = ctx.cfg.algorithm();
    let mut source = ctx.generator()?;
    let trace = maea3::run(&model, &algo, &mut source, model.zero_pair())?;
    let out = ctx.out_dir()?;

    io::write_trace_csv(&out.join("trace.csv"), &trace)?;
    let last_down = trace.downloads().last().map(|p| (*p).clone()).unwrap_or_else(|| trace.f0.clone());
    write_pair(out, &model, &last_down, "")?;
    let fused = trace.records.last().map(|r| r.fused.clone()).unwrap_or_else(|| RkhsFunction::zero(&model.fusion));
    ModelFile::fused(&model.fusion, &fused)?.with_label("fused").write(&out.join("fused.toml"))?;

    if trace.snapshot_stride > 0 {
        let dir = out.join("snapshots");
        fs::create_dir_all(&dir)?;
        for r in trace.snapshots() {
            write_pair(&dir, &model, &r.down, &format!("n{:06}_", r.n))?;
        }
    }

    let mut text = summary(&trace);
    if algo.bound_check {
        let report = maea3::bound_check(&model, &trace, ctx.cfg.diagnose.bound_tolerance)?;
        let failed = report.passed.iter().filter(|p| !**p).count();
        writeln!(text, "bound_check: {} ({failed} of {} iterations fail)", pass(report.all_passed()), report.passed.len()).unwrap();
    }
    fs::write(out.join("summary.txt"), &text)?;
    Ok(Outcome { code: EXIT_OK, text })
}

fn summary(trace: &IterationTrace) -> String {
    let mut s = String::new();
    writeln!(s, "stop_reason: {}", trace.stop).unwrap();
    writeln!(s, "iterations: {}", trace.records.len()).unwrap();
    let metric = trace.final_stop_metric().map(io::fmt_f64).unwrap_or_else(|| "none".into());
    writeln!(s, "final_stop_metric: {metric}").unwrap();
    s
}

pub fn validate(common: &Common, horizon: usize) -> CliResult<Outcome> {
    let ctx = common.context()?;
    let model = ctx.cfg.build_model()?;
    if horizon < 10 {
        return Err(rkfusion::Error::HorizonTooShort(horizon).into());
    }
    let data = ctx.generator()?.prefix(horizon)?;
    let report = maea3::validate_sequence([model.agent(1), model.agent(2)], &model.zero_pair(), &data, horizon)?;

    let mut text = String::new();
    writeln!(text, "horizon: {horizon}").unwrap();
    writeln!(text, "denominator: {}", io::fmt_f64(report.denominator)).unwrap();
    writeln!(text, "partial_sum: {}", io::fmt_f64(*report.partial_sums.last().unwrap_or(&0.0))).unwrap();
    writeln!(text, "tail_ratio: {}", io::fmt_f64(report.tail_ratio)).unwrap();
    let c = report.c_estimate.map(io::fmt_f64).unwrap_or_else(|| "none".into());
    writeln!(text, "c_estimate: {c}").unwrap();
    writeln!(text, "verdict: {}", report.verdict).unwrap();

    let out = ctx.out_dir()?;
    let mut csv = String::from("n,term,partial_sum\n");
    for (k, (t, s)) in report.terms.iter().zip(&report.partial_sums).enumerate() {
        writeln!(csv, "{},{},{}", k + 2, io::fmt_f64(*t), io::fmt_f64(*s)).unwrap();
    }
    fs::write(out.join("validate.csv"), csv)?;

    let code = match report.verdict {
        Validity::ValidBounded => EXIT_OK,
        Validity::Diverging => EXIT_NEGATIVE,
        Validity::Inconclusive => EXIT_INCONCLUSIVE,
    };
    Ok(Outcome { code, text })
}

/// Relative slack on the final sweep value.
pub const SWEEP_TOLERANCE: f64 = 0.05;

pub fn norm_sweep(common: &Common, operator: &str, decades: usize) -> CliResult<Outcome> {
    let op: Operator = operator.parse().map_err(|e: rkfusion::Error| CliError::Usage(e.to_string()))?;
    let ctx = common.context()?;
    let model = ctx.cfg.build_model()?;
    let grid = diagnostics::rho_grid(decades);
    let sweep = diagnostics::norm_sweep(&model, op, &grid, &ctx.cfg.sampling())?;
    let out = ctx.out_dir()?;
    diagnostics::write_sweep_csv(&out.join(format!("sweep_{op}.csv")), &sweep)?;
    diagnostics::write_sweep_plot(&out.join(format!("sweep_{op}.dat")), &sweep)?;

    let mut text = String::new();
    for (rho, e) in sweep.rho_values.iter().zip(&sweep.norm_estimates) {
        writeln!(text, "rho {rho:>8.1e}  estimate {:.10}", e.value).unwrap();
    }
    if let Some(v) = sweep.chain_violations {
        writeln!(text, "chain_violations: {v}").unwrap();
    }
    let ok = sweep.passes(SWEEP_TOLERANCE);
    writeln!(text, "{op}: final {:.10} target {} gap {:.3e}: {}", sweep.last(), sweep.target, sweep.limit_gap, pass(ok)).unwrap();
    Ok(Outcome { code: if ok { EXIT_OK } else { EXIT_NEGATIVE }, text })
}

/// Largest sup deviation tolerated at the end of the grid.
pub const UNIFORM_TOLERANCE: f64 = 1e-3;
pub const SCHUR_TOLERANCE: f64 = 1e-8;

pub fn diagnose(common: &Common) -> CliResult<Outcome> {
    let ctx = common.context()?;
    let d = &ctx.cfg.diagnose;
    let model = ctx.cfg.build_model()?;
    let seed = ctx.cfg.seed;
    let mut text = String::new();
    let mut all = true;
    let mut section = |text: &mut String, name: &str, ok: bool| {
        all &= ok;
        writeln!(text, "[{name}] {}", pass(ok)).unwrap();
    };

    let spectral = spectral_check(&model.fusion)?;
    let spectral_ok = spectral.inequality_holds && spectral.schur_residual <= SCHUR_TOLERANCE;
    section(&mut text, "spectral", spectral_ok);
    text.push_str(&diagnostics::spectral_report_text(&spectral)?);
    if let Some(s) = spectral.required_scale {
        writeln!(text, "required kernel_scale: {}", io::fmt_f64(s)).unwrap();
    }

    let pert = diagnostics::inverse_perturbation_test(d.perturbation_trials, d.perturbation_dim, seed)?;
    section(&mut text, "perturbation", pert.violations == 0);
    writeln!(text, "trials = {}\ndimension = {}\nviolations = {}\nworst_ratio = {:.6e}", pert.trials, pert.dimension, pert.violations, pert.worst_ratio).unwrap();

    let grid = diagnostics::rho_grid(d.decades);
    let phi1 = diagnostics::uniform_convergence_test(&model, Convergence::Phi1, &grid, d.uniform_samples, seed)?;
    let phi21 = diagnostics::uniform_convergence_test(&model, Convergence::Phi2Phi1, &grid, d.uniform_samples, seed)?;
    let sup_end = *phi21.sup_deviation.last().unwrap_or(&f64::INFINITY);
    section(&mut text, "uniform", phi1.pointwise_violations == 0 && sup_end <= UNIFORM_TOLERANCE);
    writeln!(text, "pointwise_violations = {}\nsup_deviation_final = {sup_end:.6e}", phi1.pointwise_violations).unwrap();

    let mut algo = ctx.cfg.algorithm();
    algo.bound_check = true;
    algo.max_iterations = algo.max_iterations.min(d.run_iterations);
    algo.snapshot_stride = 0;
    let trace = maea3::run(&model, &algo, &mut ctx.generator()?, model.zero_pair())?;
    let bound = maea3::bound_check(&model, &trace, d.bound_tolerance)?;
    section(&mut text, "bound", bound.all_passed());
    let failed = bound.passed.iter().filter(|p| !**p).count();
    writeln!(text, "iterations = {}\nfailed_iterations = {failed}\nc_m1 = {:.6e}\nc_m2 = {:.6e}", bound.passed.len(), bound.c_m1, bound.c_m2).unwrap();

    let out = ctx.out_dir()?;
    fs::write(out.join("diagnose.txt"), &text)?;
    diagnostics::write_operator_dump(&out.join("operators"), &model)?;
    Ok(Outcome { code: if all { EXIT_OK } else { EXIT_NEGATIVE }, text })
}
