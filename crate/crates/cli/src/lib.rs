//! Subcommands of the `hcma` binary.
//!
//! Exit codes: 0 success, 2 configuration or I/O error, 3 solver failure,
//! 4 at least one check failed.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hcma::io::{ExperimentConfig, IoError, Snapshot, TraceConfig};
use hcma::leaf::{check_qb_along_leaf, qb_along_leaf, trace_leaf, LeafField, LeafPath};
use hcma::solver::{continuation_solve, lambda_sweep, residual, Solution, SolverError};
use hcma::tolerances::Tolerances;
use hcma::verifier::{
    check_eps_monotone_limit, check_lambda_monotonicity, check_lower_bound_stability, check_lq_stability,
    check_metric_lower_bound, describe_profile, jet_map_export, lq_ratio_report, report_meta, run_checks,
    CheckRecord, CheckStatus, Context, JetMap, ReportMeta, VerificationReport,
};
use num_complex::Complex64;
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "hcma", version, about = "Regularized complex Monge-Ampere solver and verifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve along the configured schedule and write snapshots plus a summary.
    Solve(Common),
    /// Run checks on a snapshot.
    Verify(Common),
    /// Solve the schedule and the lambda ladder, checking every rung.
    Sweep(Common),
    /// Trace leaves through a snapshot.
    Trace(Common),
    /// Export the jet map and region boundaries as CSV.
    Plotdata(Common),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated check names.
    #[arg(long, value_delimiter = ',')]
    pub checks: Option<Vec<String>>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(String),
    Check(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Solver(_) => EXIT_SOLVER,
            Self::Check(_) => EXIT_CHECK,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(m) => write!(f, "error: {m}"),
            Self::Solver(m) => write!(f, "solver failure: {m}"),
            Self::Check(names) => write!(f, "checks failed: {}", names.join(", ")),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        Self::Config(e.to_string())
    }
}

fn cfg_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(c) => cmd_solve(&c),
        Command::Verify(c) => cmd_verify(&c),
        Command::Sweep(c) => cmd_sweep(&c),
        Command::Trace(c) => cmd_trace(&c),
        Command::Plotdata(c) => cmd_plotdata(&c),
    }
}

/// Parses `args` (including the program name), runs, prints errors, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig, CliError> {
    let path = c.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(c: &Common, fallback: &Path) -> Result<PathBuf, CliError> {
    let dir = c.out.clone().unwrap_or_else(|| fallback.to_path_buf());
    fs::create_dir_all(&dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(cfg_err)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn solver_error(e: SolverError, dir: &Path) -> CliError {
    if let SolverError::BadSchedule | SolverError::BadSweep | SolverError::Boundary(_) | SolverError::Grid(_) = e {
        return CliError::Config(e.to_string());
    }
    if let Some(last) = e.last_iterate() {
        let diag = DiagnosticDump { error: e.to_string(), max_abs_phi: last.values.iter().fold(0.0, |m, v| m.max(v.abs())) };
        let _ = write_json(&dir.join("failure.json"), &diag);
        let _ = fs::write(dir.join("last_iterate.csv"), phi_csv(last));
    } else {
        let _ = write_json(&dir.join("failure.json"), &DiagnosticDump { error: e.to_string(), max_abs_phi: f64::NAN });
    }
    CliError::Solver(e.to_string())
}

#[derive(Serialize)]
struct DiagnosticDump {
    error: String,
    max_abs_phi: f64,
}

fn phi_csv(phi: &hcma::grid::ScalarField) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let g = phi.grid;
    w.write_record(["it", "ix", "iy", "phi"]).expect("in-memory write");
    for n in g.nodes() {
        let v = phi.values[g.node_index(n)];
        w.serialize((n.it, n.ix, n.iy, v)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

/// Per-solution numbers written by `solve`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSummary {
    pub profile: String,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
    pub min_one_plus_a: f64,
    pub max_q: f64,
    pub snapshot: String,
}

fn summarize(sol: &Solution, snapshot: &str) -> SolveSummary {
    let ctx = Context::new(sol);
    let g = *sol.grid();
    let interior: Vec<usize> = g.interior_nodes().map(|n| g.node_index(n)).collect();
    let min_r = interior.iter().map(|&i| 1.0 + ctx.fields.a[i]).fold(f64::INFINITY, f64::min);
    let max_q = ctx.fields.q.iter().cloned().fold(0.0, f64::max);
    SolveSummary {
        profile: describe_profile(&sol.profile),
        converged: sol.converged,
        iterations: sol.iterations,
        final_residual: sol.final_residual,
        min_one_plus_a: min_r,
        max_q,
        snapshot: snapshot.to_string(),
    }
}

fn save_rung(dir: &Path, name: &str, cfg: &ExperimentConfig, sol: &Solution) -> Result<(), CliError> {
    Snapshot { config_toml: cfg.to_toml(), solution: sol.clone() }.save(&dir.join(name))?;
    Ok(())
}

pub fn cmd_solve(c: &Common) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    let dir = out_dir(c, &cfg.output_dir)?;
    let grid = cfg.grid_spec()?;
    let boundary = cfg.boundary_spec()?;
    let sols = continuation_solve(grid, &boundary, cfg.profile.kind, &cfg.profile.schedule, &cfg.solver)
        .map_err(|e| solver_error(e, &dir))?;
    let mut summary = Vec::new();
    for (k, sol) in sols.iter().enumerate() {
        let name = format!("rung_{k}.snap");
        save_rung(&dir, &name, &cfg, sol)?;
        summary.push(summarize(sol, &name));
    }
    let last = sols.last().expect("non-empty schedule");
    save_rung(&dir, "solution.snap", &cfg, last)?;
    write_json(&dir.join("summary.json"), &summary)?;
    let s = summary.last().expect("non-empty");
    println!(
        "solved {} rung(s): residual {:.3e}, {} iterations, min(1+a) {:.6}, max Q {:.6e}",
        sols.len(),
        s.final_residual,
        s.iterations,
        s.min_one_plus_a,
        s.max_q
    );
    Ok(())
}

fn load_snapshot(c: &Common) -> Result<(Snapshot, PathBuf), CliError> {
    let path = c.snapshot.as_ref().ok_or_else(|| CliError::Config("--snapshot is required".into()))?;
    Ok((Snapshot::load(path)?, path.parent().map(Path::to_path_buf).unwrap_or_default()))
}

/// Config given by `--config`, else the echo stored in the snapshot, with `--seed` applied.
fn config_for(c: &Common, snap: &Snapshot) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::parse(&snap.config_toml)
            .map_err(|e| CliError::Config(format!("snapshot config echo: {e}")))?,
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_records(records: &[CheckRecord]) {
    for r in records {
        let tag = match r.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Vacuous => "VACUOUS",
            CheckStatus::OutOfHypothesis => "OUT-OF-HYPOTHESIS",
        };
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6e}"));
        println!(
            "{tag:<18} {:<30} measured={} bound={} tol={}",
            r.name,
            fmt(r.measured),
            fmt(r.bound),
            fmt(r.tolerance)
        );
    }
}

fn write_fields_csv(path: &Path, sol: &Solution, ctx: &Context) -> Result<(), CliError> {
    let g = *sol.grid();
    let res = residual(&sol.phi, &sol.profile);
    let mut w = csv_writer(path)?;
    w.write_record(["it", "ix", "iy", "t", "x", "y", "a", "abs_b", "q", "residual"]).map_err(cfg_err)?;
    for n in g.nodes() {
        let i = g.node_index(n);
        let f = &ctx.fields;
        w.serialize((n.it, n.ix, n.iy, g.t(n.it), g.x(n.ix), g.y(n.iy), f.a[i], f.b[i].norm(), f.q[i], res.values[i]))
            .map_err(cfg_err)?;
    }
    w.flush().map_err(cfg_err)
}

pub fn cmd_verify(c: &Common) -> Result<(), CliError> {
    let (snap, snap_dir) = load_snapshot(c)?;
    let cfg = config_for(c, &snap)?;
    let dir = out_dir(c, &snap_dir)?;
    let names = c.checks.clone().unwrap_or_else(|| cfg.checks.enabled.clone());
    let sol = &snap.solution;
    let ctx = Context::new(sol);
    let checks = run_checks(&ctx, &names, cfg.checks.d_r).map_err(|n| CliError::Config(format!("unknown check '{n}'")))?;
    write_fields_csv(&dir.join("fields.csv"), sol, &ctx)?;
    let report = VerificationReport { meta: report_meta(sol, cfg.seed, cfg.checks.d_r), checks };
    write_json(&dir.join("report.json"), &report)?;
    print_records(&report.checks);
    finish(&report.checks)
}

fn finish(records: &[CheckRecord]) -> Result<(), CliError> {
    let failed: Vec<String> = records.iter().filter(|r| !r.pass).map(|r| r.name.clone()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RungReport {
    pub label: String,
    pub snapshot: String,
    pub checks: Vec<CheckRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub meta: ReportMeta,
    pub rungs: Vec<RungReport>,
    pub checks: Vec<CheckRecord>,
}

pub fn cmd_sweep(c: &Common) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    let dir = out_dir(c, &cfg.output_dir)?;
    let grid = cfg.grid_spec()?;
    let boundary = cfg.boundary_spec()?;
    let names = c.checks.clone().unwrap_or_else(|| cfg.checks.enabled.clone());
    let tol = Tolerances::default();

    let eps_sols = continuation_solve(grid, &boundary, cfg.profile.kind, &cfg.profile.schedule, &cfg.solver)
        .map_err(|e| solver_error(e, &dir))?;
    let lambda_sols = if cfg.lambda.ladder.is_empty() {
        Vec::new()
    } else {
        let profile = cfg.final_profile()?;
        lambda_sweep(grid, &boundary, &profile, &cfg.lambda.ladder, &cfg.solver).map_err(|e| solver_error(e, &dir))?
    };

    let mut rungs = Vec::new();
    let mut lower = Vec::new();
    let mut lq = Vec::new();
    let eps_ctx: Vec<Context> = eps_sols.iter().map(Context::new).collect();
    for (k, (sol, ctx)) in eps_sols.iter().zip(&eps_ctx).enumerate() {
        let name = format!("eps_{k}.snap");
        save_rung(&dir, &name, &cfg, sol)?;
        let checks = run_checks(ctx, &names, cfg.checks.d_r).map_err(|n| CliError::Config(format!("unknown check '{n}'")))?;
        lower.push(check_metric_lower_bound(ctx));
        lq.push(lq_ratio_report(ctx));
        rungs.push(RungReport { label: describe_profile(&sol.profile), snapshot: name, checks });
    }
    let lambda_ctx: Vec<Context> = lambda_sols.iter().map(Context::new).collect();
    for (k, ((sol, ctx), lam)) in lambda_sols.iter().zip(&lambda_ctx).zip(&cfg.lambda.ladder).enumerate() {
        let name = format!("lambda_{k}.snap");
        save_rung(&dir, &name, &cfg, sol)?;
        let checks = run_checks(ctx, &names, cfg.checks.d_r).map_err(|n| CliError::Config(format!("unknown check '{n}'")))?;
        rungs.push(RungReport { label: format!("lambda={lam}"), snapshot: name, checks });
    }

    let eps_refs: Vec<&Solution> = eps_sols.iter().collect();
    let mut sweep_checks = vec![
        check_eps_monotone_limit(&eps_refs, &tol),
        check_lower_bound_stability(&lower, &tol),
        check_lq_stability(&lq, &tol),
    ];
    if !lambda_ctx.is_empty() {
        let refs: Vec<&Context> = lambda_ctx.iter().collect();
        sweep_checks.push(check_lambda_monotonicity(&refs));
    }
    let last = eps_sols.last().expect("non-empty schedule");
    let report = SweepReport { meta: report_meta(last, cfg.seed, cfg.checks.d_r), rungs, checks: sweep_checks };
    write_json(&dir.join("sweep_report.json"), &report)?;
    for r in &report.rungs {
        println!("-- {}", r.label);
        print_records(&r.checks);
    }
    println!("-- sweep");
    print_records(&report.checks);
    let all: Vec<CheckRecord> = report.rungs.iter().flat_map(|r| r.checks.iter().cloned()).chain(report.checks.iter().cloned()).collect();
    finish(&all)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafDiagnostics {
    pub start: [f64; 3],
    pub csv: String,
    pub samples: usize,
    pub aborted: Option<String>,
    pub min_laplacian: Option<f64>,
    pub max_q_b: Option<f64>,
    pub check: CheckRecord,
}

fn validate_starts(trace: &TraceConfig) -> Result<(), CliError> {
    if trace.starts.is_empty() {
        return Err(CliError::Config("trace.starts is empty".into()));
    }
    for s in &trace.starts {
        if s.iter().any(|v| !v.is_finite()) || !(0.0..1.0).contains(&s[0]) {
            return Err(CliError::Config(format!("trace start {s:?} is outside [0, 1) x T")));
        }
    }
    if !(trace.step > 0.0 && trace.step.is_finite()) {
        return Err(CliError::Config(format!("trace.step {} must be positive", trace.step)));
    }
    Ok(())
}

pub fn cmd_trace(c: &Common) -> Result<(), CliError> {
    let (snap, snap_dir) = load_snapshot(c)?;
    let cfg = config_for(c, &snap)?;
    let dir = out_dir(c, &snap_dir)?;
    let sol = &snap.solution;
    let grid = *sol.grid();
    validate_starts(&cfg.trace)?;
    let field = LeafField::new(sol, cfg.trace.interpolation);
    let tol = Tolerances::default();
    let mut diags = Vec::new();
    for (k, s) in cfg.trace.starts.iter().enumerate() {
        let z0 = Complex64::new(s[1], 0.0) + grid.modulus * s[2];
        let path = trace_leaf(&field, s[0], z0, cfg.trace.step).map_err(cfg_err)?;
        let name = format!("leaf_{k}.csv");
        write_leaf_csv(&dir.join(&name), &path)?;
        let qb = qb_along_leaf(&path).ok();
        diags.push(LeafDiagnostics {
            start: *s,
            csv: name,
            samples: path.samples.len(),
            aborted: path.aborted.clone(),
            min_laplacian: qb.as_ref().map(|q| q.min_laplacian).filter(|v| v.is_finite()),
            max_q_b: qb.as_ref().map(|q| q.max_q_b),
            check: check_qb_along_leaf(sol, &path, &tol),
        });
    }
    write_json(&dir.join("leaves.json"), &diags)?;
    let records: Vec<CheckRecord> = diags.iter().map(|d| d.check.clone()).collect();
    for d in &diags {
        println!("{} from {:?}: {} samples", d.csv, d.start, d.samples);
    }
    print_records(&records);
    finish(&records)
}

fn write_leaf_csv(path: &Path, leaf: &LeafPath) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["t", "re_z", "im_z", "q_b"]).map_err(cfg_err)?;
    for s in &leaf.samples {
        w.serialize((s.t, s.z.re, s.z.im, s.q_b)).map_err(cfg_err)?;
    }
    w.flush().map_err(cfg_err)
}

/// Number of `a` levels and of angles used to sample region boundaries.
const PLOT_LEVELS: usize = 21;
const PLOT_ANGLES: usize = 48;

#[derive(Serialize)]
struct PlotMeta {
    profile: String,
    points: usize,
    delta: Option<f64>,
    s: Option<f64>,
    sections: Vec<&'static str>,
    notes: Vec<String>,
}

pub fn cmd_plotdata(c: &Common) -> Result<(), CliError> {
    let (snap, snap_dir) = load_snapshot(c)?;
    let dir = out_dir(c, &snap_dir)?;
    let sol = &snap.solution;
    let ctx = Context::new(sol);
    let jm: JetMap = jet_map_export(&ctx);
    let (lo, hi) = jm.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p[2]), h.max(p[2])));
    let (lo, hi) = if lo.is_finite() { (lo.min(-0.5), hi.max(0.5)) } else { (-0.5, 0.5) };
    let levels: Vec<f64> = (0..PLOT_LEVELS).map(|k| lo + (hi - lo) * k as f64 / (PLOT_LEVELS - 1) as f64).collect();

    let mut sections: Vec<(&'static str, Vec<[f64; 3]>)> = vec![
        ("points", jm.points.clone()),
        ("c0_boundary", JetMap::cone_samples(&levels, 0.0, PLOT_ANGLES)),
    ];
    let mut notes = Vec::new();
    match jm.delta {
        Some(d) => sections.push(("delta_cones_boundary", JetMap::cone_samples(&levels, d, PLOT_ANGLES))),
        None => notes.push("delta_cones_boundary omitted: boundary jets are not inside C_0".to_string()),
    }
    match jm.s {
        Some(s) => sections.push(("upper_boundary", JetMap::upper_samples(&levels, s, PLOT_ANGLES))),
        None => notes.push("upper_boundary omitted: S is undefined".to_string()),
    }

    let path = dir.join("jetmap.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["section", "re_b", "im_b", "a"]).map_err(cfg_err)?;
    for (label, pts) in &sections {
        for p in pts {
            w.serialize((label, p[0], p[1], p[2])).map_err(cfg_err)?;
        }
    }
    w.flush().map_err(cfg_err)?;
    let meta = PlotMeta {
        profile: describe_profile(&sol.profile),
        points: jm.points.len(),
        delta: jm.delta,
        s: jm.s,
        sections: sections.iter().map(|(l, _)| *l).collect(),
        notes,
    };
    for n in &meta.notes {
        println!("note: {n}");
    }
    write_json(&dir.join("jetmap.json"), &meta)?;
    println!("wrote {} ({} points)", path.display(), meta.points);
    Ok(())
}
