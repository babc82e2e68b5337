use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use arwimcf::analysis::{evaluate_claims, Claim};
use arwimcf::background::certify_arw;
use arwimcf::cosmology::{export_scale_factor, friedmann_report, solve_friedmann};
use arwimcf::flow::{resume, run_with, DiagnosticsRecord, FlowConfig, FlowTrajectory, Frame, Termination};
use arwimcf::io::config::Prepared;
use arwimcf::io::{
    emit_plots, read_snapshots, write_diagnostics, RunConfig, RunReport, ScaleFactorSpec, SnapshotHeader,
    SnapshotWriter, TransitionSummary,
};
use arwimcf::transition::{advect_markers, build_transition_series, check_c3_matching, normal_limit_comparison};
use arwimcf::Error;

use crate::{AnalyzeArgs, Common, RunArgs};

pub const EXIT_CHECKS_FAILED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidParams(_) => EXIT_CONFIG,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Format(_) => EXIT_IO,
            _ => EXIT_NUMERICAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

pub fn exit_code(e: &CliError) -> u8 {
    e.code
}

type Outcome = Result<bool, CliError>;

/// Caps the rayon pool at `ARWIMCF_THREADS` when set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("ARWIMCF_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::Config(format!("ARWIMCF_THREADS = '{raw}' is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(())
}

struct Ctx {
    cfg: RunConfig,
    base: PathBuf,
    out: PathBuf,
}

impl Ctx {
    fn load(common: &Common, t_end: Option<f64>, tol: Option<f64>) -> Result<Self, CliError> {
        let mut cfg = RunConfig::load(&common.config)?;
        if let Some(t) = t_end {
            cfg.flow.t_end = t;
        }
        if let Some(t) = tol {
            cfg.flow.rel_tol = t;
        }
        if let Some(out) = &common.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        let base = common
            .config
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let out = cfg.out_dir.clone();
        std::fs::create_dir_all(&out)?;
        std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
        Ok(Self { cfg, base, out })
    }

    fn prepare(&self) -> Result<Prepared, CliError> {
        Ok(self.cfg.prepare(&self.base)?)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// The report already in the output directory if it belongs to this config.
    fn existing_report(&self) -> Result<RunReport, CliError> {
        let fresh = RunReport::new(&self.cfg)?;
        match RunReport::read(&self.path("report.json")) {
            Ok(r) if r.config_hash == fresh.config_hash => Ok(r),
            _ => Ok(fresh),
        }
    }

    fn stored_trajectory(&self, flow: &FlowConfig) -> Result<FlowTrajectory, CliError> {
        let (header, frames) = read_snapshots(&self.path("snapshots.bin"))?;
        header.check(flow)?;
        let termination = FlowTrajectory::infer_termination(flow, &frames);
        Ok(FlowTrajectory::from_frames(flow, frames, termination)?)
    }
}

fn parse_claims(spec: &str) -> Option<Vec<String>> {
    match spec.trim() {
        "all" => None,
        "none" => Some(Vec::new()),
        list => Some(
            list.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
        ),
    }
}

fn print_claims(claims: &[Claim]) {
    for c in claims {
        println!(
            "{:4}  {:24} predicted={:<12.6e} measured={:<12.6e} tol={:.1e}{}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.predicted,
            c.measured,
            c.tolerance,
            if c.note.is_empty() { String::new() } else { format!("  ({})", c.note) }
        );
    }
}

fn timed<T>(report: &mut RunReport, stage: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    report.timing.record(stage, start.elapsed().as_secs_f64());
    out
}

/// A stage short of data is recorded as not evaluated instead of aborting the run.
fn skip_missing<T>(report: &mut RunReport, stage: &str, r: Result<T, Error>) -> Result<Option<T>, CliError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::MissingData(msg)) => {
            println!("FAIL  {stage:24} not evaluated: {msg}");
            report.skipped.push(format!("{stage}: {msg}"));
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

fn background_sections(ctx: &Ctx, prep: &Prepared, report: &mut RunReport) -> Result<(), CliError> {
    let ladder = ctx.cfg.certificate.ladder()?;
    let cert = timed(report, "certificate", || {
        certify_arw(&prep.flow.scale_factor, &ladder, ctx.cfg.certificate.tol)
    })?;
    report.arw_certificate = Some(cert);
    if let Some(sol) = &prep.friedmann {
        report.friedmann = Some(friedmann_report(sol)?);
    }
    Ok(())
}

fn transition_section(ctx: &Ctx, traj: &FlowTrajectory, report: &mut RunReport) -> Result<(), CliError> {
    let seeds = &ctx.cfg.transition.seeds;
    let summary = timed(report, "transition", || -> Result<TransitionSummary, Error> {
        let markers = advect_markers(traj, seeds)?;
        let series = build_transition_series(traj, &markers)?;
        let file = std::fs::File::create(ctx.path("transition.csv"))?;
        series.write_csv(std::io::BufWriter::new(file))?;
        Ok(TransitionSummary {
            seeds: seeds.clone(),
            max_displacement: markers.max_displacement(),
            c3: check_c3_matching(&series, &ctx.cfg.transition.tolerance)?,
            normal_limit: normal_limit_comparison(traj, &markers, &series)?,
        })
    });
    let Some(summary) = skip_missing(report, "transition", summary)? else {
        return Ok(());
    };
    for item in &summary.c3.items {
        println!(
            "{:4}  {:24} {:?}  extrapolated={:.3e} reference={:.3e} spread={:.3e}",
            if item.pass { "PASS" } else { "FAIL" },
            item.name,
            item.expect,
            item.extrapolated,
            item.reference,
            item.spread
        );
    }
    println!(
        "transition: parity exact = {}, C¹ matching = {}, all pass = {}",
        summary.c3.parity_exact, summary.c3.c1_matching, summary.c3.all_pass
    );
    report.transition = Some(summary);
    Ok(())
}

/// Everything downstream of a trajectory: diagnostics CSV, claims, transition, plots.
fn analysis_sections(
    ctx: &Ctx,
    traj: &FlowTrajectory,
    claims: &str,
    report: &mut RunReport,
) -> Result<(), CliError> {
    write_diagnostics(&ctx.path("diagnostics.csv"), &traj.diagnostics)?;
    report.termination = Some(traj.termination.clone());
    if traj.termination.is_error() {
        return Ok(());
    }
    let selection = parse_claims(claims);
    let result = timed(report, "analysis", || {
        evaluate_claims(traj, &ctx.cfg.analysis, selection.as_deref())
    });
    if let Some(result) = skip_missing(report, "claims", result)? {
        print_claims(&result);
        report.claims = result;
    }
    if !ctx.cfg.transition.seeds.is_empty() {
        transition_section(ctx, traj, report)?;
    }
    let written = timed(report, "plots", || {
        emit_plots(&traj.diagnostics, traj.config.params(), &ctx.path("plots"))
    })?;
    log::info!("{} plots written", written.len());
    Ok(())
}

fn finish(ctx: &Ctx, mut report: RunReport) -> Outcome {
    report.finalize();
    report.write(&ctx.path("report.json"))?;
    if let Some(Termination::Error { message, t }) = &report.termination {
        return Err(CliError {
            code: EXIT_NUMERICAL,
            message: format!(
                "numerical failure at t = {t}: {message}; output so far is in {}",
                ctx.out.display()
            ),
        });
    }
    println!(
        "{}: report written to {}",
        if report.all_pass { "all checks pass" } else { "some checks fail" },
        ctx.path("report.json").display()
    );
    Ok(report.all_pass)
}

pub fn background_check(common: &Common, tol: Option<f64>) -> Outcome {
    let mut ctx = Ctx::load(common, None, None)?;
    if let Some(t) = tol {
        ctx.cfg.certificate.tol = t;
    }
    let prep = ctx.prepare()?;
    let mut report = RunReport::new(&ctx.cfg)?;
    background_sections(&ctx, &prep, &mut report)?;
    let cert = report.arw_certificate.as_ref().expect("certificate just computed");
    std::fs::write(
        ctx.path("certificate.json"),
        serde_json::to_string_pretty(cert).map_err(Error::from)? + "\n",
    )?;
    println!(
        "monotone: {}  mass limit: {}  φ limit: {}  ratios: {}  rates: {} {} {}",
        cert.monotone.pass,
        cert.mass_limit.pass,
        cert.phi_limit.pass,
        cert.ratio_bounds.iter().all(|r| r.pass),
        cert.singularity_rate.pass,
        cert.mass_rate.pass,
        cert.time_function_rate.pass
    );
    println!("certificate {}", if cert.all_pass { "passes" } else { "fails" });
    Ok(cert.all_pass)
}

pub fn cosmology_solve(common: &Common) -> Outcome {
    let ctx = Ctx::load(common, None, None)?;
    let ScaleFactorSpec::Friedmann { fluid } = &ctx.cfg.scale_factor else {
        return Err(Error::Config("cosmology solve needs scale_factor.kind = \"friedmann\"".into()).into());
    };
    let sol = solve_friedmann(fluid)?;
    let rep = friedmann_report(&sol)?;
    export_scale_factor(&sol, &ctx.path("scale_factor.json"))?;
    std::fs::write(
        ctx.path("friedmann.json"),
        serde_json::to_string_pretty(&rep).map_err(Error::from)? + "\n",
    )?;
    println!(
        "m = {:.12}  φ-limit = {:.12}  singularity at τ = {:.3e}  max constraint residual = {:.3e}",
        rep.m, rep.phi_limit_predicted, rep.singularity_tau, rep.max_constraint_residual
    );
    println!("scale factor written to {}", ctx.path("scale_factor.json").display());
    Ok(true)
}

pub fn flow_run(args: &RunArgs, resume_from: Option<&Path>) -> Outcome {
    let ctx = Ctx::load(&args.common, args.t_end, args.tol)?;
    let prep = ctx.prepare()?;
    let mut report = RunReport::new(&ctx.cfg)?;
    background_sections(&ctx, &prep, &mut report)?;

    let flow = &prep.flow;
    let previous = match resume_from {
        Some(path) => {
            let (header, frames) = read_snapshots(path)?;
            header.check(flow)?;
            Some(frames)
        }
        None => None,
    };
    // Frames from the snapshot are read in full before the file is rewritten, so
    // resuming in place is safe.
    let mut writer = SnapshotWriter::create(&ctx.path("snapshots.bin"), SnapshotHeader::for_config(flow))?;
    if let Some(frames) = &previous {
        for f in frames {
            writer.write_frame(f)?;
        }
    }
    let mut sink = |fr: &Frame, _: &DiagnosticsRecord| writer.write_frame(fr);
    let traj = timed(&mut report, "flow", || match previous {
        Some(frames) => resume(flow, frames, &mut sink),
        None => run_with(flow, &mut sink),
    });
    let traj = match traj {
        Ok(t) => t,
        Err(e) => {
            let err = CliError::from(e);
            if err.code == EXIT_NUMERICAL {
                report.termination = Some(Termination::Error {
                    message: err.message.clone(),
                    t: flow.record_time(0),
                });
                write_diagnostics(&ctx.path("diagnostics.csv"), &[])?;
                return finish(&ctx, report);
            }
            return Err(err);
        }
    };
    println!(
        "flow: {} frames, {} accepted / {} rejected steps, stopped by {}",
        traj.frames.len(),
        traj.accepted_steps,
        traj.rejected_steps,
        traj.termination.label()
    );
    analysis_sections(&ctx, &traj, &args.claims, &mut report)?;
    finish(&ctx, report)
}

pub fn analyze(args: &AnalyzeArgs) -> Outcome {
    let ctx = Ctx::load(&args.common, None, None)?;
    let prep = ctx.prepare()?;
    let traj = ctx.stored_trajectory(&prep.flow)?;
    let selection = parse_claims(&args.claims);
    let mut report = ctx.existing_report()?;
    report.skipped.retain(|s| !s.starts_with("claims:"));
    let claims = evaluate_claims(&traj, &ctx.cfg.analysis, selection.as_deref());
    let claims = skip_missing(&mut report, "claims", claims)?;
    if let Some(c) = &claims {
        print_claims(c);
    }
    let pass = claims.as_ref().is_some_and(|c| c.iter().all(|c| c.pass));
    report.claims = claims.unwrap_or_default();
    report.termination = Some(traj.termination.clone());
    report.finalize();
    report.write(&ctx.path("report.json"))?;
    Ok(pass)
}

pub fn transition(common: &Common) -> Outcome {
    let ctx = Ctx::load(common, None, None)?;
    if ctx.cfg.transition.seeds.is_empty() {
        return Err(Error::Config("transition.seeds is empty".into()).into());
    }
    let prep = ctx.prepare()?;
    let traj = ctx.stored_trajectory(&prep.flow)?;
    let mut report = ctx.existing_report()?;
    report.skipped.retain(|s| !s.starts_with("transition:"));
    transition_section(&ctx, &traj, &mut report)?;
    let pass = report.transition.as_ref().is_some_and(|t| t.c3.all_pass);
    report.finalize();
    report.write(&ctx.path("report.json"))?;
    Ok(pass)
}

pub fn report(args: &AnalyzeArgs) -> Outcome {
    let ctx = Ctx::load(&args.common, None, None)?;
    let prep = ctx.prepare()?;
    let mut report = RunReport::new(&ctx.cfg)?;
    background_sections(&ctx, &prep, &mut report)?;
    let traj = ctx.stored_trajectory(&prep.flow)?;
    analysis_sections(&ctx, &traj, &args.claims, &mut report)?;
    finish(&ctx, report)
}
