//! Command-line runs with machine-readable reports.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 for
//! unparseable or invalid configuration.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::fei::{self, FamilySpec};
use crate::jordan::{self, Algebra, Element, Region};
use crate::log_cauchy::{self, LogCauchyFn};
use crate::mult::{MultAlgorithm, Surjectivity};
use crate::recovery::{self, RecoveryConfig};
use crate::sampler::{scalar_grid, Sampler, SamplerConfig, DEFAULT_EIGEN_MARGIN};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "symcone", version, about = "Verify and recover solutions of the fundamental equation of information on symmetric cones")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Jordan axioms, determinant identity and conditions A-C of `--walg`.
    VerifyCore(RunArgs),
    /// w-logarithmicity of `--fn` under `--walg`.
    VerifyWlog(RunArgs),
    /// Residual of a solution family on D0 (or the scalar grid for `maksa:`).
    VerifyFei(RunArgs),
    /// Synthesize `--family`, hide its components, and recover them.
    Recover(RunArgs),
    /// Emit reproducible samples of D, D0 pairs or the cone.
    Sample(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleKind {
    D,
    D0,
    Cone,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RunArgs {
    /// `sym:<r>` or `lorentz:<n>`.
    #[arg(long, default_value = "sym:2")]
    pub algebra: String,
    /// Multiplication algorithm `w`: w1, w2, alpha:<a>, ktwist:<seed>[:<base>], patchwork.
    #[arg(long)]
    pub walg: Option<String>,
    /// Multiplication algorithm `w~`.
    #[arg(long)]
    pub wtalg: Option<String>,
    /// Family spec, e.g. `cor1:1,-0.5,2` or `cor3:1,0;2,1;0,0@1,1,2,0`.
    #[arg(long)]
    pub family: Option<String>,
    /// Function spec for verify-wlog, e.g. `powerlog:1,0`.
    #[arg(long = "fn")]
    pub function: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_EIGEN_MARGIN, allow_negative_numbers = true)]
    pub margin: f64,
    /// Pass threshold on residuals (command-specific default).
    #[arg(long, allow_negative_numbers = true)]
    pub tol: Option<f64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    #[serde(skip)]
    pub output: Option<PathBuf>,
    /// Write per-sample residuals as CSV (check,sample_index,residual).
    #[arg(long)]
    #[serde(skip)]
    pub csv: Option<PathBuf>,
    /// What `sample` emits.
    #[arg(long, value_enum, default_value_t = SampleKind::D)]
    pub kind: SampleKind,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub max_abs: f64,
    pub mean_abs: f64,
    pub pass: bool,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl Check {
    fn from_residuals(name: &str, residuals: Vec<f64>, tol: f64) -> Self {
        let max_abs = residuals
            .iter()
            .map(|r| if r.is_nan() { f64::INFINITY } else { r.abs() })
            .fold(0.0, f64::max);
        let mean_abs = if residuals.is_empty() {
            0.0
        } else {
            residuals.iter().map(|r| r.abs()).sum::<f64>() / residuals.len() as f64
        };
        Check {
            name: name.into(),
            max_abs,
            mean_abs,
            pass: max_abs <= tol,
            residuals,
        }
    }

    fn value(name: &str, value: f64, tol: f64) -> Self {
        Check::from_residuals(name, vec![value], tol)
    }

    fn flag(name: &str, ok: bool) -> Self {
        Check {
            name: name.into(),
            max_abs: if ok { 0.0 } else { 1.0 },
            mean_abs: if ok { 0.0 } else { 1.0 },
            pass: ok,
            residuals: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub config: Value,
    pub checks: Vec<Check>,
    pub seed: u64,
    pub details: Value,
}

impl Report {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,sample_index,residual\n");
        for c in &self.checks {
            for (i, r) in c.residuals.iter().enumerate() {
                out.push_str(&format!("{},{},{:e}\n", c.name, i, r));
            }
        }
        out
    }
}

fn usage(e: Error) -> Error {
    match e {
        Error::Parse(_) => e,
        other => Error::Parse(other.to_string()),
    }
}

fn parse_algebra(a: &RunArgs) -> Result<Algebra> {
    a.algebra.parse::<Algebra>().map_err(usage)
}

fn parse_alg(spec: Option<&str>, default: &str, alg: Algebra) -> Result<MultAlgorithm> {
    MultAlgorithm::parse(spec.unwrap_or(default), alg).map_err(usage)
}

fn validate(a: &RunArgs) -> Result<()> {
    if let Some(t) = a.tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Parse(format!("--tol must be positive, got {t}")));
        }
    }
    if !(a.margin > 0.0 && a.margin < 0.5) {
        return Err(Error::Parse(format!("--margin must lie in (0, 1/2), got {}", a.margin)));
    }
    if a.samples == Some(0) {
        return Err(Error::Parse("--samples must be positive".into()));
    }
    Ok(())
}

fn sampler(a: &RunArgs, alg: Algebra, stream: u64) -> Result<Sampler> {
    Sampler::new(SamplerConfig::new(alg, a.seed.wrapping_add(stream)).with_margin(a.margin)).map_err(usage)
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn verify_core(a: &RunArgs) -> Result<(Vec<Check>, Value)> {
    let alg = parse_algebra(a)?;
    let w = parse_alg(a.walg.as_deref(), "w1", alg)?;
    let n = a.samples.unwrap_or(1000);
    let tol = a.tol.unwrap_or(1e-9);

    let axioms = jordan::axiom_sweep(alg, n, a.seed)?;
    let mut s = sampler(a, alg, 1)?;
    let mut det_rel = Vec::with_capacity(n);
    for _ in 0..n {
        let x = s.sample_cone(0.2, 5.0);
        let y = s.sample_cone(0.2, 5.0);
        let lhs = jordan::determinant(&w.w_apply(&y, &x)?);
        det_rel.push(relative(lhs, jordan::determinant(&y) * jordan::determinant(&x)));
    }
    let rep = w.check_axioms(n, a.seed);
    let checks = vec![
        Check::value("jordan_axioms", axioms.max(), tol),
        Check::from_residuals("det_identity", det_rel, tol),
        Check::value("mult_axiom", rep.axiom_max_defect, tol),
        Check::value("cond_a", rep.cond_a_max_defect, tol),
        Check::value("cond_b", rep.cond_b_defect, tol),
        Check::flag("cond_c", rep.cond_c_ok),
        Check::value("we_in_k", rep.we_in_k_defect, tol),
    ];
    let surj = match rep.cond_c_status {
        Surjectivity::Verified => "verified",
        Surjectivity::Violated => "violated",
        Surjectivity::Unknown => "unknown",
    };
    Ok((
        checks,
        json!({"walg": w.label(), "axioms": axioms, "axiom_report": rep, "surjectivity": surj}),
    ))
}

fn verify_wlog(a: &RunArgs) -> Result<(Vec<Check>, Value)> {
    let alg = parse_algebra(a)?;
    let w = parse_alg(a.walg.as_deref(), "w1", alg)?;
    let spec = a
        .function
        .as_deref()
        .ok_or_else(|| Error::Parse("verify-wlog needs --fn".into()))?;
    let f = LogCauchyFn::parse(spec, alg).map_err(usage)?;
    let n = a.samples.unwrap_or(1000);
    let tol = a.tol.unwrap_or(1e-9);
    let mut s = sampler(a, alg, 1)?;
    let pairs: Vec<(Element, Element)> = (0..n)
        .map(|_| (s.sample_cone(0.2, 5.0), s.sample_cone(0.2, 5.0)))
        .collect();
    let rep = fei::sweep(&pairs, a.seed, |x, y| log_cauchy::wlog_residual(&f, &w, x, y))?;
    let verdict = log_cauchy::classify_defect(rep.max_abs);
    let check = Check::from_residuals("wlog_residual", rep.residuals.clone(), tol);
    let counterexample = (!check.pass).then(|| rep.worst_pair.clone());
    Ok((
        vec![check],
        json!({"walg": w.label(), "fn": f.to_string(), "verdict": verdict, "counterexample": counterexample}),
    ))
}

fn family(a: &RunArgs) -> Result<FamilySpec> {
    let spec = a
        .family
        .as_deref()
        .ok_or_else(|| Error::Parse("--family is required".into()))?;
    FamilySpec::parse(spec)
}

fn quadruple(a: &RunArgs, fam: &FamilySpec, alg: Algebra) -> Result<fei::SolutionQuadruple> {
    let w = a.walg.as_deref().map(|s| parse_alg(Some(s), "", alg)).transpose()?;
    let wt = a.wtalg.as_deref().map(|s| parse_alg(Some(s), "", alg)).transpose()?;
    fam.build(alg, w, wt).map_err(usage)
}

fn verify_fei(a: &RunArgs) -> Result<(Vec<Check>, Value)> {
    let fam = family(a)?;
    let n = a.samples.unwrap_or(1000);
    let tol = a.tol.unwrap_or(1e-8);
    if let Some(m) = fam.maksa() {
        let m = m.map_err(usage)?;
        let per_axis = ((2.0 * n as f64).sqrt().ceil() as usize).max(2);
        let grid = scalar_grid(per_axis, a.margin);
        let rep = fei::maksa_sweep(&m, &grid)?;
        let check = Check::from_residuals("maksa_residual", rep.residuals.clone(), tol);
        return Ok((vec![check], json!({"family": "maksa", "worst_point": rep.worst_point, "grid_points": grid.len()})));
    }
    let alg = parse_algebra(a)?;
    let q = quadruple(a, &fam, alg)?;
    let pairs = sampler(a, alg, 1)?.d0_pairs(n);
    let rep = fei::fei_sweep(&q, &pairs, a.seed)?;
    let check = Check::from_residuals("fei_residual", rep.residuals.clone(), tol);
    let worst = (!check.pass).then(|| rep.worst_pair.clone());
    Ok((
        vec![check],
        json!({
            "provenance": q.provenance(),
            "walg": q.w().label(),
            "wtalg": q.wt().label(),
            "components": q.components(),
            "worst_pair": worst,
        }),
    ))
}

fn recover(a: &RunArgs) -> Result<(Vec<Check>, Value)> {
    let fam = family(a)?;
    if fam.is_scalar() {
        return Err(Error::Parse("recover needs a cone family, not maksa".into()));
    }
    let alg = parse_algebra(a)?;
    let q = quadruple(a, &fam, alg)?;
    let truth = q.components().cloned().expect("synthesized family");
    let tol = a.tol.unwrap_or(recovery::RECONSTRUCTION_THRESHOLD);

    let pairs = sampler(a, alg, 1)?.d0_pairs(200);
    let pre = fei::fei_sweep(&q, &pairs, a.seed)?;
    let cfg = RecoveryConfig {
        samples: a.samples.unwrap_or(RecoveryConfig::default().samples),
        seed: a.seed,
        eigen_margin: a.margin,
        ..RecoveryConfig::default()
    };
    let rec = recovery::recover_components(&q.to_opaque(), &cfg)?;

    let mut param_error: f64 = 0.0;
    for (got, want) in [
        (&rec.h1_fit, &truth.h1),
        (&rec.h2_fit, &truth.h2),
        (&rec.h3_fit, &truth.h3),
    ] {
        match (got.power_vector(), want.power_vector()) {
            (Some(g), Some(w)) => {
                for (x, y) in g.iter().zip(&w) {
                    param_error = param_error.max((x - y).abs());
                }
            }
            _ => param_error = param_error.max((got.scalar_slope() - want.scalar_slope()).abs()),
        }
    }
    for (x, y) in rec.c.iter().zip(truth.c) {
        param_error = param_error.max((x - y).abs());
    }

    let mut checks = vec![Check::value("equation_precheck", pre.max_abs, 1e-8)];
    for st in &rec.stages {
        checks.push(Check {
            name: format!("recovery_{}", st.stage),
            max_abs: st.value,
            mean_abs: st.value,
            pass: st.ok,
            residuals: Vec::new(),
        });
    }
    checks.push(Check::value("parameter_error", param_error, tol));
    Ok((checks, json!({"truth": truth, "recovered": rec.report()})))
}

fn sample(a: &RunArgs) -> Result<(Vec<Check>, Value)> {
    let alg = parse_algebra(a)?;
    let n = a.samples.unwrap_or(10);
    let mut s = sampler(a, alg, 0)?;
    let coords = |x: &Element| x.coords().to_vec();
    let (items, failures): (Vec<Value>, usize) = match a.kind {
        SampleKind::D => {
            let xs: Vec<Element> = (0..n).map(|_| s.sample_d()).collect();
            let bad = xs.iter().filter(|x| !jordan::membership(x, Region::D)).count();
            (xs.iter().map(|x| json!(coords(x))).collect(), bad)
        }
        SampleKind::Cone => {
            let xs: Vec<Element> = (0..n).map(|_| s.sample_cone(0.2, 5.0)).collect();
            let bad = xs.iter().filter(|x| !jordan::membership(x, Region::Cone)).count();
            (xs.iter().map(|x| json!(coords(x))).collect(), bad)
        }
        SampleKind::D0 => {
            let ps = s.d0_pairs(n);
            let bad = ps.iter().filter(|(x, y)| !fei::in_d0(x, y)).count();
            (ps.iter().map(|(x, y)| json!([coords(x), coords(y)])).collect(), bad)
        }
    };
    Ok((
        vec![Check::value("membership_failures", failures as f64, 0.0)],
        json!({"kind": a.kind, "samples": items}),
    ))
}

/// Runs a parsed command; returns the report or a configuration error.
pub fn execute(cmd: &Command) -> Result<Report> {
    let (name, args) = match cmd {
        Command::VerifyCore(a) => ("verify-core", a),
        Command::VerifyWlog(a) => ("verify-wlog", a),
        Command::VerifyFei(a) => ("verify-fei", a),
        Command::Recover(a) => ("recover", a),
        Command::Sample(a) => ("sample", a),
    };
    validate(args)?;
    let (checks, details) = match cmd {
        Command::VerifyCore(a) => verify_core(a),
        Command::VerifyWlog(a) => verify_wlog(a),
        Command::VerifyFei(a) => verify_fei(a),
        Command::Recover(a) => recover(a),
        Command::Sample(a) => sample(a),
    }?;
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        command: name.into(),
        config: serde_json::to_value(args).expect("config serialises"),
        checks,
        seed: args.seed,
        details,
    })
}

fn write_outputs(cmd: &Command, report: &Report) -> std::io::Result<()> {
    let args = match cmd {
        Command::VerifyCore(a)
        | Command::VerifyWlog(a)
        | Command::VerifyFei(a)
        | Command::Recover(a)
        | Command::Sample(a) => a,
    };
    match &args.output {
        Some(p) => fs::write(p, report.to_json() + "\n")?,
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{}", report.to_json())?;
        }
    }
    if let Some(p) = &args.csv {
        fs::write(p, report.to_csv())?;
    }
    Ok(())
}

/// Parses `argv`, runs, writes outputs and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let report = match execute(&cli.command) {
        Ok(r) => r,
        Err(Error::Parse(msg)) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CHECK_FAILED;
        }
    };
    if let Err(e) = write_outputs(&cli.command, &report) {
        eprintln!("error: cannot write report: {e}");
        return EXIT_USAGE;
    }
    for c in report.checks.iter().filter(|c| !c.pass) {
        eprintln!("check failed: {} (max_abs {:e})", c.name, c.max_abs);
    }
    if report.passed() {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(args: &[&str]) -> Result<Report> {
        let cli = Cli::try_parse_from(std::iter::once("symcone").chain(args.iter().copied())).unwrap();
        execute(&cli.command)
    }

    #[test]
    fn verify_core_passes_for_w1() {
        let r = report(&["verify-core", "--algebra", "sym:2", "--samples", "200"]).unwrap();
        assert!(r.passed(), "{}", r.to_json());
    }

    #[test]
    fn patchwork_fails_core() {
        let r = report(&["verify-core", "--algebra", "sym:2", "--walg", "patchwork", "--samples", "100"]).unwrap();
        assert!(!r.passed());
        assert!(r.checks.iter().any(|c| c.name == "cond_a" && !c.pass));
    }

    #[test]
    fn bad_specs_are_usage_errors() {
        for args in [
            &["verify-core", "--algebra", "sym:0"][..],
            &["verify-wlog", "--algebra", "sym:2"],
            &["verify-wlog", "--fn", "cosh:1"],
            &["verify-fei", "--family", "cor1:1,2"],
            &["verify-fei", "--family", "cor1:1,1,1@1,0,0,0"],
            &["verify-core", "--tol", "-1"],
            &["verify-core", "--walg", "w9"],
        ] {
            assert!(matches!(report(args), Err(Error::Parse(_))), "{args:?}");
        }
    }

    #[test]
    fn maksa_family_runs_on_the_grid() {
        let r = report(&["verify-fei", "--family", "maksa:1,-0.5,2@1,1,2,0", "--tol", "1e-12"]).unwrap();
        assert!(r.passed());
    }

    #[test]
    fn csv_has_one_row_per_sample() {
        let r = report(&["verify-fei", "--family", "cor1:1,0,1", "--samples", "7"]).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 8);
        assert!(csv.starts_with("check,sample_index,residual\n"));
    }
}
