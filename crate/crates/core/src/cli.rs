//! The `boltzgen` command line.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 parse or validation
//! failure, 3 parameter or divergence error, 4 resource cap reached.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::controller::{Alternation, ControlError, ControlResult, Controller};
use crate::enumerate::{count_upto, EnumError};
use crate::oracle::{Oracle, OracleError, OracleOptions};
use crate::parser::parse_spec;
use crate::sampler::{CompiledSampler, Ledger, SampleError, SampleOutcome, SamplerOptions, SizeReport};
use crate::spec::{Spec, SpecError};
use crate::stream::{SessionStream, RNG_ID};
use crate::structure::{Structure, WriteOptions};
use crate::validate::validate_spec;

/// Environment variable overriding the default oracle tolerance.
pub const TOL_ENV: &str = "BOLTZGEN_TOL";

#[derive(Debug, Parser)]
#[command(name = "boltzgen", version, about = "Boltzmann samplers for combinatorial specifications")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a specification.
    Check {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Exact counts c_0..c_N per class.
    Count {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        upto: usize,
        #[arg(long)]
        class: Option<String>,
    },
    /// Generating-function values, radius and tuning.
    Oracle {
        #[command(subcommand)]
        op: OracleCommand,
    },
    /// Draw structures.
    Sample(SampleArgs),
    /// Draw equal-size pairs from two samplers.
    Hadamard(HadamardArgs),
}

#[derive(Debug, Subcommand)]
enum OracleCommand {
    Eval {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        x: f64,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    Rho {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        class: String,
        #[arg(long)]
        json: bool,
    },
    Tune {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        class: String,
        #[arg(long)]
        size: u64,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SampleMode {
    Free,
    Approx,
    Exact,
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Term,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    class: String,
    /// Boltzmann parameter (free sampling).
    #[arg(long, conflicts_with = "size", required_unless_present = "size")]
    x: Option<f64>,
    /// Target size; the parameter is tuned (or set to the radius in
    /// singular mode).
    #[arg(long)]
    size: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Defaults to free with --x and approx with --size.
    #[arg(long, value_enum)]
    mode: Option<SampleMode>,
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    labels: bool,
    #[arg(long)]
    ceiling: Option<u64>,
    /// Append a cost report and the safety ledger after each sample.
    #[arg(long)]
    stats: bool,
    /// Omit named-class wrappers.
    #[arg(long)]
    bare: bool,
    #[arg(long)]
    trial_cap: Option<u64>,
}

#[derive(Debug, Args)]
struct HadamardArgs {
    /// SPEC:CLASS:X
    #[arg(long)]
    left: String,
    /// SPEC:CLASS:X
    #[arg(long)]
    right: String,
    #[arg(long)]
    birthday: bool,
    #[arg(long)]
    random_alternation: bool,
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    bare: bool,
    #[arg(long)]
    trial_cap: Option<u64>,
}

#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }

    fn invalid(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    fn parameter(message: impl Into<String>) -> Self {
        CliError { code: 3, message: message.into() }
    }

    fn resource(message: impl Into<String>) -> Self {
        CliError { code: 4, message: message.into() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::usage(format!("I/O error: {e}"))
    }
}

impl From<SpecError> for CliError {
    fn from(e: SpecError) -> Self {
        match e {
            SpecError::UnknownClass(_) => CliError::usage(e.to_string()),
            _ => CliError::invalid(e.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Spec(s) => s.into(),
            OracleError::Invalid(_) => CliError::invalid(e.to_string()),
            _ => CliError::parameter(e.to_string()),
        }
    }
}

impl From<EnumError> for CliError {
    fn from(e: EnumError) -> Self {
        match e {
            EnumError::Spec(s) => s.into(),
            EnumError::Oracle(o) => o.into(),
            EnumError::Invalid(_) => CliError::invalid(e.to_string()),
            EnumError::TooLarge { .. } => CliError::resource(e.to_string()),
            _ => CliError::parameter(e.to_string()),
        }
    }
}

impl From<SampleError> for CliError {
    fn from(e: SampleError) -> Self {
        match e {
            SampleError::UnknownClass(_) | SampleError::NotEvaluated(_) => CliError::usage(e.to_string()),
            SampleError::Resource(_) => CliError::resource(e.to_string()),
            _ => CliError::parameter(e.to_string()),
        }
    }
}

impl From<ControlError> for CliError {
    fn from(e: ControlError) -> Self {
        match e {
            ControlError::Sample(s) => s.into(),
            ControlError::TrialCap { .. } | ControlError::MemoryCap(_) => CliError::resource(e.to_string()),
            _ => CliError::parameter(e.to_string()),
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Check { spec, json } => check(&spec, json, out),
        Command::Count { spec, upto, class } => count(&spec, upto, class.as_deref(), out),
        Command::Oracle { op } => oracle(op, out),
        Command::Sample(args) => sample(&args, out),
        Command::Hadamard(args) => hadamard(&args, out),
    }
}

fn read_spec(path: &Path) -> Result<Spec, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    parse_spec(&text).map_err(|e| CliError::invalid(format!("{}:{e}", path.display())))
}

/// Reads and validates a spec; validation failures exit with code 2.
fn load(path: &Path) -> Result<Spec, CliError> {
    let spec = read_spec(path)?;
    let report = validate_spec(&spec);
    if !report.ok {
        let mut msg = format!("{} is not a valid specification", path.display());
        for d in &report.diagnostics {
            let _ = write!(msg, "\n  class `{}`: {}", d.class, d.reason);
        }
        return Err(CliError::invalid(msg));
    }
    Ok(spec)
}

fn require_class(spec: &Spec, class: &str) -> Result<(), CliError> {
    match spec.class_index(class) {
        Some(_) => Ok(()),
        None => Err(CliError::usage(format!("unknown class `{class}`"))),
    }
}

fn oracle_options(tol: Option<f64>) -> Result<OracleOptions<f64>, CliError> {
    let tol = match tol {
        Some(t) => t,
        None => match std::env::var(TOL_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| CliError::usage(format!("{TOL_ENV} is not a number: {v}")))?,
            Err(_) => return Ok(OracleOptions::default()),
        },
    };
    if !(tol > 0.0 && tol < 1.0) {
        return Err(CliError::usage(format!("tolerance must lie in (0, 1), got {tol}")));
    }
    Ok(OracleOptions::with_tol(tol))
}

fn check(path: &Path, as_json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = read_spec(path)?;
    let report = validate_spec(&spec);
    if as_json {
        let classes: Map<String, Value> = report
            .zero_counts
            .iter()
            .map(|(c, z)| (c.clone(), json!({ "zero_count": z.to_string(), "min_size": report.min_sizes[c].to_string() })))
            .collect();
        let diags: Vec<Value> = report.diagnostics.iter().map(|d| json!({ "class": d.class, "reason": d.reason })).collect();
        writeln!(out, "{}", json!({ "ok": report.ok, "classes": classes, "diagnostics": diags }))?;
    } else {
        writeln!(out, "{}", if report.ok { "ok" } else { "invalid" })?;
        for (c, z) in &report.zero_counts {
            writeln!(out, "{c}: zero_count = {z}, min_size = {}", report.min_sizes[c])?;
        }
        for d in &report.diagnostics {
            writeln!(out, "violation in `{}`: {}", d.class, d.reason)?;
        }
    }
    if report.ok {
        Ok(())
    } else {
        Err(CliError::invalid(format!("{} failed validation", path.display())))
    }
}

fn count(path: &Path, upto: usize, class: Option<&str>, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = load(path)?;
    if let Some(c) = class {
        require_class(&spec, c)?;
    }
    let table = count_upto(&spec, upto)?;
    for (name, counts) in table.names.iter().zip(&table.counts) {
        if class.is_some_and(|c| c != name) {
            continue;
        }
        let row: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
        writeln!(out, "{name}: {}", row.join(" "))?;
    }
    Ok(())
}

/// Rounds an uncertainty up to a power of ten for display.
fn uncertainty(width: f64) -> String {
    if width > 0.0 {
        format!("1e{}", width.log10().ceil() as i32)
    } else {
        "0".to_string()
    }
}

fn oracle(op: OracleCommand, out: &mut dyn Write) -> Result<(), CliError> {
    match op {
        OracleCommand::Eval { spec, x, tol, json: as_json } => {
            let spec = load(&spec)?;
            let oracle = Oracle::new(&spec, oracle_options(tol)?)?;
            let t = oracle.eval(x)?;
            if as_json {
                let values: Map<String, Value> =
                    t.classes.iter().zip(&t.values).filter(|(_, v)| !v.is_nan()).map(|(c, v)| (c.clone(), json!(v))).collect();
                let obj = json!({
                    "x": x,
                    "status": if t.converged() { "converged" } else { "diverged" },
                    "values": values,
                    "iterations": t.iterations,
                    "residual": t.residual,
                    "reason": t.reason,
                });
                writeln!(out, "{obj}")?;
            } else {
                writeln!(out, "x = {x}")?;
                for (c, v) in t.classes.iter().zip(&t.values) {
                    if !v.is_nan() {
                        writeln!(out, "{c} = {v:.15e}")?;
                    }
                }
                writeln!(out, "status = {}", if t.converged() { "converged" } else { "diverged" })?;
                writeln!(out, "iterations = {}", t.iterations)?;
                writeln!(out, "residual = {:e}", t.residual)?;
                if let Some(r) = &t.reason {
                    writeln!(out, "reason = {r}")?;
                }
            }
            if t.converged() {
                Ok(())
            } else {
                Err(CliError::parameter(format!("evaluation diverged at x = {x}")))
            }
        }
        OracleCommand::Rho { spec, class, json: as_json } => {
            let spec = load(&spec)?;
            require_class(&spec, &class)?;
            let r = Oracle::new(&spec, oracle_options(None)?)?.find_radius(&class)?;
            if as_json {
                let obj = json!({ "class": class, "rho": if r.entire { None } else { Some(r.estimate) }, "half_width": r.half_width, "lower": r.lower, "entire": r.entire });
                writeln!(out, "{obj}")?;
            } else if r.entire {
                writeln!(out, "rho = inf")?;
            } else {
                writeln!(out, "rho = {:.9} ± {}", r.estimate, uncertainty(2.0 * r.half_width))?;
            }
            Ok(())
        }
        OracleCommand::Tune { spec, class, size, json: as_json } => {
            let spec = load(&spec)?;
            require_class(&spec, &class)?;
            let t = Oracle::new(&spec, oracle_options(None)?)?.tune(&class, size)?;
            if as_json {
                let obj = json!({ "class": class, "size": size, "x": t.x, "expected": t.achieved, "rho": t.radius.estimate, "singular": t.singular });
                writeln!(out, "{obj}")?;
            } else {
                writeln!(out, "x = {:.12}", t.x)?;
                writeln!(out, "expected = {:.9}", t.achieved)?;
                writeln!(out, "rho = {:.9}", t.radius.estimate)?;
                writeln!(out, "singular = {}", t.singular)?;
            }
            Ok(())
        }
    }
}

fn write_structure(s: &Structure, format: Format, bare: bool) -> String {
    let opts = WriteOptions { bare };
    match format {
        Format::Json => s.to_json(opts),
        Format::Term => s.to_term(opts),
    }
}

fn ledger_json(ledger: &Ledger<f64>) -> Value {
    Value::Object(ledger.iter().map(|(k, v)| (k.to_string(), json!(v.to_string()))).collect())
}

fn report_json(session: u64, r: &SizeReport) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("session".into(), json!(session));
    m.insert("size".into(), json!(r.output_size));
    m.insert("atoms_generated".into(), json!(r.atoms_generated));
    m.insert("uniforms_consumed".into(), json!(r.uniforms_consumed));
    m.insert("oracle_lookups".into(), json!(r.oracle_lookups));
    m.insert("aborted".into(), json!(r.aborted));
    m
}

fn header(format: Format, fields: Value) -> String {
    match format {
        Format::Json => fields.to_string(),
        Format::Term => format!("# {fields}"),
    }
}

/// Runs `count` sessions in parallel and writes their lines in order.
fn fan_out(
    count: u64,
    out: &mut dyn Write,
    session: impl Fn(u64) -> Result<String, CliError> + Sync,
) -> Result<(), CliError> {
    const CHUNK: u64 = 256;
    let mut start = 0;
    while start < count {
        let end = (start + CHUNK).min(count);
        let lines: Vec<Result<String, CliError>> = (start..end).into_par_iter().map(&session).collect();
        for line in lines {
            out.write_all(line?.as_bytes())?;
        }
        start = end;
    }
    Ok(())
}

fn sample(a: &SampleArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = load(&a.spec)?;
    require_class(&spec, &a.class)?;
    let oracle = Oracle::new(&spec, oracle_options(None)?)?;
    let mode = a.mode.unwrap_or(if a.x.is_some() { SampleMode::Free } else { SampleMode::Approx });
    if a.x.is_some() && mode != SampleMode::Free {
        return Err(CliError::usage("--x only supports --mode free; give --size for size control"));
    }
    if a.epsilon.is_some() && matches!(mode, SampleMode::Free | SampleMode::Exact) {
        return Err(CliError::usage("--epsilon applies to approx and singular modes"));
    }
    if a.labels && spec.mode != crate::spec::Mode::Labelled {
        return Err(CliError::usage("--labels needs a labelled specification"));
    }
    let (x, singular) = match (a.x, a.size, mode) {
        (Some(x), _, _) => (x, false),
        (None, Some(n), SampleMode::Singular) => {
            let _ = n;
            let r = oracle.find_radius(&a.class)?;
            if r.entire {
                return Err(CliError::parameter(format!("`{}` has an infinite radius; singular sampling needs a finite one", a.class)));
            }
            (r.lower, true)
        }
        (None, Some(n), _) => {
            let t = oracle.tune(&a.class, n)?;
            (t.x, false)
        }
        (None, None, _) => unreachable!("clap requires --x or --size"),
    };
    let table = oracle.eval_classes(&[&a.class], x)?;
    if !table.converged() {
        return Err(CliError::parameter(format!(
            "oracle diverged at x = {x}: {}",
            table.reason.as_deref().unwrap_or("no reason given")
        )));
    }
    let options = SamplerOptions { ceiling: a.ceiling, track_intervals: a.stats, ..Default::default() };
    let sampler = CompiledSampler::compile(&spec, &table, options)?;
    let controller = Controller { trial_cap: a.trial_cap.unwrap_or(Controller::default().trial_cap), ..Default::default() };
    let mode_name = match (mode, a.epsilon) {
        (SampleMode::Free, _) => "free",
        (SampleMode::Approx, _) => "approx",
        (SampleMode::Exact, _) => "exact",
        (SampleMode::Singular, Some(_)) => "singular-approx",
        (SampleMode::Singular, None) => "singular-exact",
    };
    let head = json!({
        "boltzgen": env!("CARGO_PKG_VERSION"),
        "rng": RNG_ID,
        "seed": a.seed,
        "class": a.class,
        "x": x,
        "mode": mode_name,
        "size": a.size,
        "epsilon": a.epsilon,
        "count": a.count,
    });
    writeln!(out, "{}", header(a.format, head))?;
    let session = |i: u64| -> Result<String, CliError> {
        let mut stream = SessionStream::new(a.seed, i);
        let (structure, report, ledger, trials) = match mode {
            SampleMode::Free => match sampler.sample(&a.class, &mut stream)? {
                SampleOutcome::Done(s) => (Some(s.structure), s.report, s.ledger, 1),
                SampleOutcome::Aborted(r) => (None, r, Ledger::new(), 1),
            },
            _ => {
                let n = a.size.expect("size given");
                let r: ControlResult<f64> = match (mode, a.epsilon) {
                    (SampleMode::Exact, _) | (SampleMode::Singular, None) => {
                        controller.sample_exact(&sampler, &a.class, n, singular, &mut stream)?
                    }
                    (_, eps) => controller.sample_approx(&sampler, &a.class, n, eps.unwrap_or(0.1), singular, &mut stream)?,
                };
                (Some(r.structure), r.report, r.ledger, r.trials)
            }
        };
        let mut line = match structure {
            Some(mut s) => {
                if a.labels {
                    s.assign_labels(&mut stream).map_err(|e| CliError::usage(e.to_string()))?;
                }
                write_structure(&s, a.format, a.bare)
            }
            None => match a.format {
                Format::Json => json!({ "aborted": true, "atoms_generated": report.atoms_generated }).to_string(),
                Format::Term => format!("# aborted after {} atoms", report.atoms_generated),
            },
        };
        line.push('\n');
        if a.stats {
            let mut m = report_json(i, &report);
            m.insert("trials".into(), json!(trials));
            m.insert("ledger".into(), ledger_json(&ledger));
            let _ = writeln!(line, "{}", header(a.format, Value::Object(m)));
        }
        Ok(line)
    };
    fan_out(a.count, out, session)
}

/// Splits `SPEC:CLASS:X`, allowing colons inside the path.
fn split_side(text: &str) -> Result<(PathBuf, String, f64), CliError> {
    let mut parts = text.rsplitn(3, ':');
    let (Some(x), Some(class), Some(path)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(CliError::usage(format!("expected SPEC:CLASS:X, got `{text}`")));
    };
    let x: f64 = x.parse().map_err(|_| CliError::usage(format!("`{x}` is not a number in `{text}`")))?;
    Ok((PathBuf::from(path), class.to_string(), x))
}

fn side_sampler(text: &str) -> Result<(CompiledSampler<f64>, String, f64), CliError> {
    let (path, class, x) = split_side(text)?;
    let spec = load(&path)?;
    require_class(&spec, &class)?;
    let table = Oracle::new(&spec, oracle_options(None)?)?.eval_classes(&[&class], x)?;
    if !table.converged() {
        return Err(CliError::parameter(format!("oracle diverged for `{class}` at x = {x}")));
    }
    Ok((CompiledSampler::compile(&spec, &table, SamplerOptions::default())?, class, x))
}

fn hadamard(a: &HadamardArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (left, lclass, lx) = side_sampler(&a.left)?;
    let (right, rclass, rx) = side_sampler(&a.right)?;
    let controller = Controller { trial_cap: a.trial_cap.unwrap_or(Controller::default().trial_cap), ..Default::default() };
    let alternation = if a.random_alternation { Alternation::Random } else { Alternation::Deterministic };
    let head = json!({
        "boltzgen": env!("CARGO_PKG_VERSION"),
        "rng": RNG_ID,
        "seed": a.seed,
        "left": { "class": lclass, "x": lx },
        "right": { "class": rclass, "x": rx },
        "mode": if a.birthday { "hadamard-birthday" } else { "hadamard-naive" },
        "count": a.count,
    });
    writeln!(out, "{}", header(a.format, head))?;
    let session = |i: u64| -> Result<String, CliError> {
        let mut stream = SessionStream::new(a.seed, i);
        let r = if a.birthday {
            controller.sample_hadamard_birthday((&left, &lclass), (&right, &rclass), alternation, &mut stream)?
        } else {
            controller.sample_hadamard_naive((&left, &lclass), (&right, &rclass), &mut stream)?
        };
        let partner = r.partner.as_ref().expect("pair");
        let line = match a.format {
            Format::Json => format!(
                "{{\"size\":{},\"trials\":{},\"left\":{},\"right\":{}}}\n",
                r.structure.size(),
                r.trials,
                write_structure(&r.structure, a.format, a.bare),
                write_structure(partner, a.format, a.bare)
            ),
            Format::Term => format!(
                "{} | {}\n",
                write_structure(&r.structure, a.format, a.bare),
                write_structure(partner, a.format, a.bare)
            ),
        };
        Ok(line)
    };
    fan_out(a.count, out, session)
}
