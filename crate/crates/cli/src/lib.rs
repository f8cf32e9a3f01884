//! Batch front end: runs analyses, reductions, certificates and curvature checks on
//! builtin examples or curve files and renders deterministic reports.

pub mod report;

use std::ffi::OsString;
use std::path::Path;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use uniton_core::diagrams::{certify_nilpotent_cycle, CertificateKind, CertificateStatus, ReturnMaps, MIN_CERT_POINTS};
use uniton_core::frames::{HoloCurve, Subbundle};
use uniton_core::geometry::{constant_curvature_check, real_mixed_pair};
use uniton_core::library::{builtin, list, Role};
use uniton_core::moves::{reduce, return_invariants, step, StepOutcome};
use uniton_core::sampling::sample_points;
use uniton_core::sequences::{default_sequence_length, harmonic_sequence, harmonicity_residual_default, isotropy_order, IsotropyOrder};
use uniton_core::unitons::{bounded_powers_test, default_power_count};
use uniton_core::{LabError, Result, Settings, Tolerances};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CERT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Points used by the finiteness test in `analyze`.
const FINITENESS_POINTS: usize = 3;

#[derive(Parser, Debug)]
#[command(name = "uniton-lab", version, about = "Harmonic maps into complex Grassmannians")]
struct Cli {
    #[command(flatten)]
    config: RunConfig,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunConfig {
    #[arg(long, global = true, default_value_t = uniton_core::settings::DEFAULT_SEED)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 7)]
    samples: usize,
    #[arg(long, global = true)]
    tol_rank: Option<f64>,
    #[arg(long, global = true)]
    tol_orth: Option<f64>,
    #[arg(long, global = true)]
    tol_harm: Option<f64>,
    #[arg(long, global = true)]
    tol_nil: Option<f64>,
    #[arg(long, global = true)]
    tol_ext: Option<f64>,
    #[arg(long, global = true)]
    jet_order: Option<usize>,
    #[arg(long, global = true)]
    budget: Option<usize>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Emit JSON instead of `key = value` lines.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Pair {
    RealMixed,
}

#[derive(Args, Debug, Clone)]
struct Input {
    /// Builtin example id or a curve JSON file.
    input: String,
    /// Replace a quadric curve `h` by the pair `h + conj h`.
    #[arg(long, value_enum)]
    pair: Option<Pair>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Harmonicity, harmonic sequence, isotropy order, first return map and finiteness verdict.
    Analyze(Input),
    /// Replacement moves down to a base case.
    Reduce {
        #[command(flatten)]
        input: Input,
        /// Apply one selected move even when the map is already reducible.
        #[arg(long)]
        single_move: bool,
    },
    /// Nilpotency certificate of the given kind.
    Certify {
        /// ce, ce_s, cece2, c_pow_p_minus_1_e (alias nilorder-p) or c2ece.
        kind: String,
        #[command(flatten)]
        input: Input,
        /// Exponent for `ce_s`.
        #[arg(long, default_value_t = 1)]
        s: usize,
    },
    /// Gauss curvature of the induced metric at sample points.
    Curvature {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = 20)]
        points: usize,
    },
    /// Builtin example ids.
    ListExamples,
}

/// Exit code, stdout and stderr of one invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

fn exit_code(e: &LabError) -> i32 {
    match e {
        LabError::Usage(_) => EXIT_USAGE,
        _ => EXIT_NUMERICAL,
    }
}

fn settings(c: &RunConfig) -> Result<Settings> {
    let d = Tolerances::default();
    let tol = Tolerances {
        rank: c.tol_rank.unwrap_or(d.rank),
        orth: c.tol_orth.unwrap_or(d.orth),
        harm: c.tol_harm.unwrap_or(d.harm),
        nil: c.tol_nil.unwrap_or(d.nil),
        ext: c.tol_ext.unwrap_or(d.ext),
        trim: d.trim,
    };
    for (name, v) in [("rank", tol.rank), ("orth", tol.orth), ("harm", tol.harm), ("nil", tol.nil), ("ext", tol.ext)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(LabError::usage(format!("--tol-{name} must lie in (0, 1), got {v}")));
        }
    }
    if c.samples == 0 || c.threads == Some(0) || c.jet_order == Some(0) {
        return Err(LabError::usage("counts must be positive"));
    }
    Ok(Settings { tol, seed: c.seed, samples: c.samples, jet_order: c.jet_order, budget: c.budget })
}

struct Resolved {
    id: String,
    map: Subbundle,
    harmonic_expected: Option<bool>,
}

fn resolve(input: &Input) -> Result<Resolved> {
    let (id, curve, map, role) = if input.input.ends_with(".json") || Path::new(&input.input).is_file() {
        let text = std::fs::read_to_string(&input.input).map_err(|e| LabError::usage(format!("{}: {e}", input.input)))?;
        let h = HoloCurve::from_json(&text)?;
        (h.label().to_string(), Some(h.clone()), Subbundle::span_curve(&h), None)
    } else {
        let ex = builtin(&input.input)?;
        (ex.id, ex.curve, ex.map, Some(ex.role))
    };
    match input.pair {
        None => Ok(Resolved { id, map, harmonic_expected: role.map(|r| r != Role::NonHarmonic) }),
        Some(Pair::RealMixed) => {
            let h = curve.ok_or_else(|| LabError::usage(format!("{id} is not a single curve")))?;
            Ok(Resolved { id: format!("{id}+conj"), map: real_mixed_pair(&h)?, harmonic_expected: Some(true) })
        }
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn section(r: Result<Value>) -> Result<Value> {
    match r {
        Ok(v) => Ok(v),
        Err(LabError::Inconclusive(msg)) => Ok(json!({ "inconclusive": msg })),
        Err(e) => Err(e),
    }
}

fn require_harmonic(map: &Subbundle, s: &Settings) -> Result<f64> {
    let res = harmonicity_residual_default(map, s)?;
    if res >= s.tol.harm {
        return Err(LabError::usage(format!("input map is not harmonic (residual {res:.3e})")));
    }
    Ok(res)
}

fn analyze(input: &Input, s: &Settings) -> Result<Value> {
    let r = resolve(input)?;
    let n = r.map.ambient();
    let residual = harmonicity_residual_default(&r.map, s)?;
    let harmonic = residual < s.tol.harm;
    let seq = section(harmonic_sequence(&r.map, default_sequence_length(n), s).map(|q| json!({ "ranks": q.ranks, "terminated": q.terminated })))?;
    let iso = isotropy_order(&r.map, default_sequence_length(n), s)?;
    let first_return = match iso {
        IsotropyOrder::Finite(r0) if r0 >= 1 && harmonic => {
            section(return_invariants(&ReturnMaps::with_order(&r.map, r0), s).map(|inv| to_value(&inv)))?
        }
        _ => Value::Null,
    };
    let finiteness = if harmonic {
        section(bounded_powers_test(&r.map, default_power_count(n), &sample_points(s.seed, FINITENESS_POINTS), s).map(|f| {
            json!({ "verdict": f.verdict, "cap": f.cap, "max_degree": f.degrees.iter().map(|d| d.iter().copied().max().unwrap_or(0)).collect::<Vec<_>>() })
        }))?
    } else {
        Value::Null
    };
    Ok(json!({
        "command": "analyze",
        "input": r.id,
        "n": n,
        "k": r.map.generic_rank(s)?,
        "harmonic": harmonic,
        "harmonic_expected": r.harmonic_expected,
        "harmonicity_residual": residual,
        "gauss_sequence": seq,
        "isotropy_order": iso,
        "first_return": first_return,
        "finiteness": finiteness,
        "seed": s.seed,
    }))
}

fn reduce_cmd(input: &Input, single: bool, s: &Settings) -> Result<Value> {
    let r = resolve(input)?;
    require_harmonic(&r.map, s)?;
    let body = if single {
        match step(&r.map, s)? {
            StepOutcome::Moved(m) => json!({ "move": to_value(&*m) }),
            StepOutcome::NoMove(reason) => json!({ "move": null, "note": reason }),
        }
    } else {
        to_value(&reduce(&r.map, s.budget(r.map.ambient()), s)?)
    };
    Ok(json!({ "command": "reduce", "input": r.id, "seed": s.seed, "trace": body }))
}

fn certify(kind: &str, input: &Input, exponent: usize, s: &Settings) -> Result<(Value, bool)> {
    let kind = CertificateKind::parse(kind, exponent)?;
    let r = resolve(input)?;
    require_harmonic(&r.map, s)?;
    let points = sample_points(s.seed, s.samples.max(MIN_CERT_POINTS) + 3);
    let rep = certify_nilpotent_cycle(kind, &r.map, None, &points, s)?;
    let failed = rep.status == CertificateStatus::Fail;
    Ok((json!({ "command": "certify", "input": r.id, "seed": s.seed, "certificate": to_value(&rep) }), failed))
}

fn curvature(input: &Input, points: usize, s: &Settings) -> Result<Value> {
    if points == 0 {
        return Err(LabError::usage("--points must be positive"));
    }
    let r = resolve(input)?;
    let rep = constant_curvature_check(&r.map, &sample_points(s.seed, points), s)?;
    Ok(json!({ "command": "curvature", "input": r.id, "seed": s.seed, "curvature": to_value(&rep) }))
}

fn dispatch(cmd: &Command, s: &Settings) -> Result<(Value, i32)> {
    Ok(match cmd {
        Command::Analyze(input) => (analyze(input, s)?, EXIT_OK),
        Command::Reduce { input, single_move } => (reduce_cmd(input, *single_move, s)?, EXIT_OK),
        Command::Certify { kind, input, s: exponent } => {
            let (v, failed) = certify(kind, input, *exponent, s)?;
            (v, if failed { EXIT_CERT_FAIL } else { EXIT_OK })
        }
        Command::Curvature { input, points } => (curvature(input, *points, s)?, EXIT_OK),
        Command::ListExamples => (json!({ "command": "list-examples", "examples": to_value(&list()) }), EXIT_OK),
    })
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            return if code == EXIT_OK {
                Outcome { code, stdout: text, stderr: String::new() }
            } else {
                Outcome { code, stdout: String::new(), stderr: text }
            };
        }
    };
    let failure = |e: LabError| Outcome { code: exit_code(&e), stdout: String::new(), stderr: format!("error: {e}\n") };
    let s = match settings(&cli.config) {
        Ok(s) => s,
        Err(e) => return failure(e),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.config.threads {
        pool = pool.num_threads(t);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => return failure(LabError::Numerical(format!("thread pool: {e}"))),
    };
    match pool.install(|| dispatch(&cli.command, &s)) {
        Ok((v, code)) => {
            let stdout = if cli.config.json { report::to_json(&v) } else { report::to_text(&v) };
            Outcome { code, stdout, stderr: String::new() }
        }
        Err(e) => failure(e),
    }
}
