//! Command-line front end. Every command writes `summary.json` to the output directory and
//! exits 0 when all gating checks pass, 1 on a failed check or a failed computation, 2 on a
//! usage or configuration error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::darboux::{DarbouxPole, DressedField, DressingMode, SolitonSpec};
use crate::dnls::{conservation_run, Form};
use crate::error::{Error, Result};
use crate::field::{FieldGrid, GridSpec};
use crate::glm::{bright_soliton_kernel, BareOperatorSpec};
use crate::lax_core::{make_params, zero_curvature_residual};
use crate::linalg::{c, C64};
use crate::suite::{self, Check};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "vnls", version, about = "Vector NLS solitons, Backlund and GLM checks, and the defect lattice")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 20240601)]
    pub seed: u64,
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,
    /// JSON run configuration: {"command": ..., "seed": ..., "output_dir": ..., "args": {flag: value}}.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a Darboux soliton on a grid and write it as CSV.
    Soliton(SolitonArgs),
    /// Run the lattice flow and report relative charge drift.
    Lattice(LatticeArgs),
    /// Backlund residuals between the vacuum and a one-soliton.
    BtCheck(BtArgs),
    /// GLM kernel solve, equation residual and Darboux cross-check.
    GlmCheck(GlmArgs),
    /// Continuous and discrete zero-curvature residuals.
    ZccCheck(ZccArgs),
    /// Run the acceptance checks.
    Suite(SuiteArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolitonArgs {
    /// Number of field components (the Lax matrices are (n+1) x (n+1)).
    #[arg(long, default_value_t = 1)]
    pub n_comp: usize,
    #[arg(long, default_value_t = -1, allow_hyphen_values = true)]
    pub kappa: i32,
    /// Poles separated by '|', each "mu:re,im;C:re,im,re,im,..." with n_comp+1 entries in C.
    #[arg(long, default_value = "mu:0,1;C:1,0,1,0")]
    pub poles: String,
    /// xmin,xmax,dx,tmin,tmax,dt
    #[arg(long, default_value = "-20,20,0.1,0,0,0.1", allow_hyphen_values = true)]
    pub grid: String,
    /// Also measure the PDE residual order at tmin over dx, dx/2, dx/4.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LatticeArgs {
    #[arg(long, default_value_t = 32)]
    pub sites: usize,
    /// 1-based site carrying the defect.
    #[arg(long)]
    pub defect_site: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long = "T", default_value_t = 10.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 0.2)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 2)]
    pub n_comp: usize,
    /// corrected | as-printed
    #[arg(long, default_value = "corrected")]
    pub form: String,
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridFlags {
    #[arg(long, default_value_t = -8.0, allow_hyphen_values = true)]
    pub x_min: f64,
    #[arg(long, default_value_t = 8.0, allow_hyphen_values = true)]
    pub x_max: f64,
    /// Coarsest dx; the check also runs dx/2 and dx/4 with dt = dx^2/2.
    #[arg(long, default_value_t = 0.1)]
    pub dx: f64,
    #[arg(long, default_value_t = 0.2, allow_hyphen_values = true)]
    pub t: f64,
}

impl GridFlags {
    fn levels(&self) -> [f64; 3] {
        [self.dx, self.dx / 2.0, self.dx / 4.0]
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BtArgs {
    /// re,im
    #[arg(long, default_value = "0.3,1", allow_hyphen_values = true)]
    pub mu: String,
    /// auto | + | -
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    pub branch: String,
    #[arg(long, default_value_t = 1)]
    pub n_comp: usize,
    #[command(flatten)]
    pub grid: GridFlags,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GlmArgs {
    /// 1 or 2 terms per component.
    #[arg(long, default_value_t = 1)]
    pub terms: usize,
    /// Fit the reconstruction constant against the Darboux soliton.
    #[arg(long)]
    pub calibrate: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ZccArgs {
    /// Spectral parameter, re,im.
    #[arg(long, default_value = "2,0", allow_hyphen_values = true)]
    pub lambda: String,
    /// Parameter of the time matrices (defaults to lambda).
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<String>,
    #[command(flatten)]
    pub grid: GridFlags,
    #[arg(long, default_value_t = 16)]
    pub sites: usize,
    /// 1-based defect site.
    #[arg(long, default_value_t = 9)]
    pub defect_site: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SuiteArgs {
    /// Comma-separated criterion numbers, or "all".
    #[arg(long, default_value = "all")]
    pub criteria: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Level {
    Quiet,
    Info,
    Debug,
}

fn log_level() -> Level {
    match std::env::var("VNLS_LOG").unwrap_or_default().to_ascii_lowercase().as_str() {
        "debug" | "trace" => Level::Debug,
        "quiet" | "off" | "error" => Level::Quiet,
        _ => Level::Info,
    }
}

fn log(level: Level, msg: &str) {
    if log_level() >= level {
        eprintln!("{msg}");
    }
}

/// Result of one command: checks plus artifacts, before the summary is written.
struct Outcome {
    checks: Vec<Check>,
    artifacts: Vec<String>,
    extra: Value,
    error: Option<String>,
}

impl Outcome {
    fn new() -> Self {
        Self { checks: Vec::new(), artifacts: Vec::new(), extra: Value::Null, error: None }
    }
}

pub fn main_with_args<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    let cli = match cli.config.clone() {
        Some(path) => {
            if cli.command.is_some() {
                eprintln!("error: --config cannot be combined with a subcommand");
                return EXIT_USAGE;
            }
            match config_to_cli(&path) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_USAGE;
                }
            }
        }
        None => cli,
    };
    let Some(command) = cli.command else {
        eprintln!("error: a subcommand or --config is required (see --help)");
        return EXIT_USAGE;
    };
    if let Err(e) = std::fs::create_dir_all(&cli.output_dir) {
        eprintln!("error: cannot create output directory: {e}");
        return EXIT_USAGE;
    }
    let (name, config) = describe(&command);
    let outcome = match run_command(&command, cli.seed, &cli.output_dir) {
        Ok(o) => o,
        Err(Error::InvalidParams(m)) | Err(Error::Parse(m)) => {
            eprintln!("error: {m}");
            let mut o = Outcome::new();
            o.error = Some(m);
            let _ = std::fs::write(cli.output_dir.join("summary.json"), summary_json(name, cli.seed, config, &o, false));
            return EXIT_USAGE;
        }
        Err(e) => {
            let mut o = Outcome::new();
            o.error = Some(e.to_string());
            o
        }
    };
    for ck in &outcome.checks {
        println!("{}", ck.line());
    }
    if let Some(e) = &outcome.error {
        println!("error: {e}");
    }
    let pass = outcome.error.is_none() && suite::all_pass(&outcome.checks);
    let summary = summary_json(name, cli.seed, config, &outcome, pass);
    let path = cli.output_dir.join("summary.json");
    if let Err(e) = std::fs::write(&path, summary) {
        eprintln!("error: cannot write {}: {e}", path.display());
        return EXIT_CHECK_FAILED;
    }
    log(Level::Info, &format!("summary written to {}", path.display()));
    if pass {
        EXIT_PASS
    } else {
        EXIT_CHECK_FAILED
    }
}

fn describe(cmd: &Command) -> (&'static str, Value) {
    let v = |x: serde_json::Result<Value>| x.unwrap_or(Value::Null);
    match cmd {
        Command::Soliton(a) => ("soliton", v(serde_json::to_value(a))),
        Command::Lattice(a) => ("lattice", v(serde_json::to_value(a))),
        Command::BtCheck(a) => ("bt-check", v(serde_json::to_value(a))),
        Command::GlmCheck(a) => ("glm-check", v(serde_json::to_value(a))),
        Command::ZccCheck(a) => ("zcc-check", v(serde_json::to_value(a))),
        Command::Suite(a) => ("suite", v(serde_json::to_value(a))),
    }
}

/// Summary document. Everything except `timestamp` is a function of (config, seed).
pub fn summary_json_value(command: &str, seed: u64, config: Value, checks: &[Check], artifacts: &[String], extra: Value, error: Option<&str>, pass: bool) -> Value {
    json!({
        "command": command,
        "seed": seed,
        "config": config,
        "pass": pass,
        "error": error,
        "checks": checks,
        "artifacts": artifacts,
        "results": extra,
        "timestamp": std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    })
}

fn summary_json(command: &str, seed: u64, config: Value, o: &Outcome, pass: bool) -> String {
    let v = summary_json_value(command, seed, config, &o.checks, &o.artifacts, o.extra.clone(), o.error.as_deref(), pass);
    serde_json::to_string_pretty(&v).unwrap_or_default() + "\n"
}

/// Turns a JSON config into the equivalent argument list and parses it.
pub fn config_to_cli(path: &Path) -> Result<Cli> {
    let text = std::fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("config: {e}")))?;
    let obj = v.as_object().ok_or_else(|| Error::Parse("config must be a JSON object".into()))?;
    let command = obj.get("command").and_then(Value::as_str).ok_or_else(|| Error::Parse("config needs a \"command\" string".into()))?;
    let mut argv: Vec<String> = vec!["vnls".into(), command.into()];
    for key in ["seed", "output_dir"] {
        if let Some(val) = obj.get(key) {
            argv.push(format!("--{}", key.replace('_', "-")));
            argv.push(scalar(val)?);
        }
    }
    if let Some(args) = obj.get("args") {
        let args = args.as_object().ok_or_else(|| Error::Parse("\"args\" must be an object".into()))?;
        for (k, val) in args {
            let flag = if k == "T" || k == "t_end" { "--T".to_string() } else { format!("--{}", k.replace('_', "-")) };
            match val {
                Value::Bool(true) => argv.push(flag),
                Value::Bool(false) | Value::Null => {}
                _ => {
                    argv.push(flag);
                    argv.push(scalar(val)?);
                }
            }
        }
    }
    for k in obj.keys() {
        if !matches!(k.as_str(), "command" | "seed" | "output_dir" | "args") {
            return Err(Error::Parse(format!("unknown config key \"{k}\"")));
        }
    }
    Cli::try_parse_from(argv).map_err(|e| Error::Parse(e.to_string()))
}

fn scalar(v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(Error::Parse(format!("expected a string or number, got {v}"))),
    }
}

fn run_command(cmd: &Command, seed: u64, out: &Path) -> Result<Outcome> {
    match cmd {
        Command::Soliton(a) => run_soliton(a, out),
        Command::Lattice(a) => run_lattice(a, seed, out),
        Command::BtCheck(a) => run_bt(a),
        Command::GlmCheck(a) => run_glm(a),
        Command::ZccCheck(a) => run_zcc(a, seed),
        Command::Suite(a) => run_suite(a, seed),
    }
}

fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| Error::Parse(format!("not a number: \"{p}\""))))
        .collect()
}

/// Parses "re,im".
pub fn parse_complex(s: &str) -> Result<C64> {
    match parse_floats(s)?.as_slice() {
        [re, im] => Ok(c(*re, *im)),
        _ => Err(Error::Parse(format!("expected re,im, got \"{s}\""))),
    }
}

/// Parses "mu:re,im;C:re,im,..." poles separated by '|'.
pub fn parse_poles(s: &str, n: usize) -> Result<Vec<DarbouxPole>> {
    s.split('|')
        .map(|p| {
            let (mut mu, mut cv) = (None, None);
            for part in p.split(';') {
                let (key, val) = part.split_once(':').ok_or_else(|| Error::Parse(format!("bad pole field \"{part}\"")))?;
                match key.trim() {
                    "mu" => mu = Some(parse_complex(val)?),
                    "C" | "c" => {
                        let f = parse_floats(val)?;
                        if f.len() != 2 * n {
                            return Err(Error::Parse(format!("C needs {n} complex entries (re,im pairs), got {} numbers", f.len())));
                        }
                        cv = Some(f.chunks(2).map(|w| c(w[0], w[1])).collect::<Vec<_>>());
                    }
                    other => return Err(Error::Parse(format!("unknown pole field \"{other}\""))),
                }
            }
            let mu = mu.ok_or_else(|| Error::Parse("pole is missing mu".into()))?;
            let cv = cv.ok_or_else(|| Error::Parse("pole is missing C".into()))?;
            DarbouxPole::vector(mu, &cv).map_err(|e| Error::InvalidParams(e.to_string()))
        })
        .collect()
}

/// Parses "xmin,xmax,dx,tmin,tmax,dt".
pub fn parse_grid(s: &str) -> Result<GridSpec> {
    match parse_floats(s)?.as_slice() {
        [a, b, dx, t0, t1, dt] => GridSpec::from_ranges(*a, *b, *dx, *t0, *t1, *dt),
        _ => Err(Error::Parse(format!("grid needs xmin,xmax,dx,tmin,tmax,dt, got \"{s}\""))),
    }
}

fn run_soliton(a: &SolitonArgs, out: &Path) -> Result<Outcome> {
    if a.n_comp == 0 {
        return Err(Error::InvalidParams("--n-comp must be at least 1".into()));
    }
    let params = suite::params_for(a.n_comp, a.kappa).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let poles = parse_poles(&a.poles, params.n)?;
    let spec = SolitonSpec::new(params, poles).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let gs = parse_grid(&a.grid)?;
    log(Level::Debug, &format!("sampling {} x {} grid", gs.nx, gs.nt));
    let f = DressedField::new(spec.clone(), DressingMode::NPole);
    let g = FieldGrid::sample(&f, gs)?;
    let path = out.join("soliton.csv");
    export_grid(&g, a.kappa, "darboux n-pole dressing of the vacuum", &path)?;
    let mut o = Outcome::new();
    o.artifacts.push("soliton.csv".into());
    let (amp, xp) = g.row_peak(0);
    o.extra = json!({"peak_amplitude_t0": amp, "peak_x_t0": xp, "nx": gs.nx, "nt": gs.nt});
    if a.verify {
        let dxs = [gs.dx, gs.dx / 2.0, gs.dx / 4.0];
        let x1 = gs.x(gs.nx - 1);
        let errs = suite::pde_residuals(&f, a.kappa, (gs.x0, x1), gs.t0, &dxs)?;
        o.checks.push(
            Check::at_least("1", "PDE residual order over dx, dx/2, dx/4", suite::fitted_order(&dxs, &errs), 3.5)
                .with_note(format!("{:.2e} {:.2e} {:.2e}", errs[0], errs[1], errs[2])),
        );
    }
    Ok(o)
}

fn parse_form(s: &str) -> Result<Form> {
    match s {
        "corrected" => Ok(Form::Corrected),
        "as-printed" | "printed" => Ok(Form::AsPrinted),
        _ => Err(Error::Parse(format!("--form must be corrected or as-printed, got \"{s}\""))),
    }
}

fn run_lattice(a: &LatticeArgs, seed: u64, out: &Path) -> Result<Outcome> {
    let form = parse_form(&a.form)?;
    let site = match a.defect_site {
        Some(0) => return Err(Error::InvalidParams("--defect-site is 1-based".into())),
        Some(s) => Some(s - 1),
        None => None,
    };
    let s = suite::random_lattice(a.sites, a.n_comp, a.amplitude, site, seed).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let r = conservation_run(&s, a.dt, a.t_end, form)?;
    let tag = if site.is_some() { "with defect" } else { "bulk" };
    let names = ["I1", "I2", "I3"];
    let mut o = Outcome::new();
    for (k, name) in names.iter().enumerate() {
        let mut ck = Check::below("8", format!("relative drift of {name}, {tag}, T={}, dt={:e}", a.t_end, a.dt), r.rel_drift[k], a.tolerance);
        if let Some(tb) = r.blowup_time {
            ck = ck.with_note(format!("state blew up at t = {tb:.3}"));
        }
        o.checks.push(ck);
    }
    let initial: Vec<[f64; 2]> = r.initial.as_array().iter().map(|z| [z.re, z.im]).collect();
    let report = json!({
        "sites": a.sites,
        "defect_site": a.defect_site,
        "form": a.form,
        "relative_drift": r.rel_drift.iter().map(|d| if d.is_finite() { json!(d) } else { json!("inf") }).collect::<Vec<_>>(),
        "initial_charges": initial,
        "steps_done": r.steps_done,
        "t_reached": r.t_reached,
        "blowup_time": r.blowup_time,
        "max_amplitude": if r.max_amplitude.is_finite() { json!(r.max_amplitude) } else { json!("inf") },
    });
    std::fs::write(out.join("drift.json"), serde_json::to_string_pretty(&report).unwrap_or_default() + "\n")?;
    o.artifacts.push("drift.json".into());
    o.extra = report;
    Ok(o)
}

fn parse_branch(s: &str) -> Result<Option<i32>> {
    match s {
        "auto" => Ok(None),
        "+" | "plus" | "+1" => Ok(Some(1)),
        "-" | "\u{2212}" | "minus" | "-1" => Ok(Some(-1)),
        _ => Err(Error::Parse(format!("--branch must be auto, + or -, got \"{s}\""))),
    }
}

fn run_bt(a: &BtArgs) -> Result<Outcome> {
    let branch = parse_branch(&a.branch)?;
    let mu = parse_complex(&a.mu)?;
    let n = a.n_comp + 1;
    let pol: Vec<C64> = (0..n).map(|_| c(1.0, 0.0)).collect();
    let spec = suite::one_pole_spec(n, -1, mu, &pol).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let levels = a.grid.levels();
    let f = DressedField::new(spec.clone(), DressingMode::Single(0));
    let reps = levels
        .iter()
        .map(|&dx| {
            let gs = GridSpec::centred_in_time(a.grid.x_min, a.grid.x_max, dx, a.grid.t, 0.5 * dx * dx)?;
            let ut = FieldGrid::sample(&f, gs)?;
            let pair = crate::backlund::BtPair::new(FieldGrid::zeros(gs, ut.ncomp), ut, mu, -1, 1)?;
            crate::backlund::select_branch(&pair)
        })
        .collect::<Result<Vec<_>>>()?;
    let b = branch.unwrap_or(reps[2].best);
    let xs: Vec<f64> = reps.iter().map(|r| r.x_of(b)).collect();
    let ts: Vec<f64> = reps.iter().map(|r| r.t_of(b)).collect();
    let dts: Vec<f64> = levels.iter().map(|d| 0.5 * d * d).collect();
    let floor = reps.iter().map(|r| r.x_of(-b).min(r.t_of(-b))).fold(f64::INFINITY, f64::min);
    let bs = if b > 0 { "+" } else { "-" };
    let mut o = Outcome::new();
    o.checks.push(Check::at_least("4", format!("BT x-residual order, branch {bs}"), suite::fitted_order(&levels, &xs), 3.5).with_note(format!("{:.2e} {:.2e} {:.2e}", xs[0], xs[1], xs[2])));
    o.checks.push(Check::at_least("4", format!("BT t-residual order in dt, branch {bs}"), suite::fitted_order(&dts, &ts), 1.8).with_note(format!("{:.2e} {:.2e} {:.2e}", ts[0], ts[1], ts[2])));
    o.checks.push(Check::at_least("4", "BT other-branch floor", floor, 1e-3));
    o.extra = json!({"branch": bs, "auto_selected": reps.iter().map(|r| r.best).collect::<Vec<_>>()});
    Ok(o)
}

fn run_glm(a: &GlmArgs) -> Result<Outcome> {
    let mut o = Outcome::new();
    match a.terms {
        1 => {
            let bare = BareOperatorSpec::dispersive_for(&make_params(2, -1)?);
            let spec = bright_soliton_kernel(&bare, 1.0, 0.2, &[c(1.0, 0.0)])?;
            o.checks.push(Check::below("6", "GLM equation residual, one-term kernel", suite::glm_equation_residual(&spec)?, 1e-10));
            o.checks.push(Check::below("6", "closed-form L, L^, M^-1 vs linear solve", suite::closed_form_mismatch(&spec)?, 1e-12));
        }
        2 => {
            let all = suite::criterion6()?;
            o.checks.extend(all.into_iter().filter(|c| c.name.starts_with("GLM equation")));
        }
        _ => return Err(Error::InvalidParams("--terms must be 1 or 2".into())),
    }
    if a.calibrate {
        let cal = suite::glm_cross_oracle(1.0)?;
        o.checks.push(Check::below("6", "calibrated GLM modulus vs Darboux modulus on [-10, 10]", cal.max_abs_diff, 1e-8).with_note(format!("fitted c = {:.12}", cal.c)));
        o.extra = json!({"calibrated_c": cal.c});
    }
    Ok(o)
}

fn run_zcc(a: &ZccArgs, seed: u64) -> Result<Outcome> {
    let lambda = parse_complex(&a.lambda)?;
    let mu = match &a.mu {
        Some(m) => parse_complex(m)?,
        None => lambda,
    };
    if a.defect_site == 0 {
        return Err(Error::InvalidParams("--defect-site is 1-based".into()));
    }
    let mut o = Outcome::new();
    let spec = suite::one_pole_spec(2, -1, c(0.3, 1.0), &[c(1.0, 0.0), c(1.0, 0.0)])?;
    let f = DressedField::new(spec.clone(), DressingMode::Single(0));
    let levels = a.grid.levels();
    let errs = levels
        .iter()
        .map(|&dx| {
            let g = FieldGrid::sample(&f, GridSpec::centred_in_time(a.grid.x_min, a.grid.x_max, dx, a.grid.t, 0.5 * dx * dx)?)?;
            zero_curvature_residual(&g, &spec.params, lambda)
        })
        .collect::<Result<Vec<_>>>()?;
    o.checks.push(
        Check::at_least("1", "continuous zero-curvature residual order, one-soliton", suite::fitted_order(&levels, &errs), 3.5)
            .diagnostic()
            .with_note(format!("{:.2e} {:.2e} {:.2e}", errs[0], errs[1], errs[2])),
    );
    let s = suite::random_lattice(a.sites, suite::LATTICE_NCOMP, 0.2, Some(a.defect_site - 1), seed).map_err(|e| Error::InvalidParams(e.to_string()))?;
    for (cls, j, order, e) in suite::zcc_orders(&s, lambda, mu, Form::Corrected)? {
        let mut ck = Check::at_least("9", format!("discrete zcc order, site {} ({cls:?})", j + 1), order, 1.8).with_note(format!("{:.2e} {:.2e} {:.2e}", e[0], e[1], e[2]));
        if lambda != mu {
            ck = ck.diagnostic().with_note("lambda != mu: expected floor");
        }
        o.checks.push(ck);
    }
    Ok(o)
}

fn run_suite(a: &SuiteArgs, seed: u64) -> Result<Outcome> {
    let wanted: Vec<u32> = if a.criteria.trim() == "all" {
        (1..=12).collect()
    } else {
        a.criteria
            .split(',')
            .map(|s| s.trim().parse::<u32>().ok().filter(|k| (1..=12).contains(k)).ok_or_else(|| Error::Parse(format!("bad criterion \"{s}\""))))
            .collect::<Result<_>>()?
    };
    let mut o = Outcome::new();
    for k in wanted {
        log(Level::Info, &format!("criterion {k}"));
        let checks = match k {
            1 => suite::criterion1(),
            2 => suite::criterion2(seed, 100),
            3 => suite::criterion3(),
            4 => suite::criterion4(),
            5 => suite::criterion5(seed),
            6 => suite::criterion6(),
            7 => suite::criterion7(),
            8 => suite::criterion8(seed),
            9 => suite::criterion9(seed),
            10 => suite::criterion10(seed),
            11 => suite::criterion11(seed),
            _ => suite::criterion12(seed),
        }?;
        o.checks.extend(checks);
    }
    Ok(o)
}

/// Writes a grid as CSV: '#' header lines with N, kappa, geometry and provenance, then
/// columns x, t, re_u1, im_u1, ... Values use the shortest round-trip decimal form.
pub fn export_grid(g: &FieldGrid, kappa: i32, provenance: &str, path: &Path) -> Result<()> {
    std::fs::write(path, grid_to_csv(g, kappa, provenance))?;
    Ok(())
}

pub fn grid_to_csv(g: &FieldGrid, kappa: i32, provenance: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# N={} n_comp={} kappa={}", g.ncomp + 1, g.ncomp, kappa);
    let _ = writeln!(s, "# grid x0={:?} dx={:?} nx={} t0={:?} dt={:?} nt={}", g.x0, g.dx, g.nx, g.t0, g.dt, g.nt);
    let _ = writeln!(s, "# provenance={}", provenance.replace('\n', " "));
    s.push_str("x,t");
    for k in 1..=g.ncomp {
        let _ = write!(s, ",re_u{k},im_u{k}");
    }
    s.push('\n');
    for it in 0..g.nt {
        for ix in 0..g.nx {
            let _ = write!(s, "{:?},{:?}", g.x(ix), g.t(it));
            for z in g.at(it, ix) {
                let _ = write!(s, ",{:?},{:?}", z.re, z.im);
            }
            s.push('\n');
        }
    }
    s
}

/// Grid read back from CSV, with the kappa and provenance recorded in its header.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportedGrid {
    pub grid: FieldGrid,
    pub kappa: i32,
    pub provenance: String,
}

pub fn import_grid(path: &Path) -> Result<ImportedGrid> {
    grid_from_csv(&std::fs::read_to_string(path)?)
}

pub fn grid_from_csv(text: &str) -> Result<ImportedGrid> {
    let bad = |m: &str| Error::Parse(format!("grid csv: {m}"));
    let mut kv = std::collections::HashMap::new();
    let mut provenance = String::new();
    let mut lines = text.lines().peekable();
    while let Some(l) = lines.peek() {
        let Some(rest) = l.strip_prefix('#') else { break };
        let rest = rest.trim();
        if let Some(p) = rest.strip_prefix("provenance=") {
            provenance = p.to_string();
        } else {
            for tok in rest.split_whitespace() {
                if let Some((k, v)) = tok.split_once('=') {
                    kv.insert(k.to_string(), v.to_string());
                }
            }
        }
        lines.next();
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| bad(&format!("missing header field {k}")));
    let num = |k: &str| -> Result<f64> { get(k)?.parse::<f64>().map_err(|_| bad(k)) };
    let int = |k: &str| -> Result<usize> { get(k)?.parse::<usize>().map_err(|_| bad(k)) };
    let ncomp = int("n_comp")?;
    let kappa: i32 = get("kappa")?.parse().map_err(|_| bad("kappa"))?;
    let spec = GridSpec { x0: num("x0")?, dx: num("dx")?, nx: int("nx")?, t0: num("t0")?, dt: num("dt")?, nt: int("nt")? };
    let header = lines.next().ok_or_else(|| bad("missing column header"))?;
    if header.split(',').count() != 2 + 2 * ncomp {
        return Err(bad("column count does not match n_comp"));
    }
    let mut g = FieldGrid::zeros(spec, ncomp);
    let mut count = 0;
    for (row, l) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        if row >= spec.nx * spec.nt {
            return Err(bad("more rows than the grid holds"));
        }
        let f: Vec<f64> = l.split(',').map(|p| p.parse::<f64>().map_err(|_| bad(&format!("row {row}")))).collect::<Result<_>>()?;
        if f.len() != 2 + 2 * ncomp {
            return Err(bad(&format!("row {row} has {} fields", f.len())));
        }
        let (it, ix) = (row / spec.nx, row % spec.nx);
        for k in 0..ncomp {
            g.at_mut(it, ix)[k] = c(f[2 + 2 * k], f[3 + 2 * k]);
        }
        count += 1;
    }
    if count != spec.nx * spec.nt {
        return Err(bad("row count does not match the grid"));
    }
    Ok(ImportedGrid { grid: g, kappa, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(tag: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("vnls-cli-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    fn run(args: &[&str]) -> i32 {
        main_with_args(std::iter::once("vnls").chain(args.iter().copied()).map(OsString::from))
    }

    #[test]
    fn zero_grid_round_trip() {
        let g = FieldGrid::zeros(GridSpec::from_ranges(-1.0, 1.0, 0.5, 0.0, 0.2, 0.1).unwrap(), 2);
        let csv = grid_to_csv(&g, -1, "zeros");
        assert!(csv.lines().skip(4).all(|l| l.ends_with(",0.0,0.0,0.0,0.0")));
        let back = grid_from_csv(&csv).unwrap();
        assert_eq!(back.grid, g);
        assert_eq!(back.kappa, -1);
        assert_eq!(back.provenance, "zeros");
    }

    #[test]
    fn soliton_grid_round_trip_is_bit_exact() {
        let spec = suite::one_pole_spec(3, -1, c(0.3, 1.0), &[c(1.0, 0.0), c(0.5, 0.5), c(1.0, 0.0)]).unwrap();
        let f = DressedField::new(spec, DressingMode::Single(0));
        let g = FieldGrid::sample(&f, GridSpec::from_ranges(-3.0, 3.0, 0.1, 0.0, 0.3, 0.1).unwrap()).unwrap();
        let back = grid_from_csv(&grid_to_csv(&g, -1, "one soliton")).unwrap().grid;
        assert_eq!(back.values.len(), g.values.len());
        for (a, b) in back.values.iter().zip(&g.values) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(grid_from_csv("x,t\n").is_err());
        let g = FieldGrid::zeros(GridSpec::from_ranges(0.0, 1.0, 0.5, 0.0, 0.0, 0.1).unwrap(), 1);
        let mut csv = grid_to_csv(&g, 1, "p");
        csv.push_str("9,9,9,9\n");
        assert!(grid_from_csv(&csv).is_err());
    }

    #[test]
    fn parse_helpers() {
        assert_eq!(parse_complex("0.5,-1").unwrap(), c(0.5, -1.0));
        assert!(parse_complex("1").is_err());
        let p = parse_poles("mu:0,1;C:1,0,1,0|mu:0.5,1;C:1,0,0,1", 2).unwrap();
        assert_eq!(p.len(), 2);
        assert!(parse_poles("mu:0,1;C:1,0", 2).is_err());
        assert_eq!(parse_branch("\u{2212}").unwrap(), Some(-1));
        assert!(parse_grid("0,1,0.1").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        let d = tmpdir("usage");
        let o = d.to_str().unwrap();
        assert_eq!(run(&[]), EXIT_USAGE);
        assert_eq!(run(&["no-such-command"]), EXIT_USAGE);
        assert_eq!(run(&["--output-dir", o, "soliton", "--poles", "mu:0,1"]), EXIT_USAGE);
        assert_eq!(run(&["--output-dir", o, "lattice", "--form", "other"]), EXIT_USAGE);
        assert_eq!(run(&["--output-dir", o, "glm-check", "--terms", "3"]), EXIT_USAGE);
        let s: Value = serde_json::from_str(&std::fs::read_to_string(d.join("summary.json")).unwrap()).unwrap();
        assert_eq!(s["pass"], json!(false));
        assert!(s["error"].as_str().unwrap().contains("terms"));
    }

    #[test]
    fn soliton_command_writes_csv_and_summary() {
        let d = tmpdir("soliton");
        let o = d.to_str().unwrap();
        assert_eq!(run(&["--output-dir", o, "soliton", "--grid", "-20,20,0.1,0,0,0.1"]), EXIT_PASS);
        let g = import_grid(&d.join("soliton.csv")).unwrap();
        assert_eq!(g.grid.nx, 401);
        // mu = i, C = (1, 1): |u(x, 0)| = sech(x - x0) with x0 = 0 on the grid, peak Im mu = 1
        let (amp, xp) = g.grid.row_peak(0);
        assert!((amp - 1.0).abs() < 1e-12 && xp.abs() < 1e-12, "{amp} at {xp}");
        let s: Value = serde_json::from_str(&std::fs::read_to_string(d.join("summary.json")).unwrap()).unwrap();
        assert_eq!(s["pass"], json!(true));
    }

    #[test]
    fn summary_is_deterministic_apart_from_timestamp() {
        let strip = |d: &Path| {
            let mut v: Value = serde_json::from_str(&std::fs::read_to_string(d.join("summary.json")).unwrap()).unwrap();
            v.as_object_mut().unwrap().remove("timestamp");
            serde_json::to_string(&v).unwrap()
        };
        let (a, b) = (tmpdir("det-a"), tmpdir("det-b"));
        for d in [&a, &b] {
            let code = run(&["--seed", "7", "--output-dir", d.to_str().unwrap(), "lattice", "--sites", "8", "--defect-site", "4", "--T", "0.2", "--dt", "0.01"]);
            assert_eq!(code, EXIT_PASS);
        }
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn config_file_drives_a_run() {
        let d = tmpdir("config");
        let cfg = d.join("run.json");
        let doc = json!({"command": "lattice", "seed": 3, "output_dir": d.to_str().unwrap(),
            "args": {"sites": 8, "T": 0.1, "dt": 0.01, "defect_site": 3}});
        std::fs::write(&cfg, doc.to_string()).unwrap();
        assert_eq!(run(&["--config", cfg.to_str().unwrap()]), EXIT_PASS);
        let s: Value = serde_json::from_str(&std::fs::read_to_string(d.join("summary.json")).unwrap()).unwrap();
        assert_eq!(s["seed"], json!(3));
        assert_eq!(s["config"]["defect_site"], json!(3));
        std::fs::write(&cfg, json!({"command": "lattice", "bogus": 1}).to_string()).unwrap();
        assert_eq!(run(&["--config", cfg.to_str().unwrap()]), EXIT_USAGE);
    }

    #[test]
    fn failing_check_exits_1() {
        let d = tmpdir("fail");
        let code = run(&["--output-dir", d.to_str().unwrap(), "lattice", "--sites", "8", "--T", "0.1", "--dt", "0.01", "--tolerance", "0"]);
        assert_eq!(code, EXIT_CHECK_FAILED);
    }
}
