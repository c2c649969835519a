//! Command-line front end: configuration, result cache and report emission.

pub mod cache;
pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use schottky_core::schottky::SchottkyGroup;
use schottky_core::Error;

use cache::{sha256_hex, Cache};
use commands::{Output, Stamp};
use config::{ConfigError, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

/// Why a run did not succeed.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Config(ConfigError),
    Core(Error),
    Io(std::io::Error),
    /// A check ran to completion and failed; its report is still emitted.
    Check { message: String, outputs: Vec<Output> },
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) | Failure::Config(_) => EXIT_USAGE,
            Failure::Check { .. } => EXIT_VALIDATION,
            Failure::Io(_) => EXIT_FAILURE,
            Failure::Core(e) => match e {
                Error::ResourceLimit(_) | Error::IncompleteEnumeration(..) => EXIT_RESOURCE,
                Error::NotUnimodular(_)
                | Error::NotHyperbolic(_)
                | Error::IntervalsOverlap(..)
                | Error::TooFewGenerators(_)
                | Error::Parse(_)
                | Error::NotAdmissible { .. } => EXIT_VALIDATION,
                _ => EXIT_FAILURE,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Config(e) => write!(f, "config: {e}"),
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Io(e) => write!(f, "io: {e}"),
            Failure::Check { message, .. } => write!(f, "{message}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "schottky", version, about = "Transfer operators and zeta functions of Schottky groups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Group file, one generator `a b c d` per line.
    #[arg(long, global = true)]
    group: Option<PathBuf>,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["csv", "json"])]
    format: Option<String>,
    #[arg(long, global = true)]
    order: Option<usize>,
    /// Comma-separated levels.
    #[arg(long, global = true)]
    q: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Any configuration key, applied after the file.
    #[arg(long = "set", short = 's', global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    no_cache: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Check the ping-pong data and print intervals and expansion constants.
    Validate,
    /// Dimension at several collocation orders, with the box-count estimate.
    Dimension,
    /// Pressure curve `log λ(s)`.
    Spectrum,
    /// New-space spectral radii of the twisted operators.
    Gap,
    /// Contraction audit of the cancellation operators.
    DolgopyatAudit,
    /// Determinant zeros in a window.
    Zeta,
    /// Resonance-free strip scan.
    Resonances,
    /// Closed geodesic counts and the base orbit table.
    Geodesics,
    /// Orbit point counts in hyperbolic balls.
    Orbits,
    /// Correlation decay and the Laplace-transform check.
    Mix,
    /// Cayley graph gaps of the congruence quotients.
    Expander,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Dimension => "dimension",
            Command::Spectrum => "spectrum",
            Command::Gap => "gap",
            Command::DolgopyatAudit => "dolgopyat-audit",
            Command::Zeta => "zeta",
            Command::Resonances => "resonances",
            Command::Geodesics => "geodesics",
            Command::Orbits => "orbits",
            Command::Mix => "mix",
            Command::Expander => "expander",
        }
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut c = RunConfig::default();
    if let Some(p) = &cli.config {
        c.merge_text(&fs::read_to_string(p)?)?;
    }
    let mut flags: Vec<(&str, String)> = Vec::new();
    if let Some(v) = &cli.group {
        flags.push(("group", v.display().to_string()));
    }
    if let Some(v) = &cli.out {
        flags.push(("out", v.display().to_string()));
    }
    if let Some(v) = &cli.format {
        flags.push(("format", v.clone()));
    }
    if let Some(v) = cli.order {
        flags.push(("order", v.to_string()));
    }
    if let Some(v) = &cli.q {
        flags.push(("q", v.clone()));
    }
    if let Some(v) = cli.seed {
        flags.push(("seed", v.to_string()));
    }
    if let Some(v) = cli.samples {
        flags.push(("samples", v.to_string()));
    }
    for (k, v) in flags {
        c.set(k, &v)?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("`--set {kv}` is not KEY=VALUE")))?;
        c.set(k.trim(), v)?;
    }
    if cli.no_cache {
        c.cache = false;
    }
    c.validate()?;
    Ok(c)
}

/// Canonical generator listing, the input of the group hash.
fn group_text(g: &SchottkyGroup) -> String {
    g.generators()
        .iter()
        .map(|m| format!("{} {} {} {}\n", m.a(), m.b(), m.c(), m.d()))
        .collect()
}

fn execute(cmd: Command, g: &SchottkyGroup, c: &RunConfig, stamp: &Stamp) -> Result<Vec<Output>, Failure> {
    match cmd {
        Command::Validate => commands::validate(g, c, stamp),
        Command::Dimension => commands::dimension(g, c, stamp),
        Command::Spectrum => commands::spectrum(g, c, stamp),
        Command::Gap => commands::gap(g, c, stamp),
        Command::DolgopyatAudit => commands::dolgopyat_audit(g, c, stamp),
        Command::Zeta => commands::zeta(g, c, stamp),
        Command::Resonances => commands::resonances(g, c, stamp),
        Command::Geodesics => commands::geodesics(g, c, stamp),
        Command::Orbits => commands::orbits(g, c, stamp),
        Command::Mix => commands::mix(g, c, stamp),
        Command::Expander => commands::expander(g, c, stamp),
    }
}

/// Cache payload: `name\0body\0` per output.
fn pack(outputs: &[Output]) -> Vec<u8> {
    let mut v = Vec::new();
    for o in outputs {
        v.extend_from_slice(o.name.as_bytes());
        v.push(0);
        v.extend_from_slice(o.body.as_bytes());
        v.push(0);
    }
    v
}

fn unpack(bytes: &[u8]) -> Option<Vec<Output>> {
    let parts: Vec<&[u8]> = bytes.split(|&b| b == 0).collect();
    let (last, parts) = parts.split_last()?;
    if !last.is_empty() || parts.len() % 2 != 0 {
        return None;
    }
    parts
        .chunks(2)
        .map(|p| {
            Some(Output {
                name: String::from_utf8(p[0].to_vec()).ok()?,
                body: String::from_utf8(p[1].to_vec()).ok()?,
            })
        })
        .collect()
}

fn emit(c: &RunConfig, outputs: &[Output]) -> Result<(), Failure> {
    match &c.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            for o in outputs {
                fs::write(dir.join(&o.name), &o.body)?;
            }
        }
        None => {
            if let Some(o) = outputs.first() {
                print!("{}", o.body);
            }
        }
    }
    Ok(())
}

fn run_cli(cli: Cli) -> Result<(), Failure> {
    let c = build_config(&cli)?;
    let g = match &c.group {
        Some(p) => SchottkyGroup::parse(&fs::read_to_string(p)?)?,
        None => SchottkyGroup::reference(),
    };
    let group_hash = sha256_hex(group_text(&g).as_bytes());
    let config_hash = sha256_hex(format!("{}\n{}", cli.command.name(), c.canonical()).as_bytes());
    let stamp = Stamp { group_hash, config_hash };
    let key = sha256_hex(format!("{}\n{}\n{}", stamp.group_hash, stamp.config_hash, c.format).as_bytes());
    let cache = (c.cache && cli.command != Command::Validate)
        .then(cache::default_dir)
        .flatten()
        .map(Cache::new);
    if let Some(hit) = cache.as_ref().and_then(|k| k.get(&key)).and_then(|b| unpack(&b)) {
        return emit(&c, &hit);
    }
    match execute(cli.command, &g, &c, &stamp) {
        Ok(outputs) => {
            if let Some(k) = &cache {
                // an unwritable cache only costs a recomputation
                if let Err(e) = k.put(&key, &pack(&outputs)) {
                    eprintln!("warning: cache write to {} failed: {e}", k.dir().display());
                }
            }
            emit(&c, &outputs)
        }
        Err(Failure::Check { message, outputs }) => {
            emit(&c, &outputs)?;
            Err(Failure::Check { message, outputs })
        }
        Err(e) => Err(e),
    }
}

/// Runs the tool on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run_cli(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
