//! The `sasm` command line.
//!
//! Machine-readable results go to stdout, diagnostics to stderr. Exit codes:
//! 0 when the command completed (answers such as "no FSC" are payload), 2 for
//! bad input, 1 for internal errors and exhausted budgets.

use std::ffi::OsString;
use std::fs;
use std::io::{Read, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use thiserror::Error;

use crate::builders::{grid_ne_sw, grid_ns_ew, random_spec, BuildError};
use crate::fscgen::{manna_fsc_chain, render, FscGenError};
use crate::model::{validate, Configuration, ModelError, SandpileSpec, SpecDocument, SubConfiguration};
use crate::oracle::{
    minimal_irreducible_subsandpiles, recurrent_stable_set, witness_to_value, OracleConfig, OracleError,
    RecurrentSet, DEFAULT_FSC_BUDGET, DEFAULT_STATE_CAP, DEFAULT_SUBSET_BUDGET,
};
use crate::reduce::{decide_fsc_exists, reduce, ReduceError};

pub const STATE_CAP_VAR: &str = "SASM_STATE_CAP";

#[derive(Debug, Parser)]
#[command(name = "sasm", version, about = "Stochastic abelian sandpile models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a sandpile document against every structural invariant.
    Validate { spec: String },
    /// Run the flushing fixed point and print flushed and residual sites.
    Reduce {
        spec: String,
        /// Include the per-round layers.
        #[arg(long)]
        trace: bool,
    },
    /// Decide whether a forbidden sub-configuration exists.
    DecideFsc { spec: String },
    /// Generate sandpiles and sub-configurations.
    #[command(subcommand)]
    Gen(Gen),
    /// Exhaustive recurrence queries on small sandpiles.
    #[command(subcommand)]
    Oracle(OracleCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GridModel {
    NsEw,
    NeSw,
}

#[derive(Debug, Subcommand)]
enum Gen {
    Grid {
        #[arg(long, value_enum)]
        model: GridModel,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
    },
    /// Chain of zero 2×2 blocks of Manna's model glued at shared corners.
    MannaFsc {
        #[arg(long)]
        blocks: usize,
        /// Top-left site of the chain as ROW,COL (1-indexed).
        #[arg(long, value_parser = parse_offset, default_value = "1,1")]
        offset: (usize, usize),
        /// Print a text grid instead of JSON.
        #[arg(long)]
        render: bool,
    },
    Random {
        #[arg(long)]
        sites: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        max_capacity: u32,
        #[arg(long, default_value_t = 2)]
        max_rules: usize,
    },
}

#[derive(Debug, Args)]
struct Bounds {
    /// Largest number of stable configurations to enumerate
    /// (default 2^20, or $SASM_STATE_CAP).
    #[arg(long)]
    max_states: Option<u128>,
    /// Largest particle count handed to stabilization.
    #[arg(long)]
    max_particles: Option<u64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Fail instead of recording a toppling cycle.
    #[arg(long)]
    strict_termination: bool,
    /// Write witness chains to this file.
    #[arg(long)]
    witness: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum OracleCommand {
    RecurrentSet {
        spec: String,
        #[command(flatten)]
        bounds: Bounds,
    },
    IsRecurrent {
        spec: String,
        config: String,
        #[command(flatten)]
        bounds: Bounds,
    },
    IsForbidden {
        spec: String,
        subconfig: String,
        #[command(flatten)]
        bounds: Bounds,
    },
    MinimalFscs {
        spec: String,
        #[arg(long)]
        max_region: usize,
        #[arg(long, default_value_t = DEFAULT_FSC_BUDGET)]
        budget: u64,
        #[command(flatten)]
        bounds: Bounds,
    },
    MinIrred {
        spec: String,
        #[arg(long)]
        containing: Option<String>,
        #[arg(long, default_value_t = DEFAULT_SUBSET_BUDGET)]
        budget: usize,
    },
}

fn parse_offset(text: &str) -> Result<(usize, usize), String> {
    let (r, c) = text.split_once(',').ok_or("expected ROW,COL")?;
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|e| format!("{s}: {e}"));
    Ok((parse(r)?, parse(c)?))
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::ToppleAtStableSite { .. }
            | ModelError::InvalidRuleIndex { .. }
            | ModelError::StepBudgetExhausted { .. } => CliError::Failure(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ReduceError> for CliError {
    fn from(e: ReduceError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Model(m) => m.into(),
            OracleError::Reduce(r) => r.into(),
            OracleError::NotStable | OracleError::InvalidArgument(_) => CliError::Input(e.to_string()),
            _ => CliError::Failure(e.to_string()),
        }
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<FscGenError> for CliError {
    fn from(e: FscGenError) -> Self {
        CliError::Input(e.to_string())
    }
}

struct Io<'a> {
    stdin: &'a mut dyn Read,
    stdout: &'a mut dyn Write,
}

impl Io<'_> {
    fn read(&mut self, path: &str) -> Result<String, CliError> {
        if path == "-" {
            let mut text = String::new();
            self.stdin
                .read_to_string(&mut text)
                .map_err(|e| CliError::Input(format!("reading stdin: {e}")))?;
            Ok(text)
        } else {
            fs::read_to_string(path).map_err(|e| CliError::Input(format!("reading {path}: {e}")))
        }
    }

    fn spec(&mut self, path: &str) -> Result<SandpileSpec, CliError> {
        Ok(SandpileSpec::from_json(&self.read(path)?)?)
    }

    fn emit(&mut self, value: &Value) -> Result<(), CliError> {
        self.line(&value.to_string())
    }

    fn line(&mut self, text: &str) -> Result<(), CliError> {
        writeln!(self.stdout, "{text}").map_err(|e| CliError::Failure(format!("writing output: {e}")))
    }
}

fn write_file(path: &PathBuf, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Failure(format!("writing {}: {e}", path.display())))
}

fn state_cap(flag: Option<u128>) -> Result<u128, CliError> {
    if let Some(cap) = flag {
        return Ok(cap);
    }
    match std::env::var(STATE_CAP_VAR) {
        Ok(text) => text
            .trim()
            .parse()
            .map_err(|e| CliError::Input(format!("{STATE_CAP_VAR}={text}: {e}"))),
        Err(_) => Ok(DEFAULT_STATE_CAP),
    }
}

fn oracle_config(bounds: &Bounds) -> Result<OracleConfig, CliError> {
    if bounds.jobs == 0 {
        return Err(CliError::Input("--jobs must be at least 1".into()));
    }
    Ok(OracleConfig {
        max_states: state_cap(bounds.max_states)?,
        max_particles: bounds.max_particles,
        jobs: bounds.jobs,
        strict_termination: bounds.strict_termination,
        ..OracleConfig::default()
    })
}

fn recurrent(spec: &SandpileSpec, bounds: &Bounds) -> Result<RecurrentSet, CliError> {
    Ok(recurrent_stable_set(spec, &oracle_config(bounds)?)?)
}

/// Witness chain of `member` as one JSON line, written to `--witness`.
fn write_chain(set: &RecurrentSet, member: &Configuration, bounds: &Bounds) -> Result<Option<Value>, CliError> {
    let Some(chain) = set.witness(member) else {
        return Ok(None);
    };
    let value = witness_to_value(set.spec(), &chain);
    if let Some(path) = &bounds.witness {
        write_file(path, format!("{value}\n").as_bytes())?;
    }
    Ok(Some(value))
}

fn execute(cli: Cli, io: &mut Io) -> Result<i32, CliError> {
    match cli.command {
        Command::Validate { spec } => {
            let doc = SpecDocument::from_json(&io.read(&spec)?)?;
            let report = validate(&doc);
            let mut out = json!({ "ok": report.is_clean() });
            if !report.violations.is_empty() {
                out["violations"] = json!(report.violations);
            }
            if !report.warnings.is_empty() {
                out["warnings"] = json!(report.warnings);
            }
            io.emit(&out)?;
            Ok(if report.is_clean() { 0 } else { 2 })
        }
        Command::Reduce { spec, trace } => {
            let spec = io.spec(&spec)?;
            io.emit(&reduce(&spec).to_value(trace))?;
            Ok(0)
        }
        Command::DecideFsc { spec } => {
            let spec = io.spec(&spec)?;
            let out = match decide_fsc_exists(&spec) {
                Some(w) => json!({ "exists": true, "witness": w.sub_configuration.to_value() }),
                None => json!({ "exists": false }),
            };
            io.emit(&out)?;
            Ok(0)
        }
        Command::Gen(gen) => {
            match gen {
                Gen::Grid { model, rows, cols } => {
                    let spec = match model {
                        GridModel::NsEw => grid_ns_ew(rows, cols)?,
                        GridModel::NeSw => grid_ne_sw(rows, cols)?,
                    };
                    io.line(&spec.to_json())?;
                }
                Gen::MannaFsc { blocks, offset, render: text } => {
                    let chain = manna_fsc_chain(blocks, offset)?;
                    if text {
                        write!(io.stdout, "{}", render(&chain)?)
                            .map_err(|e| CliError::Failure(format!("writing output: {e}")))?;
                    } else {
                        io.line(&chain.to_json())?;
                    }
                }
                Gen::Random { sites, seed, max_capacity, max_rules } => {
                    io.line(&random_spec(sites, max_capacity, max_rules, seed)?.to_json())?;
                }
            }
            Ok(0)
        }
        Command::Oracle(cmd) => oracle(cmd, io),
    }
}

fn oracle(cmd: OracleCommand, io: &mut Io) -> Result<i32, CliError> {
    match cmd {
        OracleCommand::RecurrentSet { spec, bounds } => {
            let spec = io.spec(&spec)?;
            let set = recurrent(&spec, &bounds)?;
            let mut buf = Vec::new();
            set.write_jsonl(&mut buf).expect("writing to memory");
            io.stdout
                .write_all(&buf)
                .map_err(|e| CliError::Failure(format!("writing output: {e}")))?;
            if let Some(path) = &bounds.witness {
                let mut buf = Vec::new();
                set.write_witnesses(&mut buf).expect("writing to memory");
                write_file(path, &buf)?;
            }
        }
        OracleCommand::IsRecurrent { spec, config, bounds } => {
            let spec = io.spec(&spec)?;
            let config = Configuration::from_json(&spec, &io.read(&config)?)?;
            let set = recurrent(&spec, &bounds)?;
            set.query(&config)?;
            let out = match write_chain(&set, &config, &bounds)? {
                Some(chain) => json!({ "recurrent": true, "witness": chain }),
                None => json!({ "recurrent": false }),
            };
            io.emit(&out)?;
        }
        OracleCommand::IsForbidden { spec, subconfig, bounds } => {
            let spec = io.spec(&spec)?;
            let sub = SubConfiguration::from_json(&io.read(&subconfig)?)?;
            sub.resolve(&spec)?;
            let set = recurrent(&spec, &bounds)?;
            let matching = set
                .members()
                .iter()
                .find(|m| sub.matches(&spec, m).unwrap_or(false));
            let out = match matching {
                Some(m) => {
                    let mut out = json!({ "forbidden": false, "example": m.to_value(&spec) });
                    if let Some(chain) = write_chain(&set, m, &bounds)? {
                        out["witness"] = chain;
                    }
                    out
                }
                None => json!({ "forbidden": true }),
            };
            io.emit(&out)?;
        }
        OracleCommand::MinimalFscs { spec, max_region, budget, bounds } => {
            let spec = io.spec(&spec)?;
            let set = recurrent(&spec, &bounds)?;
            let fscs = set.minimal_fscs(max_region, budget)?;
            let list: Vec<Value> = fscs.iter().map(SubConfiguration::to_value).collect();
            io.emit(&json!({ "minimal_fscs": list }))?;
        }
        OracleCommand::MinIrred { spec, containing, budget } => {
            let spec = io.spec(&spec)?;
            let found = minimal_irreducible_subsandpiles(&spec, containing.as_deref(), budget)?;
            io.emit(&json!({ "minimal_irreducible": found }))?;
        }
    }
    Ok(0)
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code.
pub fn run<I, T>(args: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
            } else {
                let _ = write!(stdout, "{text}");
            }
            return code;
        }
    };
    let mut io = Io { stdin, stdout };
    match execute(cli, &mut io) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.code()
        }
    }
}
