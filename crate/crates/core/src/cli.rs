//! Command-line front end. `run` parses arguments, dispatches, and maps
//! errors to exit codes: 0 success, 1 invalid parameters, 2 verification
//! failure, 3 I/O or malformed files.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::extract::{CondExtractor, ExtractorConfig, ParamCheck, StringExtractor, TablePolicy};
use crate::params::{Rational, TableParams};
use crate::seqtransform::{
    schedule_covering, BitStream, SeededStream, SeqPolicy, SeqTransformer, VecStream,
};
use crate::sources::{run_extraction_experiment, ExperimentConfig, PlantedPairSpec};
use crate::tables::{self, BalancedTable};
use crate::verify::{self, RectMode, VerifyOptions};

const TABLE_FORMAT: &str = "\
TABLE FILE FORMAT
  bytes 0..4    magic \"BTAB\"
  bytes 4..6    format version, u16 little-endian (1)
  byte  6       backend: 0 explicit random, 1 explicit canonical, 2 keyed
  bytes 7..11   n_exp, m_exp, s_exp, d_exp (one byte each)
  bytes 11..27  seed (u64 LE, zero padded) or 128-bit key (LE)
  bytes 27..    explicit tables only: N*N colors, row-major, one byte each
                when m_exp <= 8, else u16 little-endian; keyed tables stop
                after the header";

const BITS_FORMAT: &str = "\
BIT FILES
  Inputs and outputs are raw bytes read most significant bit first; the last
  byte is zero padded. --bits L keeps only the first L bits of each input.";

const REPORT_FORMAT: &str = "\
REPORT (JSON)
  mode, passed, rectangles_checked, worst_ratio {num, den} (max over checked
  rectangles of observed mass / allowed mass, passed iff <= 1), witness
  {rows, cols, colors | prefix, count} for the first violating rectangle,
  params {n_exp, m_exp, s_exp, d_exp, row_side, col_side, check}, table_digest
  (SHA-256 of the table file bytes).";

const EXPERIMENT_FORMAT: &str = "\
EXPERIMENT OUTPUT
  CSV: header trial,seed,dep_planted,dep_hat,z_hex with one row per trial.
  Summary JSON: parameters, m_exp, nominal_bound, min_entropy,
  collision_entropy, insufficient_sampling, dep_hat {mean, sd, min, max},
  table backend and digest.";

#[derive(Parser, Debug)]
#[command(
    name = "kextract",
    version,
    about = "Balanced tables and two-source extractors"
)]
struct Cli {
    /// Worker threads for verification and experiments (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Truncate each input bit file to its first L bits.
    #[arg(long, global = true, value_name = "L")]
    bits: Option<u64>,

    /// Require parameters under which the extractor's guarantee applies.
    #[arg(long, global = true)]
    strict: bool,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Build a table and write it to a file.
    #[command(after_help = TABLE_FORMAT)]
    GenTable(GenTable),
    /// Check (S, D)-balance (or prefix balance) of a table file.
    #[command(after_help = verify_help())]
    VerifyTable(VerifyTable),
    /// Print both sides of the existence inequality S^2 > 3M + 3M ln D + 6SD + 6SD ln(N/S).
    CheckCondition(Exps),
    /// Extract from two strings with parameters (sigma, alpha).
    #[command(after_help = BITS_FORMAT)]
    Extract(ExtractArgs),
    /// Conditional extraction with integer complexity and dependency bounds.
    #[command(after_help = BITS_FORMAT)]
    ExtractCond(ExtractCondArgs),
    /// Block-wise transform of two bit streams.
    #[command(after_help = BITS_FORMAT)]
    Transform(TransformArgs),
    /// Planted-dependency extraction experiment.
    #[command(after_help = EXPERIMENT_FORMAT)]
    Experiment(ExperimentArgs),
}

fn verify_help() -> String {
    format!("{TABLE_FORMAT}\n\n{REPORT_FORMAT}")
}

#[derive(Args, Debug)]
struct Exps {
    #[arg(long)]
    n_exp: u32,
    #[arg(long)]
    m_exp: u32,
    #[arg(long)]
    s_exp: u32,
    #[arg(long)]
    d_exp: u32,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendArg {
    Random,
    Canonical,
    Keyed,
}

#[derive(Args, Debug)]
struct GenTable {
    #[command(flatten)]
    exps: Exps,
    #[arg(long, value_enum, default_value = "random")]
    backend: BackendArg,
    /// Random seed, or the key of a keyed table.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Exhaustive,
    Sampled,
}

#[derive(Args, Debug)]
struct VerifyTable {
    #[arg(long)]
    table: PathBuf,
    #[arg(long, value_enum, default_value = "exhaustive")]
    mode: ModeArg,
    #[arg(long, default_value_t = 10_000)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the table's S exponent.
    #[arg(long)]
    s_exp: Option<u32>,
    /// Override the table's D exponent.
    #[arg(long)]
    d_exp: Option<u32>,
    /// Check color prefixes of every length instead of color subsets.
    #[arg(long)]
    prefix_balance: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    Auto,
    Random,
    Keyed,
    Canonical,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    sigma: Rational,
    #[arg(long)]
    alpha: Rational,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Table source; auto uses an explicit random table when small enough.
    #[arg(long, value_enum, default_value = "auto")]
    backend: PolicyArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExtractCondArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    /// Complexity bound s(n) in bits.
    #[arg(long)]
    s: u32,
    /// Dependency bound alpha(n) in bits.
    #[arg(long)]
    alpha: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "auto")]
    backend: PolicyArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TransformArgs {
    /// Bit file, or rand:SEED for a pseudorandom stream.
    #[arg(long)]
    x: String,
    #[arg(long)]
    y: String,
    #[arg(long)]
    tau: Rational,
    #[arg(long)]
    delta: Rational,
    #[arg(long = "B", value_name = "K", default_value_t = 2)]
    base: u64,
    #[arg(long)]
    out_bits: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fail instead of using keyed tables for large blocks.
    #[arg(long)]
    no_keyed: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    n: u32,
    #[arg(long)]
    sigma: Rational,
    #[arg(long)]
    alpha: Rational,
    #[arg(long)]
    trials: u64,
    /// Table seed and master seed of the per-trial sources.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    summary: PathBuf,
}

enum Outcome {
    Ok,
    VerificationFailed,
}

/// Stable short name of an error for the stderr line.
fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidParams(_) => "invalid_params",
        Error::TooLarge(_) => "too_large",
        Error::NotFound => "not_found",
        Error::OutOfRange { .. } => "out_of_range",
        Error::BlockTooLarge { .. } => "block_too_large",
        Error::StreamExhausted { .. } => "stream_exhausted",
        Error::Format(_) => "format",
        Error::Io(_) => "io",
        Error::Csv(_) => "csv",
        Error::Json(_) => "json",
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Format(_) => 3,
        _ => 1,
    }
}

fn report_error(kind: &str, msg: &str) {
    let msg = serde_json::to_string(msg).unwrap_or_default();
    eprintln!("error kind={kind} message={msg}");
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ => {
                    let text = e.to_string();
                    let first = text.lines().next().unwrap_or("bad arguments");
                    report_error("usage", first.trim_start_matches("error: "));
                    1
                }
            };
        }
    };
    match dispatch(&cli) {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::VerificationFailed) => 2,
        Err(e) => {
            report_error(error_kind(&e), &e.to_string());
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Cmd::GenTable(a) => gen_table(a),
        Cmd::VerifyTable(a) => verify_table(cli, a),
        Cmd::CheckCondition(e) => check_condition(e),
        Cmd::Extract(a) => extract(cli, a),
        Cmd::ExtractCond(a) => extract_cond(cli, a),
        Cmd::Transform(a) => transform(cli, a),
        Cmd::Experiment(a) => experiment(cli, a),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn gen_table(a: &GenTable) -> Result<Outcome> {
    let e = &a.exps;
    let params = TableParams::new(e.n_exp, e.m_exp, e.s_exp, e.d_exp)?;
    let table = match a.backend {
        BackendArg::Random => tables::random_table(params, a.seed)?,
        BackendArg::Canonical => tables::canonical_table(params)?,
        BackendArg::Keyed => tables::keyed_table(params, a.seed as u128),
    };
    table.save(&a.out)?;
    #[derive(Serialize)]
    struct Out<'a> {
        out: &'a Path,
        backend: crate::tables::Backend,
        digest: String,
    }
    print_json(&Out {
        out: &a.out,
        backend: table.backend(),
        digest: table.digest(),
    })?;
    Ok(Outcome::Ok)
}

fn verify_table(cli: &Cli, a: &VerifyTable) -> Result<Outcome> {
    let table = BalancedTable::load(&a.table)?;
    let s_exp = a.s_exp.unwrap_or(table.params().s_exp);
    let d_exp = a.d_exp.unwrap_or(table.params().d_exp);
    let mode = match a.mode {
        ModeArg::Exhaustive => RectMode::Exhaustive,
        ModeArg::Sampled => RectMode::Sampled {
            samples: a.samples,
            seed: a.seed,
        },
    };
    let opts = VerifyOptions {
        threads: cli.threads,
        ..VerifyOptions::default()
    };
    let report = if a.prefix_balance {
        verify::verify_prefix_balance(&table, s_exp, mode, &opts)?
    } else {
        verify::verify(&table, s_exp, d_exp, mode, &opts)?
    };
    let json = report.to_json()?;
    match &a.report {
        Some(path) => fs::write(path, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(if report.passed {
        Outcome::Ok
    } else {
        Outcome::VerificationFailed
    })
}

fn check_condition(e: &Exps) -> Result<Outcome> {
    let check = tables::existence_condition_exps(e.n_exp, e.m_exp, e.s_exp, e.d_exp)?;
    #[derive(Serialize)]
    struct Out<'a> {
        n_exp: u32,
        m_exp: u32,
        s_exp: u32,
        d_exp: u32,
        #[serde(flatten)]
        check: &'a tables::ExistenceCheck,
    }
    print_json(&Out {
        n_exp: e.n_exp,
        m_exp: e.m_exp,
        s_exp: e.s_exp,
        d_exp: e.d_exp,
        check: &check,
    })?;
    Ok(Outcome::Ok)
}

fn read_bits(path: &Path, limit: Option<u64>) -> Result<BitString> {
    let bytes = fs::read(path)?;
    let avail = bytes.len() * 8;
    let len = match limit {
        Some(l) if l as usize > avail => {
            return Err(Error::invalid(format!(
                "--bits {l} exceeds the {avail} bits of {}",
                path.display()
            )))
        }
        Some(l) => l as usize,
        None => avail,
    };
    BitString::from_bytes(&bytes, len)
}

fn policy(arg: PolicyArg, seed: u64) -> TablePolicy {
    match arg {
        PolicyArg::Auto => TablePolicy::Auto { seed },
        PolicyArg::Random => TablePolicy::Random { seed },
        PolicyArg::Keyed => TablePolicy::Keyed { key: seed as u128 },
        PolicyArg::Canonical => TablePolicy::Canonical,
    }
}

fn write_output(path: &Path, z: &BitString, digest: &str) -> Result<()> {
    fs::write(path, z.to_bytes())?;
    #[derive(Serialize)]
    struct Out<'a> {
        out: &'a Path,
        bits: usize,
        hex: String,
        table_digest: &'a str,
    }
    print_json(&Out {
        out: path,
        bits: z.len(),
        hex: z.to_hex(),
        table_digest: digest,
    })
}

fn extract(cli: &Cli, a: &ExtractArgs) -> Result<Outcome> {
    let x = read_bits(&a.x, cli.bits)?;
    let y = read_bits(&a.y, cli.bits)?;
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "|x| = {} differs from |y| = {}",
            x.len(),
            y.len()
        )));
    }
    let n = u32::try_from(x.len()).map_err(|_| Error::TooLarge("input length".into()))?;
    let config = ExtractorConfig {
        policy: policy(a.backend, a.seed),
        check: if cli.strict {
            ParamCheck::Strict
        } else {
            ParamCheck::Relaxed
        },
        ..ExtractorConfig::default()
    };
    let ex = StringExtractor::new(n, &a.sigma, &a.alpha, &config)?;
    let z = ex.extract(&x, &y)?;
    write_output(&a.out, &z, &ex.table().digest())?;
    Ok(Outcome::Ok)
}

fn extract_cond(cli: &Cli, a: &ExtractCondArgs) -> Result<Outcome> {
    let x = read_bits(&a.x, cli.bits)?;
    let y = read_bits(&a.y, cli.bits)?;
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "|x| = {} differs from |y| = {}",
            x.len(),
            y.len()
        )));
    }
    let n = u32::try_from(x.len()).map_err(|_| Error::TooLarge("input length".into()))?;
    let config = ExtractorConfig::with_policy(policy(a.backend, a.seed));
    let ex = CondExtractor::new(n, a.s, a.alpha, &config)?;
    let z = ex.extract(&x, &y)?;
    write_output(&a.out, &z, &ex.table().digest())?;
    Ok(Outcome::Ok)
}

fn open_stream(spec: &str, limit: Option<u64>) -> Result<Box<dyn BitStream>> {
    if let Some(seed) = spec.strip_prefix("rand:") {
        let seed = seed
            .parse()
            .map_err(|_| Error::invalid(format!("bad stream seed in {spec:?}")))?;
        return Ok(Box::new(SeededStream::new(seed)));
    }
    Ok(Box::new(VecStream::new(read_bits(Path::new(spec), limit)?)))
}

fn transform(cli: &Cli, a: &TransformArgs) -> Result<Outcome> {
    let x = open_stream(&a.x, cli.bits)?;
    let y = open_stream(&a.y, cli.bits)?;
    let schedule = schedule_covering(&a.tau, &a.delta, a.base, a.out_bits)?;
    let mut pol = SeqPolicy::new(a.seed);
    pol.allow_keyed = !a.no_keyed;
    let t = SeqTransformer::new(schedule, pol)?;
    let z = t.transform_prefix(x.as_ref(), y.as_ref(), a.out_bits)?;
    fs::write(&a.out, z.to_bytes())?;
    let last = if a.out_bits == 0 {
        None
    } else {
        t.layout().block_for_output(a.out_bits - 1)
    };
    #[derive(Serialize)]
    struct Out<'a> {
        out: &'a Path,
        bits: usize,
        hex: String,
        first_block: u32,
        last_block: Option<u32>,
        input_bits_read: u64,
    }
    print_json(&Out {
        out: &a.out,
        bits: z.len(),
        hex: z.to_hex(),
        first_block: t.layout().first_block(),
        last_block: last,
        input_bits_read: last.map_or(0, |i| 2 * t.layout().input_through(i)),
    })?;
    Ok(Outcome::Ok)
}

fn experiment(cli: &Cli, a: &ExperimentArgs) -> Result<Outcome> {
    let spec = PlantedPairSpec::new(a.n, a.sigma.clone(), a.alpha.clone(), a.seed)?;
    let config = ExperimentConfig {
        extractor: ExtractorConfig {
            policy: TablePolicy::Auto { seed: a.seed },
            check: if cli.strict {
                ParamCheck::Strict
            } else {
                ParamCheck::Relaxed
            },
            ..ExtractorConfig::default()
        },
        master_seed: a.seed,
        threads: cli.threads,
    };
    let report = run_extraction_experiment(&spec, a.trials, &config)?;
    let mut f = fs::File::create(&a.csv)?;
    report.write_csv(&mut f)?;
    f.flush()?;
    fs::write(&a.summary, report.summary_json()? + "\n")?;
    println!(
        "trials={} m_exp={} collision_entropy={:.4} min_entropy={:.4}",
        a.trials,
        report.summary.m_exp,
        report.summary.collision_entropy,
        report.summary.min_entropy
    );
    Ok(Outcome::Ok)
}
