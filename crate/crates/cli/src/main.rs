use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flexsimd::corpus::{self, Kernel};
use flexsimd::experiment::{run_matrix, ExperimentError, MatrixConfig, MatrixReport};
use flexsimd::report::{emit_report, ReportFormat};
use flexsimd::timing::TimingConfig;
use flexsimd::tol::Mode;

const EXIT_VERIFY: u8 = 2;
const EXIT_INPUT: u8 = 3;

#[derive(Parser)]
#[command(name = "flexsimd", version, about = "Dynamic translation and vectorization sandbox for a flexible SIMD ISA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run kernels across vector lengths and modes and report metrics.
    Run(RunArgs),
    /// List the built-in kernels.
    List {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a kernel's source.
    Show {
        kernel: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Kernel ids or kernel file paths.
    #[arg(long, value_delimiter = ',', required_unless_present = "corpus")]
    kernel: Vec<String>,
    /// Run the whole built-in corpus (`all`).
    #[arg(long, conflicts_with = "kernel")]
    corpus: Option<String>,
    /// Physical vector lengths in bits.
    #[arg(long, value_delimiter = ',', default_value = "128")]
    vlen: Vec<u32>,
    /// Modes: scalar, baseline, vlv, swr, vlv+swr or all.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    mode: Vec<String>,
    /// Report file; standard output when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: String,
    /// Print each superblock's IR and vector plan to standard error.
    #[arg(long)]
    dump_superblocks: bool,
    /// Print each superblock's host code to standard error.
    #[arg(long)]
    dump_host_asm: bool,
    /// Timing parameters as `key = value` lines.
    #[arg(long)]
    timing_config: Option<PathBuf>,
    /// Seed of the randomized corpus kernel.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Threshold overrides, e.g. `bbm=20,sbm=200,bias=0.95`.
    #[arg(long, value_delimiter = ',')]
    thresholds: Vec<String>,
    /// Corrupt one result before verification.
    #[arg(long, hide = true)]
    inject_mismatch: bool,
}

/// Failure carrying its exit status.
struct Failure {
    code: u8,
    message: String,
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_INPUT, message: message.into() }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_INPUT) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::List { seed } => {
            for k in corpus::corpus(seed) {
                println!("{:16} {}", k.id, k.description);
            }
            Ok(())
        }
        Command::Show { kernel, seed } => load_kernel(&kernel, seed).map(|k| print!("{}", k.source)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_kernel(arg: &str, seed: u64) -> Result<Kernel, Failure> {
    if let Some(k) = corpus::find(arg, seed) {
        return Ok(k);
    }
    let path = Path::new(arg);
    if path.is_file() {
        let source = fs::read_to_string(path).map_err(|e| input_error(format!("{arg}: {e}")))?;
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or(arg).to_string();
        return Ok(Kernel { id, description: format!("kernel file {arg}"), source });
    }
    Err(input_error(format!("unknown kernel `{arg}` (not a built-in id or a file)")))
}

fn parse_modes(names: &[String]) -> Result<Vec<Mode>, Failure> {
    let mut modes = Vec::new();
    for name in names {
        if name.eq_ignore_ascii_case("all") {
            modes.extend(Mode::ALL);
        } else {
            modes.push(name.parse().map_err(|e: flexsimd::tol::UnknownMode| input_error(e.to_string()))?);
        }
    }
    modes.dedup();
    Ok(modes)
}

fn build_config(args: &RunArgs) -> Result<MatrixConfig, Failure> {
    let kernels = match args.corpus.as_deref() {
        Some("all") => corpus::corpus(args.seed),
        Some(other) => return Err(input_error(format!("unknown corpus `{other}` (expected all)"))),
        None => args.kernel.iter().map(|k| load_kernel(k, args.seed)).collect::<Result<_, _>>()?,
    };
    for &v in &args.vlen {
        if ![128, 256, 512].contains(&v) {
            return Err(input_error(format!("unsupported vector length {v} (expected 128, 256 or 512)")));
        }
    }
    let mut cfg = MatrixConfig::new(kernels, args.vlen.clone(), parse_modes(&args.mode)?);
    for kv in &args.thresholds {
        let (k, v) = kv.split_once('=').ok_or_else(|| input_error(format!("threshold `{kv}` is not key=value")))?;
        cfg.thresholds.set(k.trim(), v.trim()).map_err(input_error)?;
    }
    if let Some(path) = &args.timing_config {
        let text = fs::read_to_string(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
        cfg.timing = TimingConfig::parse(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    }
    cfg.dumps = args.dump_superblocks || args.dump_host_asm;
    cfg.inject_mismatch = args.inject_mismatch;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let format: ReportFormat = args.format.parse().map_err(|e: flexsimd::report::ReportError| input_error(e.to_string()))?;
    let cfg = build_config(&args)?;
    let report = run_matrix(&cfg).map_err(|e| match e {
        ExperimentError::Parse { .. } | ExperimentError::EmptyMatrix => input_error(e.to_string()),
        other => Failure { code: EXIT_VERIFY, message: other.to_string() },
    })?;
    write_dumps(&report, &args);
    for m in &report.mismatches {
        eprintln!("oracle mismatch: kernel {} at {} bits, mode {}: {}", m.kernel, m.vlen, m.mode, m.difference);
    }
    if !report.entries.is_empty() {
        let records = report.records();
        let written = match &args.report {
            Some(path) => fs::File::create(path)
                .map_err(flexsimd::report::ReportError::from)
                .and_then(|f| emit_report(&records, format, io::BufWriter::new(f))),
            None => emit_report(&records, format, io::stdout().lock()),
        };
        written.map_err(|e| input_error(format!("writing report: {e}")))?;
    }
    if report.mismatches.is_empty() {
        Ok(())
    } else {
        Err(Failure { code: EXIT_VERIFY, message: format!("{} run(s) diverged from the interpreter", report.mismatches.len()) })
    }
}

fn write_dumps(report: &MatrixReport, args: &RunArgs) {
    let mut err = io::stderr().lock();
    for e in &report.entries {
        for d in &e.dumps {
            let _ = writeln!(err, "== {} {} {} superblock #{} entry @{}", e.record.kernel, e.record.vlen, e.record.mode, d.id, d.entry_pc);
            if args.dump_superblocks {
                let _ = write!(err, "-- ir\n{}-- plan\n{}", d.ir, d.plan);
            }
            if args.dump_host_asm {
                let _ = write!(err, "-- host\n{}", d.host_asm);
            }
        }
    }
}
