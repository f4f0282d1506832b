use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use memetic_hpo::driver::{bench_compare, run_with_stderr, Algorithm, ConfigError, RunConfig, RunError, Termination};
use memetic_hpo::extproto::{run_fixture_suite, run_selftest, serve_echo, EchoMode, EchoOptions, SessionOptions};

const EXIT_CONFIG: u8 = 2;
const EXIT_EVALUATOR: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "memetic-hpo", version, about = "Hybrid GA + hill-climbing hyperparameter search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one optimization and write run.jsonl and result.json.
    Run(RunArgs),
    /// Repeat runs of each algorithm and write summary.csv.
    Bench(BenchArgs),
    /// Inspect the search space.
    Space {
        #[command(subcommand)]
        command: SpaceCommand,
    },
    /// Evaluator protocol tools.
    Proto {
        #[command(subcommand)]
        command: ProtoCommand,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "hybrid")]
    algo: Algorithm,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    reps: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum SpaceCommand {
    /// Print the gene table and the number of configurations.
    Show {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum ProtoCommand {
    /// Check that an evaluator command speaks the protocol. Without --cmd the
    /// built-in reference evaluator is checked, together with the
    /// misbehaving-evaluator fixtures.
    Selftest {
        #[arg(long)]
        cmd: Option<String>,
        #[arg(long, default_value_t = 60.0)]
        timeout_secs: f64,
    },
    /// Reference evaluator speaking the protocol on stdin/stdout.
    #[command(hide = true)]
    Echo {
        #[arg(long, default_value = "conforming")]
        mode: EchoMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        delay_us: u64,
    },
}

enum Failure {
    Config(String),
    Evaluator(String),
    Io(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(e) => Failure::Config(e.to_string()),
            RunError::Evaluator(e) => Failure::Evaluator(format!("evaluator error: {e}")),
            RunError::Io(e) => Failure::Io(format!("io error: {e}")),
        }
    }
}

fn io_failure(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("io error: {}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Space { command: SpaceCommand::Show { config } } => cmd_space_show(&config),
        Command::Proto { command } => match command {
            ProtoCommand::Selftest { cmd, timeout_secs } => cmd_selftest(cmd, timeout_secs),
            ProtoCommand::Echo { mode, seed, delay_us } => cmd_echo(mode, seed, delay_us),
        },
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Evaluator(m)) => {
            eprintln!("{m}");
            ExitCode::from(EXIT_EVALUATOR)
        }
        Err(Failure::Io(m)) => {
            eprintln!("{m}");
            ExitCode::from(EXIT_IO)
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut config = RunConfig::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    fs::create_dir_all(&args.out).map_err(io_failure(&args.out))?;

    let log_path = args.out.join("run.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(io_failure(&log_path))?);
    let mut sink = |record: &_| -> io::Result<()> {
        serde_json::to_writer(&mut log, record)?;
        log.write_all(b"\n")?;
        log.flush()
    };

    let stderr_sink = if config.evaluator.is_external() {
        let path = args.out.join("evaluator.stderr.log");
        let file = Arc::new(Mutex::new(File::create(&path).map_err(io_failure(&path))?));
        Some(Box::new(move |line: &str| {
            if let Ok(mut f) = file.lock() {
                let _ = writeln!(f, "{line}");
            }
        }) as Box<dyn Fn(&str) + Send>)
    } else {
        None
    };

    let result = run_with_stderr(&config, args.algo, &mut sink, stderr_sink)?;
    let result_path = args.out.join("result.json");
    let text = serde_json::to_string_pretty(&result).expect("result serializes");
    fs::write(&result_path, text + "\n").map_err(io_failure(&result_path))?;

    match (&result.best, result.termination) {
        (_, Termination::EvaluatorFailure) => {
            return Err(Failure::Evaluator(format!(
                "evaluator error: {} (after {} generations)",
                result.failure.as_deref().unwrap_or("unknown"),
                result.generations
            )))
        }
        (Some(best), termination) => {
            println!(
                "{}: best fitness {} after {} generations, {} evaluations ({termination:?})",
                args.algo.name(),
                best.fitness,
                result.generations,
                result.evaluations
            );
        }
        (None, termination) => println!("{}: no generations completed ({termination:?})", args.algo.name()),
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), Failure> {
    let config = RunConfig::from_path(&args.config)?;
    let table = bench_compare(&config, args.reps)?;
    fs::create_dir_all(&args.out).map_err(io_failure(&args.out))?;
    let path = args.out.join("summary.csv");
    let file = File::create(&path).map_err(io_failure(&path))?;
    let mut w = BufWriter::new(file);
    table.write_csv(&mut w).and_then(|_| w.flush()).map_err(io_failure(&path))?;
    print!("{}", table.render());
    Ok(())
}

fn cmd_space_show(path: &Path) -> Result<(), Failure> {
    let config = RunConfig::from_path(path)?;
    let space = config.space.build();
    let width = space.genes().iter().map(|g| g.name.len()).max().unwrap_or(4).max(4);
    println!("{:<width$}  {:<11}  {:>4}  domain", "gene", "kind", "size");
    for g in space.genes() {
        let kind = serde_json::to_value(g.kind).expect("kind serializes");
        println!(
            "{:<width$}  {:<11}  {:>4}  {}",
            g.name,
            kind.as_str().unwrap_or_default(),
            g.size(),
            g.domain.join(", ")
        );
    }
    match space.cardinality() {
        Some(n) => println!("cardinality: {n}"),
        None => println!("cardinality: more than 2^64"),
    }
    Ok(())
}

fn cmd_selftest(cmd: Option<String>, timeout_secs: f64) -> Result<(), Failure> {
    if !(timeout_secs.is_finite() && timeout_secs > 0.0) {
        return Err(Failure::Config("--timeout-secs must be positive".into()));
    }
    let timeout = Duration::from_secs_f64(timeout_secs);
    let options = SessionOptions { handshake_timeout: timeout, request_timeout: timeout, window: 8 };
    let report = match cmd {
        Some(cmd) => {
            let argv = shell_words::split(&cmd).map_err(|e| Failure::Config(format!("--cmd: {e}")))?;
            run_selftest(&argv, None, options)
        }
        None => {
            let exe = std::env::current_exe().map_err(|e| Failure::Io(format!("io error: {e}")))?;
            let echo = vec![exe.display().to_string(), "proto".into(), "echo".into()];
            let mut report = run_selftest(&echo, Some(0), options);
            report.checks.extend(run_fixture_suite(&echo).checks);
            report
        }
    };
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Evaluator("evaluator error: selftest failed".into()))
    }
}

fn cmd_echo(mode: EchoMode, seed: u64, delay_us: u64) -> Result<(), Failure> {
    let options = EchoOptions { seed, mode, slow_delay: Duration::from_micros(delay_us) };
    let stdin = io::stdin().lock();
    let stdout = io::stdout().lock();
    serve_echo(stdin, stdout, io::stderr().lock(), options).map_err(|e| Failure::Evaluator(format!("echo: {e}")))
}
