//! `gaitlib` command-line tool.

mod bench;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gaitlib::library_io::{self, LibraryError, LibraryFile};
use gaitlib::synthetic::{generate_synthetic, SyntheticSpec};
use gaitlib::tracking::{run_closed_loop, PdGains, PlantState, DEFAULT_INNER_RATE};
use gaitlib::{service, trace, CommandScript, EngineConfig, EngineState, GaitLibrary, MirrorMap};

#[derive(Parser)]
#[command(
    name = "gaitlib",
    version,
    about = "Gait library tools and reference streaming"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic library from a spec file.
    Gen {
        /// Synthetic spec (JSON). Defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Print the validation report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run the reference engine over a command script and write a trace CSV.
    Stream(StreamArgs),
    /// Serve references over TCP, one tick per request.
    Serve {
        #[arg(long)]
        library: PathBuf,
        #[arg(long, default_value_t = 7070)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, default_value_t = 50.0)]
        rate: f64,
        /// Exit after this many clients.
        #[arg(long)]
        max_clients: Option<usize>,
    },
    /// Check batch equivalence and measure tick throughput.
    Bench {
        #[arg(long)]
        library: PathBuf,
        #[arg(long, default_value_t = 1024)]
        batch: usize,
        /// Samples per timing run.
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Validate a library file.
    Validate {
        #[arg(long)]
        library: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Build a library from per-gait coefficient tables.
    Import {
        #[arg(long)]
        out: PathBuf,
        /// Take mirror map and metadata from this library instead of identity.
        #[arg(long)]
        like: Option<PathBuf>,
        #[arg(required = true)]
        tables: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long)]
    library: PathBuf,
    #[arg(long)]
    script: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Engine rate in Hz.
    #[arg(long, default_value_t = 50.0)]
    rate: f64,
    /// Run time in seconds; defaults to the script duration.
    #[arg(long)]
    duration: Option<f64>,
    /// Track the references with a double-integrator plant.
    #[arg(long)]
    plant: bool,
    /// KP,KD,LIMIT. Defaults to critically damped gains with KP = 40.
    #[arg(long, value_parser = parse_gains)]
    gains: Option<(f64, f64, f64)>,
    /// Joint inertia for the plant.
    #[arg(long, default_value_t = 0.05)]
    inertia: f64,
    #[arg(long, default_value_t = DEFAULT_INNER_RATE)]
    inner_rate: f64,
    /// Where to write the plant trace; defaults to `<out>.plant.csv`.
    #[arg(long)]
    plant_out: Option<PathBuf>,
}

fn parse_gains(s: &str) -> Result<(f64, f64, f64), String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| format!("'{x}' is not a number"))
        })
        .collect::<Result<_, _>>()?;
    match v[..] {
        [kp, kd, limit] => Ok((kp, kd, limit)),
        _ => Err("expected KP,KD,LIMIT".into()),
    }
}

/// A failure reported as one `error[<category>]: <message>` line.
struct Failure {
    category: &'static str,
    message: String,
    code: u8,
}

impl Failure {
    fn new(category: &'static str, message: impl ToString) -> Self {
        Self {
            category,
            message: message.to_string(),
            code: 1,
        }
    }

    fn usage(message: impl ToString) -> Self {
        Self {
            code: 2,
            ..Self::new("usage", message)
        }
    }
}

impl From<LibraryError> for Failure {
    fn from(e: LibraryError) -> Self {
        Failure::new(e.kind(), e)
    }
}

type Outcome = Result<(), Failure>;

fn io_failure(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::new("io", format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { spec, out, json } => cmd_gen(spec.as_deref(), &out, json),
        Command::Stream(args) => cmd_stream(&args),
        Command::Serve {
            library,
            port,
            bind,
            rate,
            max_clients,
        } => cmd_serve(&library, &bind, port, rate, max_clients),
        Command::Bench {
            library,
            batch,
            samples,
            seed,
        } => cmd_bench(&library, batch, samples, seed),
        Command::Validate { library, json } => cmd_validate(&library, json),
        Command::Import { out, like, tables } => cmd_import(&out, like.as_deref(), &tables),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.category, f.message.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}

fn print_report(report: &library_io::ValidationReport, json: bool) {
    if json {
        println!(
            "{}",
            serde_json::to_string(report).expect("report serializes")
        );
    } else {
        print!("{report}");
    }
}

fn cmd_gen(spec: Option<&Path>, out: &Path, json: bool) -> Outcome {
    let spec: SyntheticSpec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io_failure(p))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::usage(format!("malformed spec {}: {e}", p.display())))?
        }
        None => SyntheticSpec::default(),
    };
    let lib = generate_synthetic(&spec).map_err(|e| Failure::new("generate", e))?;
    let file = LibraryFile::from_library(&lib);
    let report = library_io::validate(&file);
    print_report(&report, json);
    if !report.ok {
        return Err(Failure::new(
            "validation",
            "generated library failed validation",
        ));
    }
    file.write(out)?;
    Ok(())
}

fn engine_config(rate: f64) -> Result<EngineConfig, Failure> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Failure::usage(format!("rate must be positive, got {rate}")));
    }
    let config = EngineConfig {
        tick_period: 1.0 / rate,
        ..EngineConfig::default()
    };
    config.validate().map_err(Failure::usage)?;
    Ok(config)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(io_failure(path))
}

fn cmd_stream(a: &StreamArgs) -> Outcome {
    let lib = library_io::load(&a.library)?;
    let script = CommandScript::from_path(&a.script).map_err(|e| Failure::new("script", e))?;
    let n = lib.n_outputs();
    if script.n_residuals() != 0 && script.n_residuals() != n {
        return Err(Failure::new(
            "dimension",
            format!(
                "script has {} dq columns, library has {n} outputs",
                script.n_residuals()
            ),
        ));
    }
    let config = engine_config(a.rate)?;
    let duration = a.duration.unwrap_or(script.duration());
    let v0 = script.command_at(0.0).v_user;
    let mut engine = EngineState::init(&lib, v0, config).map_err(|e| Failure::new("engine", e))?;

    let samples = if a.plant {
        let inertia = vec![a.inertia; n];
        let gains = match a.gains {
            Some((kp, kd, limit)) => PdGains::uniform(n, kp, kd, limit),
            None => PdGains::critically_damped(40.0, &inertia, 1e3),
        }
        .map_err(Failure::usage)?;
        let q0 = engine
            .active
            .blended
            .eval(0.0)
            .map_err(|e| Failure::new("engine", e))?;
        let plant =
            PlantState::at_rest(q0.iter().copied().collect(), inertia).map_err(Failure::usage)?;
        let result = run_closed_loop(
            &mut engine,
            &lib,
            plant,
            &gains,
            duration,
            &script,
            a.inner_rate,
        )
        .map_err(|e| Failure::new("tracking", e))?;
        let plant_out = a
            .plant_out
            .clone()
            .unwrap_or_else(|| a.out.with_extension("plant.csv"));
        let mut w = create(&plant_out)?;
        result
            .write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(io_failure(&plant_out))?;
        eprintln!(
            "tracking rms error over last half: {:.6e} rad",
            result.rms_error_since(duration / 2.0)
        );
        result.samples
    } else {
        trace::run_script(&mut engine, &lib, &script, duration)
            .map_err(|e| Failure::new("engine", e))?
    };
    let mut w = create(&a.out)?;
    trace::write_trace(&mut w, n, &samples).map_err(io_failure(&a.out))?;
    Ok(())
}

fn cmd_serve(
    library: &Path,
    bind: &str,
    port: u16,
    rate: f64,
    max_clients: Option<usize>,
) -> Outcome {
    let lib = library_io::load(library)?;
    let config = engine_config(rate)?;
    let listener = TcpListener::bind((bind, port))
        .map_err(|e| Failure::new("bind", format!("{bind}:{port}: {e}")))?;
    let addr = listener.local_addr().map_err(|e| Failure::new("bind", e))?;
    eprintln!("listening on {addr} ({})", service::PROTOCOL);
    service::serve(listener, &lib, config, max_clients).map_err(|e| Failure::new("io", e))
}

fn cmd_bench(library: &Path, batch: usize, samples: usize, seed: u64) -> Outcome {
    let lib = library_io::load(library)?;
    if batch == 0 || samples == 0 {
        return Err(Failure::usage("batch and samples must be positive"));
    }
    bench::probe(&lib, 1024, seed).map_err(|e| Failure::new("bench-probe", e))?;
    println!(
        "{}",
        serde_json::json!({"kind": "probe", "states": 1024, "bitwise_equal": true})
    );
    let single = bench::single_thread(&lib, samples).map_err(|e| Failure::new("engine", e))?;
    let batched =
        bench::batched(&lib, batch, samples, seed).map_err(|e| Failure::new("engine", e))?;
    for r in [&single, &batched] {
        println!("{}", serde_json::to_string(r).expect("result serializes"));
    }
    if single.samples_per_second < bench::TARGET_SAMPLES_PER_SECOND {
        log::warn!(
            "single-thread throughput {:.0} samples/s is below the {:.0} target",
            single.samples_per_second,
            bench::TARGET_SAMPLES_PER_SECOND
        );
    }
    Ok(())
}

fn cmd_validate(library: &Path, json: bool) -> Outcome {
    let file = LibraryFile::read(library)?;
    let report = library_io::validate(&file);
    print_report(&report, json);
    if report.ok {
        Ok(())
    } else {
        Err(Failure::new(
            "validation",
            report.hard_failures.first().cloned().unwrap_or_default(),
        ))
    }
}

fn cmd_import(out: &Path, like: Option<&Path>, tables: &[PathBuf]) -> Outcome {
    let (mirror, metadata) = match like {
        Some(p) => {
            let template: GaitLibrary = library_io::load(p)?;
            (template.mirror().clone(), template.metadata().clone())
        }
        None => {
            let first = &tables[0];
            let text = std::fs::read_to_string(first).map_err(io_failure(first))?;
            let gait = library_io::import_table(&text, "first")?;
            (MirrorMap::identity(gait.n_outputs()), Default::default())
        }
    };
    let lib = library_io::import_tables(tables, mirror, metadata)?;
    let file = LibraryFile::from_library(&lib);
    let report = library_io::validate(&file);
    print_report(&report, false);
    file.write(out)?;
    Ok(())
}
