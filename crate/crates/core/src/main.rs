use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use neoheb::fdm::{self, Variant};
use neoheb::harness::report::{self, CsvKind, Format};
use neoheb::harness::{run_experiment, ExperimentConfig, Task};
use neoheb::{Error, Result};

#[derive(Parser)]
#[command(name = "neoheb-sim", version, about = "Thermal neoHebbian synapse array simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; overrides the config.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Maze,
    Seq,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Baseline,
    Modified,
}

#[derive(Subcommand)]
enum Command {
    /// Train the maze agent; one row per run.
    TrainMaze,
    /// Train on the sequence task; one row per run.
    TrainSeq,
    /// Run every sweep cell; one row per cell and metric.
    Sweep,
    /// Voxel-model coupling coefficients for one geometry.
    Cellsim {
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Feature size F in nm.
        #[arg(long)]
        f_nm: Option<f64>,
        /// Crossbar pitch K in nm.
        #[arg(long)]
        k_nm: Option<f64>,
        #[arg(long)]
        voxel_nm: Option<f64>,
        /// Heater pulse amplitude in V.
        #[arg(long)]
        pulse_v: Option<f64>,
        /// Heater pulse width in s.
        #[arg(long)]
        pulse_width: Option<f64>,
        /// Write `<stem>.bin` and `<stem>.json` field dumps.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Print the default configuration.
    PrintDefaults {
        #[arg(long, value_enum, default_value_t = TaskArg::Maze)]
        task: TaskArg,
    },
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: ErrorBody<'a>,
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    let body = ErrorReport {
        error: ErrorBody { kind, message },
    };
    eprintln!("{}", serde_json::to_string(&body).expect("error serializes"));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            return fail("usage", e.render().to_string().trim().to_string(), 2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string(), 1),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    Ok(cfg)
}

fn format(cli: &Cli) -> Format {
    match cli.format {
        OutFormat::Csv => Format::Csv,
        OutFormat::Json => Format::Json,
    }
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::TrainMaze | Command::TrainSeq => {
            let mut cfg = load_config(&cli)?;
            if !cfg.sweep.is_empty() {
                return Err(Error::Config("training commands take no sweep axes; use `sweep`".into()));
            }
            cfg.task = match cli.command {
                Command::TrainMaze => Task::Maze,
                _ => Task::Seq,
            };
            let recs = run_experiment(&cfg)?;
            report::emit_report(&cfg, &recs, format(&cli), CsvKind::Runs, out)
        }
        Command::Sweep => {
            let cfg = load_config(&cli)?;
            let recs = run_experiment(&cfg)?;
            report::emit_report(&cfg, &recs, format(&cli), CsvKind::Summary, out)
        }
        Command::Cellsim {
            variant,
            f_nm,
            k_nm,
            voxel_nm,
            pulse_v,
            pulse_width,
            dump,
        } => {
            let cfg = load_config(&cli)?;
            let mut geo = cfg.geometry.clone();
            let mut pulse = cfg.pulse;
            if let Some(v) = variant {
                geo.variant = match v {
                    VariantArg::Baseline => Variant::Baseline,
                    VariantArg::Modified => Variant::Modified,
                };
            }
            geo.f_nm = f_nm.unwrap_or(geo.f_nm);
            geo.k_nm = k_nm.unwrap_or(geo.k_nm);
            geo.voxel_nm = voxel_nm.unwrap_or(geo.voxel_nm);
            pulse.amplitude_v = pulse_v.unwrap_or(pulse.amplitude_v);
            pulse.width_s = pulse_width.unwrap_or(pulse.width_s);
            cellsim(&geo, &pulse, dump.as_deref(), format(&cli), out)
        }
        Command::PrintDefaults { task } => {
            let cfg = ExperimentConfig {
                task: match task {
                    TaskArg::Maze => Task::Maze,
                    TaskArg::Seq => Task::Seq,
                },
                ..Default::default()
            };
            let text = match format(&cli) {
                Format::Csv => cfg.to_toml(),
                Format::Json => serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n",
            };
            report::write_output(text.as_bytes(), out)
        }
    }
}

#[derive(Serialize)]
struct CellsimReport<'a> {
    geometry: &'a fdm::GeometrySpec,
    pulse: &'a fdm::Pulse,
    dims: [usize; 3],
    result: &'a fdm::CouplingResult,
}

fn cellsim(
    geo: &fdm::GeometrySpec,
    pulse: &fdm::Pulse,
    dump: Option<&Path>,
    format: Format,
    out: Option<&Path>,
) -> Result<()> {
    let (grid, res) = fdm::cell_coupling(geo, pulse)?;
    if let Some(stem) = dump {
        fdm::write_field_dump(&grid, stem)?;
    }
    let bytes = match format {
        Format::Json => {
            let rep = CellsimReport {
                geometry: geo,
                pulse,
                dims: grid.dims,
                result: &res,
            };
            let mut s = serde_json::to_string_pretty(&rep).expect("report serializes");
            s.push('\n');
            s.into_bytes()
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
            w.write_record(["site", "kind", "d_row", "d_col", "peak_rise_k", "coefficient"])
                .map_err(csv_err)?;
            for e in &res.entries {
                let kind = match e.kind {
                    fdm::ProbeKind::Heater => "heater",
                    fdm::ProbeKind::Filament => "filament",
                };
                w.write_record([
                    format!("r{}c{}", e.row, e.col),
                    kind.to_string(),
                    e.d_row.to_string(),
                    e.d_col.to_string(),
                    report::fmt_g6(e.peak_rise),
                    report::fmt_g6(e.coefficient),
                ])
                .map_err(csv_err)?;
            }
            w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?
        }
    };
    report::write_output(&bytes, out)
}
