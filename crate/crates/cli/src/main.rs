use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rmits_core::inference::fit_and_test;
use rmits_core::io::{
    demo_panel, read_panel_path, write_panel_csv, FitReport, RunConfig, TestReport, WindowSpec,
    DEMO_SEED,
};
use rmits_core::simulation::{run_preset, Preset, Regime, StudySettings, DEFAULT_REPLICATES};
use rmits_core::{Error, FitOptions, Result};

/// Environment variable fixing the size of the worker pool.
const THREADS_ENV: &str = "RMITS_THREADS";

#[derive(Parser)]
#[command(
    name = "rmits",
    version,
    about = "Global change-point estimation and testing for multi-unit interrupted time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the shared change point and per-unit segment parameters.
    Fit(PanelArgs),
    /// Test for the existence of a change point with the supremum Wald test.
    Test {
        #[command(flatten)]
        panel: PanelArgs,
        /// False discovery rate of the Benjamini-Hochberg step.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Run a Monte Carlo study preset and write its CSV tables.
    Simulate(SimulateArgs),
    /// Write the bundled demonstration panel as CSV.
    DemoData(DemoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct PanelArgs {
    /// Wide CSV with a `time` column followed by one column per unit.
    panel: PathBuf,
    /// Candidates from M steps before to K steps after the intervention.
    #[arg(
        long,
        value_name = "M,K",
        conflicts_with = "candidates",
        required_unless_present = "candidates"
    )]
    window: Option<String>,
    /// Explicit candidate range, by time label or 1-based index.
    #[arg(long, value_name = "A..B")]
    candidates: Option<String>,
    /// Intervention time, by time label or 1-based index.
    #[arg(long, value_name = "TIME")]
    intervention: Option<String>,
    /// Convergence tolerance on the AR coefficients.
    #[arg(long, default_value_t = FitOptions::default().tol)]
    tol: f64,
    /// Iteration cap of the per-unit fit.
    #[arg(long, default_value_t = FitOptions::default().max_iter)]
    max_iter: usize,
    /// Report format on standard output.
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Directory that receives the report in both formats.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl PanelArgs {
    fn config(&self, alpha: f64) -> Result<RunConfig> {
        let window = match (&self.window, &self.candidates) {
            (Some(w), _) => WindowSpec::parse_around(w)?,
            (None, Some(c)) => WindowSpec::parse_range(c)?,
            (None, None) => {
                return Err(Error::InvalidArgument(
                    "one of --window or --candidates is required".into(),
                ))
            }
        };
        let config = RunConfig {
            window,
            intervention: self.intervention.clone(),
            alpha,
            fit: FitOptions {
                tol: self.tol,
                max_iter: self.max_iter,
            },
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    /// Empirical type-I error over every (phi, T, J) cell.
    Table1,
    /// Power curves over the slope-change grid.
    Figure3,
    /// Exact change-point recovery curves over the slope-change grid.
    Figure4,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    preset: PresetArg,
    /// Regime such as T60_phi01; repeatable, all four when omitted.
    #[arg(long, value_name = "NAME")]
    regime: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    replicates: usize,
    #[arg(long, default_value_t = StudySettings::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = FitOptions::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = FitOptions::default().max_iter)]
    max_iter: usize,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct DemoArgs {
    /// Output file; standard output when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEMO_SEED)]
    seed: u64,
    /// Lay the noise over unbroken lines instead.
    #[arg(long)]
    no_change: bool,
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::InvalidArgument(format!("{THREADS_ENV}='{raw}' is not a positive integer"))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("cannot size the worker pool: {e}")))
}

fn write_outputs(dir: &Path, files: &[(String, String)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, body) in files {
        fs::write(dir.join(name), body)?;
    }
    Ok(())
}

fn emit(format: Format, text: &str, json: &str) -> Result<()> {
    let body = match format {
        Format::Text => text,
        Format::Json => json,
    };
    let mut stdout = io::stdout().lock();
    stdout.write_all(body.as_bytes())?;
    if !body.ends_with('\n') {
        stdout.write_all(b"\n")?;
    }
    Ok(())
}

fn cmd_fit(args: &PanelArgs) -> Result<()> {
    let config = args.config(0.05)?;
    let panel = read_panel_path(&args.panel)?;
    let window = config.resolve_window(&panel)?;
    let fit = rmits_core::fit_panel(&panel, &window, &config.fit)?;
    for &(unit, q) in &fit.non_converged {
        eprintln!(
            "warning: unit '{}' did not converge at q={q}",
            panel.unit_names()[unit]
        );
    }
    let report = FitReport::new(&panel, &fit, config.fit)?;
    let (text, json) = (report.to_text(), report.to_json());
    if let Some(dir) = &args.out {
        write_outputs(
            dir,
            &[
                ("fit_report.txt".into(), text.clone()),
                ("fit_report.json".into(), json.clone() + "\n"),
            ],
        )?;
    }
    emit(args.format, &text, &json)
}

fn cmd_test(args: &PanelArgs, alpha: f64) -> Result<()> {
    let config = args.config(alpha)?;
    let panel = read_panel_path(&args.panel)?;
    let window = config.resolve_window(&panel)?;
    let (_, swt) = fit_and_test(&panel, &window, config.alpha, &config.fit, true)?;
    let report = TestReport::new(&panel, &swt);
    let (text, json) = (report.to_text(), report.to_json());
    if let Some(dir) = &args.out {
        write_outputs(
            dir,
            &[
                ("test_report.txt".into(), text.clone()),
                ("test_report.json".into(), json.clone() + "\n"),
            ],
        )?;
    }
    emit(args.format, &text, &json)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    if args.replicates == 0 {
        return Err(Error::InvalidArgument(
            "--replicates must be positive".into(),
        ));
    }
    let fit = FitOptions {
        tol: args.tol,
        max_iter: args.max_iter,
    };
    fit.validate()?;
    let settings = StudySettings {
        replicates: args.replicates,
        seed: args.seed,
        alpha: args.alpha,
        fit,
    };
    let regimes = if args.regime.is_empty() {
        Regime::ALL.to_vec()
    } else {
        args.regime
            .iter()
            .map(|r| Regime::parse(r))
            .collect::<Result<Vec<_>>>()?
    };
    let preset = match args.preset {
        PresetArg::Table1 => Preset::Table1,
        PresetArg::Figure3 => Preset::Figure3,
        PresetArg::Figure4 => Preset::Figure4,
    };
    let files = run_preset(preset, &regimes, &settings)?;
    write_outputs(&args.out, &files)?;
    for (name, _) in &files {
        println!("{}", args.out.join(name).display());
    }
    Ok(())
}

fn cmd_demo(args: &DemoArgs) -> Result<()> {
    let panel = demo_panel(args.seed, !args.no_change)?;
    match &args.out {
        Some(path) => write_panel_csv(&panel, fs::File::create(path)?),
        None => write_panel_csv(&panel, io::stdout().lock()),
    }
}

fn run(cli: &Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Test { panel, alpha } => cmd_test(panel, *alpha),
        Command::Simulate(args) => cmd_simulate(args),
        Command::DemoData(args) => cmd_demo(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_input_error() { 2 } else { 3 })
        }
    }
}
