use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use starnls::experiment::{self, RunConfig, RunStatus};
use starnls::functionals::max_location;
use starnls::modulation::decompose_with;
use starnls::reduced::ReducedState;
use starnls::states::ShiftedStateParams;
use starnls::{checkpoint, Error, Exec, PmlConfig, StarGraph};

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "starnls", version, about = "NLS experiments on balanced star graphs")]
struct Cli {
    /// Run single-threaded.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a time-dependent experiment.
    Simulate(SimulateArgs),
    /// Low spectrum of L+ over a range of shifts.
    Spectrum(SpectrumArgs),
    /// Integrate the reduced system and tabulate escape times.
    Reduced(ReducedArgs),
    /// Fit (theta, omega, a) to a checkpoint.
    Decompose(DecomposeArgs),
    /// List the built-in presets.
    Presets {
        /// Print full configurations as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, conflicts_with_all = ["preset", "sweep"])]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "sweep")]
    preset: Option<String>,
    /// JSON array of configs, run concurrently.
    #[arg(long)]
    sweep: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the preset end time.
    #[arg(long)]
    t_end: Option<f64>,
}

#[derive(Args)]
struct SpectrumArgs {
    /// Run config whose graph is used (defaults to the preset graph).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    a_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    a_max: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    a_step: f64,
}

#[derive(Args)]
struct ReducedArgs {
    #[arg(long)]
    out: PathBuf,
    /// Initial gamma, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-0.01,-0.02")]
    gamma: Vec<f64>,
    /// Initial beta, comma separated (zeros when omitted).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    beta: Vec<f64>,
    #[arg(long, default_value_t = 50.0)]
    t_end: f64,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
}

#[derive(Args)]
struct DecomposeArgs {
    checkpoint: PathBuf,
    /// Keep a = 0 fixed.
    #[arg(long)]
    half: bool,
    #[arg(long, default_value_t = 1.0)]
    omega: f64,
    /// Initial shift (default: read off the maximum).
    #[arg(long, allow_hyphen_values = true)]
    a: Option<f64>,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(err) if err.is_validation() => EXIT_VALIDATION,
        Some(Error::Io(_)) | Some(Error::Checkpoint { .. }) | Some(Error::Csv(_)) => EXIT_VALIDATION,
        Some(_) => EXIT_NUMERICAL,
        None => EXIT_VALIDATION,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match dispatch(cli.cmd, exec) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cmd: Command, exec: Exec) -> anyhow::Result<u8> {
    match cmd {
        Command::Simulate(a) => simulate(a, exec),
        Command::Spectrum(a) => spectrum(a, exec),
        Command::Reduced(a) => reduced(a),
        Command::Decompose(a) => decompose(a),
        Command::Presets { json } => {
            for p in experiment::list_presets() {
                if json {
                    println!("{}", serde_json::to_string(&p)?);
                } else {
                    println!("{:<16} t_end = {:<6} {}", p.name, p.config.t_end, p.summary);
                }
            }
            Ok(0)
        }
    }
}

fn status_code(s: &RunStatus) -> u8 {
    match s {
        RunStatus::Completed => 0,
        RunStatus::BlowUp { .. } => EXIT_NUMERICAL,
    }
}

fn simulate(a: SimulateArgs, exec: Exec) -> anyhow::Result<u8> {
    if let Some(path) = a.sweep {
        let cfgs = experiment::load_sweep(&path)?;
        let mut worst = 0;
        for (cfg, res) in cfgs.iter().zip(experiment::run_sweep(&cfgs, exec)) {
            let code = match res {
                Ok(out) => status_code(&out.status),
                Err(e) => {
                    eprintln!("error in {:?}: {e}", cfg.name);
                    if e.is_validation() {
                        EXIT_VALIDATION
                    } else {
                        EXIT_NUMERICAL
                    }
                }
            };
            println!("{}: exit {code}", cfg.name);
            worst = worst.max(code);
        }
        return Ok(worst);
    }
    let mut cfg = match (&a.config, &a.preset) {
        (Some(p), _) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        (None, Some(name)) => experiment::preset_config(name)?,
        (None, None) => anyhow::bail!(Error::InvalidParameter("give --config, --preset or --sweep".into())),
    };
    if let Some(t) = a.t_end {
        cfg.t_end = t;
    }
    let out = a
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}", if cfg.name.is_empty() { "run" } else { &cfg.name })));
    let res = experiment::run_experiment(&cfg, Some(&out), exec)?;
    match &res.status {
        RunStatus::Completed => println!("{} rows written to {}", res.diagnostics.len(), out.display()),
        RunStatus::BlowUp { t, .. } => eprintln!("blow-up at t = {t}; partial output in {}", out.display()),
    }
    Ok(status_code(&res.status))
}

fn preset_graph() -> starnls::Result<StarGraph> {
    StarGraph::new(experiment::preset_alpha(), 40.0, 0.05, PmlConfig::off())
}

fn spectrum(a: SpectrumArgs, exec: Exec) -> anyhow::Result<u8> {
    let g = match &a.config {
        Some(p) => RunConfig::load(p)?.graph.build()?.without_pml(),
        None => preset_graph()?,
    };
    let grid = match (a.a_min, a.a_max) {
        (None, None) => experiment::default_a_grid(),
        (lo, hi) => {
            let lo = lo.unwrap_or(-0.65);
            let hi = hi.unwrap_or(0.65);
            if !(a.a_step > 0.0 && hi >= lo) {
                anyhow::bail!(Error::InvalidParameter("need a_step > 0 and a_max >= a_min".into()));
            }
            let n = ((hi - lo) / a.a_step + 1e-9).floor() as usize;
            (0..=n).map(|k| lo + a.a_step * k as f64).collect()
        }
    };
    let rows = experiment::spectrum_report(&g, &grid, exec)?;
    std::fs::create_dir_all(&a.out)?;
    let path = a.out.join("spectrum.csv");
    experiment::write_spectrum_csv(BufWriter::new(File::create(&path)?), &rows)?;
    println!("{} rows written to {}", rows.len(), path.display());
    Ok(0)
}

fn reduced(a: ReducedArgs) -> anyhow::Result<u8> {
    let alpha = experiment::preset_alpha();
    let dim = alpha.len() - 1;
    let beta = if a.beta.is_empty() { vec![0.0; dim] } else { a.beta };
    if a.gamma.len() != dim || beta.len() != dim {
        anyhow::bail!(Error::InvalidParameter(format!("gamma and beta need {dim} components")));
    }
    let s0 = ReducedState { gamma: a.gamma, beta, t: 0.0 };
    let (traj, table) = experiment::reduced_report(&a.out, &alpha, &s0, a.t_end, a.dt)?;
    println!("trajectory: {} rows{}", traj.states.len(), if traj.blew_up { " (escaped to infinity)" } else { "" });
    for r in &table {
        println!("eps = {:<6} t0 = {:.4}", r.eps, r.t0);
    }
    println!("slope = {:.4}", starnls::reduced::loglog_slope(&table));
    Ok(0)
}

fn decompose(a: DecomposeArgs) -> anyhow::Result<u8> {
    let (header, g, f) = checkpoint::load(Path::new(&a.checkpoint))?;
    let (edge, pos) = max_location(&g, &f);
    let j = edge - 1;
    let k = (0..g.nodes(j))
        .min_by(|&p, &q| (g.x(j, p) - pos).abs().total_cmp(&(g.x(j, q) - pos).abs()))
        .unwrap_or(0);
    let theta = f[j][k].arg();
    let shift = if a.half { 0.0 } else { a.a.unwrap_or(-pos) };
    let fit = decompose_with(&g, &f, ShiftedStateParams::new(a.omega, shift, theta), a.half);
    println!("{}", serde_json::json!({ "t": header.t, "fit": fit }));
    Ok(if fit.converged { 0 } else { EXIT_NUMERICAL })
}
