//! Run configurations, presets and on-disk artifacts.
//!
//! A run directory holds `diagnostics.csv`, `modulation.csv` (when tracking
//! is on), checkpoint snapshots and `manifest.json`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{invalid, Error, Result};
use crate::evolve::Stepper;
use crate::functionals::Diagnostics;
use crate::graph::{make_graph, PmlConfig, StarGraph};
use crate::modulation::{fmt, write_track_csv, TrackRecord, Tracker};
use crate::par::Exec;
use crate::reduced::{self, Escape, ReducedCoefficients, ReducedState};
use crate::spectral::{spectrum_row, SpectrumRow};
use crate::states::{self, ShiftedStateParams};

fn default_pml() -> PmlConfig {
    PmlConfig::default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub n_edges: usize,
    pub alpha: Vec<f64>,
    pub edge_length: f64,
    pub dx: f64,
    #[serde(default = "default_pml")]
    pub pml: PmlConfig,
}

impl GraphSpec {
    pub fn build(&self) -> Result<StarGraph> {
        make_graph(self.n_edges, &self.alpha, self.edge_length, self.dx, self.pml)
    }
}

/// Initial data. Complex amplitudes are written `[re, im]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Shifted {
        #[serde(default = "one")]
        omega: f64,
        a: f64,
        #[serde(default)]
        theta: f64,
    },
    Eigenperturbed {
        a: f64,
        eps: [f64; 2],
    },
    PhaseModulated {
        a: f64,
        mu: [f64; 2],
    },
    LineSoliton {
        v: f64,
        x0: f64,
    },
    /// Shifted state plus a fixed-shape antisymmetric bump; usable for
    /// `a ≥ a*` where no eigenfunction exists.
    Surrogate {
        a: f64,
        eps: [f64; 2],
        lambda: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn c64(z: [f64; 2]) -> Complex64 {
    Complex64::new(z[0], z[1])
}

impl InitialSpec {
    pub fn build(&self, g: &StarGraph) -> Result<crate::GraphFunction> {
        match *self {
            InitialSpec::Shifted { omega, a, theta } => {
                let p = ShiftedStateParams::new(omega, a, theta);
                p.validate()?;
                Ok(states::shifted_state(g, p))
            }
            InitialSpec::Eigenperturbed { a, eps } => states::eigenfunction_perturbed_state(g, a, c64(eps)),
            InitialSpec::PhaseModulated { a, mu } => {
                if !(mu[0].is_finite() && mu[1].is_finite() && a.is_finite()) {
                    return invalid("phase modulation parameters must be finite");
                }
                Ok(states::phase_modulated_state(g, a, c64(mu)))
            }
            InitialSpec::LineSoliton { v, x0 } => {
                if !(v.is_finite() && x0.is_finite()) {
                    return invalid("line soliton parameters must be finite");
                }
                Ok(states::line_soliton(g, v, x0, 0.0))
            }
            InitialSpec::Surrogate { a, eps, lambda } => states::surrogate_perturbed_state(g, a, c64(eps), lambda),
        }
    }

    /// Starting point for modulation tracking.
    pub fn tracking_guess(&self) -> ShiftedStateParams {
        match *self {
            InitialSpec::Shifted { omega, a, theta } => ShiftedStateParams::new(omega, a, theta),
            InitialSpec::Eigenperturbed { a, .. }
            | InitialSpec::PhaseModulated { a, .. }
            | InitialSpec::Surrogate { a, .. } => ShiftedStateParams::new(1.0, a, 0.0),
            InitialSpec::LineSoliton { x0, .. } => ShiftedStateParams::new(1.0, -x0, 0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingSpec {
    /// Fix `a = 0` and also project on the kernel directions.
    #[serde(default)]
    pub half_soliton: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: String,
    pub graph: GraphSpec,
    pub initial: InitialSpec,
    pub dt: f64,
    pub t_end: f64,
    pub output_every: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tracking: Option<TrackingSpec>,
    /// Snapshot times; each is taken at the first output time at or after it.
    #[serde(default)]
    pub snapshots: Vec<f64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.graph.build()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return invalid(format!("t_end must be non-negative, got {}", self.t_end));
        }
        if self.output_every == 0 {
            return invalid("output_every must be at least 1");
        }
        if self.snapshots.iter().any(|&t| !(0.0..=self.t_end).contains(&t)) {
            return invalid("snapshot times must lie in [0, t_end]");
        }
        match self.initial {
            InitialSpec::Shifted { omega, a, .. } => ShiftedStateParams::new(omega, a, 0.0).validate()?,
            InitialSpec::Eigenperturbed { a, .. } if a >= crate::spectral::A_STAR => {
                return Err(Error::EigenvalueMerged { a });
            }
            InitialSpec::Surrogate { lambda, .. } if !(lambda > 0.0) => {
                return invalid("surrogate decay rate must be positive");
            }
            _ => {}
        }
        let n = (self.t_end / self.dt).round();
        if (n * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(1.0) {
            return invalid(format!("t_end = {} is not a multiple of dt = {}", self.t_end, self.dt));
        }
        drop(g);
        Ok(())
    }

    /// Number of rows in every time-series CSV.
    pub fn expected_rows(&self) -> usize {
        let steps = (self.t_end / self.dt).round() as usize;
        1 + steps / self.output_every
    }
}

/// Balanced weights used by the presets: `1/α₁² = 1/α₂² + 1/α₃²`.
pub fn preset_alpha() -> Vec<f64> {
    vec![std::f64::consts::FRAC_1_SQRT_2, 1.0, 1.0]
}

fn preset_graph() -> GraphSpec {
    GraphSpec {
        n_edges: 3,
        alpha: preset_alpha(),
        edge_length: 60.0,
        dx: 0.05,
        pml: PmlConfig::default(),
    }
}

fn preset(name: &str, initial: InitialSpec, t_end: f64, tracking: Option<TrackingSpec>) -> RunConfig {
    RunConfig {
        name: name.into(),
        graph: preset_graph(),
        initial,
        dt: 0.002,
        t_end,
        output_every: 50,
        output_dir: None,
        seed: 0,
        tracking,
        snapshots: Vec::new(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PresetInfo {
    pub name: &'static str,
    pub summary: &'static str,
    pub config: RunConfig,
}

/// The four shipped experiments.
pub fn list_presets() -> Vec<PresetInfo> {
    let full = Some(TrackingSpec { half_soliton: false });
    vec![
        PresetInfo {
            name: "eig_unstable",
            summary: "shifted state a = -0.55 plus 0.1 times the lambda_1 eigenfunction",
            config: preset("eig_unstable", InitialSpec::Eigenperturbed { a: -0.55, eps: [0.1, 0.0] }, 20.0, full),
        },
        PresetInfo {
            name: "eig_stable",
            summary: "shifted state a = 0.55 plus 0.1 times the lambda_1 eigenfunction",
            config: preset("eig_stable", InitialSpec::Eigenperturbed { a: 0.55, eps: [0.1, 0.0] }, 60.0, full),
        },
        PresetInfo {
            name: "phase_reversal",
            summary: "shifted state a = -1 with phase modulation mu = 0.1i",
            config: preset("phase_reversal", InitialSpec::PhaseModulated { a: -1.0, mu: [0.0, 0.1] }, 40.0, full),
        },
        PresetInfo {
            name: "phase_half",
            summary: "half-soliton a = 0 with phase modulation mu = -0.02i",
            config: preset(
                "phase_half",
                InitialSpec::PhaseModulated { a: 0.0, mu: [0.0, -0.02] },
                150.0,
                Some(TrackingSpec { half_soliton: true }),
            ),
        },
    ]
}

pub fn preset_config(name: &str) -> Result<RunConfig> {
    list_presets()
        .into_iter()
        .find(|p| p.name == name)
        .map(|p| p.config)
        .ok_or_else(|| Error::UnknownPreset(name.into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    BlowUp { t: f64, last_good: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: RunConfig,
    pub outcome: RunStatus,
    pub rows: usize,
    pub snapshots: Vec<String>,
    /// First output time at which the modulation fit failed, if any.
    pub tracking_stopped_at: Option<f64>,
    pub created_unix: u64,
}

/// In-memory result of a run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub status: RunStatus,
    pub diagnostics: Vec<Diagnostics>,
    pub track: Vec<TrackRecord>,
    pub tracking_stopped_at: Option<f64>,
    pub final_state: Option<crate::GraphFunction>,
}

impl RunOutput {
    pub fn is_success(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

/// Writes diagnostics rows as CSV.
pub fn write_diagnostics_csv<W: Write>(out: W, rows: &[Diagnostics]) -> Result<()> {
    let mut w = DiagnosticsWriter::new(out)?;
    for d in rows {
        w.row(d)?;
    }
    w.finish()
}

struct DiagnosticsWriter<W: Write> {
    w: csv::Writer<W>,
}

impl<W: Write> DiagnosticsWriter<W> {
    fn new(out: W) -> Result<Self> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t",
            "mass",
            "energy",
            "momentum",
            "flux",
            "max_edge",
            "max_pos",
            "asymmetry",
            "continuity_residual",
        ])?;
        Ok(DiagnosticsWriter { w })
    }

    fn row(&mut self, d: &Diagnostics) -> Result<()> {
        self.w.write_record([
            fmt(d.t),
            fmt(d.mass),
            fmt(d.energy),
            fmt(d.momentum),
            fmt(d.flux),
            d.max_edge.to_string(),
            fmt(d.max_pos),
            fmt(d.asymmetry),
            fmt(d.continuity_residual),
        ])?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

fn snapshot_name(t: f64) -> String {
    format!("snapshot_t{t:09.3}.bin")
}

/// Runs an experiment in memory; no files are written.
pub fn run_in_memory(cfg: &RunConfig, exec: Exec) -> Result<RunOutput> {
    run_inner(cfg, exec, None)
}

/// Runs an experiment and writes its artifacts into `out_dir` (or the
/// configured `output_dir`). Blow-up is not an `Err`; it is reported in the
/// returned status and in the manifest.
pub fn run_experiment(cfg: &RunConfig, out_dir: Option<&Path>, exec: Exec) -> Result<RunOutput> {
    let dir = match (out_dir, &cfg.output_dir) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => d.clone(),
        (None, None) => return invalid("no output directory given"),
    };
    fs::create_dir_all(&dir)?;
    run_inner(cfg, exec, Some(&dir))
}

fn run_inner(cfg: &RunConfig, exec: Exec, dir: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    let g = cfg.graph.build()?;
    let f0 = cfg.initial.build(&g)?;
    let stepper = Stepper::new(&g, cfg.dt, exec)?;

    let mut diag_writer = match dir {
        Some(d) => Some(DiagnosticsWriter::new(BufWriter::new(File::create(d.join("diagnostics.csv"))?))?),
        None => None,
    };
    let mut tracker = cfg
        .tracking
        .map(|t| Tracker::new(&g, cfg.initial.tracking_guess(), t.half_soliton));
    let mut tracking_stopped_at = None;
    let mut pending: Vec<f64> = cfg.snapshots.clone();
    pending.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pending.dedup();
    let mut written = Vec::new();
    let params = serde_json::to_value(cfg)?;
    let eps_t = 1e-9 * cfg.dt;

    let result = stepper.run(&f0, cfg.t_end, cfg.output_every, |t, f, d| {
        if let Some(w) = diag_writer.as_mut() {
            w.row(d)?;
        }
        if let Some(tr) = tracker.as_mut() {
            if !tr.is_stopped() && !tr.push(t, f, d.momentum) && tracking_stopped_at.is_none() {
                tracking_stopped_at = Some(t);
                log::warn!("modulation fit stopped converging at t = {t}");
            }
        }
        while pending.first().is_some_and(|&ts| ts <= t + eps_t) {
            pending.remove(0);
            if let Some(dir) = dir {
                let name = snapshot_name(t);
                if !written.contains(&name) {
                    checkpoint::save(&dir.join(&name), &g, f, t, params.clone())?;
                    written.push(name);
                }
            }
        }
        Ok(())
    });
    if let Some(w) = diag_writer {
        w.finish()?;
    }

    let (status, diagnostics, final_state) = match result {
        Ok((f, rows)) => (RunStatus::Completed, rows, Some(f)),
        Err(Error::BlowUp { t, last_good }) => {
            log::error!("blow-up at t = {t}");
            (RunStatus::BlowUp { t, last_good }, Vec::new(), None)
        }
        Err(e) => return Err(e),
    };
    let track = tracker.map(|t| t.finish()).unwrap_or_default();

    if let Some(dir) = dir {
        if let Some(spec) = cfg.tracking {
            let n = if spec.half_soliton { g.n_edges() - 1 } else { 0 };
            write_track_csv(BufWriter::new(File::create(dir.join("modulation.csv"))?), &track, n)?;
        }
        if let Some(f) = &final_state {
            checkpoint::save(&dir.join("final.bin"), &g, f, cfg.t_end, params.clone())?;
            written.push("final.bin".into());
        }
        let rows = if diagnostics.is_empty() {
            // blow-up: count what was streamed
            count_rows(&dir.join("diagnostics.csv"))?
        } else {
            diagnostics.len()
        };
        let manifest = Manifest {
            version: crate::VERSION.into(),
            config: cfg.clone(),
            outcome: status.clone(),
            rows,
            snapshots: written,
            tracking_stopped_at,
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        let mut f = File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        f.write_all(b"\n")?;
    }

    Ok(RunOutput {
        status,
        diagnostics,
        track,
        tracking_stopped_at,
        final_state,
    })
}

fn count_rows(path: &Path) -> Result<usize> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.records().count())
}

/// Runs independent configurations concurrently, one stepper per run. Each
/// config must carry its own `output_dir`.
pub fn run_sweep(configs: &[RunConfig], exec: Exec) -> Vec<Result<RunOutput>> {
    // runs are the unit of parallelism; each stepper stays sequential
    exec.map(configs, |cfg| run_experiment(cfg, None, Exec::Sequential))
}

/// Reads a sweep file: a JSON array of run configurations.
pub fn load_sweep(path: &Path) -> Result<Vec<RunConfig>> {
    let cfgs: Vec<RunConfig> = serde_json::from_str(&fs::read_to_string(path)?)?;
    for c in &cfgs {
        c.validate()?;
        if c.output_dir.is_none() {
            return invalid(format!("sweep entry {:?} has no output_dir", c.name));
        }
    }
    Ok(cfgs)
}

/// Spectrum rows for every `a` in `a_values`.
pub fn spectrum_report(g: &StarGraph, a_values: &[f64], exec: Exec) -> Result<Vec<SpectrumRow>> {
    exec.map(a_values, |&a| spectrum_row(g, a)).into_iter().collect()
}

pub fn write_spectrum_csv<W: Write>(out: W, rows: &[SpectrumRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "a",
        "lambda0",
        "lambda_zero",
        "lambda1_numeric",
        "lambda1_formula_sech",
        "lambda1_formula_sech2",
    ])?;
    for r in rows {
        w.write_record([
            fmt(r.a),
            fmt(r.lambda0),
            fmt(r.lambda_zero),
            fmt(r.lambda1_numeric),
            fmt(r.lambda1_sech),
            fmt(r.lambda1_sech_squared),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `a` grid of the default spectrum report.
pub fn default_a_grid() -> Vec<f64> {
    (0..=26).map(|k| -0.65 + 0.05 * k as f64).collect()
}

/// Default `ε` values of the escape-time table.
pub const ESCAPE_EPS: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

/// Writes `trajectory.csv` and `escape.csv` for the reduced system with
/// closed-form coefficients on `alpha` at `ω = 1`.
pub fn reduced_report(
    dir: &Path,
    alpha: &[f64],
    initial: &ReducedState,
    t_end: f64,
    dt: f64,
) -> Result<(reduced::Trajectory, Vec<Escape>)> {
    let c = ReducedCoefficients::closed_form(alpha, 1.0);
    if initial.gamma.len() != c.dim() {
        return invalid(format!("initial state needs {} components", c.dim()));
    }
    fs::create_dir_all(dir)?;
    let traj = reduced::integrate(initial, &c, t_end, dt)?;
    reduced::write_trajectory_csv(BufWriter::new(File::create(dir.join("trajectory.csv"))?), &traj, &c)?;
    let table = reduced::scaling_table(&ESCAPE_EPS, |e| 0.5 * e, &c)?;
    reduced::write_scaling_csv(BufWriter::new(File::create(dir.join("escape.csv"))?), &table)?;
    Ok((traj, table))
}

/// Landmarks read off a diagnostics series.
pub mod landmarks {
    use crate::functionals::Diagnostics;

    /// First output time at which the maximum leaves the incoming edge.
    pub fn vertex_crossing(rows: &[Diagnostics]) -> Option<f64> {
        rows.iter().find(|d| d.max_edge != 1).map(|d| d.t)
    }

    /// First time the momentum changes sign from negative to non-negative,
    /// linearly interpolated.
    pub fn momentum_zero_crossing(rows: &[Diagnostics]) -> Option<f64> {
        rows.windows(2).find_map(|w| {
            let (a, b) = (&w[0], &w[1]);
            (a.momentum < 0.0 && b.momentum >= 0.0)
                .then(|| a.t + (b.t - a.t) * (-a.momentum) / (b.momentum - a.momentum))
        })
    }

    /// First time the momentum reaches `frac` of its running maximum over
    /// the whole series.
    pub fn momentum_saturation(rows: &[Diagnostics], frac: f64) -> Option<f64> {
        let p0 = rows.first()?.momentum;
        let pmax = rows.iter().map(|d| d.momentum).fold(f64::NEG_INFINITY, f64::max);
        let level = p0 + frac * (pmax - p0);
        rows.iter().find(|d| d.momentum >= level).map(|d| d.t)
    }

    /// Least-squares slope of `ln |asymmetry|` over `t ∈ [t0, t1]`.
    pub fn asymmetry_growth_rate(rows: &[Diagnostics], t0: f64, t1: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|d| d.t >= t0 && d.t <= t1 && d.asymmetry != 0.0)
            .map(|d| (d.t, d.asymmetry.abs().ln()))
            .collect();
        if pts.len() < 3 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }

    /// Start time and rate of the `width`-long window, beginning at or after
    /// `after`, over which `ln |asymmetry|` grows fastest. Windows advance
    /// by one output interval.
    pub fn steepest_growth(rows: &[Diagnostics], after: f64, width: f64) -> Option<(f64, f64)> {
        let t_last = rows.last()?.t;
        rows.iter()
            .filter(|d| d.t >= after && d.t + width <= t_last + 1e-9)
            .filter_map(|d| asymmetry_growth_rate(rows, d.t, d.t + width).map(|r| (d.t, r)))
            .max_by(|x, y| x.1.total_cmp(&y.1))
    }
}
