//! Command-line plumbing: configuration, subcommand implementations, and the
//! shot-series decay fit. Each subcommand returns its full output text so the
//! binary and the library produce identical bytes.

pub mod config;
pub mod fit;

pub use config::{Overrides, RunConfig};
pub use fit::{fit_target_decay, DecayFit, FitError, ShotSeries};

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::fieldsolver::{grid_rows, grid_csv, BasisCache, BasisSolution, FieldError, GridBox, SolveOptions, StaticField};
use crate::geometry::{default_layout, load_layout, ElectrodeRole, GeometryError, TrapLayout};
use crate::loading_mc::{
    min_loadable_depth, run_ablation_load, run_eimpact_load, threshold_ratio, with_workers, LoadContext, LoadError,
    LoadResult,
};
use crate::trap_analysis::{analyze, sweep_csv, sweep_depth, AnalysisError, DepthSearch, PseudoField, TrapAnalysis};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Solver(#[from] FieldError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Geometry(_) => "geometry",
            CliError::Solver(_) => "solver",
            CliError::Analysis(_) => "analysis",
            CliError::Load(_) => "load",
            CliError::Fit(_) => "fit",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Io(_) => 4,
            CliError::Geometry(_) => 5,
            CliError::Solver(_) => 6,
            CliError::Analysis(_) => 7,
            CliError::Load(_) => 8,
            CliError::Fit(_) => 9,
        }
    }

    /// `error[category]: message` on one line.
    pub fn line(&self) -> String {
        format!("error[{}]: {}", self.category(), self.to_string().replace('\n', " "))
    }
}

#[derive(Debug, Parser)]
#[command(name = "surftrap", version, about = "Surface-electrode ion trap fields, pseudopotential analysis and loading simulation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML run configuration
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Layout JSON (overrides the configuration)
    #[arg(long, global = true, value_name = "PATH")]
    pub layout: Option<PathBuf>,
    /// rf amplitude, V
    #[arg(long, global = true, value_name = "VOLTS")]
    pub vrf: Option<f64>,
    /// rf frequency Omega/2pi, Hz
    #[arg(long, global = true, value_name = "HZ")]
    pub freq: Option<f64>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Monte Carlo trials per depth
    #[arg(long, global = true, value_name = "N")]
    pub trials: Option<usize>,
    /// Worker threads (results do not depend on it)
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Output file (stdout when absent)
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Electrode shorting duration, microseconds
    #[arg(long = "short-us", global = true, value_name = "FLOAT")]
    pub short_us: Option<f64>,
    /// Voltage recovery after shorting: step or exp:TAU_US
    #[arg(long, global = true, value_name = "step|exp:TAU_US")]
    pub recovery: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LoaderArg {
    Ablation,
    Eimpact,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mesh the layout and solve the electrode basis (cached when cache_dir is set)
    Solve,
    /// Trap minimum, secular frequencies, Mathieu q and depth at one drive
    Analyze,
    /// Depth table over rf amplitudes
    Sweep {
        #[arg(long)]
        from: Option<f64>,
        #[arg(long)]
        to: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Monte Carlo loading table
    Load {
        #[arg(value_enum)]
        kind: LoaderArg,
    },
    /// Minimum loadable depths and their ratio from two load tables
    Threshold {
        #[arg(long, value_name = "PATH")]
        ablation: PathBuf,
        #[arg(long, value_name = "PATH")]
        eimpact: PathBuf,
        #[arg(long = "p-min")]
        p_min: Option<f64>,
    },
    /// Fit exponential decay to a shot series CSV
    FitTargets {
        #[arg(value_name = "CSV")]
        input: PathBuf,
    },
    /// Potential and field on a grid, CSV
    ExportField {
        /// rf, dc or an electrode name
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        spacing: Option<f64>,
    },
}

impl GlobalArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            layout: self.layout.clone(),
            vrf: self.vrf,
            freq: self.freq,
            seed: self.seed,
            trials: self.trials,
            short_us: self.short_us,
            recovery: self.recovery.clone(),
        }
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&self.overrides())?;
        Ok(cfg)
    }
}

pub fn layout_for(cfg: &RunConfig) -> Result<TrapLayout, CliError> {
    if cfg.layout.is_empty() {
        Ok(default_layout())
    } else {
        Ok(load_layout(&cfg.layout)?.validated()?)
    }
}

/// Solved basis, through the cache when `cache_dir` is set. The flag reports a cache hit.
pub fn basis_for(cfg: &RunConfig, layout: &TrapLayout) -> Result<(BasisSolution, bool), CliError> {
    let opts = SolveOptions::default();
    if cfg.cache_dir.is_empty() {
        Ok((crate::fieldsolver::solve_layout(layout, &cfg.mesh_config(), &opts)?, false))
    } else {
        Ok(BasisCache::new(&cfg.cache_dir).get_or_solve(layout, &cfg.mesh_config(), &opts)?)
    }
}

fn pseudo_for(cfg: &RunConfig, layout: &TrapLayout, basis: &BasisSolution) -> Result<PseudoField, CliError> {
    Ok(PseudoField::for_layout(layout, basis, &cfg.drive(), cfg.species()?)?)
}

fn comment(text: &str) -> String {
    text.lines().map(|l| format!("# {l}\n")).collect()
}

fn fmt3(v: [f64; 3]) -> String {
    format!("[{}, {}, {}]", v[0], v[1], v[2])
}

pub fn solve_report(cfg: &RunConfig) -> Result<String, CliError> {
    let layout = layout_for(cfg)?;
    let (basis, hit) = basis_for(cfg, &layout)?;
    let mut s = comment(&cfg.echo());
    s.push_str(&format!("layout = \"{}\"\n", layout.name));
    s.push_str(&format!("patches = {}\n", basis.mesh.len()));
    s.push_str(&format!("electrodes = {}\n", basis.electrode_names().len()));
    s.push_str(&format!("residual_V = {}\n", basis.residual.iter().fold(0.0f64, |a, r| a.max(*r))));
    s.push_str(&format!("rcond = {}\n", basis.rcond));
    s.push_str(&format!("key = \"{}\"\n", basis.key));
    s.push_str(&format!("cached = {hit}\n"));
    Ok(s)
}

pub fn analyze_layout(cfg: &RunConfig) -> Result<TrapAnalysis, CliError> {
    let layout = layout_for(cfg)?;
    let (basis, _) = basis_for(cfg, &layout)?;
    let f = pseudo_for(cfg, &layout, &basis)?;
    Ok(analyze(&f, cfg.analysis.guess, &DepthSearch::default())?)
}

pub fn analysis_text(a: &TrapAnalysis, rf_amplitude: f64) -> String {
    let mut s = String::new();
    s.push_str(&format!("rf_amplitude_V = {rf_amplitude}\n"));
    s.push_str(&format!("height_m = {}\n", a.height()));
    s.push_str(&format!("minimum_m = {}\n", fmt3(a.minimum_position)));
    s.push_str(&format!("depth_eV = {}\n", a.depth_ev));
    s.push_str(&format!("secular_Hz = {}\n", fmt3(a.secular.frequencies)));
    s.push_str(&format!("secular_xyz_Hz = {}\n", fmt3(a.frequencies_xyz())));
    s.push_str(&format!("mathieu_q = {}\n", fmt3(a.mathieu_q)));
    s.push_str(&format!("stable = {}\n", a.stable));
    match a.escape_position {
        Some(p) => s.push_str(&format!("escape_m = {}\n", fmt3(p))),
        None => s.push_str("escape_m = \"none\"\n"),
    }
    if let Some(d) = &a.diagnostic {
        s.push_str(&format!("diagnostic = {d:?}\n"));
    }
    s
}

pub fn analyze_report(cfg: &RunConfig) -> Result<String, CliError> {
    let a = analyze_layout(cfg)?;
    Ok(comment(&cfg.echo()) + &analysis_text(&a, cfg.drive.rf_amplitude))
}

pub fn sweep_report(cfg: &RunConfig) -> Result<String, CliError> {
    let layout = layout_for(cfg)?;
    let (basis, _) = basis_for(cfg, &layout)?;
    let f = pseudo_for(cfg, &layout, &basis)?;
    let rows = sweep_depth(&f, &cfg.sweep.amplitudes(), cfg.analysis.guess, &DepthSearch::default())?;
    Ok(sweep_csv(&rows, &cfg.echo()))
}

pub fn load_context(cfg: &RunConfig) -> Result<LoadContext, CliError> {
    let layout = layout_for(cfg)?;
    let (basis, _) = basis_for(cfg, &layout)?;
    let mut ctx = LoadContext::for_layout(
        &layout,
        &basis,
        &cfg.drive(),
        cfg.species()?,
        cfg.load.escape_box(),
        cfg.load.grid_spacing,
        cfg.analysis.guess,
    )?;
    ctx.integrator = cfg.integrator.apply(ctx.integrator);
    ctx.radial_capture = cfg.load.radial_capture;
    Ok(ctx)
}

pub fn run_load(cfg: &RunConfig, kind: LoaderArg) -> Result<LoadResult, CliError> {
    let ctx = load_context(cfg)?;
    let amps = cfg.load.amplitudes();
    let mc = cfg.load.monte_carlo();
    Ok(match kind {
        LoaderArg::Ablation => {
            let center = ctx.depth_points(&amps[..1])?[0].minimum;
            run_ablation_load(&ctx, &amps, &cfg.plume.model(center), &cfg.timeline.timeline()?, &mc)?
        }
        LoaderArg::Eimpact => run_eimpact_load(&ctx, &amps, &cfg.source.source(), &mc)?,
    })
}

pub fn load_report(cfg: &RunConfig, kind: LoaderArg) -> Result<String, CliError> {
    Ok(run_load(cfg, kind)?.to_csv(&cfg.echo()))
}

fn read_load(path: &Path) -> Result<LoadResult, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(LoadResult::from_csv(&text)?)
}

pub fn threshold_text(ablation: &LoadResult, eimpact: &LoadResult, p_min: f64) -> String {
    let show = |v: Option<f64>| v.map_or("\"none\"".to_string(), |d| d.to_string());
    let mut s = format!("p_min = {p_min}\n");
    s.push_str(&format!("ablation_threshold_eV = {}\n", show(min_loadable_depth(ablation, p_min))));
    s.push_str(&format!("eimpact_threshold_eV = {}\n", show(min_loadable_depth(eimpact, p_min))));
    match threshold_ratio(ablation, eimpact, p_min) {
        Ok(r) => s.push_str(&format!("ratio = {r}\n")),
        Err(e) => s.push_str(&format!("ratio = \"undefined\"\nratio_reason = {:?}\n", e.to_string())),
    }
    s
}

pub fn fit_text(series: &ShotSeries, fit: &DecayFit) -> String {
    let mut s = String::new();
    s.push_str(&format!("target = {:?}\n", series.label));
    s.push_str(&format!("shots = {}\n", series.len()));
    s.push_str(&format!("amplitude_photons_per_ms = {}\n", fit.amplitude));
    if fit.non_decaying {
        s.push_str("durability_shots = \"inf\"\n");
    } else {
        s.push_str(&format!("durability_shots = {}\n", fit.durability));
    }
    s.push_str(&format!("baseline_photons_per_ms = {}\n", fit.baseline));
    s.push_str(&format!("residual_rms = {}\n", fit.residual_rms));
    s.push_str(&format!("non_decaying = {}\n", fit.non_decaying));
    s.push_str(&format!("estimated_ions = {}\n", fit.estimated_ions()));
    s
}

pub fn export_report(cfg: &RunConfig) -> Result<String, CliError> {
    let layout = layout_for(cfg)?;
    let (basis, _) = basis_for(cfg, &layout)?;
    let src = match cfg.export.source.as_str() {
        "rf" => basis.role_unit(ElectrodeRole::Rf),
        "dc" => {
            let drive = cfg.drive().resolve(&layout)?;
            basis.charges(&drive.dc_voltages)?
        }
        name => basis.unit(name)?,
    };
    let bx = GridBox::new(cfg.export.min, cfg.export.max);
    let rows = grid_rows(&src as &dyn StaticField, &bx, cfg.export.spacing)?;
    Ok(grid_csv(&rows, &cfg.echo()))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let mut cfg = g.resolve()?;
    let text = with_workers(g.workers, || -> Result<String, CliError> {
        match &cli.command {
            Command::Solve => solve_report(&cfg),
            Command::Analyze => analyze_report(&cfg),
            Command::Sweep { from, to, points } => {
                if let Some(v) = from {
                    cfg.sweep.from = *v;
                }
                if let Some(v) = to {
                    cfg.sweep.to = *v;
                }
                if let Some(v) = points {
                    cfg.sweep.points = *v;
                }
                sweep_report(&cfg)
            }
            Command::Load { kind } => load_report(&cfg, *kind),
            Command::Threshold { ablation, eimpact, p_min } => {
                let p = p_min.unwrap_or(cfg.load.p_min);
                if !(p > 0.0 && p <= 1.0) {
                    return Err(CliError::Config(format!("p_min must be in (0, 1], got {p}")));
                }
                Ok(threshold_text(&read_load(ablation)?, &read_load(eimpact)?, p))
            }
            Command::FitTargets { input } => {
                let text = std::fs::read_to_string(input).map_err(|e| CliError::Io(format!("{}: {e}", input.display())))?;
                let series = ShotSeries::from_csv(&text)?;
                let fit = fit_target_decay(&series)?;
                Ok(fit_text(&series, &fit))
            }
            Command::ExportField { source, spacing } => {
                if let Some(s) = source {
                    cfg.export.source = s.clone();
                }
                if let Some(h) = spacing {
                    cfg.export.spacing = *h;
                }
                export_report(&cfg)
            }
        }
    })?;
    emit(&g.out, &text)
}
