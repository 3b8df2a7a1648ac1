//! Run configuration, test-case construction and batch orchestration.
//!
//! Configuration is flat `key=value` text; later assignments override
//! earlier ones, so command-line flags are applied after the file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::{self, AnalysisError, SweepConfig};
use crate::grid::{Grid2D, Stagger};
use crate::solver::{
    self, apply_bubble_perturbation, diagnostics_csv, energy_budget, hydrostatic_init,
    split_fluids, Bubble, DiagnosticsRow, DistanceForm, EnergyBudget, FluidFields, ModelState,
    SolverConfig, SolverError, TransferClosure,
};
use crate::{Constants, SchemeConfig};

/// Relative energy change that marks a blow-up even when fields stay finite.
pub const BLOW_UP_THRESHOLD: f64 = 1.0;
/// Largest |ΔE_RSF| accepted as energy conserving.
pub const CONSERVATIVE_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("line {line}: expected `key=value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

fn invalid(key: &str, message: impl Into<String>) -> CaseError {
    CaseError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CaseError + '_ {
    move |source| CaseError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    SingleFluid,
    FullBubble,
    HalfBubble,
    Sweep,
}

impl Case {
    pub fn name(self) -> &'static str {
        match self {
            Case::SingleFluid => "single-fluid",
            Case::FullBubble => "full-bubble",
            Case::HalfBubble => "half-bubble",
            Case::Sweep => "sweep",
        }
    }
}

impl FromStr for Case {
    type Err = CaseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "single-fluid" | "single" => Ok(Case::SingleFluid),
            "full-bubble" | "full" => Ok(Case::FullBubble),
            "half-bubble" | "half" => Ok(Case::HalfBubble),
            "sweep" => Ok(Case::Sweep),
            other => Err(invalid(
                "case",
                format!("`{other}` is not one of single-fluid, full-bubble, half-bubble, sweep"),
            )),
        }
    }
}

/// Resolution presets for the bubble cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 50 × 25 cells of 400 m, Δt = 8 s, 125 steps.
    Desk,
    /// 200 × 100 cells of 100 m, Δt = 2 s, 500 steps.
    Paper,
}

impl FromStr for Preset {
    type Err = CaseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(invalid("preset", format!("`{other}` is not desk or paper"))),
        }
    }
}

/// Parse a scheme selection: `all20`, `named` (schemes 1–6), or a comma list
/// of scheme numbers and labels such as `6,M1-C0A0-m-m`.
pub fn parse_schemes(s: &str) -> Result<Vec<SchemeConfig>, CaseError> {
    let s = s.trim();
    match s.to_ascii_lowercase().as_str() {
        "all20" | "all" => return Ok(SchemeConfig::all20()),
        "named" | "conservative" => return Ok((1..=6).filter_map(SchemeConfig::named).collect()),
        _ => {}
    }
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let cfg = item
            .parse::<SchemeConfig>()
            .map_err(|e| invalid("scheme", e.to_string()))?;
        if !out.contains(&cfg) {
            out.push(cfg);
        }
    }
    if out.is_empty() {
        return Err(invalid("scheme", "empty selection"));
    }
    Ok(out)
}

/// Complete description of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub case: Case,
    pub schemes: Vec<SchemeConfig>,
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
    pub dz: f64,
    pub dt: f64,
    pub t_end: f64,
    pub out: PathBuf,
    /// Write field dumps every this many steps (0 disables dumps).
    pub dump_every: usize,
    pub distance_form: DistanceForm,
    pub amplitude: f64,
    pub sigma_min: f64,
    pub k_sigma: f64,
    pub points_per_axis: usize,
    pub solver: SolverConfig,
}

impl RunConfig {
    pub fn new(case: Case, preset: Preset) -> Self {
        let mut cfg = Self {
            case,
            schemes: (1..=6).filter_map(SchemeConfig::named).collect(),
            nx: 0,
            nz: 0,
            dx: 0.0,
            dz: 0.0,
            dt: 0.0,
            t_end: 0.0,
            out: PathBuf::from("output"),
            dump_every: 0,
            distance_form: DistanceForm::Squared,
            amplitude: 2.0,
            sigma_min: 0.1,
            k_sigma: 200.0,
            points_per_axis: 50,
            solver: SolverConfig::default(),
        };
        cfg.apply_preset(preset);
        cfg
    }

    /// Overwrite grid size, spacing, Δt and end time with a preset.
    pub fn apply_preset(&mut self, preset: Preset) {
        let (nx, nz, h, dt, steps) = match preset {
            Preset::Desk => (50, 25, 400.0, 8.0, 125.0),
            Preset::Paper => (200, 100, 100.0, 2.0, 500.0),
        };
        self.nx = nx;
        self.nz = nz;
        self.dx = h;
        self.dz = h;
        self.dt = dt;
        self.t_end = dt * steps;
    }

    /// Assign one key. Keys match the long command-line flags.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CaseError> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| invalid(&key, format!("`{v}` is not a number")))
        };
        let int = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| invalid(&key, format!("`{v}` is not a non-negative integer")))
        };
        match key.as_str() {
            "case" => self.case = value.parse()?,
            "scheme" | "schemes" => self.schemes = parse_schemes(value)?,
            "preset" => self.apply_preset(value.parse()?),
            "paper-scale" => {
                if parse_bool(&key, value)? {
                    self.apply_preset(Preset::Paper)
                }
            }
            "nx" => self.nx = int(value)?,
            "nz" => self.nz = int(value)?,
            "dx" => self.dx = num(value)?,
            "dz" => self.dz = num(value)?,
            "dt" => self.dt = num(value)?,
            "t-end" => self.t_end = num(value)?,
            "out" => self.out = PathBuf::from(value),
            "dump-every" => self.dump_every = int(value)?,
            "bubble-form" => {
                self.distance_form = match value.to_ascii_lowercase().as_str() {
                    "squared" => DistanceForm::Squared,
                    "literal" => DistanceForm::Literal,
                    other => {
                        return Err(invalid(
                            &key,
                            format!("`{other}` is not squared or literal"),
                        ))
                    }
                }
            }
            "amplitude" => self.amplitude = num(value)?,
            "sigma-min" => self.sigma_min = num(value)?,
            "k-sigma" => self.k_sigma = num(value)?,
            "points" => self.points_per_axis = int(value)?,
            "outer-iterations" => self.solver.outer_iterations = int(value)?,
            "cg-tolerance" => self.solver.cg_tolerance = num(value)?,
            "alpha" => self.solver.alpha = num(value)?,
            _ => return Err(CaseError::UnknownKey(key)),
        }
        Ok(())
    }

    /// Apply flat `key=value` text. Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CaseError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CaseError::Syntax {
                line: n + 1,
                text: raw.to_string(),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CaseError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        self.apply_text(&text)
    }

    /// Number of steps, checking that `t_end` is a whole number of steps.
    pub fn n_steps(&self) -> Result<usize, CaseError> {
        if self.t_end == 0.0 {
            return Ok(0);
        }
        let n = self.t_end / self.dt;
        let r = n.round();
        if (n - r).abs() > 1e-9 * n.max(1.0) {
            return Err(invalid(
                "t-end",
                format!("{} is not a multiple of dt = {}", self.t_end, self.dt),
            ));
        }
        Ok(r as usize)
    }

    pub fn validate(&self) -> Result<(), CaseError> {
        if self.case == Case::Sweep {
            if self.points_per_axis < 2 {
                return Err(invalid("points", "need at least 2 points per axis"));
            }
            return Ok(());
        }
        if self.nx < 2 || self.nz < 2 {
            return Err(invalid(
                if self.nx < 2 { "nx" } else { "nz" },
                "need at least 2 cells",
            ));
        }
        for (key, v) in [("dx", self.dx), ("dz", self.dz), ("dt", self.dt)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(key, "must be positive"));
            }
        }
        if !(self.t_end >= 0.0) {
            return Err(invalid("t-end", "must be non-negative"));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < 1.0) {
            return Err(invalid("sigma-min", "must lie in (0, 1)"));
        }
        if !(self.k_sigma >= 0.0) {
            return Err(invalid("k-sigma", "must be non-negative"));
        }
        if !(self.solver.alpha >= 0.0 && self.solver.alpha <= 1.0) {
            return Err(invalid("alpha", "must lie in [0, 1]"));
        }
        if self.solver.outer_iterations == 0 {
            return Err(invalid("outer-iterations", "must be at least 1"));
        }
        self.n_steps()?;
        Ok(())
    }

    pub fn grid(&self) -> Grid2D {
        Grid2D::new(self.nx, self.nz, self.dx, self.dz)
    }

    /// Bubble centred horizontally, 2 km above the floor, radii 2 km.
    pub fn bubble(&self) -> Bubble {
        let g = self.grid();
        Bubble {
            xc: 0.5 * g.width(),
            zc: 2000.0,
            xr: 2000.0,
            zr: 2000.0,
            form: self.distance_form,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CaseError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(invalid(key, format!("`{other}` is not a boolean"))),
    }
}

/// Initial state, closure and schemes of a bubble case.
#[derive(Debug, Clone)]
pub struct CaseSetup {
    pub state: ModelState,
    pub closure: TransferClosure,
    pub schemes: Vec<SchemeConfig>,
}

const THETA_BACKGROUND: f64 = 300.0;
const P_SURFACE: f64 = 1.0e5;

fn rest_state(cfg: &RunConfig) -> ModelState {
    hydrostatic_init(
        cfg.grid(),
        |_| THETA_BACKGROUND,
        P_SURFACE,
        &cfg.solver.constants,
    )
}

/// Single-fluid bubble used as the reference for the full-bubble runs.
pub fn single_fluid_state(cfg: &RunConfig) -> ModelState {
    apply_bubble_perturbation(
        &rest_state(cfg),
        &cfg.bubble(),
        cfg.amplitude,
        &[0],
        &cfg.solver.constants,
    )
}

/// Build the initial state of a bubble case.
pub fn build_case(cfg: &RunConfig) -> Result<CaseSetup, CaseError> {
    cfg.validate()?;
    let consts: &Constants = &cfg.solver.constants;
    let grid = cfg.grid();
    let bubble = cfg.bubble();
    match cfg.case {
        Case::SingleFluid => Ok(CaseSetup {
            state: single_fluid_state(cfg),
            closure: TransferClosure::None,
            schemes: Vec::new(),
        }),
        Case::FullBubble => {
            let two = split_fluids(&rest_state(cfg), &grid.constant_center(1.0));
            let empty = FluidFields {
                eta: grid.constant_center(0.0),
                ..two.fluids[0].clone()
            };
            let two = ModelState {
                fluids: vec![empty, two.fluids[1].clone()],
                ..two
            };
            Ok(CaseSetup {
                state: apply_bubble_perturbation(&two, &bubble, cfg.amplitude, &[1], consts),
                closure: TransferClosure::Relabel {
                    sigma_min: cfg.sigma_min,
                },
                schemes: cfg.schemes.clone(),
            })
        }
        Case::HalfBubble => {
            let sigma1 = grid.center_from_fn(|x, z| {
                if bubble.distance(x, z) < 1.0 {
                    0.5
                } else {
                    0.0
                }
            });
            let two = split_fluids(&rest_state(cfg), &sigma1);
            Ok(CaseSetup {
                state: apply_bubble_perturbation(&two, &bubble, cfg.amplitude, &[1], consts),
                closure: TransferClosure::Diffusive {
                    k_sigma: cfg.k_sigma,
                },
                schemes: cfg.schemes.clone(),
            })
        }
        Case::Sweep => Err(invalid("case", "the sweep case has no model state")),
    }
}

/// Outcome of one scheme (or the single-fluid reference) over a run.
#[derive(Debug, Clone)]
pub struct SchemeRun {
    /// `None` for a single-fluid run.
    pub scheme: Option<SchemeConfig>,
    pub rows: Vec<DiagnosticsRow>,
    /// Solver error that ended the run early.
    pub failure: Option<String>,
    /// Fraction of domain mass moved into fluid 0 by the first step.
    pub step1_mass_fraction: Option<f64>,
}

impl SchemeRun {
    pub fn id(&self) -> String {
        self.scheme
            .map_or_else(|| "single-fluid".to_string(), |s| s.label())
    }

    pub fn de_rsf_at(&self, step: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.step == step)
            .and_then(|r| r.de_rsf)
    }

    pub fn last_step(&self) -> usize {
        self.rows.last().map_or(0, |r| r.step)
    }

    /// Error, non-finite energy, or |ΔE_RSF| beyond [`BLOW_UP_THRESHOLD`].
    pub fn blew_up(&self) -> bool {
        self.failure.is_some()
            || self.rows.iter().any(|r| {
                !r.energy.total.is_finite()
                    || r.de_rsf
                        .is_some_and(|d| !d.is_finite() || d.abs() > BLOW_UP_THRESHOLD)
            })
    }
}

/// Everything a bubble run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub case: Case,
    pub n_steps: usize,
    pub reference: Option<SchemeRun>,
    pub runs: Vec<SchemeRun>,
}

impl RunReport {
    /// Table of ΔE_RSF at step 1 and at the end, with blow-up flags.
    pub fn table_csv(&self) -> String {
        let mut s =
            String::from("scheme_id,scheme_number,dE_RSF_step1,dE_RSF_end,blow_up,conservative\n");
        for r in &self.runs {
            let num = r
                .scheme
                .and_then(|c| c.number())
                .map(|n| n.to_string())
                .unwrap_or_default();
            let step1 = r.de_rsf_at(1.min(self.n_steps));
            let end = if r.failure.is_some() {
                None
            } else {
                r.de_rsf_at(self.n_steps)
            };
            let fmt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |d| format!("{d:e}"));
            let blow = r.blew_up();
            let conservative = !blow
                && [step1, end]
                    .iter()
                    .all(|v| v.is_some_and(|d| d.abs() <= CONSERVATIVE_THRESHOLD));
            let _ = writeln!(
                s,
                "{},{num},{},{},{blow},{conservative}",
                r.id(),
                fmt(step1),
                fmt(end)
            );
        }
        s
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CaseError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn dump_fields(dir: &Path, state: &ModelState) -> Result<(), CaseError> {
    let g = state.grid;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let write = |tag: String, stagger: Stagger, values: &[f64]| {
        let path = dir.join(format!("step_{:06}_{tag}.csv", state.step));
        fs::write(&path, g.dump_text(&tag, state.time, stagger, values)).map_err(io_err(&path))
    };
    write("pi".into(), Stagger::Center, &state.pi.values)?;
    for (i, f) in state.fluids.iter().enumerate() {
        write(format!("eta_{i}"), Stagger::Center, &f.eta.values)?;
        write(format!("theta_{i}"), Stagger::Center, &f.theta.values)?;
        write(format!("u_{i}"), Stagger::XFace, &f.vel.x)?;
        write(format!("w_{i}"), Stagger::ZFace, &f.vel.z)?;
    }
    if state.fluids.len() == 2 {
        let total = state.fluids[0]
            .eta
            .zip_map(&state.fluids[1].eta, |a, b| a + b);
        let sigma: Vec<f64> = state.fluids[1]
            .eta
            .values
            .iter()
            .zip(&total.values)
            .map(|(e, t)| if *t > 0.0 { e / t } else { 0.0 })
            .collect();
        write("sigma_1".into(), Stagger::Center, &sigma)?;
    }
    Ok(())
}

/// Integrate one scheme from `initial`, optionally against a reference energy series.
///
/// Solver failures end the run and are recorded rather than returned.
pub fn integrate(
    initial: &ModelState,
    closure: &TransferClosure,
    scheme: Option<SchemeConfig>,
    n_steps: usize,
    dt: f64,
    solver_cfg: &SolverConfig,
    reference: Option<&[EnergyBudget]>,
    mut on_state: impl FnMut(&ModelState) -> Result<(), CaseError>,
) -> Result<SchemeRun, CaseError> {
    let consts = &solver_cfg.constants;
    let e_first = energy_budget(initial, consts);
    let e0 = reference.map_or(e_first.total, |r| r[0].total);
    let rsf = |n: usize, e: &EnergyBudget| {
        reference
            .and_then(|r| r.get(n))
            .map(|r| (e.total - r.total) / e0)
    };
    let mut rows = vec![DiagnosticsRow::new(
        initial,
        e_first,
        e_first.total,
        rsf(0, &e_first),
    )];
    on_state(initial)?;
    let mut state = initial.clone();
    let mut failure = None;
    let mut step1_mass_fraction = None;
    let mass0: f64 = solver::fluid_masses(initial).iter().sum();
    let sch = scheme.unwrap_or(SchemeConfig::named(6).expect("scheme 6 exists"));
    for n in 1..=n_steps {
        match solver::step(&state, closure, &sch, dt, solver_cfg) {
            Ok((next, _)) => state = next,
            Err(e) => {
                failure = Some(format!("step {n}: {e}"));
                break;
            }
        }
        let e = energy_budget(&state, consts);
        rows.push(DiagnosticsRow::new(&state, e, e_first.total, rsf(n, &e)));
        if n == 1 && state.fluids.len() == 2 {
            step1_mass_fraction = Some(solver::fluid_masses(&state)[0] / mass0);
        }
        on_state(&state)?;
    }
    Ok(SchemeRun {
        scheme,
        rows,
        failure,
        step1_mass_fraction,
    })
}

/// Single-fluid reference run of a configuration.
pub fn reference_run(cfg: &RunConfig) -> Result<SchemeRun, CaseError> {
    integrate(
        &single_fluid_state(cfg),
        &TransferClosure::None,
        None,
        cfg.n_steps()?,
        cfg.dt,
        &cfg.solver,
        None,
        |_| Ok(()),
    )
}

fn energies(run: &SchemeRun) -> Vec<EnergyBudget> {
    run.rows.iter().map(|r| r.energy).collect()
}

/// Run a bubble case without writing anything.
pub fn run_bubble(cfg: &RunConfig) -> Result<RunReport, CaseError> {
    run_bubble_with(cfg, None)
}

fn run_bubble_with(cfg: &RunConfig, out: Option<&Path>) -> Result<RunReport, CaseError> {
    let setup = build_case(cfg)?;
    let n_steps = cfg.n_steps()?;
    let dump = |dir: PathBuf| {
        let every = cfg.dump_every;
        move |s: &ModelState| match out {
            Some(_) if every > 0 && s.step % every == 0 => dump_fields(&dir, s),
            _ => Ok(()),
        }
    };
    let run_dir = |id: &str| out.map(|o| o.join(id)).unwrap_or_default();
    let reference = match cfg.case {
        Case::FullBubble | Case::SingleFluid => Some(integrate(
            &single_fluid_state(cfg),
            &TransferClosure::None,
            None,
            n_steps,
            cfg.dt,
            &cfg.solver,
            None,
            dump(run_dir("single-fluid").join("fields")),
        )?),
        _ => None,
    };
    let ref_energy = match cfg.case {
        Case::FullBubble => reference.as_ref().map(energies),
        _ => None,
    };
    let runs = setup
        .schemes
        .par_iter()
        .map(|&sch| {
            integrate(
                &setup.state,
                &setup.closure,
                Some(sch),
                n_steps,
                cfg.dt,
                &cfg.solver,
                ref_energy.as_deref(),
                dump(run_dir(&sch.label()).join("fields")),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunReport {
        case: cfg.case,
        n_steps,
        reference,
        runs,
    })
}

/// Files written by [`run`].
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
}

/// Execute a configuration and write its artifacts under `cfg.out`.
///
/// Bubble cases write `<out>/<case>/<run>/diagnostics.csv`, optional field
/// dumps under `<run>/fields/`, and for the full bubble `table.csv`. The
/// sweep writes `<out>/sweep/envelope.csv` and `properties.txt`.
pub fn run(cfg: &RunConfig) -> Result<(Option<RunReport>, Artifacts), CaseError> {
    cfg.validate()?;
    let base = cfg.out.join(cfg.case.name());
    let mut art = Artifacts::default();
    if cfg.case == Case::Sweep {
        let sweep = SweepConfig::with_points(cfg.points_per_axis);
        let envs = analysis::run_sweep(&sweep, &cfg.schemes)?;
        let path = base.join("envelope.csv");
        fs::create_dir_all(&base).map_err(io_err(&base))?;
        analysis::emit_envelope_csv(&envs, &path)?;
        art.files.push(path);
        let rows = analysis::classify_schemes(
            &envs,
            &analysis::ProbeSet::default(),
            &analysis::Tolerances::default(),
        );
        let path = base.join("properties.txt");
        write_file(&path, &analysis::format_property_table(&rows))?;
        art.files.push(path);
        return Ok((None, art));
    }
    let report = run_bubble_with(cfg, Some(&base))?;
    let mut all: Vec<&SchemeRun> = report.reference.iter().collect();
    if cfg.case != Case::SingleFluid {
        all.extend(&report.runs);
    }
    for r in all {
        let path = base.join(r.id()).join("diagnostics.csv");
        let n_fluids = if r.scheme.is_some() { 2 } else { 1 };
        write_file(&path, &diagnostics_csv(&r.rows, n_fluids))?;
        art.files.push(path);
    }
    if cfg.case == Case::FullBubble {
        let path = base.join("table.csv");
        write_file(&path, &report.table_csv())?;
        art.files.push(path);
    }
    Ok((Some(report), art))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let d = RunConfig::new(Case::FullBubble, Preset::Desk);
        assert_eq!(
            (d.nx, d.nz, d.dx, d.dt, d.n_steps().unwrap()),
            (50, 25, 400.0, 8.0, 125)
        );
        let p = RunConfig::new(Case::FullBubble, Preset::Paper);
        assert_eq!(
            (p.nx, p.nz, p.dx, p.dt, p.n_steps().unwrap()),
            (200, 100, 100.0, 2.0, 500)
        );
        assert_eq!(p.t_end, 1000.0);
    }

    #[test]
    fn key_value_overrides() {
        let mut c = RunConfig::new(Case::SingleFluid, Preset::Desk);
        c.apply_text("# comment\ncase = half-bubble\nscheme=all20\n\ndt=4 # trailing\nt_end=40\n")
            .unwrap();
        assert_eq!(c.case, Case::HalfBubble);
        assert_eq!(c.schemes.len(), 20);
        assert_eq!(c.n_steps().unwrap(), 10);
        c.set("paper-scale", "true").unwrap();
        assert_eq!(c.nx, 200);
    }

    #[test]
    fn errors_name_the_key() {
        let mut c = RunConfig::new(Case::FullBubble, Preset::Desk);
        let e = c.set("dt", "fast").unwrap_err().to_string();
        assert!(e.contains("`dt`"), "{e}");
        assert!(matches!(
            c.set("colour", "red"),
            Err(CaseError::UnknownKey(_))
        ));
        c.set("t-end", "10").unwrap();
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("`t-end`"), "{e}");
        assert!(matches!(
            c.apply_text("nonsense"),
            Err(CaseError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn scheme_selection() {
        assert_eq!(parse_schemes("named").unwrap().len(), 6);
        let s = parse_schemes("6, M1-C0A0-m-m ,6").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0], SchemeConfig::named(6).unwrap());
        assert!(parse_schemes("7").is_err());
    }

    #[test]
    fn half_bubble_fractions() {
        let mut c = RunConfig::new(Case::HalfBubble, Preset::Desk);
        c.t_end = 0.0;
        let s = build_case(&c).unwrap().state;
        let mut max_sigma: f64 = 0.0;
        for cell in 0..s.grid.n_cells() {
            let (f0, f1) = (&s.fluids[0], &s.fluids[1]);
            let vol1 = f1.eta.values[cell] * f1.theta.values[cell];
            let vol = vol1 + f0.eta.values[cell] * f0.theta.values[cell];
            max_sigma = max_sigma.max(vol1 / vol);
        }
        assert!((max_sigma - 0.5).abs() < 1e-15);
    }

    #[test]
    fn full_bubble_has_single_fluid_mass() {
        let c = RunConfig::new(Case::FullBubble, Preset::Desk);
        let two = build_case(&c).unwrap().state;
        let one = single_fluid_state(&c);
        assert_eq!(two.fluids[0].eta.sum(), 0.0);
        assert_eq!(two.fluids[1].eta.values, one.fluids[0].eta.values);
        assert_eq!(two.fluids[1].theta.values, one.fluids[0].theta.values);
    }
}
