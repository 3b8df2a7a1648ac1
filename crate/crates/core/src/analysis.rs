//! Parameter sweeps over the 0-D kernels and empirical property classification.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::kernels::{
    apply_transfer, conservation_residuals, pair_diagnostics, Method, Mode, PairState,
    SchemeConfig, TransferRates, Treatment,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("points per axis must be at least 2, got {0}")]
    TooFewPoints(usize),
}

/// Inclusive closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    /// `n` uniformly spaced samples including both endpoints.
    pub fn linspace(&self, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![self.lo],
            _ => {
                let step = (self.hi - self.lo) / (n - 1) as f64;
                (0..n)
                    .map(|k| {
                        if k == n - 1 {
                            self.hi
                        } else {
                            self.lo + step * k as f64
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Sweep definition: fixed fluid-0 state, varied Δt, η_1, u_1 and S_10.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub eta0: f64,
    pub u0: f64,
    pub theta0: f64,
    pub theta1: f64,
    pub s01: f64,
    pub dt: Range,
    pub eta1: Range,
    pub u1: Range,
    pub s10: Range,
    pub points_per_axis: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            eta0: 1.0,
            u0: 1.0,
            theta0: 300.0,
            theta1: 301.0,
            s01: 1.0,
            dt: Range::new(0.0, 5.0),
            eta1: Range::new(1.0e-8, 2.0),
            u1: Range::new(-150.0, 150.0),
            s10: Range::new(0.0, 1.0),
            points_per_axis: 50,
        }
    }
}

impl SweepConfig {
    pub fn with_points(points_per_axis: usize) -> Self {
        Self {
            points_per_axis,
            ..Self::default()
        }
    }

    /// Transfers evaluated per Δt slice.
    pub fn transfers_per_slice(&self) -> usize {
        self.points_per_axis.pow(3)
    }

    fn validate(&self) -> Result<(), AnalysisError> {
        if self.points_per_axis < 2 {
            return Err(AnalysisError::TooFewPoints(self.points_per_axis));
        }
        Ok(())
    }
}

/// Running extremes of the per-transfer diagnostics over a set of inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremes {
    pub count: u64,
    pub df_min: f64,
    pub df_max: f64,
    pub de_min: f64,
    pub de_max: f64,
    /// Largest scaled momentum residual (see [`conservation_residuals`]).
    pub momentum_residual: f64,
    /// Largest scaled Σηθ residual.
    pub theta_residual: f64,
    pub negative_mass: bool,
    pub bound_violation: bool,
    pub non_finite: bool,
}

impl Default for Extremes {
    fn default() -> Self {
        Self {
            count: 0,
            df_min: f64::INFINITY,
            df_max: f64::NEG_INFINITY,
            de_min: f64::INFINITY,
            de_max: f64::NEG_INFINITY,
            momentum_residual: 0.0,
            theta_residual: 0.0,
            negative_mass: false,
            bound_violation: false,
            non_finite: false,
        }
    }
}

fn update_range(min: &mut f64, max: &mut f64, v: f64) {
    if v.is_nan() {
        *min = f64::NEG_INFINITY;
        *max = f64::INFINITY;
    } else {
        *min = min.min(v);
        *max = max.max(v);
    }
}

fn nan_max(acc: f64, v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        acc.max(v)
    }
}

impl Extremes {
    /// Apply one transfer and fold its diagnostics in.
    pub fn record(&mut self, before: &PairState, rates: &TransferRates, cfg: &SchemeConfig) {
        self.count += 1;
        let after = match apply_transfer(before, rates, cfg, Mode::Permissive) {
            Ok(out) => out.state,
            Err(_) => {
                self.mark_failed();
                return;
            }
        };
        let d = pair_diagnostics(before, &after);
        let (mom, th) = conservation_residuals(before, &after, rates);
        update_range(&mut self.df_min, &mut self.df_max, d.df_rel);
        update_range(&mut self.de_min, &mut self.de_max, d.de_rel);
        self.momentum_residual = nan_max(self.momentum_residual, mom);
        self.theta_residual = nan_max(self.theta_residual, th);
        self.negative_mass |= after.eta.iter().any(|&e| e < 0.0);
        self.bound_violation |= d.bound_violation;
        self.non_finite |= !after.is_finite();
    }

    fn mark_failed(&mut self) {
        self.df_min = f64::NEG_INFINITY;
        self.df_max = f64::INFINITY;
        self.de_min = f64::NEG_INFINITY;
        self.de_max = f64::INFINITY;
        self.momentum_residual = f64::INFINITY;
        self.theta_residual = f64::INFINITY;
        self.bound_violation = true;
        self.non_finite = true;
    }

    pub fn merge(mut self, o: &Extremes) -> Self {
        self.count += o.count;
        self.df_min = self.df_min.min(o.df_min);
        self.df_max = self.df_max.max(o.df_max);
        self.de_min = self.de_min.min(o.de_min);
        self.de_max = self.de_max.max(o.de_max);
        self.momentum_residual = self.momentum_residual.max(o.momentum_residual);
        self.theta_residual = self.theta_residual.max(o.theta_residual);
        self.negative_mass |= o.negative_mass;
        self.bound_violation |= o.bound_violation;
        self.non_finite |= o.non_finite;
        self
    }

    /// Largest |dF_rel|.
    pub fn max_abs_df(&self) -> f64 {
        self.df_min.abs().max(self.df_max.abs())
    }
}

/// Extremes for one Δt slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceEnvelope {
    pub dt: f64,
    /// Largest Δt·S_ij in the slice.
    pub max_dts: f64,
    pub stats: Extremes,
}

/// Sweep envelope for one scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub scheme: SchemeConfig,
    pub slices: Vec<SliceEnvelope>,
}

impl Envelope {
    /// Extremes over every slice.
    pub fn overall(&self) -> Extremes {
        self.fold(|_| true)
    }

    /// Extremes over the slices where every Δt·S_ij ≤ 1.
    pub fn unit_rate(&self) -> Extremes {
        self.fold(|s| s.max_dts <= 1.0)
    }

    fn fold(&self, keep: impl Fn(&SliceEnvelope) -> bool) -> Extremes {
        self.slices
            .iter()
            .filter(|s| keep(s))
            .fold(Extremes::default(), |acc, s| acc.merge(&s.stats))
    }
}

fn sweep_slice(cfg: &SweepConfig, scheme: &SchemeConfig, dt: f64) -> SliceEnvelope {
    let n = cfg.points_per_axis;
    let eta1 = cfg.eta1.linspace(n);
    let u1 = cfg.u1.linspace(n);
    let s10 = cfg.s10.linspace(n);
    let mut stats = Extremes::default();
    for &e1 in &eta1 {
        for &v1 in &u1 {
            let before = PairState::new([cfg.eta0, e1], [cfg.theta0, cfg.theta1], [cfg.u0, v1]);
            for &s in &s10 {
                stats.record(&before, &TransferRates::new(cfg.s01, s, dt), scheme);
            }
        }
    }
    let max_s = cfg.s01.max(cfg.s10.lo.max(cfg.s10.hi));
    SliceEnvelope {
        dt,
        max_dts: dt * max_s,
        stats,
    }
}

/// Evaluate every scheme over the sweep grid.
///
/// Slices run in parallel; only min/max reductions are used so the result
/// does not depend on thread count or scheduling.
pub fn run_sweep(
    cfg: &SweepConfig,
    schemes: &[SchemeConfig],
) -> Result<Vec<Envelope>, AnalysisError> {
    cfg.validate()?;
    let dts = cfg.dt.linspace(cfg.points_per_axis);
    let jobs: Vec<(usize, f64)> = (0..schemes.len())
        .flat_map(|s| dts.iter().map(move |&dt| (s, dt)))
        .collect();
    let slices: Vec<SliceEnvelope> = jobs
        .par_iter()
        .map(|&(s, dt)| sweep_slice(cfg, &schemes[s], dt))
        .collect();
    Ok(schemes
        .iter()
        .zip(slices.chunks(dts.len()))
        .map(|(&scheme, chunk)| Envelope {
            scheme,
            slices: chunk.to_vec(),
        })
        .collect())
}

/// Write the envelope CSV: one row per (scheme, Δt), schemes in input order.
pub fn emit_envelope_csv(envelopes: &[Envelope], path: &Path) -> Result<(), AnalysisError> {
    let io = |source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write_envelope_csv(envelopes, &mut w).map_err(io)?;
    w.flush().map_err(io)
}

/// Envelope CSV to any writer.
pub fn write_envelope_csv<W: Write>(envelopes: &[Envelope], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "scheme_id,dt,dF_min,dF_max,dE_min,dE_max")?;
    for env in envelopes {
        let id = env.scheme.label();
        for s in &env.slices {
            let e = &s.stats;
            writeln!(
                w,
                "{id},{:e},{:e},{:e},{:e},{:e}",
                s.dt, e.df_min, e.df_max, e.de_min, e.de_max
            )?;
        }
    }
    Ok(())
}

/// Strength of a property: never, only for Δt·S_ij ≤ 1, or for all Δt·S_ij.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Grade {
    Never,
    UnitRate,
    Always,
}

impl Grade {
    fn from_regions(unit_rate: bool, all: bool) -> Self {
        match (unit_rate, all) {
            (_, true) => Grade::Always,
            (true, false) => Grade::UnitRate,
            (false, false) => Grade::Never,
        }
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grade::Never => "✗",
            Grade::UnitRate => "✓",
            Grade::Always => "✓✓",
        })
    }
}

/// Thresholds used when turning extremes into grades.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Largest conservation residual still counted as exact.
    pub conserved: f64,
    /// Smallest conservation residual counted as a clear violation.
    pub violated: f64,
    /// Largest relative energy increase still counted as non-increasing.
    pub energy: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            conserved: 1e-13,
            violated: 1e-6,
            energy: 1e-13,
        }
    }
}

/// Extremes for both rate regions from any source.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegionExtremes {
    pub unit_rate: Extremes,
    pub all: Extremes,
}

impl RegionExtremes {
    pub fn merge(self, o: &RegionExtremes) -> Self {
        Self {
            unit_rate: self.unit_rate.merge(&o.unit_rate),
            all: self.all.merge(&o.all),
        }
    }
}

impl From<&Envelope> for RegionExtremes {
    fn from(env: &Envelope) -> Self {
        Self {
            unit_rate: env.unit_rate(),
            all: env.overall(),
        }
    }
}

/// Targeted probes: a coarse product grid over both fluids' states and both
/// dimensionless rates, reaching well beyond Δt·S = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pub etas: Vec<f64>,
    pub velocities: Vec<f64>,
    pub thetas: Vec<[f64; 2]>,
    pub dts: Vec<f64>,
}

impl Default for ProbeSet {
    fn default() -> Self {
        Self {
            etas: vec![1.3e-6, 0.0137, 0.291, 1.0, 3.17],
            velocities: vec![-97.3, -1.1, 0.47, 21.9],
            thetas: vec![[300.0, 301.0], [251.3, 329.7]],
            // generic values: round ones can empty a fluid exactly, where
            // Φ/η is undefined and the recovered state carries no information
            dts: vec![0.0, 0.023, 0.41, 0.83, 0.97, 1.63, 4.1, 26.3, 97.0],
        }
    }
}

impl ProbeSet {
    /// Run the probes for one scheme, splitting by rate region.
    pub fn run(&self, scheme: &SchemeConfig) -> RegionExtremes {
        let mut unit = Extremes::default();
        let mut all = Extremes::default();
        for &e0 in &self.etas {
            for &e1 in &self.etas {
                for &u0 in &self.velocities {
                    for &u1 in &self.velocities {
                        for th in &self.thetas {
                            let before = PairState::new([e0, e1], *th, [u0, u1]);
                            for &a in &self.dts {
                                for &b in &self.dts {
                                    // unit time step: the rates are the dimensionless Δt·S
                                    let rates = TransferRates::new(a, b, 1.0);
                                    let mut one = Extremes::default();
                                    one.record(&before, &rates, scheme);
                                    if a <= 1.0 && b <= 1.0 {
                                        unit = unit.merge(&one);
                                    }
                                    all = all.merge(&one);
                                }
                            }
                        }
                    }
                }
            }
        }
        RegionExtremes {
            unit_rate: unit,
            all,
        }
    }
}

/// One row of the property matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropertyRow {
    pub scheme: SchemeConfig,
    pub positive: Grade,
    pub bounded: Grade,
    pub conserving: Grade,
    pub energy_diminishing: Grade,
    /// A conservation residual fell between the conserved and violated thresholds.
    pub ambiguous: bool,
    pub evidence: RegionExtremes,
}

fn holds_positive(e: &Extremes) -> bool {
    !e.negative_mass && !e.non_finite
}

fn holds_bounded(e: &Extremes) -> bool {
    !e.bound_violation && !e.non_finite
}

fn worst_residual(e: &Extremes) -> f64 {
    e.momentum_residual.max(e.theta_residual)
}

fn holds_energy(e: &Extremes, tol: &Tolerances) -> bool {
    !e.non_finite && e.de_max <= tol.energy
}

/// Classify one scheme from its combined sweep and probe extremes.
pub fn classify(scheme: SchemeConfig, ev: RegionExtremes, tol: &Tolerances) -> PropertyRow {
    let (u, a) = (&ev.unit_rate, &ev.all);
    let conserved = |e: &Extremes| worst_residual(e) <= tol.conserved;
    let ambiguous = [u, a].iter().any(|e| {
        let r = worst_residual(e);
        r > tol.conserved && r <= tol.violated
    });
    PropertyRow {
        scheme,
        positive: Grade::from_regions(holds_positive(u), holds_positive(a)),
        bounded: Grade::from_regions(holds_bounded(u), holds_bounded(a)),
        conserving: Grade::from_regions(conserved(u), conserved(a)),
        energy_diminishing: Grade::from_regions(holds_energy(u, tol), holds_energy(a, tol)),
        ambiguous,
        evidence: ev,
    }
}

/// Property matrix for every envelope, combining sweep data with probes.
pub fn classify_schemes(
    envelopes: &[Envelope],
    probes: &ProbeSet,
    tol: &Tolerances,
) -> Vec<PropertyRow> {
    envelopes
        .par_iter()
        .map(|env| {
            let ev = RegionExtremes::from(env).merge(&probes.run(&env.scheme));
            classify(env.scheme, ev, tol)
        })
        .collect()
}

/// Property matrix as aligned text.
pub fn format_property_table(rows: &[PropertyRow]) -> String {
    let mut out = format!(
        "{:<16} {:>3} {:>9} {:>9} {:>12} {:>10}\n",
        "scheme", "no.", "positive", "bounded", "momentum+IE", "KE-decr."
    );
    for r in rows {
        let no = r
            .scheme
            .number()
            .map(|n| n.to_string())
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<16} {:>3} {:>9} {:>9} {:>12} {:>10}{}\n",
            r.scheme.label(),
            no,
            r.positive.to_string(),
            r.bounded.to_string(),
            r.conserving.to_string(),
            r.energy_diminishing.to_string(),
            if r.ambiguous {
                "  (ambiguous residual)"
            } else {
                ""
            }
        ));
    }
    out
}

/// Treatment of a scheme's property transfer, for grouping the "other" rows.
pub fn is_implicit_property(cfg: &SchemeConfig) -> bool {
    cfg.alpha_a() == Treatment::Implicit
}

/// The method-1 and method-2 variants that are not among the six named schemes.
pub fn unnamed_variants(method: Method) -> Vec<SchemeConfig> {
    let all = match method {
        Method::One => SchemeConfig::method1_variants(),
        Method::Two => SchemeConfig::method2_variants(),
    };
    all.into_iter().filter(|c| c.number().is_none()).collect()
}
