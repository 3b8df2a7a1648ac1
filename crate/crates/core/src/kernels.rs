//! Gridless two-fluid transfer kernels.
//!
//! Every transfer scheme is an operator-split update from the post-dynamics
//! level `m` to the new level `n+1`. Mass is relabelled with the λ
//! coefficients; properties (θ, u) are relabelled either directly with the ν
//! coefficients (method 1) or through the mass-weighted quantities ηφ
//! (method 2). The solver and the sweep analyser both call into this module,
//! so it is the only place where the transfer formulas live.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::constants::Constants;

/// Fluid index in a two-fluid system.
pub type Fluid = usize;

/// Time-level choice for the η ratio in the method-1 ν coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    /// Post-dynamics level `m`.
    Mid,
    /// Post-transfer level `n+1`.
    New,
}

impl Level {
    fn tag(self) -> &'static str {
        match self {
            Level::Mid => "m",
            Level::New => "n1",
        }
    }
}

/// Explicit (α = 0) or implicit (α = 1) treatment of a transfer term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Treatment {
    Explicit,
    Implicit,
}

impl Treatment {
    pub fn alpha(self) -> f64 {
        match self {
            Treatment::Explicit => 0.0,
            Treatment::Implicit => 1.0,
        }
    }

    fn digit(self) -> char {
        match self {
            Treatment::Explicit => '0',
            Treatment::Implicit => '1',
        }
    }

    fn from_digit(c: char) -> Option<Self> {
        match c {
            '0' => Some(Treatment::Explicit),
            '1' => Some(Treatment::Implicit),
            _ => None,
        }
    }
}

/// Method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Direct relabelling of the properties with ν.
    One,
    /// Mass-weighted relabelling of ηφ with λ.
    Two,
}

/// One of the 20 transfer schemes.
///
/// `alpha_c` controls the continuity (mass) transfer and `alpha_a` the
/// property transfers (momentum and temperature always share it).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeConfig {
    Method1 {
        alpha_c: Treatment,
        alpha_a: Treatment,
        q: Level,
        r: Level,
    },
    Method2 {
        alpha_c: Treatment,
        alpha_a: Treatment,
    },
}

const TREATMENTS: [Treatment; 2] = [Treatment::Explicit, Treatment::Implicit];

impl SchemeConfig {
    pub fn method(&self) -> Method {
        match self {
            SchemeConfig::Method1 { .. } => Method::One,
            SchemeConfig::Method2 { .. } => Method::Two,
        }
    }

    pub fn alpha_c(&self) -> Treatment {
        match *self {
            SchemeConfig::Method1 { alpha_c, .. } | SchemeConfig::Method2 { alpha_c, .. } => {
                alpha_c
            }
        }
    }

    pub fn alpha_a(&self) -> Treatment {
        match *self {
            SchemeConfig::Method1 { alpha_a, .. } | SchemeConfig::Method2 { alpha_a, .. } => {
                alpha_a
            }
        }
    }

    /// The six named schemes, numbered 1..=6.
    pub fn named(number: u8) -> Option<Self> {
        use Level::*;
        use Treatment::*;
        let cfg = match number {
            1 => SchemeConfig::Method1 {
                alpha_c: Explicit,
                alpha_a: Explicit,
                q: Mid,
                r: New,
            },
            2 => SchemeConfig::Method1 {
                alpha_c: Explicit,
                alpha_a: Implicit,
                q: Mid,
                r: Mid,
            },
            3 => SchemeConfig::Method1 {
                alpha_c: Implicit,
                alpha_a: Explicit,
                q: New,
                r: New,
            },
            4 => SchemeConfig::Method1 {
                alpha_c: Implicit,
                alpha_a: Implicit,
                q: New,
                r: Mid,
            },
            5 => SchemeConfig::Method2 {
                alpha_c: Explicit,
                alpha_a: Explicit,
            },
            6 => SchemeConfig::Method2 {
                alpha_c: Implicit,
                alpha_a: Implicit,
            },
            _ => return None,
        };
        Some(cfg)
    }

    /// Inverse of [`SchemeConfig::named`].
    pub fn number(&self) -> Option<u8> {
        (1..=6).find(|&n| Self::named(n).as_ref() == Some(self))
    }

    /// The 16 method-1 variants, grouped by (q, r) and then (α_C, α_A).
    pub fn method1_variants() -> Vec<Self> {
        use Level::*;
        let mut out = Vec::with_capacity(16);
        for (q, r) in [(Mid, New), (Mid, Mid), (New, New), (New, Mid)] {
            for alpha_c in TREATMENTS {
                for alpha_a in TREATMENTS {
                    out.push(SchemeConfig::Method1 {
                        alpha_c,
                        alpha_a,
                        q,
                        r,
                    });
                }
            }
        }
        out
    }

    pub fn method2_variants() -> Vec<Self> {
        let mut out = Vec::with_capacity(4);
        for alpha_c in TREATMENTS {
            for alpha_a in TREATMENTS {
                out.push(SchemeConfig::Method2 { alpha_c, alpha_a });
            }
        }
        out
    }

    /// All 20 schemes: the method-1 variants followed by the method-2 variants.
    pub fn all20() -> Vec<Self> {
        let mut out = Self::method1_variants();
        out.extend(Self::method2_variants());
        out
    }

    /// Compact CSV-safe identifier, e.g. `M1-C0A1-m-m` or `M2-C1A1`.
    pub fn label(&self) -> String {
        match *self {
            SchemeConfig::Method1 {
                alpha_c,
                alpha_a,
                q,
                r,
            } => format!(
                "M1-C{}A{}-{}-{}",
                alpha_c.digit(),
                alpha_a.digit(),
                q.tag(),
                r.tag()
            ),
            SchemeConfig::Method2 { alpha_c, alpha_a } => {
                format!("M2-C{}A{}", alpha_c.digit(), alpha_a.digit())
            }
        }
    }
}

impl fmt::Display for SchemeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.number() {
            Some(n) => write!(f, "scheme {n} ({})", self.label()),
            None => f.write_str(&self.label()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unrecognised scheme `{0}` (expected 1-6 or a label such as M1-C0A1-m-m / M2-C1A1)")]
pub struct ParseSchemeError(pub String);

impl FromStr for SchemeConfig {
    type Err = ParseSchemeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseSchemeError(s.to_string());
        let t = s.trim();
        if let Ok(n) = t.parse::<u8>() {
            return Self::named(n).ok_or_else(err);
        }
        let parts: Vec<&str> = t.split('-').collect();
        let alphas = |p: &str| -> Option<(Treatment, Treatment)> {
            let c: Vec<char> = p.chars().collect();
            if c.len() != 4 || c[0] != 'C' || c[2] != 'A' {
                return None;
            }
            Some((Treatment::from_digit(c[1])?, Treatment::from_digit(c[3])?))
        };
        let level = |p: &str| match p {
            "m" => Some(Level::Mid),
            "n1" => Some(Level::New),
            _ => None,
        };
        match parts.as_slice() {
            ["M1", a, q, r] => {
                let (alpha_c, alpha_a) = alphas(a).ok_or_else(err)?;
                Ok(SchemeConfig::Method1 {
                    alpha_c,
                    alpha_a,
                    q: level(q).ok_or_else(err)?,
                    r: level(r).ok_or_else(err)?,
                })
            }
            ["M2", a] => {
                let (alpha_c, alpha_a) = alphas(a).ok_or_else(err)?;
                Ok(SchemeConfig::Method2 { alpha_c, alpha_a })
            }
            _ => Err(err()),
        }
    }
}

/// Two-fluid state at a single point and time level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairState {
    /// Mass per unit volume (kg m⁻³).
    pub eta: [f64; 2],
    /// Potential temperature (K).
    pub theta: [f64; 2],
    /// Velocity component (m s⁻¹).
    pub u: [f64; 2],
}

impl PairState {
    pub fn new(eta: [f64; 2], theta: [f64; 2], u: [f64; 2]) -> Self {
        Self { eta, theta, u }
    }

    pub fn is_valid(&self) -> bool {
        self.eta.iter().all(|&e| e >= 0.0 && e.is_finite())
            && self.theta.iter().all(|&t| t > 0.0 && t.is_finite())
            && self.u.iter().all(|u| u.is_finite())
    }

    pub fn is_finite(&self) -> bool {
        self.eta
            .iter()
            .chain(&self.theta)
            .chain(&self.u)
            .all(|v| v.is_finite())
    }

    pub fn total_mass(&self) -> f64 {
        self.eta[0] + self.eta[1]
    }

    pub fn momentum(&self) -> f64 {
        dot2(&[self.eta[0], self.eta[1]], &[self.u[0], self.u[1]])
    }

    pub fn theta_mass(&self) -> f64 {
        dot2(&[self.eta[0], self.eta[1]], &[self.theta[0], self.theta[1]])
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * dot2(
            &[self.eta[0] * self.u[0], self.eta[1] * self.u[1]],
            &[self.u[0], self.u[1]],
        )
    }
}

/// Unidirectional transfer rates over one timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferRates {
    /// Rate from fluid 0 to fluid 1 (s⁻¹).
    pub s01: f64,
    /// Rate from fluid 1 to fluid 0 (s⁻¹).
    pub s10: f64,
    /// Timestep (s).
    pub dt: f64,
}

impl TransferRates {
    pub fn new(s01: f64, s10: f64, dt: f64) -> Self {
        Self { s01, s10, dt }
    }

    /// Rate out of fluid `from`.
    pub fn out_of(&self, from: Fluid) -> f64 {
        if from == 0 {
            self.s01
        } else {
            self.s10
        }
    }

    /// Largest Δt·S over both directions.
    pub fn max_dimensionless(&self) -> f64 {
        self.dt * self.s01.max(self.s10)
    }

    pub fn is_zero(&self) -> bool {
        self.dt == 0.0 || (self.s01 == 0.0 && self.s10 == 0.0)
    }
}

/// How the kernels treat inputs outside their guaranteed-positive regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Reject explicit mass transfer with Δt·S > 1 and infinite ν.
    Strict,
    /// Compute anyway and flag the outcome.
    Permissive,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("explicit mass transfer with dt*S = {dts} > 1 out of fluid {from} cannot guarantee positive mass")]
    PositivityPrecondition { from: Fluid, dts: f64 },
    #[error("nu coefficient {from}->{to} has an empty denominator fluid with a non-zero incoming transfer")]
    NuDomain { from: Fluid, to: Fluid },
    #[error("scheme {0} is not a {1:?} scheme")]
    WrongMethod(SchemeConfig, Method),
    #[error("energy identity requires alpha_C = alpha_A, got {0}")]
    InconsistentTreatment(SchemeConfig),
}

/// Diagnostics collected while applying a transfer in permissive mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransferFlags {
    /// Explicit mass transfer ran with Δt·S > 1.
    pub positivity_precondition: bool,
    /// Some output η is negative.
    pub negative_mass: bool,
    /// Some output is NaN or infinite.
    pub non_finite: bool,
}

/// Result of a full transfer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferOutcome {
    /// State at level n+1.
    pub state: PairState,
    pub lambda01: f64,
    pub lambda10: f64,
    /// Method-1 property coefficients; `None` for method 2.
    pub nu01: Option<f64>,
    pub nu10: Option<f64>,
    pub flags: TransferFlags,
}

/// Mass-transfer result with the λ_C coefficients used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassTransfer {
    pub eta: [f64; 2],
    pub lambda01: f64,
    pub lambda10: f64,
    pub flags: TransferFlags,
}

/// λ = Δt S_ij / (1 + α Δt (S_ji + S_ij)).
pub fn lambda_coeff(s_ij: f64, s_ji: f64, dt: f64, alpha: f64) -> f64 {
    let num = dt * s_ij;
    if num == 0.0 {
        return 0.0;
    }
    num / (1.0 + alpha * dt * (s_ji + s_ij))
}

/// Both λ coefficients (0→1, 1→0) for one off-centring.
pub fn lambda_pair(rates: &TransferRates, alpha: f64) -> (f64, f64) {
    (
        lambda_coeff(rates.s01, rates.s10, rates.dt, alpha),
        lambda_coeff(rates.s10, rates.s01, rates.dt, alpha),
    )
}

/// 1 − λ, evaluated from the rates to avoid cancellation when λ is near 1.
pub fn lambda_complement(s_ij: f64, s_ji: f64, dt: f64, alpha: f64) -> f64 {
    if dt * s_ij == 0.0 {
        return 1.0;
    }
    // fused so that 1 − Δt S_ij is rounded once in the explicit case
    let num = ((alpha - 1.0) * dt).mul_add(s_ij, 1.0 + alpha * dt * s_ji);
    num / (1.0 + alpha * dt * (s_ji + s_ij))
}

/// Mass update `η_i' = (1 − λ_ij) η_i + λ_ji η_j` from the transfer fractions
/// `lambda` and their complements `keep`.
///
/// Each term carries only relative rounding error, so a fluid that gives
/// away almost all of its mass still ends with an accurate remainder. The
/// sum is preserved to about one rounding per term.
pub fn transfer_mass(a: [f64; 2], lambda: [f64; 2], keep: [f64; 2]) -> [f64; 2] {
    [
        keep[0].mul_add(a[0], lambda[1] * a[1]),
        keep[1].mul_add(a[1], lambda[0] * a[0]),
    ]
}

/// Relabel `[a0, a1]` with the transfer fractions: the amount `l01·a0` moves
/// from slot 0 to slot 1 and `l10·a1` from slot 1 to slot 0.
///
/// Written with explicit transfer amounts so that the sum is preserved to a
/// few roundings regardless of magnitudes.
pub fn relabel(a: [f64; 2], l01: f64, l10: f64) -> [f64; 2] {
    let t01 = l01 * a[0];
    let t10 = l10 * a[1];
    [a[0] - t01 + t10, a[1] - t10 + t01]
}

/// Convex relabel of a property: `φ_i + ν_ji (φ_j − φ_i)`.
///
/// This is `(1−ν)φ_i + ν φ_j` written so that ν ∈ [0,1] keeps the result in
/// the closed interval spanned by the inputs under round-to-nearest.
pub fn mix_property(phi: [f64; 2], nu01: f64, nu10: f64) -> [f64; 2] {
    [mix(phi[0], phi[1], nu10), mix(phi[1], phi[0], nu01)]
}

/// `(1−ν)·own + ν·other`, anchored at whichever input carries the larger
/// weight so the rounding error scales with the result rather than with the
/// discarded value. For ν ∈ [½, 1] the complement 1 − ν is exact.
fn mix(own: f64, other: f64, nu: f64) -> f64 {
    if nu == 0.0 {
        own
    } else if nu <= 0.5 || !(nu <= 1.0) {
        own + nu * (other - own)
    } else {
        other + (1.0 - nu) * (own - other)
    }
}

/// Mass transfer η^m → η^{n+1} with off-centring `alpha_c`.
pub fn apply_mass_transfer(
    eta_m: [f64; 2],
    rates: &TransferRates,
    alpha_c: Treatment,
    mode: Mode,
) -> Result<MassTransfer, KernelError> {
    let mut flags = TransferFlags::default();
    if alpha_c == Treatment::Explicit {
        for from in 0..2 {
            let dts = rates.dt * rates.out_of(from);
            if dts > 1.0 {
                if mode == Mode::Strict {
                    return Err(KernelError::PositivityPrecondition { from, dts });
                }
                flags.positivity_precondition = true;
            }
        }
    }
    let a = alpha_c.alpha();
    let (lambda01, lambda10) = lambda_pair(rates, a);
    let keep = [
        lambda_complement(rates.s01, rates.s10, rates.dt, a),
        lambda_complement(rates.s10, rates.s01, rates.dt, a),
    ];
    let eta = transfer_mass(eta_m, [lambda01, lambda10], keep);
    flags.negative_mass = eta.iter().any(|&e| e < 0.0);
    flags.non_finite = eta.iter().any(|e| !e.is_finite());
    Ok(MassTransfer {
        eta,
        lambda01,
        lambda10,
        flags,
    })
}

/// The ratio X_ij = Δt S_ij η_i^q / η_j^r from its numerator and
/// denominator, with the zero-incoming convention.
///
/// Returns `None` when the denominator vanishes with a non-zero numerator.
pub fn mass_ratio(num: f64, eta_r: f64) -> Option<f64> {
    if num == 0.0 {
        Some(0.0)
    } else if eta_r == 0.0 {
        None
    } else {
        Some(num / eta_r)
    }
}

fn levels_of(cfg: &SchemeConfig) -> Result<(Level, Level), KernelError> {
    match *cfg {
        SchemeConfig::Method1 { q, r, .. } => Ok((q, r)),
        _ => Err(KernelError::WrongMethod(*cfg, Method::One)),
    }
}

fn pick(level: Level, eta_m: [f64; 2], eta_np1: [f64; 2]) -> [f64; 2] {
    match level {
        Level::Mid => eta_m,
        Level::New => eta_np1,
    }
}

/// Method-1 property coefficient ν for the transfer `from → 1−from`.
///
/// Fails with [`KernelError::NuDomain`] if either η ratio in the formula has
/// an empty denominator fluid receiving a non-zero transfer; the caller
/// decides how to resolve that limit (see [`nu_pair`]).
pub fn nu_coeff(
    eta_m: [f64; 2],
    eta_np1: [f64; 2],
    rates: &TransferRates,
    cfg: &SchemeConfig,
    from: Fluid,
) -> Result<f64, KernelError> {
    let (q, r) = levels_of(cfg)?;
    let (i, j) = (from, 1 - from);
    let eq = pick(q, eta_m, eta_np1);
    let er = pick(r, eta_m, eta_np1);
    let x_ij = mass_ratio(rates.dt * rates.out_of(i) * eq[i], er[j])
        .ok_or(KernelError::NuDomain { from: i, to: j })?;
    let x_ji = mass_ratio(rates.dt * rates.out_of(j) * eq[j], er[i])
        .ok_or(KernelError::NuDomain { from: j, to: i })?;
    Ok(x_ij / (1.0 + cfg.alpha_a().alpha() * (x_ij + x_ji)))
}

/// Both ν coefficients `(ν01, ν10)`, resolving empty-denominator limits.
///
/// With implicit property transfer the limit of X/(1+X+Y) as X → ∞ is 1, so
/// a fluid that is empty at the denominator level simply adopts the donor's
/// property. With explicit property transfer the limit is unbounded: strict
/// mode reports the domain error, permissive mode returns +∞.
pub fn nu_pair(
    eta_m: [f64; 2],
    eta_np1: [f64; 2],
    rates: &TransferRates,
    cfg: &SchemeConfig,
    mode: Mode,
) -> Result<(f64, f64), KernelError> {
    let (q, r) = levels_of(cfg)?;
    let eq = pick(q, eta_m, eta_np1);
    let er = pick(r, eta_m, eta_np1);
    let x01 = mass_ratio(rates.dt * rates.s01 * eq[0], er[1]);
    let x10 = mass_ratio(rates.dt * rates.s10 * eq[1], er[0]);
    nu_from_ratios(x01, x10, cfg.alpha_a(), mode)
}

/// ν01 and ν10 from the ratios X01 and X10 (`None` marks an empty
/// denominator with non-zero numerator).
pub fn nu_from_ratios(
    x01: Option<f64>,
    x10: Option<f64>,
    alpha_a: Treatment,
    mode: Mode,
) -> Result<(f64, f64), KernelError> {
    let alpha = alpha_a.alpha();
    match (x01, x10) {
        (Some(a), Some(b)) => {
            let den = 1.0 + alpha * (a + b);
            Ok((a / den, b / den))
        }
        (None, None) => Err(KernelError::NuDomain { from: 0, to: 1 }),
        (None, Some(b)) => {
            if alpha > 0.0 {
                Ok((1.0, 0.0))
            } else if mode == Mode::Strict {
                Err(KernelError::NuDomain { from: 0, to: 1 })
            } else {
                Ok((f64::INFINITY, b))
            }
        }
        (Some(a), None) => {
            if alpha > 0.0 {
                Ok((0.0, 1.0))
            } else if mode == Mode::Strict {
                Err(KernelError::NuDomain { from: 1, to: 0 })
            } else {
                Ok((a, f64::INFINITY))
            }
        }
    }
}

fn finish_flags(mut flags: TransferFlags, state: &PairState) -> TransferFlags {
    flags.negative_mass |= state.eta.iter().any(|&e| e < 0.0);
    flags.non_finite |= !state.is_finite();
    flags
}

/// Method-1 transfer: mass with λ_C, then θ and u with ν.
pub fn apply_method1(
    state_m: &PairState,
    rates: &TransferRates,
    cfg: &SchemeConfig,
    mode: Mode,
) -> Result<TransferOutcome, KernelError> {
    levels_of(cfg)?;
    let mass = apply_mass_transfer(state_m.eta, rates, cfg.alpha_c(), mode)?;
    let (nu01, nu10) = nu_pair(state_m.eta, mass.eta, rates, cfg, mode)?;
    let state = PairState {
        eta: mass.eta,
        theta: mix_property(state_m.theta, nu01, nu10),
        u: mix_property(state_m.u, nu01, nu10),
    };
    Ok(TransferOutcome {
        flags: finish_flags(mass.flags, &state),
        state,
        lambda01: mass.lambda01,
        lambda10: mass.lambda10,
        nu01: Some(nu01),
        nu10: Some(nu10),
    })
}

/// Method-2 property update.
///
/// `keep[i]` is 1 − λ_A out of fluid `i` and `lambda[i]` is λ_A out of fluid
/// `i`. When mass and properties share λ and both weights (1−λ)η_i and λη_j
/// are non-negative, Φ'/η' is their weighted mean, evaluated directly so that
/// rounding cannot leave the input interval. Otherwise φ = Φ'/η' with Φ'
/// from [`relabel`]; an empty fluid takes the donor's property.
pub fn method2_property(
    eta_m: [f64; 2],
    phi_m: [f64; 2],
    eta_np1: [f64; 2],
    keep: [f64; 2],
    lambda: [f64; 2],
    consistent: bool,
) -> [f64; 2] {
    let big = relabel(
        [eta_m[0] * phi_m[0], eta_m[1] * phi_m[1]],
        lambda[0],
        lambda[1],
    );
    let one = |i: usize| {
        let j = 1 - i;
        let own = keep[i] * eta_m[i];
        let inflow = lambda[j] * eta_m[j];
        if consistent && own >= 0.0 && inflow >= 0.0 {
            let den = own + inflow;
            if den == 0.0 {
                phi_m[j]
            } else {
                // anchor at the heavier side, using the directly computed
                // weight of the other side so it carries only relative error
                let w_in = inflow / den;
                if w_in <= 0.5 {
                    phi_m[i] + w_in * (phi_m[j] - phi_m[i])
                } else {
                    phi_m[j] + (own / den) * (phi_m[i] - phi_m[j])
                }
            }
        } else if eta_np1[i] == 0.0 {
            phi_m[j]
        } else {
            big[i] / eta_np1[i]
        }
    };
    [one(0), one(1)]
}

/// Method-2 transfer: mass with λ_C, mass-weighted properties with λ_A.
pub fn apply_method2(
    state_m: &PairState,
    rates: &TransferRates,
    cfg: &SchemeConfig,
    mode: Mode,
) -> Result<TransferOutcome, KernelError> {
    if cfg.method() != Method::Two {
        return Err(KernelError::WrongMethod(*cfg, Method::Two));
    }
    let mass = apply_mass_transfer(state_m.eta, rates, cfg.alpha_c(), mode)?;
    let alpha = cfg.alpha_a().alpha();
    let (la01, la10) = lambda_pair(rates, alpha);
    let keep = [
        lambda_complement(rates.s01, rates.s10, rates.dt, alpha),
        lambda_complement(rates.s10, rates.s01, rates.dt, alpha),
    ];
    let idle = la01 == 0.0 && la10 == 0.0 && mass.lambda01 == 0.0 && mass.lambda10 == 0.0;
    let consistent = cfg.alpha_c() == cfg.alpha_a();
    let weighted = |phi: [f64; 2]| {
        if idle {
            phi
        } else {
            method2_property(state_m.eta, phi, mass.eta, keep, [la01, la10], consistent)
        }
    };
    let state = PairState {
        eta: mass.eta,
        theta: weighted(state_m.theta),
        u: weighted(state_m.u),
    };
    Ok(TransferOutcome {
        flags: finish_flags(mass.flags, &state),
        state,
        lambda01: mass.lambda01,
        lambda10: mass.lambda10,
        nu01: None,
        nu10: None,
    })
}

/// Apply any of the 20 schemes.
pub fn apply_transfer(
    state_m: &PairState,
    rates: &TransferRates,
    cfg: &SchemeConfig,
    mode: Mode,
) -> Result<TransferOutcome, KernelError> {
    match cfg.method() {
        Method::One => apply_method1(state_m, rates, cfg, mode),
        Method::Two => apply_method2(state_m, rates, cfg, mode),
    }
}

/// Energy-identity weight μ_ij for method 2 with α_C = α_A = `alpha`.
pub fn mu_coeff(state_m: &PairState, rates: &TransferRates, alpha: Treatment, from: Fluid) -> f64 {
    let (i, j) = (from, 1 - from);
    let a = alpha.alpha();
    let (l01, l10) = lambda_pair(rates, a);
    let lam = [l01, l10];
    let keep = [
        lambda_complement(rates.s01, rates.s10, rates.dt, a),
        lambda_complement(rates.s10, rates.s01, rates.dt, a),
    ];
    let (ei, ej) = (state_m.eta[i], state_m.eta[j]);
    let (lij, lji) = (lam[i], lam[j]);
    let (kij, kji) = (keep[i], keep[j]);
    let num = ei * ej * (kij * lij * ei + kji * lji * ej);
    if num == 0.0 {
        return 0.0;
    }
    // the two bracketed factors are η_j^{n+1} and η_i^{n+1}
    num / ((lij * ei + kji * ej) * (lji * ej + kij * ei))
}

/// Kinetic-energy loss of a consistent method-2 transfer,
/// ΔK = ½ (u0 − u1)(μ01 u0 − μ10 u1).
pub fn delta_k(
    state_m: &PairState,
    rates: &TransferRates,
    cfg: &SchemeConfig,
) -> Result<f64, KernelError> {
    if cfg.method() != Method::Two {
        return Err(KernelError::WrongMethod(*cfg, Method::Two));
    }
    if cfg.alpha_c() != cfg.alpha_a() {
        return Err(KernelError::InconsistentTreatment(*cfg));
    }
    let alpha = cfg.alpha_c();
    let mu01 = mu_coeff(state_m, rates, alpha, 0);
    let mu10 = mu_coeff(state_m, rates, alpha, 1);
    let [u0, u1] = state_m.u;
    Ok(0.5 * (u0 - u1) * (mu01 * u0 - mu10 * u1))
}

/// Relative changes produced by one transfer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDiagnostics {
    /// (F^{n+1} − F^m) / F^m with F = Σ η u.
    pub df_rel: f64,
    /// (E^{n+1} − E^m) / E^m with E = c_v π_ref Σ η θ + ½ Σ η u².
    pub de_rel: f64,
    /// (Ση^{n+1} − Ση^m) / Ση^m.
    pub mass_err: f64,
    /// |ΔF| / (Σ|η u|^m + Σ|η u|^{n+1}): momentum residual on the scale of
    /// the individual terms at both levels.
    pub momentum_residual: f64,
    /// |Δ(Σηθ)| on the same scale as `momentum_residual`.
    pub theta_mass_residual: f64,
    /// Some θ or u left the interval spanned by the level-m values.
    pub bound_violation: bool,
}

/// Reference Exner pressure for gridless energy diagnostics.
pub const PI_REF: f64 = 1.0;

fn total_energy(s: &PairState, cv: f64) -> f64 {
    cv * PI_REF * s.theta_mass() + s.kinetic_energy()
}

fn outside_bounds(before: [f64; 2], after: [f64; 2]) -> bool {
    let lo = before[0].min(before[1]);
    let hi = before[0].max(before[1]);
    // rounding allowance on the scale of the values themselves; a range-only
    // allowance flags θ ≈ 300 K rounding as a violation
    let scale = (hi - lo).max(before[0].abs()).max(before[1].abs());
    let tol = 16.0 * f64::EPSILON * scale;
    after
        .iter()
        .any(|&v| !v.is_finite() || v < lo - tol || v > hi + tol)
}

/// Conservation and boundedness diagnostics between two levels of the same point.
pub fn pair_diagnostics(before: &PairState, after: &PairState) -> PairDiagnostics {
    let cv = Constants::DRY_AIR.cv();
    let f0 = before.momentum();
    let df = momentum_change(before, after);
    let e0 = total_energy(before, cv);
    let de = cv * PI_REF * theta_mass_change(before, after) + kinetic_energy_change(before, after);
    let m0 = before.total_mass();
    let dm = after.total_mass() - m0;
    let f_scale = abs_terms(before.eta, before.u) + abs_terms(after.eta, after.u);
    let t_scale = abs_terms(before.eta, before.theta) + abs_terms(after.eta, after.theta);
    let dtm = theta_mass_change(before, after);
    PairDiagnostics {
        df_rel: df / f0,
        de_rel: de / e0,
        mass_err: dm / m0,
        momentum_residual: ratio_or_zero(df.abs(), f_scale),
        theta_mass_residual: ratio_or_zero(dtm.abs(), t_scale),
        bound_violation: outside_bounds(before.theta, after.theta)
            || outside_bounds(before.u, after.u),
    }
}

/// Momentum and Σηθ residuals of one transfer, normalised by the size of
/// the terms they are made of.
///
/// Rounding in a conservative update grows with the magnitudes at both
/// levels and with the amount transferred, so the residual is divided by
/// `(1 + Δt(S01 + S10)) · Σ_levels Σ_i |η_i φ_i|`.
pub fn conservation_residuals(
    before: &PairState,
    after: &PairState,
    rates: &TransferRates,
) -> (f64, f64) {
    let d = pair_diagnostics(before, after);
    let amp = 1.0 + rates.dt * (rates.s01 + rates.s10);
    (d.momentum_residual / amp, d.theta_mass_residual / amp)
}

fn abs_terms(eta: [f64; 2], phi: [f64; 2]) -> f64 {
    (eta[0] * phi[0]).abs() + (eta[1] * phi[1]).abs()
}

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Σ η^{n+1} u^{n+1} − Σ η^m u^m, evaluated with compensated products.
pub fn momentum_change(before: &PairState, after: &PairState) -> f64 {
    dot2(
        &[after.eta[0], after.eta[1], -before.eta[0], -before.eta[1]],
        &[after.u[0], after.u[1], before.u[0], before.u[1]],
    )
}

/// ½Σ η^{n+1} (u^{n+1})² − ½Σ η^m (u^m)², evaluated with compensated products.
pub fn kinetic_energy_change(before: &PairState, after: &PairState) -> f64 {
    let (a, b) = (after, before);
    0.5 * dot2(
        &[
            a.eta[0] * a.u[0],
            a.eta[1] * a.u[1],
            -b.eta[0] * b.u[0],
            -b.eta[1] * b.u[1],
        ],
        &[a.u[0], a.u[1], b.u[0], b.u[1]],
    )
}

/// Σ η^{n+1} θ^{n+1} − Σ η^m θ^m, evaluated with compensated products.
pub fn theta_mass_change(before: &PairState, after: &PairState) -> f64 {
    dot2(
        &[after.eta[0], after.eta[1], -before.eta[0], -before.eta[1]],
        &[
            after.theta[0],
            after.theta[1],
            before.theta[0],
            before.theta[1],
        ],
    )
}

/// Dot product in twice-working precision (Ogita, Rump & Oishi "Dot2").
pub fn dot2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0_f64;
    let mut c = 0.0_f64;
    for (&x, &y) in a.iter().zip(b) {
        let p = x * y;
        let perr = x.mul_add(y, -p);
        let t = s + p;
        let z = t - s;
        let serr = (s - (t - z)) + (p - z);
        s = t;
        c += perr + serr;
    }
    s + c
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = f64::EPSILON;

    fn st(eta: [f64; 2], theta: [f64; 2], u: [f64; 2]) -> PairState {
        PairState::new(eta, theta, u)
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(lambda_coeff(0.0, 0.0, 2.0, 0.0), 0.0);
        assert!((lambda_coeff(1.0, 0.0, 2.0, 1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((lambda_coeff(0.4, 0.2, 0.5, 1.0) - 0.2 / 1.3).abs() < 1e-15);
    }

    #[test]
    fn mass_transfer_examples() {
        let r = TransferRates::new(0.1, 0.0, 1.0);
        let m = apply_mass_transfer([1.0, 1.0], &r, Treatment::Explicit, Mode::Strict).unwrap();
        assert!((m.eta[0] - 0.9).abs() < 1e-15 && (m.eta[1] - 1.1).abs() < 1e-15);
        assert_eq!(m.eta[0] + m.eta[1], 2.0);

        let r = TransferRates::new(0.0, 0.0, 1.0);
        let m = apply_mass_transfer([1.0, 1.0], &r, Treatment::Explicit, Mode::Strict).unwrap();
        assert_eq!(m.eta, [1.0, 1.0]);

        let r = TransferRates::new(1.0, 0.0, 2.0);
        let m = apply_mass_transfer([1.0, 0.0], &r, Treatment::Implicit, Mode::Strict).unwrap();
        assert!((m.lambda01 - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.eta[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.eta[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!(!m.flags.negative_mass);
    }

    #[test]
    fn explicit_mass_transfer_beyond_unit_rate() {
        let r = TransferRates::new(1.0, 0.0, 2.0);
        let err = apply_mass_transfer([1.0, 0.0], &r, Treatment::Explicit, Mode::Strict);
        assert!(matches!(
            err,
            Err(KernelError::PositivityPrecondition { from: 0, .. })
        ));
        let m = apply_mass_transfer([1.0, 0.0], &r, Treatment::Explicit, Mode::Permissive).unwrap();
        assert!(m.flags.positivity_precondition && m.flags.negative_mass);
        assert_eq!(m.eta, [-1.0, 2.0]);
    }

    #[test]
    fn nu_examples() {
        let s2 = SchemeConfig::named(2).unwrap();
        let r = TransferRates::new(0.5, 0.0, 1.0);
        let nu = nu_coeff([1.0, 1.0], [0.5, 1.5], &r, &s2, 0).unwrap();
        assert!((nu - 1.0 / 3.0).abs() < 1e-15);

        let s4 = SchemeConfig::named(4).unwrap();
        let r = TransferRates::new(1.0, 0.0, 1.0);
        let m = apply_mass_transfer([1.0, 1.0], &r, Treatment::Implicit, Mode::Strict).unwrap();
        assert_eq!(m.eta, [0.5, 1.5]);
        let nu = nu_coeff([1.0, 1.0], m.eta, &r, &s4, 0).unwrap();
        assert!((nu - 1.0 / 3.0).abs() < 1e-15);

        for cfg in SchemeConfig::method1_variants() {
            let r = TransferRates::new(0.0, 0.7, 1.0);
            assert_eq!(nu_coeff([1.0, 2.0], [1.5, 1.5], &r, &cfg, 0).unwrap(), 0.0);
        }
    }

    #[test]
    fn nu_domain_error_and_limits() {
        // fluid 0 empty at level m receiving mass
        let r = TransferRates::new(0.0, 0.1, 1.0);
        let eta_m = [0.0, 1.0];
        let eta_np1 = [0.1, 0.9];
        let s2 = SchemeConfig::named(2).unwrap();
        assert!(matches!(
            nu_coeff(eta_m, eta_np1, &r, &s2, 1),
            Err(KernelError::NuDomain { .. })
        ));
        assert_eq!(
            nu_pair(eta_m, eta_np1, &r, &s2, Mode::Strict).unwrap(),
            (0.0, 1.0)
        );

        let explicit_mm: SchemeConfig = "M1-C0A0-m-m".parse().unwrap();
        assert!(nu_pair(eta_m, eta_np1, &r, &explicit_mm, Mode::Strict).is_err());
        let (_, nu10) = nu_pair(eta_m, eta_np1, &r, &explicit_mm, Mode::Permissive).unwrap();
        assert!(nu10.is_infinite());

        // scheme 1 resolves to exactly one via the n+1 denominator
        let s1 = SchemeConfig::named(1).unwrap();
        let (nu01, nu10) = nu_pair(eta_m, eta_np1, &r, &s1, Mode::Strict).unwrap();
        assert_eq!(nu01, 0.0);
        assert!((nu10 - 1.0).abs() < 4.0 * EPS);
    }

    #[test]
    fn method1_examples() {
        let s2 = SchemeConfig::named(2).unwrap();
        let before = st([1.0, 1.0], [300.0, 301.0], [1.0, -1.0]);
        let r = TransferRates::new(0.5, 0.0, 1.0);
        let out = apply_method1(&before, &r, &s2, Mode::Strict).unwrap();
        assert_eq!(out.state.eta, [0.5, 1.5]);
        assert_eq!(out.state.u[0], 1.0);
        assert!((out.state.u[1] + 1.0 / 3.0).abs() < 1e-15);
        assert!(out.state.momentum().abs() < 4.0 * EPS);

        let s4 = SchemeConfig::named(4).unwrap();
        let r = TransferRates::new(1.0, 0.0, 1.0);
        let out = apply_method1(&before, &r, &s4, Mode::Strict).unwrap();
        assert_eq!(out.state.eta, [0.5, 1.5]);
        assert!((out.state.u[1] + 1.0 / 3.0).abs() < 1e-15);
        assert!(out.state.momentum().abs() < 4.0 * EPS);

        let r = TransferRates::new(0.0, 0.0, 3.0);
        for cfg in SchemeConfig::method1_variants() {
            let out = apply_method1(&before, &r, &cfg, Mode::Strict).unwrap();
            assert_eq!(out.state, before, "{cfg}");
        }
    }

    #[test]
    fn method2_examples() {
        let s5 = SchemeConfig::named(5).unwrap();
        let before = st([1.0, 1.0], [300.0, 301.0], [1.0, -1.0]);
        let r = TransferRates::new(0.5, 0.0, 1.0);
        let out = apply_method2(&before, &r, &s5, Mode::Strict).unwrap();
        assert_eq!(out.state.eta, [0.5, 1.5]);
        assert!((out.state.u[0] - 1.0).abs() < 1e-15);
        assert!((out.state.u[1] + 1.0 / 3.0).abs() < 1e-15);
        assert!((before.kinetic_energy() - 1.0).abs() < 1e-15);
        assert!((out.state.kinetic_energy() - 1.0 / 3.0).abs() < 1e-15);

        let s6 = SchemeConfig::named(6).unwrap();
        let r0 = TransferRates::new(0.0, 0.0, 1.0);
        assert_eq!(
            apply_method2(&before, &r0, &s6, Mode::Strict)
                .unwrap()
                .state,
            before
        );

        let r = TransferRates::new(0.1, 0.0, 1.0);
        let out = apply_method2(&before, &r, &s5, Mode::Strict).unwrap();
        assert!((out.state.theta_mass() - 601.0).abs() < 1e-12);
        assert!((out.state.theta[1] - 331.0 / 1.1).abs() < 1e-12);
        assert!(out.state.theta[1] > 300.0 && out.state.theta[1] < 301.0);
    }

    #[test]
    fn method2_empty_fluid_takes_donor_property() {
        let s6 = SchemeConfig::named(6).unwrap();
        let before = st([0.0, 1.0], [300.0, 302.0], [0.0, 3.0]);
        // zero rates are an exact identity, empty fluid included
        let r = TransferRates::new(0.0, 0.0, 1.0);
        let out = apply_method2(&before, &r, &s6, Mode::Strict).unwrap();
        assert_eq!(out.state, before);
        // the empty fluid only donates
        let r = TransferRates::new(0.3, 0.0, 1.0);
        let out = apply_method2(&before, &r, &s6, Mode::Strict).unwrap();
        assert_eq!(out.state.eta, [0.0, 1.0]);
        assert_eq!(out.state.theta, [302.0, 302.0]);
        assert_eq!(out.state.u, [3.0, 3.0]);
        // receiving mass inherits exactly
        let r = TransferRates::new(0.0, 0.1, 1.0);
        let out = apply_method2(&before, &r, &s6, Mode::Strict).unwrap();
        assert!((out.state.theta[0] - 302.0).abs() < 1e-12);
        assert!((out.state.u[0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn mu_and_delta_k_examples() {
        let before = st([1.0, 1.0], [300.0, 300.0], [1.0, -1.0]);
        let r = TransferRates::new(0.5, 0.0, 1.0);
        let mu01 = mu_coeff(&before, &r, Treatment::Explicit, 0);
        let mu10 = mu_coeff(&before, &r, Treatment::Explicit, 1);
        assert!((mu01 - 1.0 / 3.0).abs() < 1e-15);
        assert!((mu10 - 1.0 / 3.0).abs() < 1e-15);
        let s5 = SchemeConfig::named(5).unwrap();
        let dk = delta_k(&before, &r, &s5).unwrap();
        assert!((dk - 2.0 / 3.0).abs() < 1e-15);
        let after = apply_method2(&before, &r, &s5, Mode::Strict).unwrap().state;
        assert!((before.kinetic_energy() - after.kinetic_energy() - dk).abs() < 8.0 * EPS);

        let same = st([1.0, 2.0], [300.0, 300.0], [4.0, 4.0]);
        assert_eq!(delta_k(&same, &r, &s5).unwrap(), 0.0);
        let r0 = TransferRates::new(0.0, 0.0, 1.0);
        assert_eq!(mu_coeff(&before, &r0, Treatment::Implicit, 0), 0.0);
        assert_eq!(delta_k(&before, &r0, &s5).unwrap(), 0.0);

        let bad: SchemeConfig = "M2-C0A1".parse().unwrap();
        assert!(matches!(
            delta_k(&before, &r, &bad),
            Err(KernelError::InconsistentTreatment(_))
        ));
    }

    #[test]
    fn diagnostics_examples() {
        let before = st([1.0, 1.0], [300.0, 301.0], [1.0, -1.0]);
        let d = pair_diagnostics(&before, &before);
        assert_eq!((d.de_rel, d.mass_err, d.bound_violation), (0.0, 0.0, false));

        let s2 = SchemeConfig::named(2).unwrap();
        let r = TransferRates::new(0.5, 0.0, 1.0);
        let after = apply_method1(&before, &r, &s2, Mode::Strict).unwrap().state;
        let d = pair_diagnostics(&before, &after);
        // F^0 = 0 for this state, so only the scaled residual is meaningful
        assert!(d.momentum_residual < 4.0 * EPS);
        assert!(d.de_rel < 0.0);
        assert!(!d.bound_violation);

        // non-conservative variant, frozen from a hand evaluation:
        // η^{n+1} = (0.5, 2.5), ν01 = 0.25, ν10 = 0 ⇒ u = (1, -0.5),
        // F: -1 → -0.75, dF_rel = -0.25
        let cfg: SchemeConfig = "M1-C0A0-m-m".parse().unwrap();
        let before = st([1.0, 2.0], [300.0, 301.0], [1.0, -1.0]);
        let after = apply_method1(&before, &r, &cfg, Mode::Strict)
            .unwrap()
            .state;
        let d = pair_diagnostics(&before, &after);
        assert!((d.df_rel + 0.25).abs() < 1e-15, "{}", d.df_rel);
    }

    #[test]
    fn scheme_labels_round_trip() {
        let all = SchemeConfig::all20();
        assert_eq!(all.len(), 20);
        for cfg in &all {
            assert_eq!(cfg.label().parse::<SchemeConfig>().unwrap(), *cfg);
        }
        for n in 1..=6u8 {
            let cfg = SchemeConfig::named(n).unwrap();
            assert!(all.contains(&cfg));
            assert_eq!(cfg.number(), Some(n));
            assert_eq!(n.to_string().parse::<SchemeConfig>().unwrap(), cfg);
        }
        assert!("7".parse::<SchemeConfig>().is_err());
        assert!("M3-C0A0".parse::<SchemeConfig>().is_err());
    }

    #[test]
    fn dot2_recovers_cancellation() {
        let a = [1.0e16, 1.0, -1.0e16];
        let b = [1.0, 1.0, 1.0];
        assert_eq!(dot2(&a, &b), 1.0);
    }
}
