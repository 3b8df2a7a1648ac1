//! Multi-fluid compressible Euler solver on the C-grid.
//!
//! A step is split into dynamics (advection, pressure gradient, gravity and
//! the equation of state, without transfers) followed by a transfer substep
//! that relabels mass, θ, velocity and the stored momentum tendencies between
//! two fluids.
//!
//! Dynamics use an iterated Crank–Nicolson scheme:
//! `v^{n+1} = v^n + Δt [(1−α) T^n + α T^{n+1}]` with the stored tendency `T^n`.
//! Each outer iteration transports mass and θ with the velocity implied by
//! the current Exner estimate, linearises the equation of state about it and
//! solves a Helmholtz problem for the increment with Jacobi-preconditioned
//! conjugate gradients. Mass uses flux-form van Leer (positive, conservative);
//! θ uses the advective form with van Leer face values, which does not depend
//! on η. π is diagnosed from the equation of state at the end of the step.

use std::fmt::Write as _;

use thiserror::Error;

use crate::constants::Constants;
use crate::grid::{
    face_transfer_method1, face_transfer_method2, CenterField, FaceField, Grid2D, GridError,
};
use crate::kernels::{
    apply_transfer, KernelError, Method, Mode, PairState, SchemeConfig, TransferRates,
};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("transfer in cell {cell}: {source}")]
    Kernel {
        cell: usize,
        #[source]
        source: KernelError,
    },
    #[error("face transfer: {0}")]
    FaceKernel(#[from] KernelError),
    #[error("Helmholtz solve did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("non-finite {field} at step {step}")]
    NonFinite { step: usize, field: String },
    #[error("negative mass {value:e} in fluid {fluid} at step {step}")]
    NegativeMass {
        step: usize,
        fluid: usize,
        value: f64,
    },
    #[error("transfers need exactly two fluids, state has {0}")]
    FluidCount(usize),
}

/// Prognostic fields of one fluid.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidFields {
    /// Mass per unit volume at centres.
    pub eta: CenterField,
    /// Potential temperature at centres.
    pub theta: CenterField,
    /// Normal velocity on faces (`x` holds u, `z` holds w).
    pub vel: FaceField,
    /// Stored momentum tendency `T^n` on faces.
    pub tendency: FaceField,
}

impl FluidFields {
    fn theta_mass(&self) -> CenterField {
        self.eta.zip_map(&self.theta, |e, t| e * t)
    }
}

/// Full model state at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub grid: Grid2D,
    pub fluids: Vec<FluidFields>,
    /// Exner pressure at centres.
    pub pi: CenterField,
    pub time: f64,
    pub step: usize,
}

/// Transfer-rate closure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransferClosure {
    None,
    /// Move fluid-1 mass into fluid 0 until fluid 0 fills `sigma_min` of the volume.
    Relabel {
        sigma_min: f64,
    },
    /// Rates proportional to the Laplacian of the mass difference, capped at `Δt S ≤ 1`.
    Diffusive {
        k_sigma: f64,
    },
}

/// Numerical parameters of the dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Crank–Nicolson off-centring (0.5 is centred).
    pub alpha: f64,
    pub outer_iterations: usize,
    /// Relative residual for the Helmholtz solve.
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
    pub constants: Constants,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            outer_iterations: 3,
            cg_tolerance: 1e-12,
            cg_max_iterations: 5000,
            constants: Constants::DRY_AIR,
        }
    }
}

/// Domain-integrated energies (J per metre in the third dimension).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBudget {
    pub potential: f64,
    pub internal: f64,
    pub kinetic: f64,
    pub total: f64,
}

/// Per-cell transfer rates.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFields {
    pub s01: CenterField,
    pub s10: CenterField,
}

impl RateFields {
    pub fn zero(grid: &Grid2D) -> Self {
        Self {
            s01: grid.constant_center(0.0),
            s10: grid.constant_center(0.0),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.s01
            .values
            .iter()
            .chain(&self.s10.values)
            .all(|&s| s == 0.0)
    }
}

/// Hydrostatically balanced single-fluid state at rest.
///
/// The discrete balance `c_p [θ]_f (π_k − π_{k−1}) / Δz = −g` holds on every
/// interior z-face; the lowest centre sits half a cell above a surface with
/// pressure `p_surface`.
pub fn hydrostatic_init(
    grid: Grid2D,
    theta_of_z: impl Fn(f64) -> f64,
    p_surface: f64,
    consts: &Constants,
) -> ModelState {
    let (nx, nz) = (grid.nx, grid.nz);
    let theta_col: Vec<f64> = (0..nz).map(|k| theta_of_z(grid.z_center(k))).collect();
    let mut pi_col = vec![0.0; nz];
    let pi_surface = (p_surface / consts.p0).powf(consts.kappa());
    pi_col[0] = pi_surface - consts.g * 0.5 * grid.dz / (consts.cp * theta_of_z(0.0));
    for k in 1..nz {
        let theta_f = 0.5 * (theta_col[k - 1] + theta_col[k]);
        pi_col[k] = pi_col[k - 1] - consts.g * grid.dz / (consts.cp * theta_f);
    }
    let mut pi = grid.constant_center(0.0);
    let mut theta = grid.constant_center(0.0);
    let mut eta = grid.constant_center(0.0);
    for k in 0..nz {
        for i in 0..nx {
            let c = grid.c(i, k);
            pi.values[c] = pi_col[k];
            theta.values[c] = theta_col[k];
            eta.values[c] = consts.theta_mass_from_exner(pi_col[k]) / theta_col[k];
        }
    }
    let mut state = ModelState {
        grid,
        fluids: vec![FluidFields {
            eta,
            theta,
            vel: grid.zero_faces(),
            tendency: grid.zero_faces(),
        }],
        pi,
        time: 0.0,
        step: 0,
    };
    refresh_tendencies(
        &mut state,
        &SolverConfig {
            constants: *consts,
            ..Default::default()
        },
        0.0,
    );
    state
}

/// Split a single-fluid state into two fluids with fluid-1 fraction `sigma1`.
///
/// Both fluids start with the parent's θ and velocity.
pub fn split_fluids(state: &ModelState, sigma1: &CenterField) -> ModelState {
    let parent = &state.fluids[0];
    let mut f0 = parent.clone();
    let mut f1 = parent.clone();
    f0.eta = parent.eta.zip_map(sigma1, |e, s| (1.0 - s) * e);
    f1.eta = parent.eta.zip_map(sigma1, |e, s| s * e);
    ModelState {
        fluids: vec![f0, f1],
        ..state.clone()
    }
}

/// How the bubble distance L combines the scaled offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceForm {
    /// `L = sqrt(a² + b²)`.
    Squared,
    /// `L = sqrt(a + b)` exactly as printed; undefined (no anomaly) where `a + b < 0`.
    Literal,
}

/// Bubble geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bubble {
    pub xc: f64,
    pub zc: f64,
    pub xr: f64,
    pub zr: f64,
    pub form: DistanceForm,
}

impl Bubble {
    pub fn distance(&self, x: f64, z: f64) -> f64 {
        let a = (x - self.xc) / self.xr;
        let b = (z - self.zc) / self.zr;
        match self.form {
            DistanceForm::Squared => (a * a + b * b).sqrt(),
            DistanceForm::Literal => (a + b).sqrt(),
        }
    }

    /// Perturbation `amplitude · cos²(πL/2)` for L ≤ 1, zero elsewhere.
    pub fn perturbation(&self, amplitude: f64, x: f64, z: f64) -> f64 {
        let l = self.distance(x, z);
        if l <= 1.0 {
            let c = (std::f64::consts::FRAC_PI_2 * l).cos();
            amplitude * c * c
        } else {
            0.0
        }
    }
}

/// Add the warm anomaly to θ of the target fluids at fixed Exner pressure.
///
/// Volume fractions `σ_i = η_i θ_i / Σ η θ` are kept and each mass is reset
/// to `σ_i p0 π^e / (R θ_i)`, so the equation of state still holds.
pub fn apply_bubble_perturbation(
    state: &ModelState,
    bubble: &Bubble,
    amplitude: f64,
    targets: &[usize],
    consts: &Constants,
) -> ModelState {
    let g = state.grid;
    let mut out = state.clone();
    let anomaly = g.center_from_fn(|x, z| bubble.perturbation(amplitude, x, z));
    for &t in targets {
        out.fluids[t].theta = out.fluids[t].theta.zip_map(&anomaly, |a, b| a + b);
    }
    for c in 0..g.n_cells() {
        if anomaly.values[c] == 0.0 {
            continue;
        }
        let total: f64 = state
            .fluids
            .iter()
            .map(|f| f.eta.values[c] * f.theta.values[c])
            .sum();
        let full = consts.theta_mass_from_exner(state.pi.values[c]);
        for (f, old) in out.fluids.iter_mut().zip(&state.fluids) {
            let sigma = old.eta.values[c] * old.theta.values[c] / total;
            f.eta.values[c] = sigma * full / f.theta.values[c];
        }
    }
    refresh_tendencies(
        &mut out,
        &SolverConfig {
            constants: *consts,
            ..Default::default()
        },
        0.0,
    );
    out
}

fn add_gravity(grid: &Grid2D, t: &mut FaceField, g: f64) {
    for k in 1..grid.nz {
        for i in 0..grid.nx {
            t.z[grid.zf(i, k)] -= g;
        }
    }
}

/// Momentum tendency of one fluid: advection, pressure gradient and gravity.
fn momentum_tendency(
    grid: &Grid2D,
    vel: &FaceField,
    theta_faces: &FaceField,
    grad_pi: &FaceField,
    cfg: &SolverConfig,
    dt: f64,
) -> FaceField {
    let cp = cfg.constants.cp;
    let mut t = grid.momentum_advection(vel, dt);
    for (j, tv) in t.x.iter_mut().enumerate() {
        *tv -= cp * theta_faces.x[j] * grad_pi.x[j];
    }
    for (j, tv) in t.z.iter_mut().enumerate() {
        *tv -= cp * theta_faces.z[j] * grad_pi.z[j];
    }
    add_gravity(grid, &mut t, cfg.constants.g);
    grid.pin_walls(&mut t);
    t
}

/// Recompute every stored tendency from the current state.
pub fn refresh_tendencies(state: &mut ModelState, cfg: &SolverConfig, dt: f64) {
    let grid = state.grid;
    let grad = grid.gradient(&state.pi);
    for f in &mut state.fluids {
        let tf = grid.to_faces(&f.theta);
        f.tendency = momentum_tendency(&grid, &f.vel, &tf, &grad, cfg, dt);
    }
}

/// Ideal-gas density `p0 π^e / (R θ)` of a fluid at the cell pressure.
fn fluid_density(pi: f64, theta: f64, consts: &Constants) -> f64 {
    consts.theta_mass_from_exner(pi) / theta
}

/// Transfer rates for the closure at level m.
pub fn compute_transfer_rates(
    state: &ModelState,
    closure: &TransferClosure,
    dt: f64,
    consts: &Constants,
) -> Result<RateFields, SolverError> {
    let grid = state.grid;
    let mut rates = RateFields::zero(&grid);
    match *closure {
        TransferClosure::None => {}
        TransferClosure::Relabel { sigma_min } => {
            let [f0, f1] = two(&state.fluids)?;
            for c in 0..grid.n_cells() {
                let (e0, e1) = (f0.eta.values[c], f1.eta.values[c]);
                if e1 <= 0.0 || dt == 0.0 {
                    continue;
                }
                let rho0 = if e0 == 0.0 {
                    e0 + e1
                } else {
                    fluid_density(state.pi.values[c], f0.theta.values[c], consts)
                };
                rates.s10.values[c] = (sigma_min * rho0 - e0).max(0.0) / (dt * e1);
            }
        }
        TransferClosure::Diffusive { k_sigma } => {
            let [f0, f1] = two(&state.fluids)?;
            let diff = f1.eta.zip_map(&f0.eta, |a, b| a - b);
            let lap = grid.laplacian(&diff);
            // a cell never gives away more than its whole donor mass in one step
            let cap = if dt > 0.0 { 1.0 / dt } else { f64::INFINITY };
            for c in 0..grid.n_cells() {
                let l = lap.values[c];
                let (e0, e1) = (f0.eta.values[c], f1.eta.values[c]);
                if e0 > 0.0 {
                    rates.s01.values[c] = (0.5 * k_sigma / e0 * l.max(0.0)).min(cap);
                }
                if e1 > 0.0 {
                    rates.s10.values[c] = (0.5 * k_sigma / e1 * (-l).max(0.0)).min(cap);
                }
            }
        }
    }
    Ok(rates)
}

fn two(fluids: &[FluidFields]) -> Result<[&FluidFields; 2], SolverError> {
    match fluids {
        [a, b] => Ok([a, b]),
        _ => Err(SolverError::FluidCount(fluids.len())),
    }
}

/// Helmholtz operator `D δ − β ∇·(C ∇δ)`.
struct Helmholtz<'a> {
    grid: &'a Grid2D,
    diag: &'a [f64],
    coeff: &'a FaceField,
    beta: f64,
}

impl Helmholtz<'_> {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let g = self.grid;
        for k in 0..g.nz {
            for i in 0..g.nx {
                let c = g.c(i, k);
                let mut acc = 0.0;
                if i > 0 {
                    acc += self.coeff.x[g.xf(i, k)] * (x[c] - x[g.c(i - 1, k)]) / (g.dx * g.dx);
                }
                if i + 1 < g.nx {
                    acc += self.coeff.x[g.xf(i + 1, k)] * (x[c] - x[g.c(i + 1, k)]) / (g.dx * g.dx);
                }
                if k > 0 {
                    acc += self.coeff.z[g.zf(i, k)] * (x[c] - x[g.c(i, k - 1)]) / (g.dz * g.dz);
                }
                if k + 1 < g.nz {
                    acc += self.coeff.z[g.zf(i, k + 1)] * (x[c] - x[g.c(i, k + 1)]) / (g.dz * g.dz);
                }
                out[c] = self.diag[c] * x[c] + self.beta * acc;
            }
        }
    }

    fn jacobi(&self) -> Vec<f64> {
        let g = self.grid;
        let mut p = vec![0.0; g.n_cells()];
        for k in 0..g.nz {
            for i in 0..g.nx {
                let mut s = 0.0;
                if i > 0 {
                    s += self.coeff.x[g.xf(i, k)] / (g.dx * g.dx);
                }
                if i + 1 < g.nx {
                    s += self.coeff.x[g.xf(i + 1, k)] / (g.dx * g.dx);
                }
                if k > 0 {
                    s += self.coeff.z[g.zf(i, k)] / (g.dz * g.dz);
                }
                if k + 1 < g.nz {
                    s += self.coeff.z[g.zf(i, k + 1)] / (g.dz * g.dz);
                }
                p[g.c(i, k)] = 1.0 / (self.diag[g.c(i, k)] + self.beta * s);
            }
        }
        p
    }

    fn solve(&self, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>, SolverError> {
        let n = b.len();
        let mut x = vec![0.0; n];
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            return Ok(x);
        }
        let m = self.jacobi();
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&m).map(|(a, b)| a * b).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        for it in 1..=max_iter {
            self.apply(&p, &mut ap);
            let alpha = rz / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
            for j in 0..n {
                x[j] += alpha * p[j];
                r[j] -= alpha * ap[j];
            }
            let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= tol * bnorm {
                return Ok(x);
            }
            if it == max_iter {
                return Err(SolverError::NoConvergence {
                    residual: rnorm / bnorm,
                    iterations: it,
                });
            }
            for j in 0..n {
                z[j] = r[j] * m[j];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for j in 0..n {
                p[j] = z[j] + beta * p[j];
            }
        }
        Ok(x)
    }
}

fn blend(a: &FaceField, b: &FaceField, alpha: f64) -> FaceField {
    a.zip_map(b, |x, y| (1.0 - alpha) * x + alpha * y)
}

/// Advance the dynamics by one step without transfers, giving level m.
pub fn dynamics_substep(
    state: &ModelState,
    dt: f64,
    cfg: &SolverConfig,
) -> Result<ModelState, SolverError> {
    let grid = state.grid;
    let c = &cfg.constants;
    let a = cfg.alpha;
    let e = c.eos_exponent();
    let p0r = c.p0 / c.r;
    let beta = a * a * dt * dt * c.cp;
    let n_cells = grid.n_cells();
    let theta_mass_n: Vec<CenterField> = state.fluids.iter().map(|f| f.theta_mass()).collect();

    let mut pi_star = state.pi.clone();
    let mut vel_star: Vec<FaceField> = state.fluids.iter().map(|f| f.vel.clone()).collect();
    let mut theta_star: Vec<CenterField> = state.fluids.iter().map(|f| f.theta.clone()).collect();

    for _ in 0..cfg.outer_iterations.max(1) {
        let mut expl = Vec::with_capacity(state.fluids.len());
        let mut theta_faces = Vec::with_capacity(state.fluids.len());
        let mut coeff = grid.zero_faces();
        // Σ η θ after transport by the velocity using the current π estimate
        let mut predicted = vec![0.0; n_cells];
        let grad_star = grid.gradient(&pi_star);
        for (i, f) in state.fluids.iter().enumerate() {
            let vbar = blend(&f.vel, &vel_star[i], a);
            let tf = grid.to_faces(&theta_star[i]);
            let tmf = grid.vanleer_face_values(&theta_mass_n[i], &vbar, dt);
            let mut adv = grid.momentum_advection(&vel_star[i], dt);
            add_gravity(&grid, &mut adv, c.g);
            let mut v_expl = f.vel.zip_map(&f.tendency, |v, t| v + dt * (1.0 - a) * t);
            for (j, v) in v_expl.x.iter_mut().enumerate() {
                *v += dt * a * adv.x[j];
            }
            for (j, v) in v_expl.z.iter_mut().enumerate() {
                *v += dt * a * adv.z[j];
            }
            grid.pin_walls(&mut v_expl);
            let mut trial = v_expl.clone();
            for (j, v) in trial.x.iter_mut().enumerate() {
                *v -= a * dt * c.cp * tf.x[j] * grad_star.x[j];
            }
            for (j, v) in trial.z.iter_mut().enumerate() {
                *v -= a * dt * c.cp * tf.z[j] * grad_star.z[j];
            }
            grid.pin_walls(&mut trial);
            let trial = blend(&f.vel, &trial, a);
            let eta = grid.advect_vanleer(&f.eta, &trial, dt)?;
            let theta = grid.advect_advective(&f.theta, &trial, dt);
            for (p, (h, t)) in predicted
                .iter_mut()
                .zip(eta.values.iter().zip(&theta.values))
            {
                *p += h * t;
            }
            coeff = coeff.zip_map(&tmf.zip_map(&tf, |q, t| q * t), |x, y| x + y);
            expl.push(v_expl);
            theta_faces.push(tf);
        }
        grid.pin_walls(&mut coeff);

        let diag: Vec<f64> = pi_star
            .values
            .iter()
            .map(|&p| p0r * e * p.powf(e - 1.0))
            .collect();
        let op = Helmholtz {
            grid: &grid,
            diag: &diag,
            coeff: &coeff,
            beta,
        };
        let rhs: Vec<f64> = (0..n_cells)
            .map(|cell| predicted[cell] - p0r * pi_star.values[cell].powf(e))
            .collect();
        let delta = op.solve(&rhs, cfg.cg_tolerance, cfg.cg_max_iterations)?;
        let pi_new = CenterField {
            values: pi_star
                .values
                .iter()
                .zip(&delta)
                .map(|(p, d)| p + d)
                .collect(),
        };
        let grad = grid.gradient(&pi_new);
        for (i, f) in state.fluids.iter().enumerate() {
            let mut v_new = expl[i].clone();
            for (j, v) in v_new.x.iter_mut().enumerate() {
                *v -= a * dt * c.cp * theta_faces[i].x[j] * grad.x[j];
            }
            for (j, v) in v_new.z.iter_mut().enumerate() {
                *v -= a * dt * c.cp * theta_faces[i].z[j] * grad.z[j];
            }
            grid.pin_walls(&mut v_new);
            theta_star[i] = grid.advect_advective(&f.theta, &blend(&f.vel, &v_new, a), dt);
            vel_star[i] = v_new;
        }
        pi_star = pi_new;
    }

    // final transport with the converged velocity, then diagnose π
    let mut fluids = Vec::with_capacity(state.fluids.len());
    for (i, f) in state.fluids.iter().enumerate() {
        let adv_vel = blend(&f.vel, &vel_star[i], a);
        let eta = grid.advect_vanleer(&f.eta, &adv_vel, dt)?;
        let theta = grid.advect_advective(&f.theta, &adv_vel, dt);
        fluids.push(FluidFields {
            eta,
            theta,
            vel: vel_star[i].clone(),
            tendency: f.tendency.clone(),
        });
    }
    let pi = CenterField {
        values: (0..n_cells)
            .map(|cell| {
                let tm: f64 = fluids
                    .iter()
                    .map(|f| f.eta.values[cell] * f.theta.values[cell])
                    .sum();
                c.exner_from_theta_mass(tm)
            })
            .collect(),
    };
    let mut out = ModelState {
        grid,
        fluids,
        pi,
        time: state.time + dt,
        step: state.step + 1,
    };
    refresh_tendencies(&mut out, cfg, dt);
    check_finite(&out)?;
    Ok(out)
}

fn check_finite(state: &ModelState) -> Result<(), SolverError> {
    let bad = |field: String| SolverError::NonFinite {
        step: state.step,
        field,
    };
    if !state.pi.is_finite() {
        return Err(bad("pi".into()));
    }
    for (i, f) in state.fluids.iter().enumerate() {
        if !f.eta.is_finite() {
            return Err(bad(format!("eta_{i}")));
        }
        if !f.theta.is_finite() {
            return Err(bad(format!("theta_{i}")));
        }
        if !f.vel.is_finite() {
            return Err(bad(format!("velocity_{i}")));
        }
        if !f.tendency.is_finite() {
            return Err(bad(format!("tendency_{i}")));
        }
    }
    Ok(())
}

/// Apply the transfers at level m, giving level n+1.
///
/// Cell mass and θ go through the kernels cell by cell; face velocities and
/// the stored tendencies are relabelled with the face coefficients.
pub fn transfer_substep(
    state_m: &ModelState,
    rates: &RateFields,
    cfg: &SchemeConfig,
    dt: f64,
) -> Result<ModelState, SolverError> {
    if rates.is_zero() {
        return Ok(state_m.clone());
    }
    let grid = state_m.grid;
    let [f0, f1] = two(&state_m.fluids)?;
    let mut out = state_m.clone();
    for cell in 0..grid.n_cells() {
        let s01 = rates.s01.values[cell];
        let s10 = rates.s10.values[cell];
        if s01 == 0.0 && s10 == 0.0 {
            continue;
        }
        let before = PairState::new(
            [f0.eta.values[cell], f1.eta.values[cell]],
            [f0.theta.values[cell], f1.theta.values[cell]],
            [0.0, 0.0],
        );
        let after = apply_transfer(
            &before,
            &TransferRates::new(s01, s10, dt),
            cfg,
            Mode::Strict,
        )
        .map_err(|source| SolverError::Kernel { cell, source })?;
        for i in 0..2 {
            out.fluids[i].eta.values[cell] = after.state.eta[i];
            out.fluids[i].theta.values[cell] = after.state.theta[i];
        }
    }
    let vel = [&f0.vel, &f1.vel];
    let tend = [&f0.tendency, &f1.tendency];
    let (new_vel, new_tend) = match cfg.method() {
        Method::One => {
            let nu = grid.face_nu(
                [&f0.eta, &f1.eta],
                [&out.fluids[0].eta, &out.fluids[1].eta],
                &rates.s01,
                &rates.s10,
                dt,
                cfg,
                Mode::Strict,
            )?;
            (
                face_transfer_method1(vel, [&nu[0], &nu[1]]),
                face_transfer_method1(tend, [&nu[0], &nu[1]]),
            )
        }
        Method::Two => {
            let lc = grid.face_lambda(&rates.s01, &rates.s10, dt, cfg.alpha_c());
            let la = grid.face_lambda(&rates.s01, &rates.s10, dt, cfg.alpha_a());
            let eta_f = [grid.to_faces(&f0.eta), grid.to_faces(&f1.eta)];
            let consistent = cfg.alpha_c() == cfg.alpha_a();
            let (v, _) = face_transfer_method2(vel, [&eta_f[0], &eta_f[1]], &lc, &la, consistent);
            let (t, _) = face_transfer_method2(tend, [&eta_f[0], &eta_f[1]], &lc, &la, consistent);
            (v, t)
        }
    };
    for (i, (v, t)) in new_vel.into_iter().zip(new_tend).enumerate() {
        out.fluids[i].vel = v;
        out.fluids[i].tendency = t;
        grid.pin_walls(&mut out.fluids[i].vel);
        grid.pin_walls(&mut out.fluids[i].tendency);
    }
    check_finite(&out)?;
    for (i, f) in out.fluids.iter().enumerate() {
        let m = f.eta.min();
        if m < 0.0 {
            return Err(SolverError::NegativeMass {
                step: out.step,
                fluid: i,
                value: m,
            });
        }
    }
    Ok(out)
}

/// Domain-integrated energies of a state.
pub fn energy_budget(state: &ModelState, consts: &Constants) -> EnergyBudget {
    let g = state.grid;
    let vol = g.cell_volume();
    let cv = consts.cv();
    let mut potential = 0.0;
    let mut internal = 0.0;
    for k in 0..g.nz {
        let z = g.z_center(k);
        for i in 0..g.nx {
            let c = g.c(i, k);
            for f in &state.fluids {
                potential += f.eta.values[c] * consts.g * z;
                internal += f.eta.values[c] * f.theta.values[c] * cv * state.pi.values[c];
            }
        }
    }
    let masses: Vec<FaceField> = state.fluids.iter().map(|f| g.to_faces(&f.eta)).collect();
    let vels: Vec<FaceField> = state.fluids.iter().map(|f| f.vel.clone()).collect();
    let kinetic = g.kinetic_energy_cgrid(&masses, &vels).sum();
    let (potential, internal, kinetic) = (potential * vol, internal * vol, kinetic * vol);
    EnergyBudget {
        potential,
        internal,
        kinetic,
        total: potential + internal + kinetic,
    }
}

/// One full step: dynamics, rates at level m, transfers.
pub fn step(
    state: &ModelState,
    closure: &TransferClosure,
    scheme: &SchemeConfig,
    dt: f64,
    cfg: &SolverConfig,
) -> Result<(ModelState, RateFields), SolverError> {
    let m = dynamics_substep(state, dt, cfg)?;
    if matches!(closure, TransferClosure::None) {
        return Ok((m, RateFields::zero(&state.grid)));
    }
    let rates = compute_transfer_rates(&m, closure, dt, &cfg.constants)?;
    let next = transfer_substep(&m, &rates, scheme, dt)?;
    Ok((next, rates))
}

/// Total mass of each fluid (kg per metre in the third dimension).
pub fn fluid_masses(state: &ModelState) -> Vec<f64> {
    let vol = state.grid.cell_volume();
    state.fluids.iter().map(|f| f.eta.sum() * vol).collect()
}

/// Largest |w| over all fluids.
pub fn max_abs_w(state: &ModelState) -> f64 {
    state
        .fluids
        .iter()
        .flat_map(|f| f.vel.z.iter())
        .fold(0.0, |m, w| m.max(w.abs()))
}

/// One row of the per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRow {
    pub step: usize,
    pub time: f64,
    pub energy: EnergyBudget,
    pub de_rel_from_ic: f64,
    pub de_rsf: Option<f64>,
    pub min_eta: Vec<f64>,
    pub max_abs_w: f64,
}

impl DiagnosticsRow {
    pub fn new(state: &ModelState, energy: EnergyBudget, e0: f64, de_rsf: Option<f64>) -> Self {
        Self {
            step: state.step,
            time: state.time,
            energy,
            de_rel_from_ic: (energy.total - e0) / e0,
            de_rsf,
            min_eta: state.fluids.iter().map(|f| f.eta.min()).collect(),
            max_abs_w: max_abs_w(state),
        }
    }
}

/// Diagnostics CSV text for a run with `n_fluids` fluids.
pub fn diagnostics_csv(rows: &[DiagnosticsRow], n_fluids: usize) -> String {
    let mut s = String::from("step,time,E_P,E_I,E_K,E_total,dE_rel_from_IC,dE_RSF");
    for i in 0..n_fluids {
        let _ = write!(s, ",min_eta_{i}");
    }
    s.push_str(",max_abs_w\n");
    for r in rows {
        let e = &r.energy;
        let _ = write!(
            s,
            "{},{},{:e},{:e},{:e},{:e},{:e},",
            r.step, r.time, e.potential, e.internal, e.kinetic, e.total, r.de_rel_from_ic
        );
        if let Some(d) = r.de_rsf {
            let _ = write!(s, "{d:e}");
        }
        for m in &r.min_eta {
            let _ = write!(s, ",{m:e}");
        }
        let _ = writeln!(s, ",{:e}", r.max_abs_w);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rest(nx: usize, nz: usize) -> ModelState {
        hydrostatic_init(
            Grid2D::new(nx, nz, 400.0, 400.0),
            |_| 300.0,
            1.0e5,
            &Constants::DRY_AIR,
        )
    }

    #[test]
    fn hydrostatic_profile() {
        let s = rest(4, 10);
        let c = Constants::DRY_AIR;
        let g = s.grid;
        for k in 1..g.nz {
            assert!(s.pi.values[g.c(0, k)] < s.pi.values[g.c(0, k - 1)]);
        }
        // extrapolating half a cell down recovers the surface value
        let surface = s.pi.values[0] + c.g * 0.5 * g.dz / (c.cp * 300.0);
        assert!((surface - 1.0).abs() < 1e-15);
        assert!(s.fluids[0].tendency.max_abs() < 1e-11);
    }

    #[test]
    fn bubble_profile_values() {
        let b = Bubble {
            xc: 0.0,
            zc: 0.0,
            xr: 1.0,
            zr: 1.0,
            form: DistanceForm::Squared,
        };
        assert_eq!(b.perturbation(2.0, 0.0, 0.0), 2.0);
        assert!(b.perturbation(2.0, 1.0, 0.0).abs() < 1e-15);
        assert!((b.perturbation(2.0, 0.5, 0.0) - 1.0).abs() < 1e-15);
        assert_eq!(b.perturbation(2.0, 1.5, 0.0), 0.0);
    }

    #[test]
    fn perturbation_keeps_state_equation() {
        let c = Constants::DRY_AIR;
        let s = rest(10, 6);
        let b = Bubble {
            xc: 2200.0,
            zc: 1400.0,
            xr: 1000.0,
            zr: 1000.0,
            form: DistanceForm::Squared,
        };
        let p = apply_bubble_perturbation(&s, &b, 2.0, &[0], &c);
        for cell in 0..s.grid.n_cells() {
            let f = &p.fluids[0];
            let pi = c.exner_from_theta_mass(f.eta.values[cell] * f.theta.values[cell]);
            assert!((pi - p.pi.values[cell]).abs() < 1e-14);
        }
        assert!(p.fluids[0].theta.max() > 301.9);
    }

    #[test]
    fn relabel_rates_first_step() {
        let s = rest(4, 4);
        let two = split_fluids(&s, &s.grid.constant_center(1.0));
        let dt = 8.0;
        let r = compute_transfer_rates(
            &two,
            &TransferClosure::Relabel { sigma_min: 0.1 },
            dt,
            &Constants::DRY_AIR,
        )
        .unwrap();
        for cell in 0..s.grid.n_cells() {
            assert_eq!(r.s01.values[cell], 0.0);
            let moved = dt * r.s10.values[cell] * two.fluids[1].eta.values[cell];
            assert!((moved / two.fluids[1].eta.values[cell] - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn diffusive_rates_vanish_for_equal_masses() {
        let s = rest(4, 4);
        let two = split_fluids(&s, &s.grid.constant_center(0.5));
        let r = compute_transfer_rates(
            &two,
            &TransferClosure::Diffusive { k_sigma: 200.0 },
            8.0,
            &Constants::DRY_AIR,
        )
        .unwrap();
        assert!(r.is_zero());
    }

    #[test]
    fn helmholtz_solver_inverts_operator() {
        let g = Grid2D::new(6, 5, 100.0, 50.0);
        let diag: Vec<f64> = (0..g.n_cells()).map(|i| 1.0 + 0.1 * i as f64).collect();
        let mut coeff = g.zero_faces().map(|_| 2.0);
        g.pin_walls(&mut coeff);
        let op = Helmholtz {
            grid: &g,
            diag: &diag,
            coeff: &coeff,
            beta: 1e4,
        };
        let truth: Vec<f64> = (0..g.n_cells())
            .map(|i| ((i * 7) % 5) as f64 - 2.0)
            .collect();
        let mut b = vec![0.0; g.n_cells()];
        op.apply(&truth, &mut b);
        let x = op.solve(&b, 1e-13, 500).unwrap();
        for (a, t) in x.iter().zip(&truth) {
            assert!((a - t).abs() < 1e-9);
        }
    }

    #[test]
    fn diagnostics_header() {
        let text = diagnostics_csv(&[], 2);
        assert_eq!(
            text.trim_end(),
            "step,time,E_P,E_I,E_K,E_total,dE_rel_from_IC,dE_RSF,min_eta_0,min_eta_1,max_abs_w"
        );
    }
}
