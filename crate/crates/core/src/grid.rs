//! Staggered (Arakawa C) grid on a rectangle with rigid walls.
//!
//! Scalars live at cell centres, indexed `k * nx + i`. Normal velocities live
//! on faces: x-faces at `x = i dx` (`(nx + 1) * nz`, index `k * (nx + 1) + i`)
//! and z-faces at `z = k dz` (`nx * (nz + 1)`, index `k * nx + i`). Wall faces
//! carry zero normal velocity.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::kernels::{
    lambda_coeff, lambda_complement, mass_ratio, method2_property, mix_property, nu_from_ratios,
    transfer_mass, KernelError, Level, Mode, SchemeConfig, Treatment,
};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("outflow Courant number {courant:.3} exceeds 1 in cell ({i}, {k})")]
    Courant { i: usize, k: usize, courant: f64 },
    #[error("face transfer: {0}")]
    Kernel(#[from] KernelError),
    #[error("failed to write field dump {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Uniform rectangular grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
    pub dz: f64,
}

/// Scalar field at cell centres.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterField {
    pub values: Vec<f64>,
}

/// Normal components on x-faces and z-faces.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

impl CenterField {
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> CenterField {
        CenterField {
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, o: &CenterField, f: impl Fn(f64, f64) -> f64) -> CenterField {
        CenterField {
            values: self
                .values
                .iter()
                .zip(&o.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

impl FaceField {
    pub fn max_abs(&self) -> f64 {
        self.x
            .iter()
            .chain(&self.z)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.z).all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FaceField {
        FaceField {
            x: self.x.iter().map(|&v| f(v)).collect(),
            z: self.z.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, o: &FaceField, f: impl Fn(f64, f64) -> f64) -> FaceField {
        FaceField {
            x: self.x.iter().zip(&o.x).map(|(&a, &b)| f(a, b)).collect(),
            z: self.z.iter().zip(&o.z).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

/// Harmonic mean of two one-sided differences, zero at extrema.
///
/// Written as `2a · b/(a+b)` so tiny differences do not underflow into
/// subnormals, which would break the bound `|slope| ≤ 2 min(|a|, |b|)`.
fn harmonic_slope(a: f64, b: f64) -> f64 {
    if (a > 0.0 && b > 0.0) || (a < 0.0 && b < 0.0) {
        2.0 * a * (b / (a + b))
    } else {
        0.0
    }
}

/// Van Leer face values along one line of `n` values with `n + 1`
/// interfaces; interface `f` lies between values `f - 1` and `f`.
///
/// The face value is the upwind value plus the harmonic-mean limited slope
/// with the Courant-number correction; the end values of a line use zero
/// slope. Where the velocity vanishes the centred mean is used (the end
/// interfaces copy the adjacent value).
fn line_face_values(
    n: usize,
    q: impl Fn(usize) -> f64,
    vel: impl Fn(usize) -> f64,
    dt_over_h: f64,
    mut out: impl FnMut(usize, f64),
) {
    let slope = |j: usize| {
        if j == 0 || j + 1 >= n {
            0.0
        } else {
            harmonic_slope(q(j) - q(j - 1), q(j + 1) - q(j))
        }
    };
    for f in 0..=n {
        let v = vel(f);
        let qf = if f == 0 {
            q(0)
        } else if f == n {
            q(n - 1)
        } else if v > 0.0 {
            let c = (v * dt_over_h).min(1.0);
            q(f - 1) + 0.5 * (1.0 - c) * slope(f - 1)
        } else if v < 0.0 {
            let c = (-v * dt_over_h).min(1.0);
            q(f) - 0.5 * (1.0 - c) * slope(f)
        } else {
            0.5 * (q(f - 1) + q(f))
        };
        out(f, qf);
    }
}

/// Fluxes `v_f q_f` from [`line_face_values`].
fn line_fluxes(
    n: usize,
    q: impl Fn(usize) -> f64,
    vel: impl Fn(usize) -> f64 + Copy,
    dt_over_h: f64,
    mut out: impl FnMut(usize, f64),
) {
    line_face_values(n, q, vel, dt_over_h, |f, qf| out(f, vel(f) * qf));
}

impl Grid2D {
    pub fn new(nx: usize, nz: usize, dx: f64, dz: f64) -> Self {
        assert!(nx > 0 && nz > 0 && dx > 0.0 && dz > 0.0, "degenerate grid");
        Self { nx, nz, dx, dz }
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.nz
    }

    pub fn n_xfaces(&self) -> usize {
        (self.nx + 1) * self.nz
    }

    pub fn n_zfaces(&self) -> usize {
        self.nx * (self.nz + 1)
    }

    pub fn width(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    pub fn height(&self) -> f64 {
        self.nz as f64 * self.dz
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dz
    }

    #[inline]
    pub fn c(&self, i: usize, k: usize) -> usize {
        k * self.nx + i
    }

    #[inline]
    pub fn xf(&self, i: usize, k: usize) -> usize {
        k * (self.nx + 1) + i
    }

    #[inline]
    pub fn zf(&self, i: usize, k: usize) -> usize {
        k * self.nx + i
    }

    pub fn x_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx
    }

    pub fn z_center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dz
    }

    pub fn constant_center(&self, v: f64) -> CenterField {
        CenterField {
            values: vec![v; self.n_cells()],
        }
    }

    pub fn center_from_fn(&self, f: impl Fn(f64, f64) -> f64) -> CenterField {
        let mut values = Vec::with_capacity(self.n_cells());
        for k in 0..self.nz {
            for i in 0..self.nx {
                values.push(f(self.x_center(i), self.z_center(k)));
            }
        }
        CenterField { values }
    }

    pub fn zero_faces(&self) -> FaceField {
        FaceField {
            x: vec![0.0; self.n_xfaces()],
            z: vec![0.0; self.n_zfaces()],
        }
    }

    /// Face field from functions of face position; wall faces are set to zero.
    pub fn faces_from_fn(
        &self,
        fx: impl Fn(f64, f64) -> f64,
        fz: impl Fn(f64, f64) -> f64,
    ) -> FaceField {
        let mut out = self.zero_faces();
        for k in 0..self.nz {
            for i in 1..self.nx {
                out.x[self.xf(i, k)] = fx(i as f64 * self.dx, self.z_center(k));
            }
        }
        for k in 1..self.nz {
            for i in 0..self.nx {
                out.z[self.zf(i, k)] = fz(self.x_center(i), k as f64 * self.dz);
            }
        }
        out
    }

    /// Zero the wall-normal boundary faces.
    pub fn pin_walls(&self, f: &mut FaceField) {
        for k in 0..self.nz {
            f.x[self.xf(0, k)] = 0.0;
            f.x[self.xf(self.nx, k)] = 0.0;
        }
        for i in 0..self.nx {
            f.z[self.zf(i, 0)] = 0.0;
            f.z[self.zf(i, self.nz)] = 0.0;
        }
    }

    /// `[·]_f`: mean of the two adjacent centres; boundary faces copy the
    /// adjacent centre.
    pub fn to_faces(&self, c: &CenterField) -> FaceField {
        let (nx, nz) = (self.nx, self.nz);
        let v = &c.values;
        let mut out = self.zero_faces();
        for k in 0..nz {
            out.x[self.xf(0, k)] = v[self.c(0, k)];
            for i in 1..nx {
                out.x[self.xf(i, k)] = 0.5 * (v[self.c(i - 1, k)] + v[self.c(i, k)]);
            }
            out.x[self.xf(nx, k)] = v[self.c(nx - 1, k)];
        }
        for i in 0..nx {
            out.z[self.zf(i, 0)] = v[self.c(i, 0)];
            for k in 1..nz {
                out.z[self.zf(i, k)] = 0.5 * (v[self.c(i, k - 1)] + v[self.c(i, k)]);
            }
            out.z[self.zf(i, nz)] = v[self.c(i, nz - 1)];
        }
        out
    }

    /// `[·]_c` per direction: mean of the two bounding x-faces and of the two
    /// bounding z-faces of each cell.
    pub fn to_centers(&self, f: &FaceField) -> (CenterField, CenterField) {
        let mut cx = self.constant_center(0.0);
        let mut cz = self.constant_center(0.0);
        for k in 0..self.nz {
            for i in 0..self.nx {
                let c = self.c(i, k);
                cx.values[c] = 0.5 * (f.x[self.xf(i, k)] + f.x[self.xf(i + 1, k)]);
                cz.values[c] = 0.5 * (f.z[self.zf(i, k)] + f.z[self.zf(i, k + 1)]);
            }
        }
        (cx, cz)
    }

    /// Finite-volume divergence of a face flux.
    pub fn divergence(&self, flux: &FaceField) -> CenterField {
        let mut out = self.constant_center(0.0);
        for k in 0..self.nz {
            for i in 0..self.nx {
                out.values[self.c(i, k)] = (flux.x[self.xf(i + 1, k)] - flux.x[self.xf(i, k)])
                    / self.dx
                    + (flux.z[self.zf(i, k + 1)] - flux.z[self.zf(i, k)]) / self.dz;
            }
        }
        out
    }

    /// Face-normal gradient; zero on wall faces.
    pub fn gradient(&self, c: &CenterField) -> FaceField {
        let v = &c.values;
        let mut out = self.zero_faces();
        for k in 0..self.nz {
            for i in 1..self.nx {
                out.x[self.xf(i, k)] = (v[self.c(i, k)] - v[self.c(i - 1, k)]) / self.dx;
            }
        }
        for k in 1..self.nz {
            for i in 0..self.nx {
                out.z[self.zf(i, k)] = (v[self.c(i, k)] - v[self.c(i, k - 1)]) / self.dz;
            }
        }
        out
    }

    /// Five-point Laplacian with zero-gradient walls.
    pub fn laplacian(&self, c: &CenterField) -> CenterField {
        let v = &c.values;
        let mut out = self.constant_center(0.0);
        for k in 0..self.nz {
            for i in 0..self.nx {
                let q = v[self.c(i, k)];
                let w = if i > 0 { v[self.c(i - 1, k)] } else { q };
                let e = if i + 1 < self.nx {
                    v[self.c(i + 1, k)]
                } else {
                    q
                };
                let s = if k > 0 { v[self.c(i, k - 1)] } else { q };
                let n = if k + 1 < self.nz {
                    v[self.c(i, k + 1)]
                } else {
                    q
                };
                out.values[self.c(i, k)] = (w - 2.0 * q + e) / (self.dx * self.dx)
                    + (s - 2.0 * q + n) / (self.dz * self.dz);
            }
        }
        out
    }

    /// Largest total outflow Courant number over the cells, with its location.
    pub fn max_outflow_courant(&self, vel: &FaceField, dt: f64) -> (f64, usize, usize) {
        let mut worst = (0.0, 0, 0);
        for k in 0..self.nz {
            for i in 0..self.nx {
                let out = (vel.x[self.xf(i + 1, k)].max(0.0) - vel.x[self.xf(i, k)].min(0.0)) * dt
                    / self.dx
                    + (vel.z[self.zf(i, k + 1)].max(0.0) - vel.z[self.zf(i, k)].min(0.0)) * dt
                        / self.dz;
                if out > worst.0 {
                    worst = (out, i, k);
                }
            }
        }
        worst
    }

    /// Van Leer face values of a centred scalar for the given velocity.
    pub fn vanleer_face_values(&self, q: &CenterField, vel: &FaceField, dt: f64) -> FaceField {
        let (nx, nz) = (self.nx, self.nz);
        let v = &q.values;
        let mut out = self.zero_faces();
        for k in 0..nz {
            line_face_values(
                nx,
                |j| v[self.c(j, k)],
                |f| vel.x[self.xf(f, k)],
                dt / self.dx,
                |f, qf| out.x[self.xf(f, k)] = qf,
            );
        }
        for i in 0..nx {
            line_face_values(
                nz,
                |j| v[self.c(i, j)],
                |f| vel.z[self.zf(i, f)],
                dt / self.dz,
                |f, qf| out.z[self.zf(i, f)] = qf,
            );
        }
        out
    }

    /// Van Leer face fluxes `v q_f` of a centred scalar.
    pub fn vanleer_fluxes(&self, q: &CenterField, vel: &FaceField, dt: f64) -> FaceField {
        self.vanleer_face_values(q, vel, dt)
            .zip_map(vel, |qf, v| v * qf)
    }

    /// Flux-form van Leer update `q − Δt ∇·(v q_f)`.
    ///
    /// Non-negative input stays non-negative while the total outflow Courant
    /// number of every cell is at most ½; above 1 the step is rejected.
    pub fn advect_vanleer(
        &self,
        q: &CenterField,
        vel: &FaceField,
        dt: f64,
    ) -> Result<CenterField, GridError> {
        let (courant, i, k) = self.max_outflow_courant(vel, dt);
        if courant > 1.0 {
            return Err(GridError::Courant { i, k, courant });
        }
        let div = self.divergence(&self.vanleer_fluxes(q, vel, dt));
        Ok(q.zip_map(&div, |a, d| a - dt * d))
    }

    /// Advective-form update `q − Δt (∇·(v q_f) − q ∇·v)` with van Leer face values.
    ///
    /// Independent of any mass field, so identical inputs advected by
    /// identical velocities give bitwise identical results.
    pub fn advect_advective(&self, q: &CenterField, vel: &FaceField, dt: f64) -> CenterField {
        let flux_div = self.divergence(&self.vanleer_fluxes(q, vel, dt));
        let vel_div = self.divergence(vel);
        CenterField {
            values: q
                .values
                .iter()
                .zip(flux_div.values.iter().zip(&vel_div.values))
                .map(|(&a, (&f, &d))| a - dt * (f - a * d))
                .collect(),
        }
    }

    /// Advective tendencies `−(v·∇)u` and `−(v·∇)w` of a face velocity.
    ///
    /// Each component is advected on its own dual cells with the same van
    /// Leer fluxes, in the form `−∇·(V φ) + φ ∇·V` where `V` is the advecting
    /// velocity interpolated to the dual faces. Wall faces get zero tendency.
    pub fn momentum_advection(&self, vel: &FaceField, dt: f64) -> FaceField {
        let (nx, nz) = (self.nx, self.nz);
        let u = &vel.x;
        let w = &vel.z;
        let mut out = self.zero_faces();

        // u on x-faces: x-lines through cell centres, z-lines through corners
        let ucen = |f: usize, k: usize| {
            if f == 0 || f == nx + 1 {
                0.0
            } else {
                0.5 * (u[self.xf(f - 1, k)] + u[self.xf(f, k)])
            }
        };
        let wcorner = |i: usize, k: usize| {
            // w at the corner (x = i dx, z = k dz)
            if k == 0 || k == nz {
                return 0.0;
            }
            match (i > 0, i < nx) {
                (true, true) => 0.5 * (w[self.zf(i - 1, k)] + w[self.zf(i, k)]),
                (true, false) => w[self.zf(i - 1, k)],
                (false, true) => w[self.zf(i, k)],
                (false, false) => 0.0,
            }
        };
        let mut fx = vec![0.0; (nx + 2) * nz];
        for k in 0..nz {
            line_fluxes(
                nx + 1,
                |j| u[self.xf(j, k)],
                |f| ucen(f, k),
                dt / self.dx,
                |f, fl| fx[k * (nx + 2) + f] = fl,
            );
        }
        let mut fz = vec![0.0; (nx + 1) * (nz + 1)];
        for i in 0..=nx {
            line_fluxes(
                nz,
                |j| u[self.xf(i, j)],
                |f| wcorner(i, f),
                dt / self.dz,
                |f, fl| fz[f * (nx + 1) + i] = fl,
            );
        }
        for k in 0..nz {
            for i in 1..nx {
                let phi = u[self.xf(i, k)];
                let div_flux = (fx[k * (nx + 2) + i + 1] - fx[k * (nx + 2) + i]) / self.dx
                    + (fz[(k + 1) * (nx + 1) + i] - fz[k * (nx + 1) + i]) / self.dz;
                let div_v = (ucen(i + 1, k) - ucen(i, k)) / self.dx
                    + (wcorner(i, k + 1) - wcorner(i, k)) / self.dz;
                out.x[self.xf(i, k)] = -div_flux + phi * div_v;
            }
        }

        // w on z-faces: z-lines through cell centres, x-lines through corners
        let wcen = |i: usize, f: usize| {
            if f == 0 || f == nz + 1 {
                0.0
            } else {
                0.5 * (w[self.zf(i, f - 1)] + w[self.zf(i, f)])
            }
        };
        let ucorner = |i: usize, k: usize| {
            if i == 0 || i == nx {
                return 0.0;
            }
            match (k > 0, k < nz) {
                (true, true) => 0.5 * (u[self.xf(i, k - 1)] + u[self.xf(i, k)]),
                (true, false) => u[self.xf(i, k - 1)],
                (false, true) => u[self.xf(i, k)],
                (false, false) => 0.0,
            }
        };
        let mut gz = vec![0.0; nx * (nz + 2)];
        for i in 0..nx {
            line_fluxes(
                nz + 1,
                |j| w[self.zf(i, j)],
                |f| wcen(i, f),
                dt / self.dz,
                |f, fl| gz[f * nx + i] = fl,
            );
        }
        let mut gx = vec![0.0; (nx + 1) * (nz + 1)];
        for k in 0..=nz {
            line_fluxes(
                nx,
                |j| w[self.zf(j, k)],
                |f| ucorner(f, k),
                dt / self.dx,
                |f, fl| gx[k * (nx + 1) + f] = fl,
            );
        }
        for k in 1..nz {
            for i in 0..nx {
                let phi = w[self.zf(i, k)];
                let div_flux = (gz[(k + 1) * nx + i] - gz[k * nx + i]) / self.dz
                    + (gx[k * (nx + 1) + i + 1] - gx[k * (nx + 1) + i]) / self.dx;
                let div_v = (wcen(i, k + 1) - wcen(i, k)) / self.dz
                    + (ucorner(i + 1, k) - ucorner(i, k)) / self.dx;
                out.z[self.zf(i, k)] = -div_flux + phi * div_v;
            }
        }
        out
    }

    /// Per-cell kinetic energy density Σ_i ½ [N_i v_i²]_c.
    pub fn kinetic_energy_cgrid(&self, mass: &[FaceField], vel: &[FaceField]) -> CenterField {
        let mut out = self.constant_center(0.0);
        for (n, v) in mass.iter().zip(vel) {
            let e = n.zip_map(v, |m, s| 0.5 * m * s * s);
            let (ex, ez) = self.to_centers(&e);
            for c in 0..self.n_cells() {
                out.values[c] += ex.values[c] + ez.values[c];
            }
        }
        out
    }

    /// Face ν coefficients `Δt [S_ij η_i^q]_f / [η_j^r]_f` for method 1.
    #[allow(clippy::too_many_arguments)]
    pub fn face_nu(
        &self,
        eta_m: [&CenterField; 2],
        eta_np1: [&CenterField; 2],
        s01: &CenterField,
        s10: &CenterField,
        dt: f64,
        cfg: &SchemeConfig,
        mode: Mode,
    ) -> Result<[FaceField; 2], GridError> {
        let (q, r) = match *cfg {
            SchemeConfig::Method1 { q, r, .. } => (q, r),
            _ => return Err(KernelError::WrongMethod(*cfg, crate::kernels::Method::One).into()),
        };
        let pick = |l: Level, i: usize| match l {
            Level::Mid => eta_m[i],
            Level::New => eta_np1[i],
        };
        let num01 = self.to_faces(&s01.zip_map(pick(q, 0), |s, e| s * e));
        let num10 = self.to_faces(&s10.zip_map(pick(q, 1), |s, e| s * e));
        let den0 = self.to_faces(pick(r, 0));
        let den1 = self.to_faces(pick(r, 1));
        let mut nu01 = self.zero_faces();
        let mut nu10 = self.zero_faces();
        let each =
            |n01: &[f64], n10: &[f64], d0: &[f64], d1: &[f64], o01: &mut [f64], o10: &mut [f64]| {
                for f in 0..n01.len() {
                    let x01 = mass_ratio(dt * n01[f], d1[f]);
                    let x10 = mass_ratio(dt * n10[f], d0[f]);
                    let (a, b) = nu_from_ratios(x01, x10, cfg.alpha_a(), mode)?;
                    o01[f] = a;
                    o10[f] = b;
                }
                Ok::<(), KernelError>(())
            };
        each(
            &num01.x,
            &num10.x,
            &den0.x,
            &den1.x,
            &mut nu01.x,
            &mut nu10.x,
        )?;
        each(
            &num01.z,
            &num10.z,
            &den0.z,
            &den1.z,
            &mut nu01.z,
            &mut nu10.z,
        )?;
        Ok([nu01, nu10])
    }

    /// Face λ and 1 − λ from face-interpolated rates `[S_ij]_f`.
    pub fn face_lambda(
        &self,
        s01: &CenterField,
        s10: &CenterField,
        dt: f64,
        alpha: Treatment,
    ) -> FaceLambda {
        let a = alpha.alpha();
        let f01 = self.to_faces(s01);
        let f10 = self.to_faces(s10);
        FaceLambda {
            lambda: [
                f01.zip_map(&f10, |x, y| lambda_coeff(x, y, dt, a)),
                f10.zip_map(&f01, |x, y| lambda_coeff(x, y, dt, a)),
            ],
            keep: [
                f01.zip_map(&f10, |x, y| lambda_complement(x, y, dt, a)),
                f10.zip_map(&f01, |x, y| lambda_complement(x, y, dt, a)),
            ],
        }
    }
}

/// Face transfer fractions out of each fluid and their complements.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceLambda {
    pub lambda: [FaceField; 2],
    pub keep: [FaceField; 2],
}

fn zip2(a: &FaceField, b: &FaceField, f: impl Fn(usize, bool) -> [f64; 2]) -> [FaceField; 2] {
    let mut o0 = a.clone();
    let mut o1 = b.clone();
    for j in 0..a.x.len() {
        let [p, q] = f(j, true);
        o0.x[j] = p;
        o1.x[j] = q;
    }
    for j in 0..a.z.len() {
        let [p, q] = f(j, false);
        o0.z[j] = p;
        o1.z[j] = q;
    }
    [o0, o1]
}

fn at(f: &FaceField, j: usize, x: bool) -> f64 {
    if x {
        f.x[j]
    } else {
        f.z[j]
    }
}

/// Method-1 face relabel `w_0 + [ν_10]_f (w_1 − w_0)` and symmetrically.
pub fn face_transfer_method1(w: [&FaceField; 2], nu: [&FaceField; 2]) -> [FaceField; 2] {
    zip2(w[0], w[1], |j, x| {
        mix_property(
            [at(w[0], j, x), at(w[1], j, x)],
            at(nu[0], j, x),
            at(nu[1], j, x),
        )
    })
}

/// Method-2 face transfer on face masses `[η^m]_f`.
///
/// Returns the relabelled velocities and the face masses N^{n+1}.
pub fn face_transfer_method2(
    w: [&FaceField; 2],
    eta_faces: [&FaceField; 2],
    lambda_c: &FaceLambda,
    lambda_a: &FaceLambda,
    consistent: bool,
) -> ([FaceField; 2], [FaceField; 2]) {
    let mass = zip2(eta_faces[0], eta_faces[1], |j, x| {
        transfer_mass(
            [at(eta_faces[0], j, x), at(eta_faces[1], j, x)],
            [at(&lambda_c.lambda[0], j, x), at(&lambda_c.lambda[1], j, x)],
            [at(&lambda_c.keep[0], j, x), at(&lambda_c.keep[1], j, x)],
        )
    });
    let vel = zip2(w[0], w[1], |j, x| {
        let eta = [at(eta_faces[0], j, x), at(eta_faces[1], j, x)];
        let phi = [at(w[0], j, x), at(w[1], j, x)];
        let la = [at(&lambda_a.lambda[0], j, x), at(&lambda_a.lambda[1], j, x)];
        let lc = [at(&lambda_c.lambda[0], j, x), at(&lambda_c.lambda[1], j, x)];
        if la == [0.0, 0.0] && lc == [0.0, 0.0] {
            return phi;
        }
        let keep = [at(&lambda_a.keep[0], j, x), at(&lambda_a.keep[1], j, x)];
        let n = [at(&mass[0], j, x), at(&mass[1], j, x)];
        method2_property(eta, phi, n, keep, la, consistent)
    });
    (vel, mass)
}

/// Which stagger a dumped field lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stagger {
    Center,
    XFace,
    ZFace,
}

impl Grid2D {
    /// Field dump as CSV text: a `# quantity=<tag> time=<t>` line, a column
    /// header, then one row per point.
    pub fn dump_text(&self, tag: &str, time: f64, stagger: Stagger, values: &[f64]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# quantity={tag} time={time}");
        s.push_str("i,k,x,z,value\n");
        let (ni, nk, xs, zs): (usize, usize, f64, f64) = match stagger {
            Stagger::Center => (self.nx, self.nz, 0.5, 0.5),
            Stagger::XFace => (self.nx + 1, self.nz, 0.0, 0.5),
            Stagger::ZFace => (self.nx, self.nz + 1, 0.5, 0.0),
        };
        for k in 0..nk {
            for i in 0..ni {
                let x = (i as f64 + xs) * self.dx;
                let z = (k as f64 + zs) * self.dz;
                let _ = writeln!(s, "{i},{k},{x},{z},{:e}", values[k * ni + i]);
            }
        }
        s
    }

    pub fn write_dump(
        &self,
        path: &Path,
        tag: &str,
        time: f64,
        stagger: Stagger,
        values: &[f64],
    ) -> Result<(), GridError> {
        fs::write(path, self.dump_text(tag, time, stagger, values)).map_err(|source| {
            GridError::Io {
                path: path.display().to_string(),
                source,
            }
        })
    }
}
