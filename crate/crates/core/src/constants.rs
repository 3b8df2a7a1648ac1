//! Dry-air thermodynamic constants shared by the kernels and the solver.

/// Physical constants for a dry ideal-gas atmosphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    /// Heat capacity at constant pressure (J kg⁻¹ K⁻¹).
    pub cp: f64,
    /// Gas constant of dry air (J kg⁻¹ K⁻¹).
    pub r: f64,
    /// Gravitational acceleration (m s⁻²).
    pub g: f64,
    /// Reference pressure for the Exner function (Pa).
    pub p0: f64,
}

impl Constants {
    pub const DRY_AIR: Constants = Constants {
        cp: 1004.0,
        r: 287.0,
        g: 9.81,
        p0: 1.0e5,
    };

    pub fn kappa(&self) -> f64 {
        self.r / self.cp
    }

    pub fn cv(&self) -> f64 {
        self.cp - self.r
    }

    pub fn gamma(&self) -> f64 {
        self.cp / self.cv()
    }

    /// Exponent (1-κ)/κ in `p0 π^((1-κ)/κ) = R Σ η θ`.
    pub fn eos_exponent(&self) -> f64 {
        (1.0 - self.kappa()) / self.kappa()
    }

    /// Σηθ implied by an Exner pressure through the equation of state.
    pub fn theta_mass_from_exner(&self, pi: f64) -> f64 {
        self.p0 / self.r * pi.powf(self.eos_exponent())
    }

    /// Exner pressure implied by Σηθ through the equation of state.
    pub fn exner_from_theta_mass(&self, theta_mass: f64) -> f64 {
        (self.r * theta_mass / self.p0).powf(1.0 / self.eos_exponent())
    }
}

impl Default for Constants {
    fn default() -> Self {
        Self::DRY_AIR
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_values() {
        let c = Constants::DRY_AIR;
        assert!((c.kappa() - 287.0 / 1004.0).abs() < 1e-15);
        assert!((c.cv() - 717.0).abs() < 1e-12);
        assert!((c.gamma() - 1004.0 / 717.0).abs() < 1e-15);
    }

    #[test]
    fn eos_round_trip() {
        let c = Constants::DRY_AIR;
        for &pi in &[0.7, 0.9, 1.0, 1.02] {
            let back = c.exner_from_theta_mass(c.theta_mass_from_exner(pi));
            assert!((back - pi).abs() < 1e-14);
        }
        // surface air at 300 K and 1000 hPa
        let rho_theta = c.theta_mass_from_exner(1.0);
        assert!((rho_theta / 300.0 - 1.0e5 / (287.0 * 300.0)).abs() < 1e-12);
    }
}
