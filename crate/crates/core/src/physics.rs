//! Equation of state and tensor artificial viscosity.

use crate::error::{HydroError, Result};
use crate::linalg::{self, Mat3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdealGas {
    pub gamma: f64,
}

impl IdealGas {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 1.0) || !gamma.is_finite() {
            return Err(HydroError::InvalidInput(format!("gamma = {gamma} must be > 1")));
        }
        Ok(Self { gamma })
    }

    /// `p = (gamma - 1) rho e`, with negative `e` treated as 0.
    pub fn pressure(&self, rho: f64, e: f64) -> Result<f64> {
        if !(rho > 0.0) {
            return Err(HydroError::InvalidInput(format!(
                "invalid thermodynamic state: density {rho}"
            )));
        }
        Ok((self.gamma - 1.0) * rho * e.max(0.0))
    }

    /// `c_s = sqrt(gamma (gamma - 1) e)`, with negative `e` treated as 0.
    pub fn sound_speed(&self, e: f64) -> f64 {
        (self.gamma * (self.gamma - 1.0) * e.max(0.0)).sqrt()
    }
}

impl Default for IdealGas {
    fn default() -> Self {
        Self { gamma: 1.4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViscositySettings {
    /// Linear coefficient.
    pub q1: f64,
    /// Quadratic coefficient.
    pub q2: f64,
    pub enabled: bool,
}

impl Default for ViscositySettings {
    fn default() -> Self {
        Self {
            q1: 0.5,
            q2: 2.0,
            enabled: true,
        }
    }
}

impl ViscositySettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.q1 >= 0.0 && self.q2 >= 0.0) || !self.q1.is_finite() || !self.q2.is_finite() {
            return Err(HydroError::InvalidInput(format!(
                "viscosity coefficients must be >= 0 (q1 = {}, q2 = {})",
                self.q1, self.q2
            )));
        }
        Ok(())
    }
}

/// `(grad v + grad v^T) / 2`.
pub fn sym_velocity_gradient(d: usize, grad_v: &Mat3) -> Mat3 {
    let mut eps = linalg::ZERO;
    for i in 0..d {
        for j in 0..d {
            eps[i][j] = 0.5 * (grad_v[i][j] + grad_v[j][i]);
        }
    }
    eps
}

/// 1 in compression (`delta_s < 0`), 0 otherwise.
pub fn compression_switch(delta_s: f64) -> f64 {
    if delta_s < 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `|div v| / |grad v|_F`, clamped to `[0, 1]`; 0 for a vanishing gradient.
pub fn vorticity_switch(d: usize, grad_v: &Mat3) -> f64 {
    let norm = linalg::frobenius(d, grad_v);
    if norm > 0.0 {
        (linalg::trace(d, grad_v).abs() / norm).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Viscosity {
    pub mu: f64,
    pub sigma: Mat3,
    /// Most negative eigenvalue of the strain rate.
    pub delta_s: f64,
    /// Length scale in the compression direction.
    pub l_s: f64,
}

impl Viscosity {
    fn zero() -> Self {
        Self {
            mu: 0.0,
            sigma: linalg::ZERO,
            delta_s: 0.0,
            l_s: 0.0,
        }
    }
}

/// Tensor artificial viscosity `sigma_art = mu eps` at a point.
///
/// `def_grad` is the deformation gradient from the initial to the current
/// configuration and `l0` the initial length scale `h0 / k` of the element.
/// The compression direction `s` is the eigenvector of the smallest strain
/// rate eigenvalue and the directional length is `l0 / |def_grad^{-1} s|`.
pub fn viscosity_coefficient(
    d: usize,
    rho: f64,
    c_s: f64,
    grad_v: &Mat3,
    def_grad: &Mat3,
    l0: f64,
    settings: &ViscositySettings,
) -> Viscosity {
    if !settings.enabled {
        return Viscosity::zero();
    }
    let eps = sym_velocity_gradient(d, grad_v);
    if linalg::frobenius(d, &eps) == 0.0 {
        return Viscosity::zero();
    }
    let (vals, vecs) = linalg::sym_eigen(d, &eps);
    let delta_s = vals[0];
    let mut s = [0.0; 3];
    for i in 0..d {
        s[i] = vecs[i][0];
    }
    let l_s = match linalg::inverse(d, def_grad) {
        Some(inv) => {
            let back = linalg::norm(d, &linalg::matvec(d, &inv, &s));
            if back > 0.0 {
                l0 / back
            } else {
                l0
            }
        }
        None => l0,
    };
    let psi0 = vorticity_switch(d, grad_v);
    let psi1 = compression_switch(delta_s);
    let mu = rho * (settings.q2 * l_s * l_s * delta_s.min(0.0).abs() + settings.q1 * psi0 * psi1 * l_s * c_s);
    let mut sigma = linalg::ZERO;
    for i in 0..d {
        for j in 0..d {
            sigma[i][j] = mu * eps[i][j];
        }
    }
    Viscosity {
        mu,
        sigma,
        delta_s,
        l_s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn pressure_examples() {
        let g = IdealGas::new(1.4).unwrap();
        assert_abs_diff_eq!(g.pressure(1.0, 1.0).unwrap(), 0.4, epsilon = 1e-15);
        assert_eq!(g.pressure(1.0, 0.0).unwrap(), 0.0);
        assert_eq!(g.pressure(1.0, -3.0).unwrap(), 0.0);
        let g = IdealGas::new(5.0 / 3.0).unwrap();
        assert_abs_diff_eq!(g.pressure(2.0, 3.0).unwrap(), 4.0, epsilon = 1e-14);
        assert!(g.pressure(0.0, 1.0).is_err());
        assert!(IdealGas::new(1.0).is_err());
    }

    #[test]
    fn sound_speed_examples() {
        let g = IdealGas::new(1.4).unwrap();
        assert_abs_diff_eq!(g.sound_speed(1.0), 0.56f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(g.sound_speed(1.0), 0.748331, epsilon = 1e-6);
        assert_eq!(g.sound_speed(0.0), 0.0);
        assert_abs_diff_eq!(g.sound_speed(0.25), 0.3741657, epsilon = 1e-7);
    }

    #[test]
    fn strain_rate_examples() {
        let rot = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0; 3]];
        assert_eq!(sym_velocity_gradient(2, &rot), linalg::ZERO);
        let id = linalg::identity(2);
        assert_eq!(sym_velocity_gradient(2, &id), id);
        let g = [[1.0, 2.0, 0.0], [0.0, 3.0, 0.0], [0.0; 3]];
        assert_eq!(sym_velocity_gradient(2, &g), [[1.0, 1.0, 0.0], [1.0, 3.0, 0.0], [0.0; 3]]);
    }

    #[test]
    fn switches() {
        assert_eq!(compression_switch(-0.5), 1.0);
        assert_eq!(compression_switch(0.1), 0.0);
        assert_eq!(compression_switch(0.0), 0.0);
        assert_eq!(vorticity_switch(2, &linalg::ZERO), 0.0);
        assert_eq!(vorticity_switch(2, &linalg::identity(2)), 1.0);
    }

    #[test]
    fn viscosity_examples() {
        let set = ViscositySettings::default();
        let id = linalg::identity(2);
        let v = viscosity_coefficient(2, 1.0, 1.0, &linalg::ZERO, &id, 0.1, &set);
        assert_eq!(v.mu, 0.0);
        assert_eq!(v.sigma, linalg::ZERO);
        // Pure expansion.
        let v = viscosity_coefficient(2, 1.0, 1.0, &id, &id, 0.1, &set);
        assert_eq!(v.mu, 0.0);
        // Pure shear v = (y, 0): no linear term, quadratic term from the
        // compressive principal strain rate -1/2.
        let shear = [[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0; 3]];
        let v = viscosity_coefficient(2, 1.0, 1.0, &shear, &id, 0.1, &set);
        assert_abs_diff_eq!(v.delta_s, -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v.mu, 2.0 * 0.01 * 0.5, epsilon = 1e-15);
        // Uniaxial compression along x on a mesh stretched by 2 in x.
        let comp = [[-1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0; 3]];
        let stretch = [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0; 3]];
        let v = viscosity_coefficient(2, 3.0, 0.5, &comp, &stretch, 0.1, &set);
        assert_abs_diff_eq!(v.l_s, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(v.mu, 3.0 * (2.0 * 0.04 * 1.0 + 0.5 * 1.0 * 0.2 * 0.5), epsilon = 1e-14);
        let off = ViscositySettings {
            enabled: false,
            ..set
        };
        assert_eq!(viscosity_coefficient(2, 3.0, 0.5, &comp, &stretch, 0.1, &off).mu, 0.0);
    }

    fn mat(d: usize, vals: &[f64]) -> Mat3 {
        let mut m = linalg::ZERO;
        for i in 0..d {
            for j in 0..d {
                m[i][j] = vals[i * 3 + j];
            }
        }
        m
    }

    proptest! {
        #[test]
        fn viscosity_is_symmetric_and_dissipative(
            d in 2usize..=3,
            g in proptest::collection::vec(-5.0f64..5.0, 9),
            f in proptest::collection::vec(-0.3f64..0.3, 9),
            rho in 0.1f64..10.0,
            cs in 0.0f64..3.0,
        ) {
            let grad = mat(d, &g);
            let mut def = mat(d, &f);
            for i in 0..d {
                def[i][i] += 1.0;
            }
            let v = viscosity_coefficient(d, rho, cs, &grad, &def, 0.05, &ViscositySettings::default());
            prop_assert!(v.mu >= 0.0);
            let eps = sym_velocity_gradient(d, &grad);
            prop_assert!(linalg::ddot(d, &v.sigma, &eps) >= 0.0);
            for i in 0..d {
                for j in 0..d {
                    prop_assert!((v.sigma[i][j] - v.sigma[j][i]).abs() < 1e-14);
                }
            }
        }

        #[test]
        fn rigid_rotation_has_no_viscosity(w in -10.0f64..10.0) {
            let grad = [[0.0, -w, 0.0], [w, 0.0, 0.0], [0.0; 3]];
            let v = viscosity_coefficient(2, 1.0, 1.0, &grad, &linalg::identity(2), 0.1, &ViscositySettings::default());
            prop_assert_eq!(v.mu, 0.0);
        }
    }
}
