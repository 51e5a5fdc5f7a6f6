//! Vehicle and powertrain parameter set: point mass, aerodynamics, final
//! drive, electric machine, inverter, battery, and auxiliary load.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// All scalar parameters of the longitudinal/powertrain model, SI units.
///
/// `q_m` is the 3×3 symmetric PSD electric-machine loss matrix in the basis
/// `[1/√v, √v, F_m/√v]` (equivalently `[1, v, F_m]` for the force-power form).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Total vehicle mass [kg].
    pub m_tot: f64,
    /// Air drag coefficient [-].
    pub c_d: f64,
    /// Aerodynamic lift (downforce) coefficient [-].
    pub c_l: f64,
    /// Frontal area [m²].
    pub a_f: f64,
    /// Air density [kg/m³].
    pub rho: f64,
    /// Rolling resistance coefficient [-].
    pub c_r: f64,
    /// Gravitational acceleration [m/s²].
    pub g: f64,
    /// Tire friction coefficient [-].
    pub mu: f64,
    /// Final drive efficiency ∈ (0, 1].
    pub eta_fd: f64,
    /// Final drive ratio [-].
    pub gamma_fd: f64,
    /// Rear wheel radius [m].
    pub r_w: f64,
    /// Maximum EM torque [Nm].
    pub t_m_max: f64,
    /// Maximum EM power [W].
    pub p_m_max: f64,
    /// EM loss matrix, row-major 3×3.
    pub q_m: [[f64; 3]; 3],
    /// Inverter quadratic loss coefficient [1/W].
    pub alpha: f64,
    /// Battery short-circuit power V_oc²/R_0 [W].
    pub p_sc: f64,
    /// Constant auxiliary power draw [W].
    pub p_aux: f64,
    /// Battery energy at the lower state-of-energy bound [J].
    pub e_b_min: f64,
    /// Battery energy at the upper state-of-energy bound [J].
    pub e_b_max: f64,
    /// Near-standstill velocity enforced at stint start/end [m/s].
    pub v_min: f64,
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("m_tot", self.m_tot),
            ("a_f", self.a_f),
            ("rho", self.rho),
            ("g", self.g),
            ("mu", self.mu),
            ("gamma_fd", self.gamma_fd),
            ("r_w", self.r_w),
            ("t_m_max", self.t_m_max),
            ("p_m_max", self.p_m_max),
            ("p_sc", self.p_sc),
            ("v_min", self.v_min),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Validation(format!(
                    "{name} must be strictly positive and finite, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("c_d", self.c_d),
            ("c_l", self.c_l),
            ("c_r", self.c_r),
            ("alpha", self.alpha),
            ("p_aux", self.p_aux),
            ("e_b_min", self.e_b_min),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Validation(format!(
                    "{name} must be nonnegative and finite, got {v}"
                )));
            }
        }
        if !(self.eta_fd > 0.0 && self.eta_fd <= 1.0) {
            return Err(Error::Validation(format!(
                "eta_fd must lie in (0, 1], got {}",
                self.eta_fd
            )));
        }
        if !(self.e_b_max > self.e_b_min) {
            return Err(Error::Validation(format!(
                "e_b_max ({}) must exceed e_b_min ({})",
                self.e_b_max, self.e_b_min
            )));
        }
        check_psd("q_m", &self.q_m)?;
        Ok(())
    }

    /// Torque-region force bound T_m_max·γ_fd/r_w [N].
    pub fn f_torque_max(&self) -> f64 {
        self.t_m_max * self.gamma_fd / self.r_w
    }

    /// Coefficient of E_kin in the drag force (air drag + downforce-induced
    /// rolling resistance): (c_d + c_r·c_l)·A_f·ρ/m_tot [1/m].
    pub fn drag_per_ekin(&self) -> f64 {
        (self.c_d + self.c_r * self.c_l) * self.a_f * self.rho / self.m_tot
    }

    /// Coefficient of E_kin in the downforce: c_l·A_f·ρ/m_tot [1/m].
    pub fn downforce_per_ekin(&self) -> f64 {
        self.c_l * self.a_f * self.rho / self.m_tot
    }

    /// E_kin-independent drag at inclination theta [N].
    pub fn drag_const(&self, theta: f64) -> f64 {
        self.m_tot * self.g * (self.c_r * theta.cos() + theta.sin())
    }

    /// Kinetic energy at speed v [J].
    pub fn e_kin_of(&self, v: f64) -> f64 {
        0.5 * self.m_tot * v * v
    }

    pub fn q_m_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.q_m[r][c])
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path)?;
        let veh: VehicleParams = serde_json::from_str(&text)?;
        veh.validate()?;
        Ok(veh)
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Symmetry + near-PSD check for a 3×3 coefficient matrix. Tolerances scale
/// with the matrix norm so large-entry loss matrices are not rejected for
/// rounding noise.
pub(crate) fn check_psd(name: &str, q: &[[f64; 3]; 3]) -> Result<()> {
    let m = Matrix3::from_fn(|r, c| q[r][c]);
    let scale = m.norm().max(1.0);
    for r in 0..3 {
        for c in 0..r {
            if (q[r][c] - q[c][r]).abs() > 1e-9 * scale {
                return Err(Error::Validation(format!(
                    "{name} not symmetric at ({r},{c}): {} vs {}",
                    q[r][c], q[c][r]
                )));
            }
        }
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    if min_eig < -1e-10 * scale {
        return Err(Error::Validation(format!(
            "{name} not positive semidefinite: min eigenvalue {min_eig:.3e}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn preset_vehicle_validates() {
        presets::desk_vehicle().validate().unwrap();
    }

    #[test]
    fn rejects_indefinite_loss_matrix() {
        let mut veh = presets::desk_vehicle();
        veh.q_m = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(veh.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn rejects_nonpositive_mass_and_bad_eta() {
        let mut veh = presets::desk_vehicle();
        veh.m_tot = 0.0;
        assert!(veh.validate().is_err());
        let mut veh = presets::desk_vehicle();
        veh.eta_fd = 1.2;
        assert!(veh.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("veh.json");
        let veh = presets::desk_vehicle();
        veh.to_json_file(&path).unwrap();
        let back = VehicleParams::from_json_file(&path).unwrap();
        assert_eq!(veh.m_tot, back.m_tot);
        assert_eq!(veh.q_m, back.q_m);
        assert_eq!(veh.e_b_max, back.e_b_max);
    }
}
