//! Stint-time surface: sweeps the stint solver over a (lap count, charge
//! time) grid and fits a positive-semidefinite quadratic in the basis
//! x = [1/√t_c, √t_c, N/√t_c]. In that basis the fitted stint time obeys
//!
//! t_stint · t_c ≥ [1, t_c, N] · Q · [1, t_c, N]ᵀ,
//!
//! which is a hyperbolic constraint, so the race level can carry the whole
//! surface into its own cone program without further approximation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::powertrain::{
    charge_energy, fit_psd_quadratic, BasisId, ChargeModel, PsdQuadraticModel,
};
use crate::stint::{solve_stint, StintSpec};
use crate::track::TrackProfile;
use crate::vehicle::VehicleParams;

/// Grid of stint problems to solve: every lap count crossed with every
/// charge time. Charge times map to start-of-stint battery energy through
/// the charge model.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub track: TrackProfile,
    pub vehicle: VehicleParams,
    pub charge: ChargeModel,
    pub n_laps_grid: Vec<usize>,
    pub t_charge_grid: Vec<f64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.track.validate()?;
        self.vehicle.validate()?;
        self.charge.validate()?;
        if self.n_laps_grid.is_empty() || self.t_charge_grid.is_empty() {
            return Err(Error::Config("sweep grids must be non-empty".into()));
        }
        if self.n_laps_grid[0] == 0 {
            return Err(Error::Config("lap counts must be ≥ 1".into()));
        }
        if !self.n_laps_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("lap grid must be strictly increasing".into()));
        }
        if !self.t_charge_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("charge-time grid must be strictly increasing".into()));
        }
        let (lo, hi) = (self.t_charge_grid[0], *self.t_charge_grid.last().unwrap());
        if !(lo > 0.0 && hi <= self.charge.t_charge_max * (1.0 + 1e-12)) {
            return Err(Error::Config(format!(
                "charge times must lie in (0, {}], got [{lo}, {hi}]",
                self.charge.t_charge_max
            )));
        }
        let v = &self.vehicle;
        if self.charge.e_b_min < v.e_b_min - 1e-9 * v.e_b_max
            || self.charge.e_b_max > v.e_b_max * (1.0 + 1e-12)
        {
            return Err(Error::Config(format!(
                "charge model window [{}, {}] exceeds the vehicle battery window [{}, {}]",
                self.charge.e_b_min, self.charge.e_b_max, v.e_b_min, v.e_b_max
            )));
        }
        Ok(())
    }
}

/// One sweep cell. Infeasible cells keep `t_stint_s = NaN` and are excluded
/// from the fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StintSample {
    pub n_laps: usize,
    pub t_charge_s: f64,
    pub t_stint_s: f64,
    pub feasible: bool,
    pub energy_limited: bool,
}

/// Solves every grid cell (in parallel; output order is the deterministic
/// row-major grid order, lap counts outer). Individual infeasible cells are
/// recorded, not fatal — but a sweep more than half infeasible points at a
/// misconfigured grid and errors out.
pub fn sweep_stints(spec: &SweepSpec) -> Result<Vec<StintSample>> {
    spec.validate()?;
    let mut cells = Vec::with_capacity(spec.n_laps_grid.len() * spec.t_charge_grid.len());
    for &n in &spec.n_laps_grid {
        for &tc in &spec.t_charge_grid {
            cells.push((n, tc));
        }
    }
    let samples: Vec<StintSample> = cells
        .par_iter()
        .map(|&(n_laps, t_charge_s)| {
            let e_b0 = charge_energy(&spec.charge, t_charge_s)?;
            let stint = StintSpec {
                track: spec.track.clone(),
                vehicle: spec.vehicle.clone(),
                n_laps,
                e_b0,
            };
            match solve_stint(&stint) {
                Ok(sol) => Ok(StintSample {
                    n_laps,
                    t_charge_s,
                    t_stint_s: sol.t_stint_s,
                    feasible: true,
                    energy_limited: sol.energy_limited,
                }),
                Err(Error::Infeasible(_)) => Ok(StintSample {
                    n_laps,
                    t_charge_s,
                    t_stint_s: f64::NAN,
                    feasible: false,
                    energy_limited: false,
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let infeasible = samples.iter().filter(|s| !s.feasible).count();
    if 2 * infeasible > samples.len() {
        return Err(Error::Config(format!(
            "{infeasible} of {} sweep cells are infeasible; the grid reaches far beyond \
             the car's energy envelope — shrink the lap counts or extend the charge times",
            samples.len()
        )));
    }
    Ok(samples)
}

/// Basis vector of the stint-time surface at a grid point.
pub fn surface_basis(n_laps: f64, t_charge_s: f64) -> [f64; 3] {
    debug_assert!(t_charge_s > 0.0);
    let r = t_charge_s.sqrt();
    [1.0 / r, r, n_laps / r]
}

/// Fitted stint-time surface with its validity box (the convex hull of the
/// feasible sweep cells in (N, t_c)).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StintTimeSurface {
    pub model: PsdQuadraticModel,
    pub n_laps_range: [f64; 2],
    pub t_charge_range: [f64; 2],
}

impl StintTimeSurface {
    /// Predicted stint time [s] at a point inside the validity box.
    pub fn eval(&self, n_laps: f64, t_charge_s: f64) -> Result<f64> {
        let tol_n = 1e-9 * self.n_laps_range[1].max(1.0);
        let tol_t = 1e-9 * self.t_charge_range[1];
        if n_laps < self.n_laps_range[0] - tol_n || n_laps > self.n_laps_range[1] + tol_n {
            return Err(Error::Domain(format!(
                "N = {n_laps} outside the fitted lap range [{}, {}]",
                self.n_laps_range[0], self.n_laps_range[1]
            )));
        }
        if t_charge_s < self.t_charge_range[0] - tol_t
            || t_charge_s > self.t_charge_range[1] + tol_t
        {
            return Err(Error::Domain(format!(
                "t_charge = {t_charge_s} outside the fitted range [{}, {}]",
                self.t_charge_range[0], self.t_charge_range[1]
            )));
        }
        Ok(self.model.eval(surface_basis(n_laps, t_charge_s)))
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let surface: StintTimeSurface = serde_json::from_str(&text)?;
        surface.model.validate()?;
        Ok(surface)
    }
}

/// Fits the PSD quadratic surface to the feasible cells of a sweep.
pub fn fit_stint_surface(samples: &[StintSample]) -> Result<StintTimeSurface> {
    let feasible: Vec<&StintSample> = samples.iter().filter(|s| s.feasible).collect();
    if feasible.len() < 6 {
        return Err(Error::Config(format!(
            "surface fit needs at least 6 feasible sweep cells, got {}",
            feasible.len()
        )));
    }
    let data: Vec<([f64; 3], f64)> = feasible
        .iter()
        .map(|s| (surface_basis(s.n_laps as f64, s.t_charge_s), s.t_stint_s))
        .collect();
    let model = fit_psd_quadratic(&data, BasisId::StintSurface)?;
    let fold = |init: f64, f: fn(f64, f64) -> f64, vals: &mut dyn Iterator<Item = f64>| {
        vals.fold(init, f)
    };
    let n_vals = || feasible.iter().map(|s| s.n_laps as f64);
    let t_vals = || feasible.iter().map(|s| s.t_charge_s);
    Ok(StintTimeSurface {
        model,
        n_laps_range: [
            fold(f64::INFINITY, f64::min, &mut n_vals()),
            fold(f64::NEG_INFINITY, f64::max, &mut n_vals()),
        ],
        t_charge_range: [
            fold(f64::INFINITY, f64::min, &mut t_vals()),
            fold(f64::NEG_INFINITY, f64::max, &mut t_vals()),
        ],
    })
}

/// Writes sweep samples as CSV with columns
/// `N_laps,t_charge_s,t_stint_s,feasible,energy_limited`.
pub fn write_samples_csv(path: impl AsRef<Path>, samples: &[StintSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["N_laps", "t_charge_s", "t_stint_s", "feasible", "energy_limited"])?;
    for s in samples {
        w.write_record([
            s.n_laps.to_string(),
            s.t_charge_s.to_string(),
            s.t_stint_s.to_string(),
            s.feasible.to_string(),
            s.energy_limited.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv(path: impl AsRef<Path>) -> Result<Vec<StintSample>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let expected = ["N_laps", "t_charge_s", "t_stint_s", "feasible", "energy_limited"];
    let headers = r.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if headers != expected.as_slice() {
        return Err(parse_err(1, format!("expected header {expected:?}, got {headers:?}")));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let field = |k: usize| -> Result<&str> {
            rec.get(k)
                .ok_or_else(|| parse_err(line, format!("missing column {}", expected[k])))
        };
        out.push(StintSample {
            n_laps: field(0)?
                .parse()
                .map_err(|e| parse_err(line, format!("bad N_laps: {e}")))?,
            t_charge_s: field(1)?
                .parse()
                .map_err(|e| parse_err(line, format!("bad t_charge_s: {e}")))?,
            t_stint_s: field(2)?
                .parse()
                .map_err(|e| parse_err(line, format!("bad t_stint_s: {e}")))?,
            feasible: field(3)?
                .parse()
                .map_err(|e| parse_err(line, format!("bad feasible: {e}")))?,
            energy_limited: field(4)?
                .parse()
                .map_err(|e| parse_err(line, format!("bad energy_limited: {e}")))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::powertrain::random_psd;
    use crate::presets::{toy_charge_model, toy_circuit, toy_vehicle};
    use crate::track::synth_track;

    fn toy_sweep() -> SweepSpec {
        SweepSpec {
            track: synth_track(&toy_circuit(), 10.0).unwrap(),
            vehicle: toy_vehicle(),
            charge: toy_charge_model(),
            // Three lap levels: a quadratic in N is rank-deficient on fewer.
            n_laps_grid: vec![1, 2, 3],
            t_charge_grid: vec![30.0, 45.0, 60.0],
        }
    }

    #[test]
    fn sweep_is_feasible_and_ordered_on_the_toy_circuit() {
        let spec = toy_sweep();
        let samples = sweep_stints(&spec).unwrap();
        assert_eq!(samples.len(), 9);
        // Row-major order: lap counts outer, charge times inner.
        let key: Vec<(usize, f64)> = samples.iter().map(|s| (s.n_laps, s.t_charge_s)).collect();
        assert_eq!(key[0], (1, 30.0));
        assert_eq!(key[3], (2, 30.0));
        assert_eq!(key[8], (3, 60.0));
        assert!(samples.iter().all(|s| s.feasible));
        // More laps on the same charge take longer.
        for j in 0..3 {
            assert!(samples[3 + j].t_stint_s > samples[j].t_stint_s);
            assert!(samples[6 + j].t_stint_s > samples[3 + j].t_stint_s);
        }
        // More charge never hurts for a fixed lap count.
        for row in samples.chunks(3) {
            for w in row.windows(2) {
                assert!(w[1].t_stint_s <= w[0].t_stint_s + 1e-6);
            }
        }
    }

    #[test]
    fn fitted_surface_tracks_the_sweep() {
        let spec = toy_sweep();
        let samples = sweep_stints(&spec).unwrap();
        let surface = fit_stint_surface(&samples).unwrap();
        assert_eq!(surface.n_laps_range, [1.0, 3.0]);
        assert_eq!(surface.t_charge_range, [30.0, 60.0]);
        assert!(
            surface.model.fit_rmse_normalized < 0.05,
            "normalized fit rmse {}",
            surface.model.fit_rmse_normalized
        );
        for s in &samples {
            let pred = surface.eval(s.n_laps as f64, s.t_charge_s).unwrap();
            let rel = (pred - s.t_stint_s).abs() / s.t_stint_s;
            // Quadratic behaviour is only promised while energy is binding;
            // battery-saturated cells flatten in t_c and fit loosely.
            let bar = if s.energy_limited { 0.05 } else { 0.2 };
            assert!(
                rel < bar,
                "prediction off by {rel:.3} at {:?}",
                (s.n_laps, s.t_charge_s)
            );
        }
        assert!(surface.eval(5.0, 40.0).is_err());
        assert!(surface.eval(1.5, 500.0).is_err());
        assert!(surface.eval(2.0, 1.0).is_err());
    }

    #[test]
    fn fit_recovers_an_exactly_quadratic_sheet() {
        let q = random_psd(7, (0.5, 4.0));
        let model = PsdQuadraticModel {
            q,
            basis_id: BasisId::StintSurface,
            fit_rmse_normalized: 0.0,
        };
        let mut samples = Vec::new();
        for n in [2usize, 5, 8, 11] {
            for tc in [30.0, 90.0, 150.0, 210.0, 270.0] {
                samples.push(StintSample {
                    n_laps: n,
                    t_charge_s: tc,
                    t_stint_s: model.eval(surface_basis(n as f64, tc)),
                    feasible: true,
                    energy_limited: true,
                });
            }
        }
        let surface = fit_stint_surface(&samples).unwrap();
        let got = surface.model.matrix();
        let scale = q.iter().flatten().fold(1.0_f64, |m, v| m.max(v.abs()));
        for r in 0..3 {
            for c in 0..3 {
                let err = (got[(r, c)] - q[r][c]).abs() / scale;
                assert!(err < 1e-6, "Q[{r}][{c}] off by {err:.2e}");
            }
        }
    }

    #[test]
    fn samples_csv_roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut samples = vec![
            StintSample {
                n_laps: 3,
                t_charge_s: 62.5,
                t_stint_s: 211.0625,
                feasible: true,
                energy_limited: true,
            },
            StintSample {
                n_laps: 9,
                t_charge_s: 12.25,
                t_stint_s: f64::NAN,
                feasible: false,
                energy_limited: false,
            },
        ];
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_samples_csv(&a, &samples).unwrap();
        samples = read_samples_csv(&a).unwrap();
        assert!(samples[1].t_stint_s.is_nan());
        write_samples_csv(&b, &samples).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn overwhelmingly_infeasible_sweeps_are_rejected() {
        let mut spec = toy_sweep();
        // A nearly empty charge window cannot even crawl a lap home.
        spec.charge = crate::powertrain::ChargeModel::constant_power(1e6, 1.02e6, 60.0);
        let err = sweep_stints(&spec).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err:?}");
    }
}
