//! Built-in synthetic fixtures: a desk-scale electric single-seater with a
//! 3.5 km circuit, and a small oval sized so that exhaustive dynamic
//! programming stays tractable. Both are fictional but dimensionally sane;
//! they back the CLI demos and the test suite.

use crate::powertrain::ChargeModel;
use crate::track::{PitSpec, SynthSegment, SynthSpec};
use crate::vehicle::VehicleParams;

/// 800 kg battery-electric single-seater, desk-scale numbers.
pub fn desk_vehicle() -> VehicleParams {
    VehicleParams {
        m_tot: 800.0,
        c_d: 0.9,
        c_l: 2.2,
        a_f: 1.3,
        rho: 1.2,
        c_r: 0.012,
        g: 9.81,
        mu: 1.6,
        eta_fd: 0.97,
        gamma_fd: 3.8,
        r_w: 0.33,
        t_m_max: 480.0,
        p_m_max: 150e3,
        q_m: [[500.0, 0.0, 0.0], [0.0, 0.4, 0.0], [0.0, 0.0, 9e-4]],
        alpha: 4e-8,
        p_sc: 4e6,
        p_aux: 2000.0,
        e_b_min: 1.2e7,
        e_b_max: 1.2e8,
        v_min: 5.0,
    }
}

/// 3504 m road circuit: eight corners, two grades, one 400 m pit arc that
/// wraps through the start line. Lap length divides evenly at 8 m and 4 m
/// spacings so grid-refinement comparisons share node positions.
pub fn desk_circuit() -> SynthSpec {
    let seg = |length_m: f64, kappa_per_m: f64, theta_rad: f64| SynthSegment {
        length_m,
        kappa_per_m,
        theta_rad,
    };
    use std::f64::consts::PI;
    SynthSpec {
        segments: vec![
            seg(520.0, 0.0, 0.0),
            seg(180.0, PI / 180.0, 0.0),        // 180° hairpin, r ≈ 57 m
            seg(320.0, 0.0, 0.0),
            seg(80.0, -(PI / 2.0) / 80.0, 0.0), // fast left
            seg(260.0, 0.0, 0.0),
            seg(100.0, (PI / 3.0) / 100.0, 0.0),
            seg(420.0, 0.0, 0.02),              // uphill drag
            seg(60.0, (PI / 2.0) / 60.0, 0.0),  // tight right at the crest
            seg(200.0, 0.0, 0.0),
            seg(70.0, -(PI / 3.0) / 70.0, 0.0),
            seg(360.0, 0.0, 0.0),
            seg(90.0, (PI / 2.0) / 90.0, 0.0),
            seg(554.0, 0.0, -0.01516),          // downhill back straight
            seg(140.0, (PI / 2.0) / 140.0, 0.0),
            seg(150.0, 0.0, 0.0),
        ],
        pit: PitSpec {
            start_m: 3304.0,
            length_m: 400.0,
            v_pit_max_mps: 50.0 / 3.6,
        },
        v_cap_mps: 95.0,
    }
}

/// Toy variant of [`desk_vehicle`]: smaller drive power and a battery about
/// 0.56 kWh of usable energy, so one or two laps of the toy oval exhaust it.
/// Sized for dynamic-programming cross-checks on a dense state grid.
pub fn toy_vehicle() -> VehicleParams {
    VehicleParams {
        p_m_max: 100e3,
        p_sc: 8e5,
        p_aux: 1000.0,
        e_b_min: 1e6,
        e_b_max: 3e6,
        ..desk_vehicle()
    }
}

/// 600 m oval: two 200 m straights joined by semicircular turns, pit arc
/// wrapping the start line ([570 m, 600 m) plus [0 m, 40 m)).
pub fn toy_circuit() -> SynthSpec {
    use std::f64::consts::PI;
    let seg = |length_m: f64, kappa_per_m: f64| SynthSegment {
        length_m,
        kappa_per_m,
        theta_rad: 0.0,
    };
    SynthSpec {
        segments: vec![
            seg(200.0, 0.0),
            seg(100.0, PI / 100.0),
            seg(200.0, 0.0),
            seg(100.0, PI / 100.0),
        ],
        pit: PitSpec {
            start_m: 570.0,
            length_m: 70.0,
            v_pit_max_mps: 10.0,
        },
        v_cap_mps: 60.0,
    }
}

pub fn desk_charge_model() -> ChargeModel {
    let veh = desk_vehicle();
    ChargeModel::constant_power(veh.e_b_min, veh.e_b_max, 450.0)
}

pub fn toy_charge_model() -> ChargeModel {
    let veh = toy_vehicle();
    ChargeModel::constant_power(veh.e_b_min, veh.e_b_max, 60.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::synth_track;

    #[test]
    fn desk_fixtures_validate() {
        desk_vehicle().validate().unwrap();
        desk_charge_model().validate().unwrap();
        let track = synth_track(&desk_circuit(), 8.0).unwrap();
        track.validate().unwrap();
        assert!((track.s_lap - 3504.0).abs() < 1e-9);
        // Both refinement spacings hit the lap length exactly.
        assert_eq!(track.s_grid.len(), 438);
        let fine = synth_track(&desk_circuit(), 4.0).unwrap();
        assert_eq!(fine.s_grid.len(), 876);
    }

    #[test]
    fn toy_fixtures_validate() {
        toy_vehicle().validate().unwrap();
        toy_charge_model().validate().unwrap();
        let track = synth_track(&toy_circuit(), 10.0).unwrap();
        track.validate().unwrap();
        assert!((track.s_lap - 600.0).abs() < 1e-9);
        let (prefix, suffix) = track.pit_arc().unwrap();
        assert_eq!(prefix, 4); // [0, 40) at 10 m spacing
        assert_eq!(suffix, 3); // [570, 600)
    }

    #[test]
    fn desk_circuit_closes_its_winding() {
        let total: f64 = desk_circuit()
            .segments
            .iter()
            .map(|s| s.length_m * s.kappa_per_m)
            .sum();
        assert!((total - 2.0 * std::f64::consts::PI).abs() < 1e-9);
    }
}
