//! Flat-out reference strategy: drive the speed envelope at maximum power
//! and maximum regeneration with no energy management, pit when the battery
//! cannot finish another lap, recharge to full every stop, and count the
//! laps completed before the race clock runs out. Every quantity is
//! produced by forward simulation on the same space grid, speed caps, force
//! limits, and loss chain as the stint optimizer, so the result is feasible
//! by construction and any optimized strategy can be compared against it
//! lap for lap.

use serde::Serialize;
use std::path::Path;

use crate::error::{Error, Result};
use crate::powertrain::{
    battery_internal_power, em_loss_force, inverter_dc_force, BasisId, ChargeModel,
    PsdQuadraticModel,
};
use crate::stint::stint_speed_caps;
use crate::track::TrackProfile;
use crate::vehicle::VehicleParams;

/// Inputs for the flat-out reference strategy.
#[derive(Debug, Clone)]
pub struct BaselineSpec {
    pub track: TrackProfile,
    pub vehicle: VehicleParams,
    pub charge: ChargeModel,
    /// Race duration [s].
    pub t_race_s: f64,
    /// Safety cap on stint length while growing the energy-feasible lap
    /// count; also caps the number of stints simulated.
    pub max_stints: usize,
}

impl BaselineSpec {
    pub fn validate(&self) -> Result<()> {
        self.track.validate()?;
        self.vehicle.validate()?;
        self.charge.validate()?;
        let v = &self.vehicle;
        if self.charge.e_b_min < v.e_b_min - 1e-9 * v.e_b_max
            || self.charge.e_b_max > v.e_b_max * (1.0 + 1e-12)
        {
            return Err(Error::Config(format!(
                "charge model window [{}, {}] exceeds the vehicle battery window [{}, {}]",
                self.charge.e_b_min, self.charge.e_b_max, v.e_b_min, v.e_b_max
            )));
        }
        if !(self.t_race_s.is_finite() && self.t_race_s > 0.0) {
            return Err(Error::Config(format!(
                "race duration must be positive, got {}",
                self.t_race_s
            )));
        }
        if !(1..=100_000).contains(&self.max_stints) {
            return Err(Error::Config(format!(
                "max_stints must lie in [1, 100000], got {}",
                self.max_stints
            )));
        }
        Ok(())
    }
}

/// One simulated flat-out stint: `n_laps` laps between crawl-speed pit
/// boundaries, starting from a full battery.
#[derive(Debug, Clone, Serialize)]
pub struct FlatOutStint {
    pub n_laps: usize,
    /// Total stint time [s] (trapezoidal integral of dt/ds).
    pub t_stint_s: f64,
    /// Per-lap times [s]; sums to `t_stint_s`.
    pub lap_times_s: Vec<f64>,
    /// Battery energy drawn over the stint [J].
    pub e_used_j: f64,
    /// Node speeds [m/s], length `n_laps * samples + 1`.
    pub v_mps: Vec<f64>,
    /// Node battery energy [J], same length as `v_mps`.
    pub e_b_j: Vec<f64>,
    /// Interval machine force [N], negative while regenerating; the final
    /// node carries a zero.
    pub f_m_n: Vec<f64>,
    /// Interval friction-brake force [N]; the final node carries a zero.
    pub f_brake_n: Vec<f64>,
}

/// Full flat-out race: identical full-length stints separated by full
/// recharges, with the tail stint cut by the clock.
#[derive(Debug, Clone, Serialize)]
pub struct FlatOutBaseline {
    pub t_race_s: f64,
    /// Laps per full stint — the largest count whose flat-out drive stays
    /// above the battery floor.
    pub laps_per_stint: usize,
    /// The repeating stint profile.
    pub stint: FlatOutStint,
    /// Recharge time between stints [s] (always a full recharge).
    pub t_recharge_s: f64,
    /// Laps whose finish line is crossed before the race clock expires.
    pub total_laps: u64,
    /// Stints begun before the clock expires (the last may be partial).
    pub stints_started: usize,
    /// Completion time of the last counted lap [s].
    pub t_used_s: f64,
}

/// Per-node state of the flat-out envelope before the loss chain runs.
struct Envelope {
    /// Kinetic energy at each node [J].
    e_kin: Vec<f64>,
    /// Wheel-side drive demand per interval [N]; negative means braking.
    wheel: Vec<f64>,
}

/// Largest kinetic energy at node `i` from which the grip-limited braking
/// rows can still reach `e_next` at node `i+1`.
fn brake_ceiling(veh: &VehicleParams, ds: f64, d_const: f64, e_next: f64) -> Result<f64> {
    let slope = ds * (veh.drag_per_ekin() + veh.mu * veh.downforce_per_ekin());
    if slope >= 1.0 {
        return Err(Error::Config(format!(
            "grid spacing {ds} m is too coarse for the braking envelope \
             (per-step decay {slope} ≥ 1); refine the track grid"
        )));
    }
    Ok((e_next + ds * (d_const + veh.mu * veh.m_tot * veh.g)) / (1.0 - slope))
}

/// Two-pass speed envelope on the stint grid: a backward pass bounds each
/// node by what grip-limited braking can still shed before the next bound,
/// then a forward pass drives at full force (torque- or power-limited)
/// into that ceiling. Both passes use the same forward-Euler rows as the
/// stint optimizer, so the resulting profile satisfies them exactly.
fn flat_out_envelope(
    track: &TrackProfile,
    veh: &VehicleParams,
    n_laps: usize,
) -> Result<Envelope> {
    let samples = track.s_grid.len();
    let n = samples * n_laps;
    let ds = track.delta_s;
    let caps = stint_speed_caps(track, veh, n_laps)?;
    let ek_cap: Vec<f64> = caps.iter().map(|&c| veh.e_kin_of(c)).collect();
    let ek_floor = veh.e_kin_of(veh.v_min);
    let a_drag = veh.drag_per_ekin();
    let f_t = veh.f_torque_max();
    let d_const_at = |i: usize| {
        let theta = track.theta[i % samples];
        veh.m_tot * veh.g * (veh.c_r * theta.cos() + theta.sin())
    };

    // Backward braking ceiling, anchored at crawl on the final node.
    let mut brake = vec![0.0; n + 1];
    brake[n] = ek_floor;
    for i in (0..n).rev() {
        let ceiling = brake_ceiling(veh, ds, d_const_at(i), brake[i + 1])?;
        brake[i] = ceiling.min(ek_cap[i]);
        if brake[i] < ek_floor * (1.0 - 1e-12) {
            return Err(Error::infeasible(format!(
                "flat-out baseline: even crawl speed cannot slow down in time \
                 at s = {} m",
                (i % samples) as f64 * ds
            )));
        }
    }

    // Forward pass at full drive force into the braking ceiling.
    let mut e_kin = vec![0.0; n + 1];
    let mut wheel = vec![0.0; n];
    e_kin[0] = ek_floor;
    for i in 0..n {
        let v = (2.0 * e_kin[i] / veh.m_tot).sqrt();
        let f_m_max = f_t.min(veh.p_m_max / v);
        let d_const = d_const_at(i);
        let flow_max = e_kin[i] + ds * (veh.eta_fd * f_m_max - a_drag * e_kin[i] - d_const);
        let e_next = flow_max.min(brake[i + 1]);
        if e_next < ek_floor * (1.0 - 1e-12) {
            return Err(Error::infeasible(format!(
                "flat-out baseline: full drive force cannot hold crawl speed \
                 at s = {} m",
                (i % samples) as f64 * ds
            )));
        }
        e_kin[i + 1] = e_next.max(ek_floor);
        wheel[i] = (e_kin[i + 1] - e_kin[i]) / ds + a_drag * e_kin[i] + d_const;
    }
    Ok(Envelope { e_kin, wheel })
}

/// Battery draw per interval for a given machine force and node speed,
/// chaining the machine, inverter, auxiliary, and battery losses with each
/// stage tight. Negative for net regeneration.
fn battery_draw(
    veh: &VehicleParams,
    em: &PsdQuadraticModel,
    v: f64,
    f_m: f64,
) -> Result<f64> {
    let f_ac = f_m + em_loss_force(em, v, f_m, veh.v_min)?;
    let f_dc = inverter_dc_force(veh.alpha, f_ac, 1.0 / v)?;
    let f_b = f_dc + veh.p_aux / v;
    let p_i = battery_internal_power(veh.p_sc, f_b * v)?;
    Ok(p_i / v)
}

/// Simulates one flat-out stint of `n_laps` laps starting from a full
/// battery: full drive force on the way up, maximum regeneration on the way
/// down (locked out while the battery is too full to accept it). The
/// battery may cross its floor — the caller checks.
fn simulate_stint(
    track: &TrackProfile,
    veh: &VehicleParams,
    charge: &ChargeModel,
    n_laps: usize,
) -> Result<FlatOutStint> {
    let samples = track.s_grid.len();
    let n = samples * n_laps;
    let ds = track.delta_s;
    let env = flat_out_envelope(track, veh, n_laps)?;

    let v: Vec<f64> = env
        .e_kin
        .iter()
        .map(|&e| (2.0 * e / veh.m_tot).sqrt())
        .collect();

    let em = PsdQuadraticModel {
        q: veh.q_m,
        basis_id: BasisId::EmLoss,
        fit_rmse_normalized: 0.0,
    };
    let f_t = veh.f_torque_max();
    let mut f_m = vec![0.0; n + 1];
    let mut f_brake = vec![0.0; n + 1];
    let mut e_b = vec![0.0; n + 1];
    e_b[0] = charge.e_b_max;
    for i in 0..n {
        let wheel = env.wheel[i];
        let (mut fm, mut fbr) = if wheel >= 0.0 {
            (wheel / veh.eta_fd, 0.0)
        } else {
            // Maximum regeneration within the torque and power limits; the
            // friction brakes absorb whatever the machine cannot.
            let fm = (veh.eta_fd * wheel).max(-f_t).max(-veh.p_m_max / v[i]);
            (fm, fm / veh.eta_fd - wheel)
        };
        let mut draw = battery_draw(veh, &em, v[i], fm)?;
        // Regeneration lockout at the battery ceiling: when the recovered
        // energy would not fit, brake on friction alone.
        if fm < 0.0 && e_b[i] - ds * draw > veh.e_b_max {
            fm = 0.0;
            fbr = -wheel;
            draw = battery_draw(veh, &em, v[i], 0.0)?;
        }
        f_m[i] = fm;
        f_brake[i] = fbr;
        e_b[i + 1] = e_b[i] - ds * draw;
    }

    let mut lap_times = Vec::with_capacity(n_laps);
    for k in 0..n_laps {
        let (a, b) = (k * samples, (k + 1) * samples);
        let mut t = 0.5 * (1.0 / v[a] + 1.0 / v[b]);
        for vi in &v[a + 1..b] {
            t += 1.0 / vi;
        }
        lap_times.push(t * ds);
    }
    Ok(FlatOutStint {
        n_laps,
        t_stint_s: lap_times.iter().sum(),
        lap_times_s: lap_times,
        e_used_j: e_b[0] - e_b[n],
        v_mps: v,
        e_b_j: e_b,
        f_m_n: f_m,
        f_brake_n: f_brake,
    })
}

/// Longest flat-out stint whose battery trace stays above the floor,
/// grown one lap at a time from a full charge.
fn longest_feasible_stint(
    track: &TrackProfile,
    veh: &VehicleParams,
    charge: &ChargeModel,
    max_laps: usize,
) -> Result<FlatOutStint> {
    let mut best: Option<FlatOutStint> = None;
    for n_laps in 1..=max_laps {
        let stint = simulate_stint(track, veh, charge, n_laps)?;
        let floor_ok = stint.e_b_j.iter().all(|&e| e >= veh.e_b_min);
        if floor_ok {
            best = Some(stint);
        } else {
            break;
        }
    }
    best.ok_or_else(|| {
        Error::infeasible(
            "flat-out baseline: a full battery cannot finish a single \
             flat-out lap — the optimizer may still manage one by saving \
             energy, but no flat-out reference exists",
        )
    })
}

/// Runs the flat-out reference strategy: identical full-length stints,
/// full recharges in between, laps counted while the race clock allows.
///
/// The first stint starts on its pre-race charge, so no recharge time is
/// booked before it — the same convention the optimizer uses.
pub fn flat_out_baseline(spec: &BaselineSpec) -> Result<FlatOutBaseline> {
    spec.validate()?;
    let veh = &spec.vehicle;
    // A stint never exceeds the battery budget divided by the cheapest
    // possible lap (auxiliary drain at crawl for a full lap), plus one.
    let crawl_lap_draw = veh.p_aux * spec.track.s_lap / veh.v_min;
    let usable = spec.charge.e_b_max - veh.e_b_min;
    let lap_cap = ((usable / crawl_lap_draw).ceil() as usize + 1).min(100_000);
    let stint = longest_feasible_stint(&spec.track, veh, &spec.charge, lap_cap)?;

    let mut total_laps: u64 = 0;
    let mut t_used = 0.0;
    let mut clock = 0.0;
    let mut stints_started = 0;
    'race: for k in 0..spec.max_stints {
        if k > 0 {
            clock += spec.charge.t_charge_max;
        }
        if clock >= spec.t_race_s {
            break;
        }
        stints_started += 1;
        for &lap in &stint.lap_times_s {
            clock += lap;
            if clock > spec.t_race_s {
                break 'race;
            }
            total_laps += 1;
            t_used = clock;
        }
    }
    Ok(FlatOutBaseline {
        t_race_s: spec.t_race_s,
        laps_per_stint: stint.n_laps,
        t_recharge_s: spec.charge.t_charge_max,
        stint,
        total_laps,
        stints_started,
        t_used_s: t_used,
    })
}

impl FlatOutBaseline {
    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{toy_charge_model, toy_circuit, toy_vehicle};
    use crate::stint::{solve_stint, stint_speed_caps, StintSpec};
    use crate::track::synth_track;

    fn toy_setup() -> (TrackProfile, VehicleParams, ChargeModel) {
        let track = synth_track(&toy_circuit(), 10.0).unwrap();
        (track, toy_vehicle(), toy_charge_model())
    }

    #[test]
    fn envelope_respects_caps_and_boundary_conditions() {
        let (track, veh, charge) = toy_setup();
        let stint = simulate_stint(&track, &veh, &charge, 2).unwrap();
        let caps = stint_speed_caps(&track, &veh, 2).unwrap();
        assert_eq!(stint.v_mps.len(), caps.len());
        for (i, (v, cap)) in stint.v_mps.iter().zip(&caps).enumerate() {
            assert!(*v <= cap * (1.0 + 1e-12), "node {i}: v = {v} above cap {cap}");
            assert!(*v >= veh.v_min * (1.0 - 1e-12), "node {i}: v = {v} below crawl");
        }
        let last = stint.v_mps.len() - 1;
        assert!((stint.v_mps[0] - veh.v_min).abs() < 1e-9);
        assert!((stint.v_mps[last] - veh.v_min).abs() < 1e-9);
        // The straights actually get driven: somewhere the car is fast.
        assert!(stint.v_mps.iter().cloned().fold(0.0, f64::max) > 3.0 * veh.v_min);
    }

    #[test]
    fn forces_stay_inside_the_actuator_limits() {
        let (track, veh, charge) = toy_setup();
        let stint = simulate_stint(&track, &veh, &charge, 2).unwrap();
        let f_t = veh.f_torque_max();
        for (i, (fm, v)) in stint.f_m_n.iter().zip(&stint.v_mps).enumerate() {
            assert!(fm.abs() <= f_t * (1.0 + 1e-9), "interval {i}: torque");
            assert!(
                fm.abs() * v <= veh.p_m_max * (1.0 + 1e-9),
                "interval {i}: power {} above cap",
                fm.abs() * v
            );
        }
        let a_lift = veh.downforce_per_ekin();
        for (i, fb) in stint.f_brake_n.iter().enumerate().take(stint.f_brake_n.len() - 1) {
            let e = 0.5 * veh.m_tot * stint.v_mps[i] * stint.v_mps[i];
            let grip = veh.mu * (veh.m_tot * veh.g + a_lift * e);
            assert!(*fb >= 0.0);
            assert!(*fb <= grip * (1.0 + 1e-9), "interval {i}: brake beyond grip");
        }
        // Positive drive never overlaps friction braking; regeneration may.
        for (fm, fb) in stint.f_m_n.iter().zip(&stint.f_brake_n) {
            assert!(!(*fm > 0.0 && *fb > 0.0));
        }
        // The braking zones actually regenerate once headroom opens up.
        assert!(stint.f_m_n.iter().any(|&fm| fm < 0.0));
    }

    #[test]
    fn battery_stays_inside_its_window_and_spends_energy() {
        let (track, veh, charge) = toy_setup();
        let stint = simulate_stint(&track, &veh, &charge, 1).unwrap();
        for (i, e) in stint.e_b_j.iter().enumerate() {
            assert!(*e <= veh.e_b_max * (1.0 + 1e-12), "node {i}: over ceiling");
        }
        assert!(stint.e_used_j > 0.0, "a flat-out lap must cost net energy");
        assert!((stint.e_b_j[0] - charge.e_b_max).abs() < 1e-9);
        // Driving intervals drain; only regenerating intervals may refill.
        for (i, w) in stint.e_b_j.windows(2).enumerate() {
            if stint.f_m_n[i] >= 0.0 {
                assert!(w[1] < w[0], "interval {i}: drive must drain the battery");
            }
        }
    }

    #[test]
    fn flat_out_matches_the_optimizer_when_energy_is_ample() {
        // With the battery nowhere near its floor the minimum-time stint IS
        // the speed envelope, so the convex solution and the forward
        // simulation must agree closely — and the optimizer can only be
        // faster, because the flat-out trajectory is feasible for it.
        let (track, veh, charge) = toy_setup();
        let flat = simulate_stint(&track, &veh, &charge, 1).unwrap();
        assert!(
            flat.e_b_j.iter().all(|&e| e >= veh.e_b_min),
            "toy lap should fit the battery budget"
        );
        let spec = StintSpec {
            track,
            vehicle: veh,
            n_laps: 1,
            e_b0: charge.e_b_max,
        };
        let opt = solve_stint(&spec).unwrap();
        assert!(
            opt.t_stint_s <= flat.t_stint_s + 1e-3,
            "optimizer ({}) must not lose to flat-out ({})",
            opt.t_stint_s,
            flat.t_stint_s
        );
        let gap = (flat.t_stint_s - opt.t_stint_s) / flat.t_stint_s;
        assert!(
            gap < 0.01,
            "ample-energy stint should ride the envelope: flat {} vs opt {}",
            flat.t_stint_s,
            opt.t_stint_s
        );
    }

    #[test]
    fn stint_length_exhausts_the_budget_without_crossing_the_floor() {
        let (track, veh, charge) = toy_setup();
        let best = longest_feasible_stint(&track, &veh, &charge, 50).unwrap();
        assert!(best.e_b_j.iter().all(|&e| e >= veh.e_b_min));
        // One more lap would cross the floor.
        let longer = simulate_stint(&track, &veh, &charge, best.n_laps + 1).unwrap();
        assert!(longer.e_b_j.iter().any(|&e| e < veh.e_b_min));
    }

    #[test]
    fn race_counts_only_completed_laps() {
        // Enlarged battery so a stint holds several laps and the clock can
        // expire mid-stint.
        let (track, mut veh, _) = toy_setup();
        veh.e_b_max = 1e7;
        let charge = ChargeModel::constant_power(veh.e_b_min, veh.e_b_max, 60.0);
        let stint = longest_feasible_stint(&track, &veh, &charge, 50).unwrap();
        assert!(stint.n_laps >= 2, "fixture should allow multi-lap stints");
        // Budget: one full stint, a recharge, then exactly 1.5 more laps.
        let t_race = stint.t_stint_s
            + charge.t_charge_max
            + stint.lap_times_s[0]
            + 0.5 * stint.lap_times_s[1];
        let spec = BaselineSpec {
            track,
            vehicle: veh,
            charge,
            t_race_s: t_race,
            max_stints: 64,
        };
        let base = flat_out_baseline(&spec).unwrap();
        assert_eq!(base.laps_per_stint, stint.n_laps);
        assert_eq!(base.total_laps, stint.n_laps as u64 + 1);
        assert_eq!(base.stints_started, 2);
        assert!(base.t_used_s <= t_race);
        // The half lap in progress is not counted.
        assert!(base.t_used_s < t_race - 0.4 * stint.lap_times_s[1]);
    }

    #[test]
    fn longer_races_never_lose_laps() {
        let (track, veh, charge) = toy_setup();
        let mut last = 0;
        for t_race in [300.0, 600.0, 1200.0, 2400.0] {
            let spec = BaselineSpec {
                track: track.clone(),
                vehicle: veh.clone(),
                charge: charge.clone(),
                t_race_s: t_race,
                max_stints: 256,
            };
            let base = flat_out_baseline(&spec).unwrap();
            assert!(
                base.total_laps >= last,
                "laps fell from {last} to {} at t_race = {t_race}",
                base.total_laps
            );
            last = base.total_laps;
        }
        assert!(last > 0);
    }

    #[test]
    fn baseline_is_deterministic() {
        let (track, veh, charge) = toy_setup();
        let spec = BaselineSpec {
            track,
            vehicle: veh,
            charge,
            t_race_s: 1800.0,
            max_stints: 64,
        };
        let a = serde_json::to_string(&flat_out_baseline(&spec).unwrap()).unwrap();
        let b = serde_json::to_string(&flat_out_baseline(&spec).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
