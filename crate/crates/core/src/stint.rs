//! Space-domain minimum-stint-time optimal control.
//!
//! A stint is `n_laps` consecutive laps driven on one battery charge,
//! entering and leaving the start line at crawl speed. Time is the integral
//! of *lethargy* l = dt/ds over distance, which is linear in the decision
//! variables; all powertrain nonlinearities (machine loss, inverter loss,
//! battery internal resistance, the speed–kinetic-energy link) enter as
//! hyperbolic cone constraints, so the discretized problem is a single
//! second-order cone program.
//!
//! Discretization: states (l, v, E_kin, E_b) live on nodes `0..=n`; forces
//! (F_m, F_brake, F_ac, F_dc, F_b, F_i) live on intervals `0..n` with
//! forward-Euler dynamics evaluated at the interval's left node, and the
//! time objective integrated trapezoidally.

use serde::Serialize;
use std::path::Path;

use crate::conic::{check_tightness, AffExpr, ConicProgram, ConicSolution, VarId};
use crate::error::{Error, Result};
use crate::track::{lateral_vmax, TrackProfile};
use crate::vehicle::VehicleParams;

/// One stint problem instance.
#[derive(Debug, Clone)]
pub struct StintSpec {
    pub track: TrackProfile,
    pub vehicle: VehicleParams,
    pub n_laps: usize,
    /// Battery energy at the start line [J].
    pub e_b0: f64,
}

impl StintSpec {
    pub fn validate(&self) -> Result<()> {
        self.track.validate()?;
        self.vehicle.validate()?;
        if self.n_laps == 0 {
            return Err(Error::Validation("a stint needs at least one lap".into()));
        }
        let v = &self.vehicle;
        if !(self.e_b0 >= v.e_b_min && self.e_b0 <= v.e_b_max) {
            return Err(Error::Validation(format!(
                "e_b0 = {} outside battery window [{}, {}]",
                self.e_b0, v.e_b_min, v.e_b_max
            )));
        }
        if self.track.v_pit_max < v.v_min {
            return Err(Error::Validation(format!(
                "pit speed cap {} is below the vehicle's minimum speed {}",
                self.track.v_pit_max, v.v_min
            )));
        }
        Ok(())
    }
}

/// Index arithmetic for the assembled program: states node-major first,
/// then interval forces.
#[derive(Debug, Clone, Copy)]
pub struct StintLayout {
    /// Samples per lap.
    pub samples_per_lap: usize,
    /// Discretization intervals in the stint (nodes − 1).
    pub n_intervals: usize,
}

impl StintLayout {
    pub fn nodes(&self) -> usize {
        self.n_intervals + 1
    }

    pub fn num_vars(&self) -> usize {
        4 * self.nodes() + 6 * self.n_intervals
    }

    pub fn num_cones(&self) -> usize {
        2 * self.nodes() + 3 * self.n_intervals
    }

    pub fn lethargy(&self, i: usize) -> VarId {
        VarId(4 * i)
    }

    pub fn speed(&self, i: usize) -> VarId {
        VarId(4 * i + 1)
    }

    pub fn e_kin(&self, i: usize) -> VarId {
        VarId(4 * i + 2)
    }

    pub fn e_b(&self, i: usize) -> VarId {
        VarId(4 * i + 3)
    }

    fn force_base(&self, i: usize) -> usize {
        4 * self.nodes() + 6 * i
    }

    pub fn f_m(&self, i: usize) -> VarId {
        VarId(self.force_base(i))
    }

    pub fn f_brake(&self, i: usize) -> VarId {
        VarId(self.force_base(i) + 1)
    }

    pub fn f_ac(&self, i: usize) -> VarId {
        VarId(self.force_base(i) + 2)
    }

    pub fn f_dc(&self, i: usize) -> VarId {
        VarId(self.force_base(i) + 3)
    }

    pub fn f_b(&self, i: usize) -> VarId {
        VarId(self.force_base(i) + 4)
    }

    pub fn f_i(&self, i: usize) -> VarId {
        VarId(self.force_base(i) + 5)
    }
}

/// Per-node speed caps for a whole stint: the curvature/grip envelope and
/// the global cap everywhere, plus the pit-lane cap on the pit arc at the
/// *stint* boundaries only. Lap crossings inside the stint are flown at
/// racing speed — the car is not in the pit lane mid-stint, even though
/// those nodes share track samples with the pit arc.
pub fn stint_speed_caps(
    track: &TrackProfile,
    vehicle: &VehicleParams,
    n_laps: usize,
) -> Result<Vec<f64>> {
    let lat = lateral_vmax(track, vehicle);
    let (prefix, suffix) = track.pit_arc()?;
    let samples = track.s_grid.len();
    let n = samples * n_laps;
    let mut caps = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let sample = if i == n { 0 } else { i % samples };
        let mut cap = lat[sample].min(track.v_cap);
        let in_start_arc = i < prefix;
        let in_end_arc = i + suffix >= n;
        if in_start_arc || in_end_arc {
            cap = cap.min(track.v_pit_max);
        }
        if cap < vehicle.v_min {
            return Err(Error::infeasible(format!(
                "speed window is empty at s = {} m: cap {} below v_min {}",
                track.s_grid[sample], cap, vehicle.v_min
            )));
        }
        caps.push(cap);
    }
    Ok(caps)
}

use crate::powertrain::sqrt_psd;

/// Builds the stint program. With `elastic`, every battery-floor row gains a
/// shared slack σ ≥ 0 and the objective becomes "minimize σ": the optimum is
/// the smallest uniform battery-budget violation, used to quantify how much
/// energy an infeasible stint is short.
fn assemble(spec: &StintSpec, elastic: bool) -> Result<(ConicProgram, StintLayout, Option<VarId>)> {
    spec.validate()?;
    let veh = &spec.vehicle;
    let track = &spec.track;
    let samples = track.s_grid.len();
    let n = samples * spec.n_laps;
    let layout = StintLayout {
        samples_per_lap: samples,
        n_intervals: n,
    };
    let ds = track.delta_s;
    let caps = stint_speed_caps(track, veh, spec.n_laps)?;

    let a_drag = veh.drag_per_ekin();
    let a_lift = veh.downforce_per_ekin();
    let f_t = veh.f_torque_max();
    let ek_floor = veh.e_kin_of(veh.v_min);
    let c_m = sqrt_psd(&veh.q_m_matrix());
    let sqrt_alpha = veh.alpha.sqrt();

    // l's upper bound sits strictly above 1/v_min so it never activates at
    // the optimum; it only keeps the elastic variant's feasible set bounded.
    // Every variable declares its natural magnitude so the lowering can
    // normalize columns — energies in joules otherwise sit eight orders of
    // magnitude above reciprocal speeds and defeat the solver's own
    // per-cone equilibration.
    let v_ref = caps.iter().cloned().fold(veh.v_min, f64::max);
    let ek_ref = veh.e_kin_of(v_ref);
    let mut p = ConicProgram::new();
    let var = |p: &mut ConicProgram, name: String, lo: f64, hi: f64, scale: f64| {
        let id = p.add_var(name, lo, hi);
        p.set_scale(id, scale);
        id
    };
    for i in 0..=n {
        let cap = caps[i];
        var(&mut p, format!("l[{i}]"), 0.0, 2.0 / veh.v_min, 1.0 / veh.v_min);
        var(&mut p, format!("v[{i}]"), veh.v_min, cap, v_ref);
        var(&mut p, format!("ekin[{i}]"), ek_floor, veh.e_kin_of(cap), ek_ref);
        var(&mut p, format!("eb[{i}]"), f64::NEG_INFINITY, veh.e_b_max, veh.e_b_max);
    }
    for i in 0..n {
        var(&mut p, format!("fm[{i}]"), -f_t, f_t, f_t);
        var(&mut p, format!("fbrake[{i}]"), 0.0, f64::INFINITY, f_t);
        var(&mut p, format!("fac[{i}]"), f64::NEG_INFINITY, f64::INFINITY, f_t);
        var(&mut p, format!("fdc[{i}]"), f64::NEG_INFINITY, f64::INFINITY, f_t);
        var(&mut p, format!("fb[{i}]"), f64::NEG_INFINITY, f64::INFINITY, f_t);
        var(&mut p, format!("fi[{i}]"), f64::NEG_INFINITY, f64::INFINITY, f_t);
    }
    debug_assert_eq!(p.num_vars(), layout.num_vars());

    let sigma = if elastic {
        let s = p.add_var("sigma", 0.0, f64::INFINITY);
        p.set_scale(s, veh.e_b_max - veh.e_b_min);
        Some(s)
    } else {
        None
    };

    // Objective: trapezoidal time integral, or pure slack in elastic mode.
    // The time objective alone leaves a fat optimal face whenever energy is
    // not binding — the force chain may burn surplus charge at no time cost,
    // which breaks strict complementarity and stalls the interior-point
    // method. A vanishing per-joule price on battery draw selects the
    // non-wasteful representative of that face; it re-prices time against
    // energy at 1e-9 s/J, far below solver tolerance.
    const CHAIN_TIE_BREAK: f64 = 1e-9;
    if let Some(s) = sigma {
        p.add_objective(s, 1.0);
    } else {
        for i in 0..=n {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            p.add_objective(layout.lethargy(i), w * ds);
        }
        for i in 0..n {
            p.add_objective(layout.f_i(i), CHAIN_TIE_BREAK * ds);
        }
    }

    // Boundary conditions: crawl speed across the line, stated charge.
    p.add_eq(
        "bc-ekin-start",
        AffExpr::var(layout.e_kin(0)).offset(-ek_floor),
    );
    p.add_eq(
        "bc-ekin-end",
        AffExpr::var(layout.e_kin(n)).offset(-ek_floor),
    );
    p.add_eq("bc-soe-start", AffExpr::var(layout.e_b(0)).offset(-spec.e_b0));

    for i in 0..=n {
        // Lethargy: l·v ≥ 1.
        p.add_hyperbolic(
            format!("lethargy[{i}]"),
            AffExpr::var(layout.lethargy(i)),
            AffExpr::var(layout.speed(i)),
            vec![AffExpr::constant(1.0)],
        );
        // Kinetic link: v² ≤ E_kin · (2/m). The mass factor is folded into
        // u so both cone legs stay near the magnitude of v².
        p.add_hyperbolic(
            format!("kinetic[{i}]"),
            AffExpr::zero().term(layout.e_kin(i), 2.0 / veh.m_tot),
            AffExpr::constant(1.0),
            vec![AffExpr::var(layout.speed(i))],
        );
        // Battery floor as a row (not a bound) so the elastic variant can
        // relax exactly this family.
        let mut floor = AffExpr::var(layout.e_b(i)).offset(-veh.e_b_min);
        if let Some(s) = sigma {
            floor = floor.term(s, 1.0);
        }
        p.add_ineq(format!("soe-floor[{i}]"), floor);
    }

    for i in 0..n {
        let sample = i % samples;
        let theta = track.theta[sample];
        let d_const = veh.m_tot * veh.g * (veh.c_r * theta.cos() + theta.sin());
        let (l_i, v_i) = (layout.lethargy(i), layout.speed(i));
        let (ek_i, ek_n) = (layout.e_kin(i), layout.e_kin(i + 1));
        let (eb_i, eb_n) = (layout.e_b(i), layout.e_b(i + 1));
        let (fm, fbr) = (layout.f_m(i), layout.f_brake(i));
        let (fac, fdc) = (layout.f_ac(i), layout.f_dc(i));
        let (fb, fi) = (layout.f_b(i), layout.f_i(i));

        // Final drive, both directions of the efficiency split:
        // dE_kin/ds ≤ η·F_m − F_d − F_brake and ≤ F_m/η − F_d − F_brake.
        let base = AffExpr::zero()
            .term(ek_i, -a_drag + 1.0 / ds)
            .term(ek_n, -1.0 / ds)
            .term(fbr, -1.0)
            .offset(-d_const);
        p.add_ineq(
            format!("drive-eta[{i}]"),
            base.clone().term(fm, veh.eta_fd),
        );
        p.add_ineq(
            format!("drive-inv[{i}]"),
            base.term(fm, 1.0 / veh.eta_fd),
        );

        // Grip floor on deceleration:
        // dE_kin/ds ≥ −F_d − μ(m·g + F_down).
        p.add_ineq(
            format!("brake-floor[{i}]"),
            AffExpr::zero()
                .term(ek_i, a_drag + veh.mu * a_lift - 1.0 / ds)
                .term(ek_n, 1.0 / ds)
                .offset(d_const + veh.mu * veh.m_tot * veh.g),
        );

        // Battery depletion (forward Euler).
        p.add_eq(
            format!("dyn-soe[{i}]"),
            AffExpr::var(eb_i).term(eb_n, -1.0).term(fi, -ds),
        );

        // Drive power cap: |F_m| ≤ P_m_max · l.
        p.add_ineq(
            format!("pow-box+[{i}]"),
            AffExpr::var(l_i).scaled(veh.p_m_max).term(fm, -1.0),
        );
        p.add_ineq(
            format!("pow-box-[{i}]"),
            AffExpr::var(l_i).scaled(veh.p_m_max).term(fm, 1.0),
        );

        // Auxiliary draw rides on the DC bus: F_b = F_dc + P_aux · l.
        p.add_eq(
            format!("aux-link[{i}]"),
            AffExpr::var(fb).term(fdc, -1.0).term(l_i, -veh.p_aux),
        );

        // Machine loss: (F_ac − F_m)·v ≥ yᵀQ_m y, y = [1, v, F_m].
        let z_m: Vec<AffExpr> = (0..3)
            .map(|r| {
                AffExpr::constant(c_m[(r, 0)])
                    .term(v_i, c_m[(r, 1)])
                    .term(fm, c_m[(r, 2)])
            })
            .collect();
        p.add_hyperbolic(
            format!("em-loss[{i}]"),
            AffExpr::var(fac).term(fm, -1.0),
            AffExpr::var(v_i),
            z_m,
        );

        // Inverter: (F_dc − F_ac)·l ≥ α·F_ac².
        p.add_hyperbolic(
            format!("inverter[{i}]"),
            AffExpr::var(fdc).term(fac, -1.0),
            AffExpr::var(l_i),
            vec![AffExpr::zero().term(fac, sqrt_alpha)],
        );

        // Battery internal loss: (F_i − F_b)·l·P_sc ≥ F_i². The short-circuit
        // power multiplies the lethargy leg so u stays at force scale.
        p.add_hyperbolic(
            format!("battery[{i}]"),
            AffExpr::var(fi).term(fb, -1.0),
            AffExpr::zero().term(l_i, veh.p_sc),
            vec![AffExpr::var(fi)],
        );
    }

    debug_assert_eq!(p.num_cones(), layout.num_cones());
    Ok((p, layout, sigma))
}

/// Assembles the (non-elastic) stint program together with its layout, for
/// callers that want to audit the model or the solution directly.
pub fn assemble_stint_program(spec: &StintSpec) -> Result<(ConicProgram, StintLayout)> {
    let (p, layout, _) = assemble(spec, false)?;
    Ok((p, layout))
}

/// Space-sampled optimal trajectory and stint diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct StintSolution {
    pub n_laps: usize,
    pub e_b0_j: f64,
    /// Total stint time [s] (trapezoidal integral of dt/ds).
    pub t_stint_s: f64,
    /// Per-lap times [s]; sums to `t_stint_s`.
    pub lap_times_s: Vec<f64>,
    /// True when the battery floor binds somewhere along the stint, i.e.
    /// the stint used its whole energy budget.
    pub energy_limited: bool,
    pub s_m: Vec<f64>,
    pub v_mps: Vec<f64>,
    pub dtds_spm: Vec<f64>,
    pub e_kin_j: Vec<f64>,
    pub e_b_j: Vec<f64>,
    /// Interval forces; index i acts over [s_m[i], s_m[i+1]). The final
    /// node carries zeros — no interval starts there.
    pub f_m_n: Vec<f64>,
    pub f_brake_n: Vec<f64>,
    pub f_ac_n: Vec<f64>,
    pub f_dc_n: Vec<f64>,
    pub f_b_n: Vec<f64>,
    pub f_i_n: Vec<f64>,
    pub iterations: u32,
    pub duality_gap: f64,
    /// Worst primal violation among equalities/inequalities/bounds,
    /// normalized by each row's coefficient magnitude.
    pub max_violation: f64,
}

/// Fraction of the usable battery window within which a state-of-energy
/// margin counts as "on the floor".
const ENERGY_LIMITED_REL_TOL: f64 = 1e-5;

fn extract(
    spec: &StintSpec,
    program: &ConicProgram,
    layout: &StintLayout,
    sol: &ConicSolution,
) -> StintSolution {
    let n = layout.n_intervals;
    let ds = spec.track.delta_s;
    let nodes = n + 1;
    let at = |f: &dyn Fn(usize) -> VarId, i: usize| sol.var(f(i));

    let l: Vec<f64> = (0..nodes).map(|i| at(&|i| layout.lethargy(i), i)).collect();
    let mut lap_times = Vec::with_capacity(spec.n_laps);
    for k in 0..spec.n_laps {
        let a = k * layout.samples_per_lap;
        let b = (k + 1) * layout.samples_per_lap;
        let mut t = 0.5 * (l[a] + l[b]);
        for li in &l[a + 1..b] {
            t += li;
        }
        lap_times.push(t * ds);
    }
    let t_stint: f64 = lap_times.iter().sum();

    let mut forces: [Vec<f64>; 6] = Default::default();
    let getters: [&dyn Fn(usize) -> VarId; 6] = [
        &|i| layout.f_m(i),
        &|i| layout.f_brake(i),
        &|i| layout.f_ac(i),
        &|i| layout.f_dc(i),
        &|i| layout.f_b(i),
        &|i| layout.f_i(i),
    ];
    for (col, getter) in forces.iter_mut().zip(getters) {
        *col = (0..n).map(|i| sol.var(getter(i))).collect();
        col.push(0.0);
    }
    let [f_m_n, f_brake_n, f_ac_n, f_dc_n, f_b_n, f_i_n] = forces;

    let e_b_j: Vec<f64> = (0..nodes).map(|i| sol.var(layout.e_b(i))).collect();
    let usable = spec.vehicle.e_b_max - spec.vehicle.e_b_min;
    // The budget binds when the floor is touched anywhere. The terminal node
    // is the wrong place to look: final braking regenerates, so a fully
    // spent stint still ends a little above the floor.
    let min_margin = e_b_j
        .iter()
        .map(|e| e - spec.vehicle.e_b_min)
        .fold(f64::INFINITY, f64::min);
    let energy_limited = min_margin <= ENERGY_LIMITED_REL_TOL * usable;

    let report = check_tightness(program, &sol.x);
    let max_violation = report
        .max_eq_violation
        .max(report.max_ineq_violation)
        .max(report.max_bound_violation);

    StintSolution {
        n_laps: spec.n_laps,
        e_b0_j: spec.e_b0,
        t_stint_s: t_stint,
        lap_times_s: lap_times,
        energy_limited,
        s_m: (0..nodes).map(|i| i as f64 * ds).collect(),
        v_mps: (0..nodes).map(|i| sol.var(layout.speed(i))).collect(),
        dtds_spm: l,
        e_kin_j: (0..nodes).map(|i| sol.var(layout.e_kin(i))).collect(),
        e_b_j,
        f_m_n,
        f_brake_n,
        f_ac_n,
        f_dc_n,
        f_b_n,
        f_i_n,
        iterations: sol.iterations,
        duality_gap: sol.duality_gap,
        max_violation,
    }
}

/// Solves the stint problem. Infeasible stints are diagnosed with an elastic
/// re-solve that reports how much battery energy is missing.
pub fn solve_stint(spec: &StintSpec) -> Result<StintSolution> {
    let (program, layout, _) = assemble(spec, false)?;
    match program.solve() {
        Ok(sol) => Ok(extract(spec, &program, &layout, &sol)),
        Err(Error::Infeasible(_)) => Err(diagnose_infeasibility(spec)),
        Err(e) => Err(e),
    }
}

fn diagnose_infeasibility(spec: &StintSpec) -> Error {
    let elastic = assemble(spec, true).and_then(|(p, _, sigma)| {
        let sol = p.solve()?;
        Ok(sigma.map(|s| sol.var(s)))
    });
    match elastic {
        Ok(Some(sigma)) if sigma > 0.0 => Error::Infeasible(crate::error::InfeasibilityReport {
            summary: format!(
                "{}-lap stint exceeds the battery budget from e_b0 = {:.3e} J",
                spec.n_laps, spec.e_b0
            ),
            missing_energy_j: Some(sigma),
        }),
        Ok(_) => Error::infeasible(format!(
            "{}-lap stint is infeasible but not energy-bound; check speed caps \
             against boundary conditions",
            spec.n_laps
        )),
        Err(_) => Error::infeasible(format!(
            "{}-lap stint is infeasible even with a relaxed battery floor: the \
             speed/force envelope cannot complete the distance",
            spec.n_laps
        )),
    }
}

/// Writes the trajectory in the `s_m,v_mps,dtds_spm,...` column layout, one
/// row per node.
pub fn write_trajectory_csv(sol: &StintSolution, path: impl AsRef<Path>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path.as_ref())?;
    wtr.write_record([
        "s_m", "v_mps", "dtds_spm", "E_kin_J", "E_b_J", "F_m_N", "F_brake_N", "F_ac_N", "F_dc_N",
        "F_b_N", "F_i_N",
    ])?;
    for i in 0..sol.s_m.len() {
        wtr.write_record(&[
            format!("{}", sol.s_m[i]),
            format!("{}", sol.v_mps[i]),
            format!("{}", sol.dtds_spm[i]),
            format!("{}", sol.e_kin_j[i]),
            format!("{}", sol.e_b_j[i]),
            format!("{}", sol.f_m_n[i]),
            format!("{}", sol.f_brake_n[i]),
            format!("{}", sol.f_ac_n[i]),
            format!("{}", sol.f_dc_n[i]),
            format!("{}", sol.f_b_n[i]),
            format!("{}", sol.f_i_n[i]),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Scalar stint summary (everything except the trajectory arrays).
#[derive(Debug, Clone, Serialize)]
pub struct StintSummary {
    pub n_laps: usize,
    pub e_b0_j: f64,
    pub t_stint_s: f64,
    pub lap_times_s: Vec<f64>,
    pub energy_limited: bool,
    pub terminal_e_b_j: f64,
    pub iterations: u32,
    pub duality_gap: f64,
    pub max_violation: f64,
}

impl StintSolution {
    pub fn summary(&self) -> StintSummary {
        StintSummary {
            n_laps: self.n_laps,
            e_b0_j: self.e_b0_j,
            t_stint_s: self.t_stint_s,
            lap_times_s: self.lap_times_s.clone(),
            energy_limited: self.energy_limited,
            terminal_e_b_j: *self.e_b_j.last().unwrap(),
            iterations: self.iterations,
            duality_gap: self.duality_gap,
            max_violation: self.max_violation,
        }
    }
}

pub fn write_stint_summary_json(sol: &StintSolution, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(&sol.summary())? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{toy_circuit, toy_vehicle};
    use crate::track::synth_track;

    fn toy_spec(n_laps: usize, e_b0: f64) -> StintSpec {
        StintSpec {
            track: synth_track(&toy_circuit(), 10.0).unwrap(),
            vehicle: toy_vehicle(),
            n_laps,
            e_b0,
        }
    }

    #[test]
    fn layout_counts_match_program() {
        let spec = toy_spec(2, 3e6);
        let (p, layout) = assemble_stint_program(&spec).unwrap();
        assert_eq!(p.num_vars(), layout.num_vars());
        assert_eq!(p.num_cones(), layout.num_cones());
        assert_eq!(layout.n_intervals, 120);
    }

    #[test]
    fn one_lap_solution_is_sane() {
        let spec = toy_spec(1, 3e6);
        let sol = solve_stint(&spec).unwrap();
        let veh = &spec.vehicle;
        // Boundary crawl speed.
        assert!((sol.v_mps[0] - veh.v_min).abs() < 1e-3);
        assert!((sol.v_mps[60] - veh.v_min).abs() < 1e-3);
        // Positive, plausible lap time: 600 m at 5..60 m/s.
        assert!(sol.t_stint_s > 10.0 && sol.t_stint_s < 120.0, "{}", sol.t_stint_s);
        assert_eq!(sol.lap_times_s.len(), 1);
        assert!((sol.lap_times_s[0] - sol.t_stint_s).abs() < 1e-9);
        // Speed caps respected.
        let caps = stint_speed_caps(&spec.track, veh, 1).unwrap();
        for (v, cap) in sol.v_mps.iter().zip(&caps) {
            assert!(*v <= cap + 1e-5, "v = {v}, cap = {cap}");
        }
        // Battery never below floor, never above cap.
        for e in &sol.e_b_j {
            assert!(*e >= veh.e_b_min - 1.0);
            assert!(*e <= veh.e_b_max + 1.0);
        }
        // Energy was actually spent.
        assert!(sol.e_b_j[60] < sol.e_b_j[0]);
        assert!(sol.max_violation < 1e-5, "violation {}", sol.max_violation);
    }

    #[test]
    fn mid_stint_lap_crossing_is_not_pit_limited() {
        let spec = toy_spec(2, 3e6);
        let sol = solve_stint(&spec).unwrap();
        let v_pit = spec.track.v_pit_max;
        // The car crosses the line at node 60 flat out...
        assert!(
            sol.v_mps[60] > v_pit + 5.0,
            "lap crossing pinned to pit speed: v = {}",
            sol.v_mps[60]
        );
        // ...but respects the pit arc at both stint ends.
        assert!(sol.v_mps[0] <= v_pit + 1e-5);
        assert!(sol.v_mps[120] <= v_pit + 1e-5);
        assert!(sol.v_mps[1] <= v_pit + 1e-5);
        assert!(sol.v_mps[119] <= v_pit + 1e-5);
    }

    #[test]
    fn more_charge_is_never_slower() {
        let full = solve_stint(&toy_spec(2, 3e6)).unwrap();
        // Budget 60% of the unconstrained appetite: necessarily binding.
        let used = full.e_b_j[0] - full.e_b_j.last().unwrap();
        let tight_e_b0 = toy_vehicle().e_b_min + 0.6 * used;
        let tight = solve_stint(&toy_spec(2, tight_e_b0)).unwrap();
        let min_margin = tight
            .e_b_j
            .iter()
            .map(|e| e - toy_vehicle().e_b_min)
            .fold(f64::INFINITY, f64::min);
        assert!(
            tight.energy_limited,
            "full used {used}, tight budget {}, terminal {:?}, min margin {min_margin}, t_full {}, t_tight {}",
            tight_e_b0 - toy_vehicle().e_b_min,
            tight.e_b_j.last(),
            full.t_stint_s,
            tight.t_stint_s,
        );
        assert!(full.t_stint_s <= tight.t_stint_s + 1e-6);
    }

    #[test]
    fn starving_stint_reports_missing_energy() {
        let err = solve_stint(&toy_spec(2, 1.05e6)).unwrap_err();
        match err {
            Error::Infeasible(report) => {
                let missing = report.missing_energy_j.expect("elastic diagnosis");
                assert!(missing > 0.0, "missing = {missing}");
            }
            other => panic!("expected infeasibility, got {other}"),
        }
    }

    #[test]
    fn repeated_solves_are_bitwise_identical() {
        let a = solve_stint(&toy_spec(1, 2.5e6)).unwrap();
        let b = solve_stint(&toy_spec(1, 2.5e6)).unwrap();
        assert_eq!(a.t_stint_s.to_bits(), b.t_stint_s.to_bits());
        assert_eq!(a.v_mps, b.v_mps);
    }

    #[test]
    fn trajectory_csv_has_one_row_per_node() {
        let sol = solve_stint(&toy_spec(1, 3e6)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        write_trajectory_csv(&sol, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 62); // header + 61 nodes
        assert!(text.starts_with("s_m,v_mps,dtds_spm,E_kin_J,E_b_J,"));
    }
}
