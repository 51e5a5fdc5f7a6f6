//! Average-speed audit of a race strategy against its stint-time surface.
//!
//! A stint together with the recharge that precedes it covers `N · s_lap`
//! meters in `t_charge + t_stint` seconds; its average velocity measures how
//! well the pair trades charging time against lap pace. Sweeping that
//! average over the surface yields, per stint length, the charge time a
//! stint of that length should ideally use. A computed strategy is then
//! validated stint by stint: every taken stint after the first should sit on
//! that ideal curve to within a grid cell. The first stint is excluded —
//! its charge happens before the clock starts, so charging time does not
//! trade against race time there and the average-velocity figure does not
//! apply.

use serde::Serialize;
use std::path::Path;

use crate::error::{Error, Result};
use crate::race::RaceStrategy;
use crate::surface::StintTimeSurface;

/// One grid cell of the average-velocity surface.
#[derive(Debug, Clone, Serialize)]
pub struct VelocityCell {
    pub n_laps: usize,
    pub t_charge_s: f64,
    pub v_bar_mps: f64,
}

/// Best charge time for one stint length and the average velocity achieved.
#[derive(Debug, Clone, Serialize)]
pub struct OptimalCombination {
    pub n_laps: usize,
    pub t_charge_s: f64,
    pub v_bar_mps: f64,
}

/// Average stint velocity over a (lap count, charge time) grid plus the
/// per-lap-count optimal charge times.
#[derive(Debug, Clone, Serialize)]
pub struct VelocitySurface {
    pub s_lap_m: f64,
    /// Hard ceiling on charge time [s]; the optimum is clipped here.
    pub t_charge_max_s: f64,
    pub n_laps_grid: Vec<usize>,
    pub t_charge_grid: Vec<f64>,
    /// Row-major: lap counts outer, charge times inner.
    pub cells: Vec<VelocityCell>,
    /// One entry per lap count in `n_laps_grid`, ascending.
    pub optimal_combinations: Vec<OptimalCombination>,
}

/// Resolution of the charge-time optimum search [s].
const ARGMAX_RESOLUTION_S: f64 = 0.1;

/// Golden-section maximization of a unimodal function on `[a, b]`, run to
/// [`ARGMAX_RESOLUTION_S`]. Returns the interval midpoint at termination.
fn golden_max(mut a: f64, mut b: f64, f: &dyn Fn(f64) -> Result<f64>) -> Result<f64> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    if b - a <= ARGMAX_RESOLUTION_S {
        return Ok(0.5 * (a + b));
    }
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > ARGMAX_RESOLUTION_S {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Builds the average-velocity surface for a fitted stint-time surface.
///
/// `v̄(N, t_c) = N · s_lap / (t_c + t_stint(N, t_c))`. Per lap count the
/// optimal charge time is located by golden-section to 0.1 s on the
/// surface's fitted charge-time range clipped at `t_charge_max_s`, then
/// sharpened against the interval ends and every grid charge time so the
/// reported optimum never loses to a tabulated cell.
pub fn stint_velocity_surface(
    surface: &StintTimeSurface,
    s_lap_m: f64,
    n_laps_grid: &[usize],
    t_charge_grid: &[f64],
    t_charge_max_s: f64,
) -> Result<VelocitySurface> {
    if !(s_lap_m.is_finite() && s_lap_m > 0.0) {
        return Err(Error::Validation(format!(
            "lap length must be positive, got {s_lap_m}"
        )));
    }
    if n_laps_grid.is_empty() || t_charge_grid.is_empty() {
        return Err(Error::Validation(
            "velocity surface needs nonempty lap-count and charge-time grids".into(),
        ));
    }
    if !n_laps_grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Validation(
            "lap-count grid must be strictly increasing".into(),
        ));
    }
    if !t_charge_grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Validation(
            "charge-time grid must be strictly increasing".into(),
        ));
    }
    if !(t_charge_max_s.is_finite() && t_charge_max_s > 0.0) {
        return Err(Error::Validation(format!(
            "t_charge_max must be positive, got {t_charge_max_s}"
        )));
    }
    let lo = surface.t_charge_range[0];
    let hi = surface.t_charge_range[1].min(t_charge_max_s);
    if !(lo > 0.0 && lo <= hi) {
        return Err(Error::Validation(format!(
            "charge-time search window [{lo}, {hi}] is empty"
        )));
    }

    let v_bar = |n: usize, tc: f64| -> Result<f64> {
        let t = surface.eval(n as f64, tc)?;
        let denom = tc + t;
        if !(denom.is_finite() && denom > 0.0) {
            return Err(Error::Validation(format!(
                "fitted stint time {t} s at N = {n}, t_charge = {tc} s breaks \
                 the average-velocity denominator"
            )));
        }
        Ok(n as f64 * s_lap_m / denom)
    };

    let mut cells = Vec::with_capacity(n_laps_grid.len() * t_charge_grid.len());
    let mut optimal = Vec::with_capacity(n_laps_grid.len());
    for &n in n_laps_grid {
        for &tc in t_charge_grid {
            cells.push(VelocityCell {
                n_laps: n,
                t_charge_s: tc,
                v_bar_mps: v_bar(n, tc)?,
            });
        }
        // v̄ is a positive constant over a convex positive denominator, so
        // it is unimodal in t_c and golden-section applies.
        let seed = golden_max(lo, hi, &|tc| v_bar(n, tc))?;
        let mut best_tc = seed;
        let mut best_v = v_bar(n, seed)?;
        for &tc in [lo, hi].iter().chain(t_charge_grid.iter()) {
            if tc < lo || tc > hi {
                continue;
            }
            let v = v_bar(n, tc)?;
            if v > best_v {
                best_v = v;
                best_tc = tc;
            }
        }
        optimal.push(OptimalCombination {
            n_laps: n,
            t_charge_s: best_tc,
            v_bar_mps: best_v,
        });
    }
    Ok(VelocitySurface {
        s_lap_m,
        t_charge_max_s,
        n_laps_grid: n_laps_grid.to_vec(),
        t_charge_grid: t_charge_grid.to_vec(),
        cells,
        optimal_combinations: optimal,
    })
}

/// Ideal charge time and velocity at a possibly fractional lap count, by
/// linear interpolation along the optimal-combination curve (clamped at the
/// grid ends). The curve is close to linear, so interpolation is a fair
/// target for lap counts between grid levels.
fn interp_optimal(vsurf: &VelocitySurface, n: f64) -> (f64, f64) {
    let combos = &vsurf.optimal_combinations;
    let first = &combos[0];
    if n <= first.n_laps as f64 {
        return (first.t_charge_s, first.v_bar_mps);
    }
    for w in combos.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let (na, nb) = (a.n_laps as f64, b.n_laps as f64);
        if n <= nb {
            let u = (n - na) / (nb - na);
            return (
                a.t_charge_s + u * (b.t_charge_s - a.t_charge_s),
                a.v_bar_mps + u * (b.v_bar_mps - a.v_bar_mps),
            );
        }
    }
    let last = combos.last().unwrap();
    (last.t_charge_s, last.v_bar_mps)
}

/// Verdict for one taken stint.
#[derive(Debug, Clone, Serialize)]
pub struct StintCheck {
    pub k: usize,
    pub n_laps: f64,
    pub t_charge_s: f64,
    /// Ideal charge time for this stint's lap count [s].
    pub t_charge_opt_s: f64,
    /// Average velocity the ideal combination achieves [m/s].
    pub v_bar_opt_mps: f64,
    /// |t_charge − t_charge_opt| [s].
    pub distance_s: f64,
    /// True for the opening stint, whose charge precedes the clock.
    pub excluded: bool,
    pub flagged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Strategy-vs-surface audit: per-stint distances and flags.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub tol_s: f64,
    pub checks: Vec<StintCheck>,
    /// Number of flagged (non-excluded) stints.
    pub flags: usize,
}

impl ValidationReport {
    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Checks every taken stint of a strategy against the optimal-combination
/// curve: a stint is flagged when its charge time sits more than `tol_s`
/// from the ideal charge time for its lap count. The opening stint is
/// reported but excluded from flagging — its charge time is spent before
/// the race clock starts, so no average-velocity optimum applies to it.
pub fn validate_strategy(
    strategy: &RaceStrategy,
    vsurf: &VelocitySurface,
    tol_s: f64,
) -> Result<ValidationReport> {
    if !(tol_s.is_finite() && tol_s > 0.0) {
        return Err(Error::Validation(format!(
            "flag tolerance must be positive, got {tol_s}"
        )));
    }
    let mut checks = Vec::new();
    let mut flags = 0;
    for stint in &strategy.stints {
        if !stint.active {
            continue;
        }
        let (tc_opt, v_opt) = interp_optimal(vsurf, stint.n_laps);
        let distance = (stint.t_charge_s - tc_opt).abs();
        let excluded = stint.k == 0;
        let flagged = !excluded && distance > tol_s;
        if flagged {
            flags += 1;
        }
        checks.push(StintCheck {
            k: stint.k,
            n_laps: stint.n_laps,
            t_charge_s: stint.t_charge_s,
            t_charge_opt_s: tc_opt,
            v_bar_opt_mps: v_opt,
            distance_s: distance,
            excluded,
            flagged,
            note: excluded.then(|| {
                "opening stint: its charge happens before the race clock starts, \
                 so the average-velocity optimum does not apply"
                    .into()
            }),
        });
    }
    Ok(ValidationReport {
        tol_s,
        checks,
        flags,
    })
}

/// Writes the velocity surface as CSV with columns
/// `N_laps,t_charge_s,v_bar_mps`.
pub fn write_velocity_surface_csv(path: impl AsRef<Path>, vsurf: &VelocitySurface) -> Result<()> {
    write_cells_csv(path, &vsurf.cells)
}

/// Writes the per-lap-count optimal combinations as CSV with columns
/// `N_laps,t_charge_s,v_bar_mps`.
pub fn write_optimal_combinations_csv(
    path: impl AsRef<Path>,
    vsurf: &VelocitySurface,
) -> Result<()> {
    let rows: Vec<VelocityCell> = vsurf
        .optimal_combinations
        .iter()
        .map(|c| VelocityCell {
            n_laps: c.n_laps,
            t_charge_s: c.t_charge_s,
            v_bar_mps: c.v_bar_mps,
        })
        .collect();
    write_cells_csv(path, &rows)
}

fn write_cells_csv(path: impl AsRef<Path>, rows: &[VelocityCell]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["N_laps", "t_charge_s", "v_bar_mps"])?;
    for r in rows {
        w.write_record([
            r.n_laps.to_string(),
            r.t_charge_s.to_string(),
            r.v_bar_mps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a velocity-surface CSV written by [`write_velocity_surface_csv`]
/// (or the optimal-combinations variant — same columns).
pub fn read_velocity_surface_csv(path: impl AsRef<Path>) -> Result<Vec<VelocityCell>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let expected = ["N_laps", "t_charge_s", "v_bar_mps"];
    let headers = r.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if headers != expected.as_slice() {
        return Err(parse_err(
            1,
            format!("expected header {expected:?}, got {headers:?}"),
        ));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let field = |k: usize| -> Result<&str> {
            rec.get(k)
                .ok_or_else(|| parse_err(line, format!("missing column {}", expected[k])))
        };
        out.push(VelocityCell {
            n_laps: field(0)?
                .parse()
                .map_err(|e| parse_err(line, format!("bad N_laps: {e}")))?,
            t_charge_s: field(1)?
                .parse()
                .map_err(|e| parse_err(line, format!("bad t_charge_s: {e}")))?,
            v_bar_mps: field(2)?
                .parse()
                .map_err(|e| parse_err(line, format!("bad v_bar_mps: {e}")))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::powertrain::{BasisId, PsdQuadraticModel};
    use crate::race::{RaceMode, RaceStrategy, StintPlan};

    /// Positive-definite sheet with a distinct interior charge-time optimum
    /// per lap count: t = 900/t_c + 1.2·t_c + 60·N + 900·N²/t_c.
    fn test_surface() -> StintTimeSurface {
        StintTimeSurface {
            model: PsdQuadraticModel {
                q: [[900.0, 0.0, 0.0], [0.0, 1.2, 30.0], [0.0, 30.0, 900.0]],
                basis_id: BasisId::StintSurface,
                fit_rmse_normalized: 0.0,
            },
            n_laps_range: [1.0, 18.0],
            t_charge_range: [60.0, 300.0],
        }
    }

    fn test_vsurf() -> VelocitySurface {
        let grid_n: Vec<usize> = (1..=18).collect();
        let grid_tc = [60.0, 100.0, 140.0, 180.0, 220.0, 260.0, 300.0];
        stint_velocity_surface(&test_surface(), 3504.0, &grid_n, &grid_tc, 300.0).unwrap()
    }

    fn strategy_with(stints: Vec<StintPlan>) -> RaceStrategy {
        let total_laps = stints
            .iter()
            .filter(|s| s.active)
            .map(|s| s.n_laps)
            .sum::<f64>();
        RaceStrategy {
            mode: RaceMode::IntegerLaps,
            t_race_s: 21_600.0,
            stints,
            total_laps,
            total_time_s: 21_600.0,
            bound_laps: total_laps,
            nodes_explored: 0,
        }
    }

    fn plan(k: usize, n: f64, tc: f64) -> StintPlan {
        StintPlan {
            k,
            active: true,
            n_laps: n,
            t_charge_s: tc,
            t_stint_s: 600.0,
        }
    }

    #[test]
    fn charging_that_buys_nothing_drives_the_optimum_to_the_left_edge() {
        // All-zero sheet: stint time ignores the charge time entirely, so
        // every second of charging is pure loss.
        let surface = StintTimeSurface {
            model: PsdQuadraticModel {
                q: [[0.0; 3]; 3],
                basis_id: BasisId::StintSurface,
                fit_rmse_normalized: 0.0,
            },
            n_laps_range: [1.0, 18.0],
            t_charge_range: [60.0, 300.0],
        };
        let vs = stint_velocity_surface(&surface, 3504.0, &[3, 9, 15], &[60.0, 300.0], 300.0)
            .unwrap();
        for c in &vs.optimal_combinations {
            assert_eq!(c.t_charge_s, 60.0, "N = {}", c.n_laps);
        }
    }

    #[test]
    fn argmax_never_loses_to_a_grid_cell() {
        let vs = test_vsurf();
        for combo in &vs.optimal_combinations {
            for cell in vs.cells.iter().filter(|c| c.n_laps == combo.n_laps) {
                assert!(
                    combo.v_bar_mps >= cell.v_bar_mps,
                    "N = {}: optimum {} loses to grid cell ({}, {})",
                    combo.n_laps,
                    combo.v_bar_mps,
                    cell.t_charge_s,
                    cell.v_bar_mps
                );
            }
        }
    }

    #[test]
    fn optimal_charge_time_rises_with_stint_length_until_it_saturates() {
        let vs = test_vsurf();
        let combos = &vs.optimal_combinations;
        for w in combos.windows(2) {
            assert!(
                w[1].t_charge_s >= w[0].t_charge_s - ARGMAX_RESOLUTION_S,
                "optimal charge time fell from {} to {} between N = {} and {}",
                w[0].t_charge_s,
                w[1].t_charge_s,
                w[0].n_laps,
                w[1].n_laps
            );
        }
        // The interior optimum √(900(1+N²)/2.2) crosses 300 s at N ≈ 14.8,
        // so long stints pin their charge time at the ceiling exactly.
        for c in combos.iter().filter(|c| c.n_laps >= 15) {
            assert_eq!(c.t_charge_s, vs.t_charge_max_s, "N = {}", c.n_laps);
        }
        for c in combos.iter().filter(|c| c.n_laps <= 13) {
            assert!(c.t_charge_s < vs.t_charge_max_s, "N = {}", c.n_laps);
        }
        // And the unsaturated optima track the closed form to resolution.
        for c in combos.iter().filter(|c| c.n_laps <= 13) {
            let n = c.n_laps as f64;
            let ideal = (900.0 * (1.0 + n * n) / 2.2).sqrt();
            if ideal >= 60.0 {
                assert!(
                    (c.t_charge_s - ideal).abs() <= ARGMAX_RESOLUTION_S,
                    "N = {}: argmax {} vs closed form {ideal}",
                    c.n_laps,
                    c.t_charge_s
                );
            }
        }
    }

    #[test]
    fn on_curve_strategy_raises_no_flags_and_stint_zero_is_excluded() {
        let vs = test_vsurf();
        let opt = |n: usize| {
            vs.optimal_combinations
                .iter()
                .find(|c| c.n_laps == n)
                .unwrap()
                .t_charge_s
        };
        // Opening stint deliberately off-curve at the full charge ceiling.
        let strategy = strategy_with(vec![
            plan(0, 12.0, 300.0),
            plan(1, 9.0, opt(9)),
            plan(2, 6.0, opt(6)),
            StintPlan {
                k: 3,
                active: false,
                n_laps: 0.0,
                t_charge_s: 0.0,
                t_stint_s: 0.0,
            },
        ]);
        let report = validate_strategy(&strategy, &vs, 40.0).unwrap();
        assert_eq!(report.flags, 0);
        assert_eq!(report.checks.len(), 3, "inactive stints are skipped");
        assert!(report.checks[0].excluded);
        assert!(!report.checks[0].flagged);
        assert!(report.checks[0].note.is_some());
        assert!(report.checks[0].distance_s > 40.0, "off-curve but excluded");
    }

    #[test]
    fn perturbing_one_stint_raises_exactly_one_flag() {
        let vs = test_vsurf();
        let opt = |n: usize| {
            vs.optimal_combinations
                .iter()
                .find(|c| c.n_laps == n)
                .unwrap()
                .t_charge_s
        };
        let tol = 20.0;
        let strategy = strategy_with(vec![
            plan(0, 12.0, 300.0),
            plan(1, 9.0, opt(9) + 3.0 * tol),
            plan(2, 6.0, opt(6)),
        ]);
        let report = validate_strategy(&strategy, &vs, tol).unwrap();
        assert_eq!(report.flags, 1);
        assert!(report.checks[1].flagged);
        assert!((report.checks[1].distance_s - 3.0 * tol).abs() < 1e-9);
    }

    #[test]
    fn fractional_lap_counts_interpolate_the_curve() {
        let vs = test_vsurf();
        let (tc_9, _) = interp_optimal(&vs, 9.0);
        let (tc_10, _) = interp_optimal(&vs, 10.0);
        let (tc_mid, _) = interp_optimal(&vs, 9.5);
        assert!((tc_mid - 0.5 * (tc_9 + tc_10)).abs() < 1e-12);
        // Clamped outside the grid.
        let (tc_low, _) = interp_optimal(&vs, 0.25);
        assert_eq!(tc_low, vs.optimal_combinations[0].t_charge_s);
        let (tc_high, _) = interp_optimal(&vs, 99.0);
        assert_eq!(
            tc_high,
            vs.optimal_combinations.last().unwrap().t_charge_s
        );
    }

    #[test]
    fn velocity_surface_csv_round_trips_bit_for_bit() {
        let vs = test_vsurf();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("vbar.csv");
        write_velocity_surface_csv(&a, &vs).unwrap();
        let cells = read_velocity_surface_csv(&a).unwrap();
        assert_eq!(cells.len(), vs.cells.len());
        for (read, orig) in cells.iter().zip(&vs.cells) {
            assert_eq!(read.n_laps, orig.n_laps);
            assert_eq!(read.t_charge_s.to_bits(), orig.t_charge_s.to_bits());
            assert_eq!(read.v_bar_mps.to_bits(), orig.v_bar_mps.to_bits());
        }
        // Rewriting what was read reproduces the file byte for byte.
        let b = dir.path().join("vbar2.csv");
        let rows: Vec<VelocityCell> = cells;
        write_cells_csv(&b, &rows).unwrap();
        assert_eq!(
            std::fs::read(&a).unwrap(),
            std::fs::read(&b).unwrap()
        );
    }

    #[test]
    fn report_serializes_deterministically() {
        let vs = test_vsurf();
        let strategy = strategy_with(vec![plan(0, 12.0, 300.0), plan(1, 9.0, 150.0)]);
        let r1 = serde_json::to_string(&validate_strategy(&strategy, &vs, 40.0).unwrap()).unwrap();
        let r2 = serde_json::to_string(&validate_strategy(&strategy, &vs, 40.0).unwrap()).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn empty_grids_are_rejected() {
        let s = test_surface();
        assert!(stint_velocity_surface(&s, 3504.0, &[], &[60.0], 300.0).is_err());
        assert!(stint_velocity_surface(&s, 3504.0, &[3], &[], 300.0).is_err());
        assert!(stint_velocity_surface(&s, -1.0, &[3], &[60.0], 300.0).is_err());
    }
}
