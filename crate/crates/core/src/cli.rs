//! Command implementations behind the `enduro` binary. Each function reads
//! its inputs, runs one pipeline stage, and writes artifacts into the
//! configured output directory. Every command is deterministic for a given
//! configuration and seed: reruns produce byte-identical files, and nothing
//! here embeds timestamps or machine identity.

use serde::Serialize;
use std::path::Path;

use crate::baseline::{flat_out_baseline, BaselineSpec};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::powertrain::{
    charge_energy, fit_psd_quadratic, read_loss_samples_csv, synth_em_loss_samples, BasisId,
    ChargeModel, ChargeProfile, EmLossSample, PsdQuadraticModel,
};
use crate::presets;
use crate::race::{solve_race, RaceSpec};
use crate::stint::{solve_stint, write_stint_summary_json, write_trajectory_csv, StintSpec};
use crate::surface::{fit_stint_surface, sweep_stints, write_samples_csv, StintTimeSurface, SweepSpec};
use crate::track::{load_track, synth_track, TrackProfile};
use crate::validation::{
    stint_velocity_surface, validate_strategy, write_optimal_combinations_csv,
    write_velocity_surface_csv,
};
use crate::vehicle::VehicleParams;

// Artifact names inside the output directory. Stages communicate through
// these files, so they are fixed rather than configurable.
pub const TRACK_CSV: &str = "track.csv";
pub const VEHICLE_JSON: &str = "vehicle.json";
pub const CHARGE_JSON: &str = "charge_model.json";
pub const EM_SAMPLES_CSV: &str = "em_loss_samples.csv";
pub const CONFIG_JSON: &str = "config.json";
pub const EM_MODEL_JSON: &str = "em_model.json";
pub const INVERTER_MODEL_JSON: &str = "inverter_model.json";
pub const CHARGE_FIT_JSON: &str = "charge_fit.json";
pub const STINT_TRAJECTORY_CSV: &str = "stint_trajectory.csv";
pub const STINT_SUMMARY_JSON: &str = "stint_summary.json";
pub const SWEEP_SAMPLES_CSV: &str = "stint_samples.csv";
pub const SURFACE_JSON: &str = "stint_surface.json";
pub const STRATEGY_JSON: &str = "race_strategy.json";
pub const TIMELINE_CSV: &str = "race_timeline.csv";
pub const BASELINE_JSON: &str = "flat_out_baseline.json";
pub const VELOCITY_CSV: &str = "velocity_surface.csv";
pub const COMBINATIONS_CSV: &str = "optimal_combinations.csv";
pub const REPORT_JSON: &str = "validation_report.json";

/// The three model inputs every solving command starts from.
pub struct Inputs {
    pub vehicle: VehicleParams,
    pub track: TrackProfile,
    pub charge: ChargeModel,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    Ok(Inputs {
        vehicle: VehicleParams::from_json_file(&cfg.vehicle)?,
        track: load_track(&cfg.track, cfg.delta_s_m, cfg.v_pit_max_mps, cfg.v_cap_mps)?,
        charge: ChargeModel::from_json_file(&cfg.charge)?,
    })
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| {
        Error::Config(format!(
            "cannot create output directory {}: {e}",
            cfg.out_dir.display()
        ))
    })
}

/// Runs `f` inside a worker pool of `jobs` threads (0 = the global default,
/// sized to the logical cores). Only the stint sweep parallelizes.
fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if jobs == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot build a {jobs}-thread pool: {e}")))?;
    pool.install(f)
}

fn artifact_missing(what: &str, path: &Path, produced_by: &str) -> Error {
    Error::Config(format!(
        "{what} not found at {} — run `{produced_by}` first",
        path.display()
    ))
}

/// Writes a complete synthetic fixture: track CSV, vehicle and charge JSON,
/// a seeded synthetic EM loss dataset, and a ready-to-run config pointing
/// at them with preset-appropriate grids.
pub fn cmd_synth_track(
    preset: &str,
    delta_s: Option<f64>,
    out_dir: &Path,
    seed: u64,
) -> Result<()> {
    use crate::config::{ModeCfg, RaceSettings, Seconds, SweepGrids};

    let (synth, vehicle, charge, delta_default, sweep, race) = match preset {
        "desk" => (
            presets::desk_circuit(),
            presets::desk_vehicle(),
            presets::desk_charge_model(),
            8.0,
            SweepGrids {
                n_laps: vec![3, 6, 9, 12, 15, 18],
                t_charge: [60.0, 125.0, 190.0, 255.0, 320.0, 385.0, 450.0]
                    .map(Seconds)
                    .to_vec(),
            },
            RaceSettings {
                t_race: Seconds(7200.0),
                max_stints: 16,
                mode: ModeCfg::Integer,
                big_m: None,
            },
        ),
        "toy" => (
            presets::toy_circuit(),
            presets::toy_vehicle(),
            presets::toy_charge_model(),
            10.0,
            SweepGrids {
                n_laps: vec![1, 2, 3],
                t_charge: [20.0, 40.0, 60.0].map(Seconds).to_vec(),
            },
            RaceSettings {
                t_race: Seconds(1200.0),
                max_stints: 8,
                mode: ModeCfg::Integer,
                big_m: None,
            },
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}' (expected 'desk' or 'toy')"
            )))
        }
    };
    let delta_s = delta_s.unwrap_or(delta_default);
    std::fs::create_dir_all(out_dir).map_err(|e| {
        Error::Config(format!(
            "cannot create output directory {}: {e}",
            out_dir.display()
        ))
    })?;

    let track = synth_track(&synth, delta_s)?;
    track.write_csv(out_dir.join(TRACK_CSV))?;
    vehicle.to_json_file(out_dir.join(VEHICLE_JSON))?;
    charge.to_json_file(out_dir.join(CHARGE_JSON))?;

    let samples = synth_em_loss_samples(
        &vehicle.q_m,
        (vehicle.v_min, track.v_cap),
        (-vehicle.f_torque_max(), vehicle.f_torque_max()),
        240,
        seed,
    );
    crate::powertrain::write_loss_samples_csv(&samples, out_dir.join(EM_SAMPLES_CSV))?;

    let cfg = RunConfig {
        vehicle: VEHICLE_JSON.into(),
        track: TRACK_CSV.into(),
        charge: CHARGE_JSON.into(),
        delta_s_m: delta_s,
        v_pit_max_mps: track.v_pit_max,
        v_cap_mps: track.v_cap,
        out_dir: ".".into(),
        seed,
        jobs: 0,
        sweep,
        race,
        validate_tol: None,
    };
    cfg.to_json_file(out_dir.join(CONFIG_JSON))?;
    println!(
        "synth-track: wrote the {preset} fixture ({} m lap at {delta_s} m spacing) to {}",
        track.s_lap,
        out_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EmFitReport {
    model: PsdQuadraticModel,
    n_samples: usize,
}

#[derive(Debug, Serialize)]
struct InverterFitReport {
    alpha_per_w: f64,
    fit_rmse_normalized: f64,
    n_samples: usize,
}

#[derive(Serialize)]
struct ChargeFitReport {
    model: ChargeModel,
    /// Largest relative deviation of the table from the straight
    /// constant-power chord — how non-linear the charge curve is.
    chord_deviation_normalized: f64,
    n_samples: usize,
}

/// Fits powertrain models from measurement CSVs: the EM loss matrix from
/// `v_mps,F_m_N,F_ac_N` samples, the inverter loss coefficient from
/// `p_ac_w,p_dc_w` samples, and a tabulated charge curve from `t_s,e_b_j`
/// samples. At least one input must be given.
pub fn cmd_fit(
    cfg: &RunConfig,
    em: Option<&Path>,
    inverter: Option<&Path>,
    charge_samples: Option<&Path>,
) -> Result<()> {
    if em.is_none() && inverter.is_none() && charge_samples.is_none() {
        return Err(Error::Config(
            "nothing to fit: pass --em, --inverter, or --charge-samples".into(),
        ));
    }
    ensure_out_dir(cfg)?;
    if let Some(path) = em {
        let samples = read_loss_samples_csv(path)?;
        let model = fit_em_loss(&samples)?;
        let out = cfg.out_dir.join(EM_MODEL_JSON);
        let report = EmFitReport {
            n_samples: samples.len(),
            model,
        };
        std::fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")?;
        println!(
            "fit: EM loss matrix from {} samples, normalized rmse {:.3e} -> {}",
            report.n_samples,
            report.model.fit_rmse_normalized,
            out.display()
        );
    }
    if let Some(path) = inverter {
        let report = fit_inverter(path)?;
        let out = cfg.out_dir.join(INVERTER_MODEL_JSON);
        std::fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")?;
        println!(
            "fit: inverter alpha {:.6e} 1/W from {} samples, normalized rmse {:.3e} -> {}",
            report.alpha_per_w,
            report.n_samples,
            report.fit_rmse_normalized,
            out.display()
        );
    }
    if let Some(path) = charge_samples {
        let report = fit_charge_table(path)?;
        let out = cfg.out_dir.join(CHARGE_FIT_JSON);
        std::fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")?;
        println!(
            "fit: charge table over {} samples, chord deviation {:.3e} -> {}",
            report.n_samples,
            report.chord_deviation_normalized,
            out.display()
        );
    }
    Ok(())
}

/// EM loss fit: targets are measured loss forces `F_ac − F_m` against the
/// machine basis.
pub fn fit_em_loss(samples: &[EmLossSample]) -> Result<PsdQuadraticModel> {
    let data: Vec<([f64; 3], f64)> = samples
        .iter()
        .map(|s| {
            let rv = s.v_mps.sqrt();
            ([1.0 / rv, rv, s.f_m_n / rv], s.f_ac_n - s.f_m_n)
        })
        .collect();
    fit_psd_quadratic(&data, BasisId::EmLoss)
}

fn read_two_column_csv(
    path: &Path,
    expected: [&str; 2],
) -> Result<Vec<[f64; 2]>> {
    let display = path.display().to_string();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: display.clone(),
        line,
        msg,
    };
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| parse_err(0, e.to_string()))?;
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
        let get = |k: usize| -> Result<f64> {
            rec.get(k)
                .ok_or_else(|| parse_err(line, format!("missing column {}", expected[k])))?
                .trim()
                .parse()
                .map_err(|e| parse_err(line, format!("bad {}: {e}", expected[k])))
        };
        out.push([get(0)?, get(1)?]);
    }
    Ok(out)
}

/// One-parameter least squares for the inverter model
/// `p_dc − p_ac = α · p_ac²` over `p_ac_w,p_dc_w` samples.
fn fit_inverter(path: &Path) -> Result<InverterFitReport> {
    let rows = read_two_column_csv(path, ["p_ac_w", "p_dc_w"])?;
    let (mut num, mut den) = (0.0, 0.0);
    for [p_ac, p_dc] in &rows {
        num += (p_dc - p_ac) * p_ac * p_ac;
        den += p_ac.powi(4);
    }
    if !(den > 0.0) {
        return Err(Error::IllPosedFit(
            "inverter fit needs at least one sample with nonzero AC power".into(),
        ));
    }
    let alpha = num / den;
    let (mut sq, mut loss_max) = (0.0, 0.0_f64);
    for [p_ac, p_dc] in &rows {
        let r = (p_dc - p_ac) - alpha * p_ac * p_ac;
        sq += r * r;
        loss_max = loss_max.max((p_dc - p_ac).abs());
    }
    let rmse = (sq / rows.len() as f64).sqrt();
    Ok(InverterFitReport {
        alpha_per_w: alpha,
        fit_rmse_normalized: if loss_max > 0.0 { rmse / loss_max } else { 0.0 },
        n_samples: rows.len(),
    })
}

/// Builds a piecewise-linear charge model from `t_s,e_b_j` samples and
/// measures how far it bends from the constant-power chord.
fn fit_charge_table(path: &Path) -> Result<ChargeFitReport> {
    let points = read_two_column_csv(path, ["t_s", "e_b_j"])?;
    if points.len() < 2 {
        return Err(Error::IllPosedFit(
            "charge fit needs at least two (t, E) samples".into(),
        ));
    }
    let first = points[0];
    let last = *points.last().unwrap();
    let model = ChargeModel {
        e_b_min: first[1],
        e_b_max: last[1],
        t_charge_max: last[0],
        profile: ChargeProfile::Table { points: points.clone() },
    };
    model.validate()?;
    let span = model.e_b_max - model.e_b_min;
    let chord = |t: f64| model.e_b_min + t / model.t_charge_max * span;
    let deviation = points
        .iter()
        .map(|[t, e]| (e - chord(*t)).abs() / span)
        .fold(0.0, f64::max);
    Ok(ChargeFitReport {
        model,
        chord_deviation_normalized: deviation,
        n_samples: points.len(),
    })
}

/// Solves one minimum-time stint for `n_laps` laps after `t_charge_s`
/// seconds at the plug, writing the space-sampled trajectory and a summary.
pub fn cmd_stint(cfg: &RunConfig, n_laps: usize, t_charge_s: f64) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    ensure_out_dir(cfg)?;
    let e_b0 = charge_energy(&inputs.charge, t_charge_s)?;
    let spec = StintSpec {
        track: inputs.track,
        vehicle: inputs.vehicle,
        n_laps,
        e_b0,
    };
    let sol = solve_stint(&spec)?;
    write_trajectory_csv(&sol, cfg.out_dir.join(STINT_TRAJECTORY_CSV))?;
    write_stint_summary_json(&sol, cfg.out_dir.join(STINT_SUMMARY_JSON))?;
    println!(
        "stint: {n_laps} laps after {t_charge_s} s charge -> {:.3} s, \
         energy limited: {}, max violation {:.2e}",
        sol.t_stint_s, sol.energy_limited, sol.max_violation
    );
    Ok(())
}

/// Sweeps the stint solver over the configured grid (in parallel) and fits
/// the stint-time surface.
pub fn cmd_surface(cfg: &RunConfig) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    ensure_out_dir(cfg)?;
    let spec = SweepSpec {
        track: inputs.track,
        vehicle: inputs.vehicle,
        charge: inputs.charge,
        n_laps_grid: cfg.sweep.n_laps.clone(),
        t_charge_grid: cfg.t_charge_grid_s(),
    };
    let samples = with_pool(cfg.jobs, || sweep_stints(&spec))?;
    write_samples_csv(cfg.out_dir.join(SWEEP_SAMPLES_CSV), &samples)?;
    let surface = fit_stint_surface(&samples)?;
    surface.to_json_file(cfg.out_dir.join(SURFACE_JSON))?;
    let feasible = samples.iter().filter(|s| s.feasible).count();
    println!(
        "surface: {feasible}/{} cells feasible, normalized rmse {:.3e} -> {}",
        samples.len(),
        surface.model.fit_rmse_normalized,
        cfg.out_dir.join(SURFACE_JSON).display()
    );
    Ok(())
}

/// Solves the race strategy on the fitted surface, then simulates the
/// flat-out reference strategy and reports the margin over it.
pub fn cmd_race(cfg: &RunConfig) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    ensure_out_dir(cfg)?;
    let surface_path = cfg.out_dir.join(SURFACE_JSON);
    if !surface_path.is_file() {
        return Err(artifact_missing("stint surface", &surface_path, "surface"));
    }
    let surface = StintTimeSurface::from_json_file(&surface_path)?;
    let spec = RaceSpec {
        surface,
        t_race_s: cfg.race.t_race.0,
        max_stints: cfg.race.max_stints,
        big_m_s: cfg.race.big_m.map(|s| s.0),
    };
    let strategy = solve_race(&spec, cfg.race.mode.into())?;
    strategy.to_json_file(cfg.out_dir.join(STRATEGY_JSON))?;
    strategy.write_timeline_csv(cfg.out_dir.join(TIMELINE_CSV))?;

    let base_spec = BaselineSpec {
        track: inputs.track,
        vehicle: inputs.vehicle,
        charge: inputs.charge,
        t_race_s: cfg.race.t_race.0,
        max_stints: 100_000,
    };
    let baseline = flat_out_baseline(&base_spec)?;
    baseline.to_json_file(cfg.out_dir.join(BASELINE_JSON))?;

    let stints = strategy.stints.iter().filter(|s| s.active).count();
    let margin = strategy.total_laps - baseline.total_laps as f64;
    println!(
        "race: {} laps over {stints} stints in {} s ({} nodes); \
         flat-out baseline {} laps, margin {margin:+.3} laps ({:+.1}%)",
        strategy.total_laps,
        cfg.race.t_race.0,
        strategy.nodes_explored,
        baseline.total_laps,
        100.0 * margin / (baseline.total_laps as f64).max(1.0)
    );
    Ok(())
}

/// Audits the computed strategy against the average-velocity surface
/// derived from the fitted stint-time surface.
pub fn cmd_validate(cfg: &RunConfig) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    ensure_out_dir(cfg)?;
    let surface_path = cfg.out_dir.join(SURFACE_JSON);
    if !surface_path.is_file() {
        return Err(artifact_missing("stint surface", &surface_path, "surface"));
    }
    let strategy_path = cfg.out_dir.join(STRATEGY_JSON);
    if !strategy_path.is_file() {
        return Err(artifact_missing("race strategy", &strategy_path, "race"));
    }
    let surface = StintTimeSurface::from_json_file(&surface_path)?;
    let strategy: crate::race::RaceStrategy =
        serde_json::from_str(&std::fs::read_to_string(&strategy_path)?)?;

    let vsurf = stint_velocity_surface(
        &surface,
        inputs.track.s_lap,
        &cfg.sweep.n_laps,
        &cfg.t_charge_grid_s(),
        inputs.charge.t_charge_max,
    )?;
    let tol = cfg
        .validate_tol
        .map(|s| s.0)
        .unwrap_or_else(|| cfg.default_validate_tol_s());
    let report = validate_strategy(&strategy, &vsurf, tol)?;
    write_velocity_surface_csv(cfg.out_dir.join(VELOCITY_CSV), &vsurf)?;
    write_optimal_combinations_csv(cfg.out_dir.join(COMBINATIONS_CSV), &vsurf)?;
    report.to_json_file(cfg.out_dir.join(REPORT_JSON))?;
    println!(
        "validate: {} stints checked at tol {tol} s, {} flagged -> {}",
        report.checks.len(),
        report.flags,
        cfg.out_dir.join(REPORT_JSON).display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::powertrain::random_psd;

    #[test]
    fn em_fit_recovers_the_generating_matrix() {
        let q = random_psd(7, (0.1, 2.0));
        let samples = synth_em_loss_samples(&q, (5.0, 60.0), (-5000.0, 5000.0), 120, 11);
        let model = fit_em_loss(&samples).unwrap();
        let mut err = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                err += (model.q[r][c] - q[r][c]).powi(2);
            }
        }
        assert!(err.sqrt() < 1e-6, "ΔQ Frobenius norm {}", err.sqrt());
    }

    #[test]
    fn zero_loss_samples_fit_a_zero_matrix() {
        let samples: Vec<EmLossSample> = (1..=40)
            .map(|i| {
                let v = 5.0 + (i % 8) as f64 * 6.0;
                let f_m = -4000.0 + (i % 5) as f64 * 1900.0;
                EmLossSample {
                    v_mps: v,
                    f_m_n: f_m,
                    f_ac_n: f_m,
                }
            })
            .collect();
        let model = fit_em_loss(&samples).unwrap();
        for row in &model.q {
            for &x in row {
                assert!(x.abs() < 1e-8, "expected a near-zero matrix, got {x}");
            }
        }
    }

    #[test]
    fn inverter_fit_recovers_alpha_from_exact_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inv.csv");
        let alpha = 4e-8;
        let mut w = csv::Writer::from_path(&path).unwrap();
        w.write_record(["p_ac_w", "p_dc_w"]).unwrap();
        for i in 1..=20 {
            let p_ac = 10_000.0 * i as f64;
            let p_dc = p_ac + alpha * p_ac * p_ac;
            w.write_record([p_ac.to_string(), p_dc.to_string()]).unwrap();
        }
        w.flush().unwrap();
        drop(w);
        let fit = fit_inverter(&path).unwrap();
        assert!((fit.alpha_per_w - alpha).abs() < 1e-12 * alpha.max(1.0));
        assert!(fit.fit_rmse_normalized < 1e-9);
    }

    #[test]
    fn charge_table_fit_reproduces_the_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("charge.csv");
        let mut w = csv::Writer::from_path(&path).unwrap();
        w.write_record(["t_s", "e_b_j"]).unwrap();
        // A saturating curve: fast early charging that tapers off.
        let pts = [
            (0.0, 1.0e6),
            (100.0, 1.9e6),
            (200.0, 2.5e6),
            (300.0, 2.8e6),
            (400.0, 3.0e6),
        ];
        for (t, e) in pts {
            w.write_record([t.to_string(), e.to_string()]).unwrap();
        }
        w.flush().unwrap();
        drop(w);
        let fit = fit_charge_table(&path).unwrap();
        assert_eq!(fit.n_samples, 5);
        assert!(fit.chord_deviation_normalized > 0.05, "curve visibly bends");
        for (t, e) in pts {
            let got = charge_energy(&fit.model, t).unwrap();
            assert!((got - e).abs() < 1e-6, "table must interpolate its knots");
        }
    }

    #[test]
    fn malformed_two_column_csv_reports_path_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inv.csv");
        std::fs::write(&path, "p_ac_w,p_dc_w\n100,abc\n").unwrap();
        match fit_inverter(&path) {
            Err(Error::Parse { path: p, line, .. }) => {
                assert!(p.ends_with("inv.csv"));
                assert_eq!(line, 2);
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }
}
