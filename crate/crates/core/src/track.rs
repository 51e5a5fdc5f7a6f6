//! Circuit geometry: distance-sampled curvature/inclination with a pit-lane
//! arc, plus the quasi-steady grip-limited maximum-speed profile.
//!
//! One lap is sampled uniformly at `delta_s`; the node at `S_lap` is the same
//! physical point as node 0, so the lap grid stores `S_lap/delta_s` samples.
//! The pit lane is modeled in-line (its arc replaces the equivalent main
//! track arc), keeping stint distance exactly `N_laps · S_lap`.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::vehicle::VehicleParams;

#[derive(Debug, Clone)]
pub struct TrackProfile {
    /// Lap sample positions [m]: 0, Δs, …, S_lap − Δs.
    pub s_grid: Vec<f64>,
    /// Signed curvature per sample [1/m].
    pub kappa: Vec<f64>,
    /// Inclination per sample [rad].
    pub theta: Vec<f64>,
    /// Whether a sample lies in the pit-lane arc.
    pub pit_mask: Vec<bool>,
    /// Lap length [m]; equals `s_grid.len() · delta_s` exactly.
    pub s_lap: f64,
    /// Grid spacing [m].
    pub delta_s: f64,
    /// Pit-lane speed limit [m/s].
    pub v_pit_max: f64,
    /// Global top-speed cap [m/s].
    pub v_cap: f64,
}

/// Synthetic circuit description: consecutive arc segments plus the pit arc.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub segments: Vec<SynthSegment>,
    pub pit: PitSpec,
    pub v_cap_mps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSegment {
    pub length_m: f64,
    pub kappa_per_m: f64,
    #[serde(default)]
    pub theta_rad: f64,
}

/// Pit arc in lap coordinates; the arc `[start_m, start_m + length_m)` is
/// taken modulo the lap and must contain the lap start/end point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PitSpec {
    pub start_m: f64,
    pub length_m: f64,
    pub v_pit_max_mps: f64,
}

impl TrackProfile {
    pub fn n_lap_samples(&self) -> usize {
        self.s_grid.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.s_grid.len();
        if n < 2 {
            return Err(Error::Validation("track needs at least 2 samples".into()));
        }
        if self.kappa.len() != n || self.theta.len() != n || self.pit_mask.len() != n {
            return Err(Error::Validation(
                "track sample arrays have mismatched lengths".into(),
            ));
        }
        for i in 1..n {
            if self.s_grid[i] <= self.s_grid[i - 1] {
                return Err(Error::Validation(format!(
                    "s_grid not strictly increasing at index {i}"
                )));
            }
            let step = self.s_grid[i] - self.s_grid[i - 1];
            if (step - self.delta_s).abs() > 1e-9 * self.delta_s {
                return Err(Error::Validation(format!(
                    "non-uniform spacing at index {i}: {step} vs delta_s {}",
                    self.delta_s
                )));
            }
        }
        if (self.s_lap - n as f64 * self.delta_s).abs() > 1e-9 * self.s_lap {
            return Err(Error::Validation(format!(
                "S_lap {} does not equal n_samples·delta_s {}",
                self.s_lap,
                n as f64 * self.delta_s
            )));
        }
        if !(self.v_pit_max > 0.0 && self.v_cap > self.v_pit_max) {
            return Err(Error::Validation(format!(
                "need v_cap ({}) > v_pit_max ({}) > 0",
                self.v_cap, self.v_pit_max
            )));
        }
        self.pit_arc()?;
        Ok(())
    }

    /// Splits the pit arc into its two lap-coordinate runs: the prefix
    /// (samples from lap start forward — pit exit) and the suffix (samples
    /// before lap end — pit entry). Errors unless the mask is one contiguous
    /// circular arc containing the lap start.
    pub fn pit_arc(&self) -> Result<(usize, usize)> {
        let n = self.pit_mask.len();
        if !self.pit_mask[0] {
            return Err(Error::Validation(
                "pit arc must contain the lap start/end point".into(),
            ));
        }
        let mut prefix = 0;
        while prefix < n && self.pit_mask[prefix] {
            prefix += 1;
        }
        if prefix == n {
            return Err(Error::Validation(
                "pit arc covers the whole lap; it must be shorter than S_lap".into(),
            ));
        }
        let mut suffix = 0;
        while suffix < n - prefix && self.pit_mask[n - 1 - suffix] {
            suffix += 1;
        }
        // Everything between the prefix run and the suffix run must be false,
        // otherwise the arc is not contiguous.
        if self.pit_mask[prefix..n - suffix].iter().any(|&p| p) {
            return Err(Error::Validation(
                "pit mask is not one contiguous arc".into(),
            ));
        }
        Ok((prefix, suffix))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path.as_ref())?;
        wtr.write_record(["s_m", "kappa_per_m", "theta_rad", "pit"])
            .map_err(csv_err)?;
        for i in 0..self.s_grid.len() {
            wtr.write_record(&[
                format!("{}", self.s_grid[i]),
                format!("{}", self.kappa[i]),
                format!("{}", self.theta[i]),
                if self.pit_mask[i] { "1".into() } else { "0".to_string() },
            ])
            .map_err(csv_err)?;
        }
        // Closing row at S_lap duplicating the start marks the loop closure.
        wtr.write_record(&[
            format!("{}", self.s_lap),
            format!("{}", self.kappa[0]),
            format!("{}", self.theta[0]),
            if self.pit_mask[0] { "1".into() } else { "0".to_string() },
        ])
        .map_err(csv_err)?;
        wtr.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Validation(format!("CSV write failed: {e}"))
}

/// Loads a lap from the CSV schema `s_m,kappa_per_m,theta_rad,pit` and
/// resamples it onto a uniform grid of spacing ≈ `delta_s` (the spacing is
/// snapped so that it divides the lap length exactly). The file must close
/// the loop: its last row sits at `S_lap` and must repeat the first row's
/// curvature/inclination within 1e-6.
///
/// Speed limits are not part of the CSV schema and ride in as arguments.
pub fn load_track(
    path: impl AsRef<Path>,
    delta_s: f64,
    v_pit_max: f64,
    v_cap: f64,
) -> Result<TrackProfile> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: display.clone(),
            line: 0,
            msg: e.to_string(),
        })?;
    {
        let hdr = rdr.headers().map_err(|e| Error::Parse {
            path: display.clone(),
            line: 1,
            msg: e.to_string(),
        })?;
        let expect = ["s_m", "kappa_per_m", "theta_rad", "pit"];
        if hdr.len() != 4 || hdr.iter().zip(expect).any(|(a, b)| a != b) {
            return Err(Error::Parse {
                path: display.clone(),
                line: 1,
                msg: format!("expected header s_m,kappa_per_m,theta_rad,pit, got {hdr:?}"),
            });
        }
    }
    let mut s = Vec::new();
    let mut kappa = Vec::new();
    let mut theta = Vec::new();
    let mut pit = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| Error::Parse {
            path: display.clone(),
            line,
            msg: e.to_string(),
        })?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| Error::Parse {
                    path: display.clone(),
                    line,
                    msg: format!("missing column {i}"),
                })?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse {
                    path: display.clone(),
                    line,
                    msg: format!("bad float in column {i}: {e}"),
                })
        };
        s.push(field(0)?);
        kappa.push(field(1)?);
        theta.push(field(2)?);
        let p = field(3)?;
        pit.push(p != 0.0);
    }
    if s.len() < 3 {
        return Err(Error::Validation(format!(
            "{display}: need at least 3 samples to describe a lap"
        )));
    }
    for i in 1..s.len() {
        if s[i] <= s[i - 1] {
            return Err(Error::Validation(format!(
                "{display}: distance column not strictly increasing at row {}",
                i + 2
            )));
        }
    }
    if s[0] != 0.0 {
        return Err(Error::Validation(format!(
            "{display}: first sample must sit at s = 0, got {}",
            s[0]
        )));
    }
    let s_lap = *s.last().unwrap();
    let last = s.len() - 1;
    let closure = (kappa[last] - kappa[0]).abs().max((theta[last] - theta[0]).abs());
    if closure > 1e-6 {
        return Err(Error::Validation(format!(
            "{display}: loop does not close; first/last curvature or inclination differ by {closure:.3e}"
        )));
    }

    let n = (s_lap / delta_s).round().max(1.0) as usize;
    let step = s_lap / n as f64;
    let mut out = TrackProfile {
        s_grid: (0..n).map(|i| i as f64 * step).collect(),
        kappa: Vec::with_capacity(n),
        theta: Vec::with_capacity(n),
        pit_mask: Vec::with_capacity(n),
        s_lap,
        delta_s: step,
        v_pit_max,
        v_cap,
    };
    let mut j = 0usize;
    for i in 0..n {
        let x = i as f64 * step;
        while j + 1 < last && s[j + 1] <= x {
            j += 1;
        }
        // Linear interpolation over [s_j, s_{j+1}].
        let span = s[j + 1] - s[j];
        let w = ((x - s[j]) / span).clamp(0.0, 1.0);
        out.kappa.push(kappa[j] * (1.0 - w) + kappa[j + 1] * w);
        out.theta.push(theta[j] * (1.0 - w) + theta[j + 1] * w);
        // Booleans take the nearer input sample.
        out.pit_mask.push(if w < 0.5 { pit[j] } else { pit[j + 1] });
    }
    out.validate()?;
    Ok(out)
}

/// Builds a deterministic lap from consecutive arc segments. The requested
/// spacing is snapped so that it divides the geometric lap length exactly;
/// curvature and inclination are piecewise constant per segment.
pub fn synth_track(spec: &SynthSpec, delta_s: f64) -> Result<TrackProfile> {
    if spec.segments.is_empty() {
        return Err(Error::Validation("synthetic spec has no segments".into()));
    }
    if !(delta_s > 0.0) {
        return Err(Error::Validation(format!("delta_s must be > 0, got {delta_s}")));
    }
    for (i, seg) in spec.segments.iter().enumerate() {
        if !(seg.length_m > 0.0) {
            return Err(Error::Validation(format!(
                "segment {i} has nonpositive length {}",
                seg.length_m
            )));
        }
    }
    let s_lap: f64 = spec.segments.iter().map(|seg| seg.length_m).sum();
    let turn: f64 = spec
        .segments
        .iter()
        .map(|seg| seg.length_m * seg.kappa_per_m)
        .sum();
    let winding = turn / std::f64::consts::TAU;
    if (winding - winding.round()).abs() > 1e-6 {
        return Err(Error::Validation(format!(
            "segments do not close the loop: total heading change {turn:.9} rad is not a multiple of 2π"
        )));
    }
    if !(spec.pit.length_m > 0.0 && spec.pit.length_m < s_lap) {
        return Err(Error::Validation(format!(
            "pit arc length {} must lie strictly between 0 and S_lap {}",
            spec.pit.length_m, s_lap
        )));
    }

    let n = (s_lap / delta_s).round().max(1.0) as usize;
    let step = s_lap / n as f64;
    let mut kappa = Vec::with_capacity(n);
    let mut theta = Vec::with_capacity(n);
    let mut pit_mask = Vec::with_capacity(n);
    let bounds: Vec<f64> = spec
        .segments
        .iter()
        .scan(0.0, |acc, seg| {
            *acc += seg.length_m;
            Some(*acc)
        })
        .collect();
    let pit_start = spec.pit.start_m.rem_euclid(s_lap);
    let pit_end = pit_start + spec.pit.length_m; // may exceed s_lap (wraps)
    let mut seg_idx = 0usize;
    for i in 0..n {
        let x = i as f64 * step;
        while seg_idx + 1 < spec.segments.len() && x >= bounds[seg_idx] {
            seg_idx += 1;
        }
        let seg = &spec.segments[seg_idx];
        kappa.push(seg.kappa_per_m);
        theta.push(seg.theta_rad);
        let in_pit = if pit_end <= s_lap {
            x >= pit_start && x < pit_end
        } else {
            x >= pit_start || x < pit_end - s_lap
        };
        pit_mask.push(in_pit);
    }
    let out = TrackProfile {
        s_grid: (0..n).map(|i| i as f64 * step).collect(),
        kappa,
        theta,
        pit_mask,
        s_lap,
        delta_s: step,
        v_pit_max: spec.pit.v_pit_max_mps,
        v_cap: spec.v_cap_mps,
    };
    out.validate()?;
    Ok(out)
}

/// Lateral grip limit per lap sample, before any pit clipping: the largest v
/// with m·v²·|κ| ≤ μ·(m·g·cosθ + ½·c_l·A_f·ρ·v²), capped at `v_cap`. When
/// downforce grows grip faster than speed demands it (denominator ≤ 0) the
/// sample is not laterally limited.
pub fn lateral_vmax(track: &TrackProfile, veh: &VehicleParams) -> Vec<f64> {
    let n = track.s_grid.len();
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        let kappa = track.kappa[i].abs();
        let v_lat = if kappa == 0.0 {
            track.v_cap
        } else {
            let denom = veh.m_tot * kappa - 0.5 * veh.mu * veh.c_l * veh.a_f * veh.rho;
            if denom <= 0.0 {
                track.v_cap
            } else {
                (veh.mu * veh.m_tot * veh.g * track.theta[i].cos() / denom).sqrt()
            }
        };
        v.push(v_lat.min(track.v_cap));
    }
    v
}

/// Per-sample maximum speed: lateral limit capped at `v_cap`, additionally
/// clipped to the pit limit on pit samples.
pub fn compute_vmax_profile(track: &TrackProfile, veh: &VehicleParams) -> Vec<f64> {
    let mut v = lateral_vmax(track, veh);
    for (vi, &pit) in v.iter_mut().zip(&track.pit_mask) {
        if pit {
            *vi = vi.min(track.v_pit_max);
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn oval_spec() -> SynthSpec {
        SynthSpec {
            segments: vec![
                SynthSegment { length_m: 400.0, kappa_per_m: 0.0, theta_rad: 0.0 },
                SynthSegment {
                    length_m: 100.0 * std::f64::consts::PI,
                    kappa_per_m: 0.01,
                    theta_rad: 0.0,
                },
                SynthSegment { length_m: 400.0, kappa_per_m: 0.0, theta_rad: 0.0 },
                SynthSegment {
                    length_m: 100.0 * std::f64::consts::PI,
                    kappa_per_m: 0.01,
                    theta_rad: 0.0,
                },
            ],
            pit: PitSpec { start_m: 0.0, length_m: 200.0, v_pit_max_mps: 16.7 },
            v_cap_mps: 95.0,
        }
    }

    #[test]
    fn oval_lap_length() {
        let track = synth_track(&oval_spec(), 4.0).unwrap();
        let expect = 800.0 + 200.0 * std::f64::consts::PI;
        assert!((track.s_lap - expect).abs() < 1e-9);
        assert!((track.n_lap_samples() as f64 * track.delta_s - track.s_lap).abs() < 1e-9);
    }

    #[test]
    fn empty_segment_list_rejected() {
        let mut spec = oval_spec();
        spec.segments.clear();
        assert!(synth_track(&spec, 4.0).is_err());
    }

    #[test]
    fn non_closing_loop_rejected() {
        let mut spec = oval_spec();
        spec.segments[1].kappa_per_m = 0.009; // half-turn now ≠ π
        assert!(synth_track(&spec, 4.0).is_err());
    }

    #[test]
    fn pit_arc_sample_count() {
        let track = synth_track(&oval_spec(), 4.0).unwrap();
        let n_pit = track.pit_mask.iter().filter(|&&p| p).count();
        let expect = (200.0 / track.delta_s).ceil() as usize;
        assert_eq!(n_pit, expect);
        track.pit_arc().unwrap();
    }

    #[test]
    fn wrapped_pit_arc_contains_start() {
        let mut spec = oval_spec();
        let s_lap = 800.0 + 200.0 * std::f64::consts::PI;
        spec.pit = PitSpec { start_m: s_lap - 120.0, length_m: 200.0, v_pit_max_mps: 16.7 };
        let track = synth_track(&spec, 4.0).unwrap();
        let (prefix, suffix) = track.pit_arc().unwrap();
        assert!(prefix > 0 && suffix > 0);
    }

    #[test]
    fn pit_arc_missing_lap_start_rejected() {
        let mut spec = oval_spec();
        spec.pit = PitSpec { start_m: 500.0, length_m: 200.0, v_pit_max_mps: 16.7 };
        assert!(synth_track(&spec, 4.0).is_err());
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_track(&oval_spec(), 4.0).unwrap();
        let b = synth_track(&oval_spec(), 4.0).unwrap();
        assert_eq!(a.kappa, b.kappa);
        assert_eq!(a.s_grid, b.s_grid);
        assert_eq!(a.pit_mask, b.pit_mask);
    }

    #[test]
    fn straight_csv_round_trip() {
        // 1000 m straight, Δs = 4 → 250 intervals.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("straight.csv");
        let mut text = String::from("s_m,kappa_per_m,theta_rad,pit\n");
        for i in 0..=100 {
            let s = i as f64 * 10.0;
            let pit = if i <= 2 || i >= 99 { 1 } else { 0 };
            text.push_str(&format!("{s},0,0,{pit}\n"));
        }
        std::fs::write(&path, text).unwrap();
        let track = load_track(&path, 4.0, 16.7, 95.0).unwrap();
        assert_eq!(track.n_lap_samples(), 250);
        assert!((track.s_lap - 1000.0).abs() < 1e-12);
        assert!(track.kappa.iter().all(|&k| k == 0.0));
    }

    #[test]
    fn circle_csv_constant_curvature() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("circle.csv");
        let r = 100.0;
        let s_lap = std::f64::consts::TAU * r;
        let mut text = String::from("s_m,kappa_per_m,theta_rad,pit\n");
        let rows = 200;
        for i in 0..=rows {
            let s = i as f64 / rows as f64 * s_lap;
            let pit = if i <= 4 || i == rows { 1 } else { 0 };
            text.push_str(&format!("{s},0.01,0,{pit}\n"));
        }
        std::fs::write(&path, text).unwrap();
        let track = load_track(&path, 4.0, 16.7, 95.0).unwrap();
        assert!(track.kappa.iter().all(|&k| (k - 0.01).abs() < 1e-12));
    }

    #[test]
    fn decreasing_distance_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "s_m,kappa_per_m,theta_rad,pit\n0,0,0,1\n10,0,0,0\n5,0,0,0\n20,0,0,1\n",
        )
        .unwrap();
        assert!(matches!(
            load_track(&path, 4.0, 16.7, 95.0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn vmax_closed_form_matches_root_find() {
        // κ=0.05, μ=1, c_l=0, θ=0 → v = √(μ·g/κ) ≈ 14.007 m/s.
        let mut veh = presets::desk_vehicle();
        veh.mu = 1.0;
        veh.c_l = 0.0;
        let spec = SynthSpec {
            segments: vec![
                SynthSegment { length_m: 60.0, kappa_per_m: 0.0, theta_rad: 0.0 },
                SynthSegment {
                    length_m: std::f64::consts::TAU / 0.05,
                    kappa_per_m: 0.05,
                    theta_rad: 0.0,
                },
            ],
            pit: PitSpec { start_m: 0.0, length_m: 20.0, v_pit_max_mps: 10.0 },
            v_cap_mps: 95.0,
        };
        let track = synth_track(&spec, 4.0).unwrap();
        let v = lateral_vmax(&track, &veh);
        let i = track.kappa.iter().position(|&k| k > 0.0).unwrap();
        assert!((v[i] - (veh.g / 0.05).sqrt()).abs() < 1e-9);
        assert!((v[i] - 14.007).abs() < 5e-3);

        // Independent bisection on the friction balance.
        let balance = |vv: f64| veh.m_tot * vv * vv * 0.05 - veh.mu * veh.m_tot * veh.g;
        let (mut lo, mut hi) = (1.0, 90.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if balance(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((v[i] - lo).abs() < 1e-6);
    }

    #[test]
    fn vmax_scales_with_sqrt_mu_without_downforce() {
        let mut veh = presets::desk_vehicle();
        veh.c_l = 0.0;
        let track = synth_track(&oval_spec(), 4.0).unwrap();
        let v1 = lateral_vmax(&track, &veh);
        let mut veh2 = veh.clone();
        veh2.mu *= 2.0;
        let v2 = lateral_vmax(&track, &veh2);
        for i in 0..v1.len() {
            if v1[i] < track.v_cap && v2[i] < track.v_cap {
                assert!((v2[i] / v1[i] - 2.0_f64.sqrt()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn vmax_pit_clipping_and_cap() {
        let veh = presets::desk_vehicle();
        let track = synth_track(&oval_spec(), 4.0).unwrap();
        let v = compute_vmax_profile(&track, &veh);
        for i in 0..v.len() {
            assert!(v[i] <= track.v_cap + 1e-12);
            if track.pit_mask[i] {
                assert!(v[i] <= track.v_pit_max + 1e-12);
            } else if track.kappa[i] == 0.0 {
                assert_eq!(v[i], track.v_cap);
            }
        }
    }
}
