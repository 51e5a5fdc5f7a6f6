//! Convex component-loss models: the PSD quadratic-form loss fit shared by
//! the electric-machine and stint-time surfaces, the quadratic inverter
//! model, the Thévenin battery model, and the charge-time → initial-energy
//! map.

use nalgebra::{Cholesky, Matrix3, SMatrix, SVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::vehicle::check_psd;

/// Which basis the quadratic form is expressed in.
///
/// Both bases share the same algebraic trick: with x the root-form basis and
/// y the polynomial form, (xᵀQx)·denominator = yᵀQy, which is what lets the
/// loss enter the optimization as a rotated second-order cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisId {
    /// x = [1/√v, √v, F_m/√v]; y = [1, v, F_m]; denominator v.
    EmLoss,
    /// x = [1/√t_c, √t_c, N/√t_c]; y = [1, t_c, N]; denominator t_c.
    StintSurface,
}

/// A fitted symmetric PSD quadratic form plus fit provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsdQuadraticModel {
    /// Row-major 3×3 symmetric PSD coefficient matrix.
    pub q: [[f64; 3]; 3],
    pub basis_id: BasisId,
    /// RMSE / max|target| over the fitting samples.
    pub fit_rmse_normalized: f64,
}

impl PsdQuadraticModel {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.q[r][c])
    }

    /// Evaluates xᵀQx for a basis triple.
    pub fn eval(&self, x: [f64; 3]) -> f64 {
        let mut acc = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                acc += x[r] * self.q[r][c] * x[c];
            }
        }
        acc
    }

    /// Symmetric PSD square root C with CᵀC = Q, for lowering xᵀQx onto a
    /// cone as ‖Cx‖². Tolerates (clips) tiny negative eigenvalues.
    pub fn sqrt_matrix(&self) -> Matrix3<f64> {
        sqrt_psd(&self.matrix())
    }

    pub fn validate(&self) -> Result<()> {
        check_psd("Q", &self.q)
    }
}

// 3×3 symmetric matrices are packed isometrically as
// [Q00, √2·Q01, √2·Q02, Q11, √2·Q12, Q22], so the packed Euclidean norm
// equals the matrix Frobenius norm — which keeps the eigenvalue-clipping
// projection nonexpansive in the splitting's own metric. The matching
// design row still satisfies row·packed = xᵀQx.
type Vec6 = SVector<f64, 6>;
type Mat6 = SMatrix<f64, 6, 6>;

const SQRT2: f64 = std::f64::consts::SQRT_2;

fn design_row(x: [f64; 3]) -> Vec6 {
    Vec6::from_column_slice(&[
        x[0] * x[0],
        SQRT2 * x[0] * x[1],
        SQRT2 * x[0] * x[2],
        x[1] * x[1],
        SQRT2 * x[1] * x[2],
        x[2] * x[2],
    ])
}

fn pack(m: &Matrix3<f64>) -> Vec6 {
    Vec6::from_column_slice(&[
        m[(0, 0)],
        SQRT2 * m[(0, 1)],
        SQRT2 * m[(0, 2)],
        m[(1, 1)],
        SQRT2 * m[(1, 2)],
        m[(2, 2)],
    ])
}

fn unpack(v: &Vec6) -> Matrix3<f64> {
    let (a, b, c) = (v[1] / SQRT2, v[2] / SQRT2, v[4] / SQRT2);
    Matrix3::new(v[0], a, b, a, v[3], c, b, c, v[5])
}

/// Symmetric PSD square root via eigendecomposition (tolerates singular Q).
pub(crate) fn sqrt_psd(q: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = q.symmetric_eigen();
    let mut out = Matrix3::zeros();
    for i in 0..3 {
        let lam = eig.eigenvalues[i].max(0.0).sqrt();
        let v = eig.eigenvectors.column(i);
        out += lam * v * v.transpose();
    }
    out
}

fn project_psd(m: &Matrix3<f64>) -> Matrix3<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut out = Matrix3::zeros();
    for i in 0..3 {
        let lam = eig.eigenvalues[i].max(0.0);
        let v = eig.eigenvectors.column(i);
        out += lam * v * v.transpose();
    }
    out
}

/// Fits Q ⪰ 0 minimizing Σ (xᵀQx − target)² by an alternating scheme:
/// a (regularized) least-squares update followed by eigenvalue clipping onto
/// the PSD cone, with a running correction term so the iteration converges
/// to the constrained optimum rather than cycling. Stops when the combined
/// step norm drops below 1e-10 (relative to the iterate scale) or after
/// 10,000 iterations.
///
/// The basis components often differ by many orders of magnitude (e.g.
/// 1/√v versus F_m/√v), which would wreck both the conditioning test and
/// the splitting. The fit therefore equilibrates the basis diagonally,
/// x̃ = S⁻¹x, solves for Q̃ in the scaled space, and maps back through the
/// congruence Q = S⁻ᵀQ̃S⁻¹ — which preserves positive semidefiniteness, so
/// eigenvalue clipping in the scaled space remains a valid projection.
pub fn fit_psd_quadratic(samples: &[([f64; 3], f64)], basis_id: BasisId) -> Result<PsdQuadraticModel> {
    if samples.len() < 6 {
        return Err(Error::IllPosedFit(format!(
            "need at least 6 samples to determine a 3×3 symmetric form, got {}",
            samples.len()
        )));
    }
    for (x, t) in samples {
        if !(x.iter().all(|v| v.is_finite()) && t.is_finite()) {
            return Err(Error::IllPosedFit("non-finite sample".into()));
        }
    }

    // Per-component RMS scales of the basis and of the targets.
    let n = samples.len() as f64;
    let mut scale = [0.0f64; 3];
    let mut t_sq = 0.0;
    for (x, t) in samples {
        for k in 0..3 {
            scale[k] += x[k] * x[k];
        }
        t_sq += t * t;
    }
    for s in &mut scale {
        *s = (*s / n).sqrt();
        if !(*s > 0.0) {
            return Err(Error::IllPosedFit(
                "a basis component is identically zero across all samples".into(),
            ));
        }
    }
    let t_scale = if t_sq > 0.0 { (t_sq / n).sqrt() } else { 1.0 };

    let mut gram = Mat6::zeros();
    let mut rhs = Vec6::zeros();
    for (x, t) in samples {
        let xs = [x[0] / scale[0], x[1] / scale[1], x[2] / scale[2]];
        let row = design_row(xs);
        gram += row * row.transpose();
        rhs += row * (*t / t_scale);
    }

    let eig = gram.symmetric_eigen();
    let lam_max = eig.eigenvalues.max();
    let lam_min = eig.eigenvalues.min();
    if lam_min <= 0.0 || lam_max / lam_min > 1e12 {
        return Err(Error::IllPosedFit(format!(
            "sample design is rank deficient: normal-matrix condition {:.3e}",
            if lam_min <= 0.0 { f64::INFINITY } else { lam_max / lam_min }
        )));
    }

    let q_ls = Cholesky::new(gram)
        .ok_or_else(|| Error::IllPosedFit("normal matrix not positive definite".into()))?
        .solve(&rhs);

    // Splitting weight: heavy enough to keep the PSD projection meaningful,
    // light enough not to slow the least-squares pull.
    let rho = gram.trace() / 6.0;
    let chol = Cholesky::new(gram + Mat6::identity() * rho)
        .ok_or_else(|| Error::IllPosedFit("regularized normal matrix not SPD".into()))?;

    // The congruence back-map amplifies scaled-space error by up to
    // max(1/sᵢsⱼ), so converge well past the accuracy wanted in raw units.
    let tol = 1e-12;
    let max_iter = 50_000;
    let mut z = pack(&project_psd(&unpack(&q_ls)));
    let mut corr = Vec6::zeros();
    let mut step = f64::INFINITY;
    for _ in 0..max_iter {
        let q = chol.solve(&(rhs + (z - corr) * rho));
        let z_new = pack(&project_psd(&unpack(&(q + corr))));
        corr += q - z_new;
        step = (z_new - z).norm() + (q - z_new).norm();
        z = z_new;
        if step < tol * z.norm().max(1.0) {
            break;
        }
    }
    if !(step < tol * z.norm().max(1.0)) {
        return Err(Error::FitDiverged(format!(
            "PSD projection loop stalled: step norm {step:.3e} after {max_iter} iterations"
        )));
    }

    // Undo the equilibration: Q = t_scale · S⁻ᵀ Q̃ S⁻¹ (congruence keeps PSD).
    let q_scaled = project_psd(&unpack(&z));
    let q_mat = Matrix3::from_fn(|r, c| q_scaled[(r, c)] * t_scale / (scale[r] * scale[c]));

    let mut sq_sum = 0.0;
    let mut t_max: f64 = 0.0;
    for (x, t) in samples {
        let mut pred = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                pred += x[r] * q_mat[(r, c)] * x[c];
            }
        }
        sq_sum += (pred - t) * (pred - t);
        t_max = t_max.max(t.abs());
    }
    let rmse = (sq_sum / samples.len() as f64).sqrt();
    let model = PsdQuadraticModel {
        q: [
            [q_mat[(0, 0)], q_mat[(0, 1)], q_mat[(0, 2)]],
            [q_mat[(1, 0)], q_mat[(1, 1)], q_mat[(1, 2)]],
            [q_mat[(2, 0)], q_mat[(2, 1)], q_mat[(2, 2)]],
        ],
        basis_id,
        fit_rmse_normalized: if t_max > 0.0 { rmse / t_max } else { 0.0 },
    };
    Ok(model)
}

/// Electric-machine loss force xᵀQ_m x with x = [1/√v, √v, F_m/√v].
pub fn em_loss_force(model: &PsdQuadraticModel, v: f64, f_m: f64, v_min: f64) -> Result<f64> {
    if v < v_min {
        return Err(Error::Domain(format!(
            "EM loss evaluated below v_min: v = {v}, v_min = {v_min}"
        )));
    }
    let rv = v.sqrt();
    Ok(model.eval([1.0 / rv, rv, f_m / rv]))
}

/// Inverter DC-side force: (F_dc − F_ac)·lethargy = α·F_ac².
pub fn inverter_dc_force(alpha: f64, f_ac: f64, lethargy: f64) -> Result<f64> {
    if !(lethargy > 0.0) {
        return Err(Error::Domain(format!(
            "inverter evaluation needs lethargy > 0, got {lethargy}"
        )));
    }
    Ok(f_ac + alpha * f_ac * f_ac / lethargy)
}

/// Internal battery power from terminal power: the smaller root of
/// P_i²/P_sc − P_i + P_b = 0.
pub fn battery_internal_power(p_sc: f64, p_b: f64) -> Result<f64> {
    if p_b > p_sc / 4.0 {
        return Err(Error::Domain(format!(
            "battery cannot deliver P_b = {p_b} W; draw limit is P_sc/4 = {} W",
            p_sc / 4.0
        )));
    }
    Ok((p_sc - (p_sc * p_sc - 4.0 * p_sc * p_b).sqrt()) / 2.0)
}

/// Charging map: time at the plug → battery energy at stint start, assuming
/// charging always starts from the lower state-of-energy bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChargeModel {
    pub e_b_min: f64,
    pub e_b_max: f64,
    pub t_charge_max: f64,
    #[serde(default)]
    pub profile: ChargeProfile,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChargeProfile {
    /// Energy grows linearly in time over [0, t_charge_max].
    #[default]
    ConstantPower,
    /// Piecewise-linear (t_charge, E_b0) table; must span the whole range.
    Table { points: Vec<[f64; 2]> },
}

impl ChargeModel {
    pub fn constant_power(e_b_min: f64, e_b_max: f64, t_charge_max: f64) -> Self {
        ChargeModel {
            e_b_min,
            e_b_max,
            t_charge_max,
            profile: ChargeProfile::ConstantPower,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e_b_max > self.e_b_min && self.e_b_min >= 0.0) {
            return Err(Error::Validation(format!(
                "charge model needs e_b_max ({}) > e_b_min ({}) ≥ 0",
                self.e_b_max, self.e_b_min
            )));
        }
        if !(self.t_charge_max > 0.0) {
            return Err(Error::Validation(format!(
                "t_charge_max must be positive, got {}",
                self.t_charge_max
            )));
        }
        if let ChargeProfile::Table { points } = &self.profile {
            if points.len() < 2 {
                return Err(Error::Validation("charge table needs ≥ 2 points".into()));
            }
            let tol_t = 1e-9 * self.t_charge_max;
            let tol_e = 1e-9 * self.e_b_max;
            if (points[0][0]).abs() > tol_t || (points[0][1] - self.e_b_min).abs() > tol_e {
                return Err(Error::Validation(
                    "charge table must start at (0, e_b_min)".into(),
                ));
            }
            let last = points.last().unwrap();
            if (last[0] - self.t_charge_max).abs() > tol_t || (last[1] - self.e_b_max).abs() > tol_e {
                return Err(Error::Validation(
                    "charge table must end at (t_charge_max, e_b_max)".into(),
                ));
            }
            for w in points.windows(2) {
                if !(w[1][0] > w[0][0] && w[1][1] > w[0][1]) {
                    return Err(Error::Validation(
                        "charge table must be strictly increasing in time and energy".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let model: ChargeModel = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Battery energy at stint start after charging for `t_charge` seconds.
pub fn charge_energy(model: &ChargeModel, t_charge: f64) -> Result<f64> {
    if !(0.0..=model.t_charge_max * (1.0 + 1e-12)).contains(&t_charge) {
        return Err(Error::Domain(format!(
            "t_charge = {t_charge} outside [0, {}]",
            model.t_charge_max
        )));
    }
    let t = t_charge.min(model.t_charge_max);
    match &model.profile {
        ChargeProfile::ConstantPower => {
            Ok(model.e_b_min + t / model.t_charge_max * (model.e_b_max - model.e_b_min))
        }
        ChargeProfile::Table { points } => {
            let mut i = 0;
            while i + 2 < points.len() && points[i + 1][0] <= t {
                i += 1;
            }
            let (p0, p1) = (points[i], points[i + 1]);
            let w = ((t - p0[0]) / (p1[0] - p0[0])).clamp(0.0, 1.0);
            Ok(p0[1] * (1.0 - w) + p1[1] * w)
        }
    }
}

/// One electric-machine loss measurement: `F_ac` is the electrical input
/// force at speed `v` while delivering mechanical force `F_m`.
#[derive(Debug, Clone, Copy)]
pub struct EmLossSample {
    pub v_mps: f64,
    pub f_m_n: f64,
    pub f_ac_n: f64,
}

/// Generates a deterministic synthetic EM loss map from a reference Q: the
/// stand-in for a dynamometer dataset.
pub fn synth_em_loss_samples(
    q_m: &[[f64; 3]; 3],
    v_range: (f64, f64),
    f_m_range: (f64, f64),
    count: usize,
    seed: u64,
) -> Vec<EmLossSample> {
    let model = PsdQuadraticModel {
        q: *q_m,
        basis_id: BasisId::EmLoss,
        fit_rmse_normalized: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v = rng.random_range(v_range.0..=v_range.1);
            let f_m = rng.random_range(f_m_range.0..=f_m_range.1);
            let rv = v.sqrt();
            let loss = model.eval([1.0 / rv, rv, f_m / rv]);
            EmLossSample {
                v_mps: v,
                f_m_n: f_m,
                f_ac_n: f_m + loss,
            }
        })
        .collect()
}

pub fn write_loss_samples_csv(samples: &[EmLossSample], path: impl AsRef<Path>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path.as_ref())?;
    wtr.write_record(["v_mps", "F_m_N", "F_ac_N"])?;
    for s in samples {
        wtr.write_record(&[
            format!("{}", s.v_mps),
            format!("{}", s.f_m_n),
            format!("{}", s.f_ac_n),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_loss_samples_csv(path: impl AsRef<Path>) -> Result<Vec<EmLossSample>> {
    let display = path.as_ref().display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())
        .map_err(|e| Error::Parse {
            path: display.clone(),
            line: 0,
            msg: e.to_string(),
        })?;
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| Error::Parse {
            path: display.clone(),
            line,
            msg: e.to_string(),
        })?;
        let get = |i: usize| -> Result<f64> {
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
                    msg: e.to_string(),
                })
        };
        out.push(EmLossSample {
            v_mps: get(0)?,
            f_m_n: get(1)?,
            f_ac_n: get(2)?,
        });
    }
    Ok(out)
}

/// Random symmetric PSD matrix with eigenvalues drawn from `eig_range`,
/// rotated by a random orthogonal basis. Test/synthetic-data helper.
pub fn random_psd(seed: u64, eig_range: (f64, f64)) -> [[f64; 3]; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Random rotation via QR of a random matrix.
    let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let qr = a.qr();
    let q = qr.q();
    let mut lam = Matrix3::zeros();
    for i in 0..3 {
        lam[(i, i)] = rng.random_range(eig_range.0..=eig_range.1);
    }
    let m = q * lam * q.transpose();
    let sym = (m + m.transpose()) * 0.5;
    [
        [sym[(0, 0)], sym[(0, 1)], sym[(0, 2)]],
        [sym[(1, 0)], sym[(1, 1)], sym[(1, 2)]],
        [sym[(2, 0)], sym[(2, 1)], sym[(2, 2)]],
    ]
}
