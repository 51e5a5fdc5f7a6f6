//! A small builder for second-order cone programs, expressed in the form the
//! physics layers actually use: linear equalities/inequalities plus
//! *hyperbolic* blocks ‖z‖² ≤ u·w with u, w ≥ 0. The backend lowers each
//! hyperbolic block onto a standard second-order cone via the identity
//! ‖(2z, u−w)‖₂ ≤ u+w and hands the result to an interior-point solver.
//!
//! Every constraint carries a label; labels make infeasibility reports and
//! tightness audits readable and let tests assert on specific physics rows.

pub mod backend;

use serde::Serialize;

use crate::error::{Error, Result};

/// Handle to a decision variable of a [`ConicProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

/// Affine expression Σ cᵢ·xᵢ + constant.
#[derive(Debug, Clone, Default)]
pub struct AffExpr {
    /// Terms sorted by variable index with no duplicates or zero coefficients
    /// once canonicalized (which the program does on insertion).
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl AffExpr {
    pub fn zero() -> Self {
        AffExpr::default()
    }

    pub fn constant(c: f64) -> Self {
        AffExpr {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: VarId) -> Self {
        AffExpr {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    /// Adds `coeff · v` and returns self (builder style).
    pub fn term(mut self, v: VarId, coeff: f64) -> Self {
        self.terms.push((v, coeff));
        self
    }

    pub fn offset(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn plus(mut self, other: &AffExpr) -> Self {
        self.terms.extend_from_slice(&other.terms);
        self.constant += other.constant;
        self
    }

    pub fn minus(mut self, other: &AffExpr) -> Self {
        for (v, c) in &other.terms {
            self.terms.push((*v, -c));
        }
        self.constant -= other.constant;
        self
    }

    pub fn scaled(mut self, k: f64) -> Self {
        for (_, c) in &mut self.terms {
            *c *= k;
        }
        self.constant *= k;
        self
    }

    /// Sorts terms by variable, merges duplicates, drops exact zeros.
    pub fn canonicalize(&mut self) {
        self.terms.sort_by_key(|(v, _)| *v);
        let mut out: Vec<(VarId, f64)> = Vec::with_capacity(self.terms.len());
        for (v, c) in self.terms.drain(..) {
            match out.last_mut() {
                Some((lv, lc)) if *lv == v => *lc += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|(_, c)| *c != 0.0);
        self.terms = out;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .fold(self.constant, |acc, (v, c)| acc + c * x[v.0])
    }

    fn fmt_into(&self, out: &mut String, names: &[String]) {
        use std::fmt::Write;
        let mut first = true;
        for (v, c) in &self.terms {
            if !first {
                out.push_str(" + ");
            }
            write!(out, "{}*{}", c, names[v.0]).unwrap();
            first = false;
        }
        if self.constant != 0.0 || first {
            if !first {
                out.push_str(" + ");
            }
            write!(out, "{}", self.constant).unwrap();
        }
    }
}

/// ‖z‖² ≤ u·w with u ≥ 0, w ≥ 0.
#[derive(Debug, Clone)]
pub struct HyperbolicBlock {
    pub label: String,
    pub u: AffExpr,
    pub w: AffExpr,
    pub z: Vec<AffExpr>,
}

/// Minimize cᵀx subject to labeled equalities (= 0), inequalities (≥ 0),
/// hyperbolic blocks, and variable bounds.
#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    names: Vec<String>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    objective: Vec<f64>,
    pub(crate) scales: Vec<f64>,
    pub(crate) precision: Option<f64>,
    pub(crate) eqs: Vec<(String, AffExpr)>,
    pub(crate) ineqs: Vec<(String, AffExpr)>,
    pub(crate) cones: Vec<HyperbolicBlock>,
}

impl ConicProgram {
    pub fn new() -> Self {
        ConicProgram::default()
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn num_cones(&self) -> usize {
        self.cones.len()
    }

    /// Adds a variable with box bounds (±∞ allowed) and zero objective
    /// coefficient.
    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        let id = VarId(self.names.len());
        self.names.push(name.into());
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.push(0.0);
        self.scales.push(1.0);
        id
    }

    /// Declares the natural magnitude of a variable. The backend substitutes
    /// `x = scale·x̃` before handing the problem to the interior-point solver
    /// and maps the solution back, so callers always see original units.
    /// Essential when variables span several orders of magnitude (energies in
    /// joules next to reciprocal speeds): the solver's own equilibration
    /// cannot rescale individual rows inside a second-order cone block.
    pub fn set_scale(&mut self, v: VarId, scale: f64) {
        assert!(
            scale.is_finite() && scale > 0.0,
            "variable scale must be a positive finite number, got {scale}"
        );
        self.scales[v.0] = scale;
    }

    /// Requests a duality-gap tolerance tighter than the solver's stock
    /// 1e-8. Worth it on small, well-conditioned programs where the optimum
    /// sits on a low-curvature valley and the default gap leaves visible
    /// play in the minimizer; large discretized instances should keep the
    /// stock setting, which is what their conditioning supports.
    pub fn set_precision(&mut self, tol_gap: f64) {
        assert!(
            tol_gap.is_finite() && tol_gap > 0.0 && tol_gap < 1e-2,
            "precision must be a small positive gap tolerance, got {tol_gap}"
        );
        self.precision = Some(tol_gap);
    }

    pub fn bounds(&self, v: VarId) -> (f64, f64) {
        (self.lower[v.0], self.upper[v.0])
    }

    pub fn set_bounds(&mut self, v: VarId, lower: f64, upper: f64) {
        self.lower[v.0] = lower;
        self.upper[v.0] = upper;
    }

    /// Adds `coeff · v` to the minimization objective.
    pub fn add_objective(&mut self, v: VarId, coeff: f64) {
        self.objective[v.0] += coeff;
    }

    pub fn objective_coeffs(&self) -> &[f64] {
        &self.objective
    }

    pub fn add_eq(&mut self, label: impl Into<String>, mut expr: AffExpr) {
        expr.canonicalize();
        self.eqs.push((label.into(), expr));
    }

    /// Constrains `expr ≥ 0`.
    pub fn add_ineq(&mut self, label: impl Into<String>, mut expr: AffExpr) {
        expr.canonicalize();
        self.ineqs.push((label.into(), expr));
    }

    /// Constrains ‖z‖² ≤ u·w with u, w ≥ 0.
    pub fn add_hyperbolic(
        &mut self,
        label: impl Into<String>,
        mut u: AffExpr,
        mut w: AffExpr,
        z: Vec<AffExpr>,
    ) {
        u.canonicalize();
        w.canonicalize();
        let z = z
            .into_iter()
            .map(|mut e| {
                e.canonicalize();
                e
            })
            .collect();
        self.cones.push(HyperbolicBlock {
            label: label.into(),
            u,
            w,
            z,
        });
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo > hi {
                return Err(Error::Validation(format!(
                    "variable {} has empty bounds [{lo}, {hi}]",
                    self.names[i]
                )));
            }
            if !self.scales[i].is_finite() || self.scales[i] <= 0.0 {
                return Err(Error::Validation(format!(
                    "variable {} has invalid scale {}",
                    self.names[i], self.scales[i]
                )));
            }
        }
        let check = |expr: &AffExpr, what: &str| -> Result<()> {
            for (v, c) in &expr.terms {
                if v.0 >= n {
                    return Err(Error::Validation(format!(
                        "{what} references unknown variable index {}",
                        v.0
                    )));
                }
                if !c.is_finite() {
                    return Err(Error::Validation(format!("{what} has non-finite coefficient")));
                }
            }
            if !expr.constant.is_finite() {
                return Err(Error::Validation(format!("{what} has non-finite constant")));
            }
            Ok(())
        };
        for (label, e) in &self.eqs {
            check(e, &format!("equality '{label}'"))?;
        }
        for (label, e) in &self.ineqs {
            check(e, &format!("inequality '{label}'"))?;
        }
        for blk in &self.cones {
            check(&blk.u, &format!("cone '{}' u", blk.label))?;
            check(&blk.w, &format!("cone '{}' w", blk.label))?;
            for (i, z) in blk.z.iter().enumerate() {
                check(z, &format!("cone '{}' z[{i}]", blk.label))?;
            }
        }
        Ok(())
    }

    /// Solves with the interior-point backend. Returns `Err(Infeasible)` when
    /// the solver produces an infeasibility certificate, `Err(SolverFailure)`
    /// on unboundedness or numerical breakdown.
    pub fn solve(&self) -> Result<ConicSolution> {
        self.validate()?;
        backend::solve(self)
    }

    /// Plain-text rendering of the whole program, one entity per line:
    ///
    /// ```text
    /// minimize: <affine expression>
    /// var <name>: lb=<..> ub=<..>
    /// eq <label>: <expr> = 0
    /// ge <label>: <expr> >= 0
    /// cone <label>: ||z||^2 <= u*w
    ///   u: <expr>
    ///   w: <expr>
    ///   z[i]: <expr>
    /// ```
    ///
    /// Deterministic given insertion order; intended for debugging dumps and
    /// textual diffing, not round-tripping.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        out.push_str("minimize: ");
        let mut obj = AffExpr::zero();
        for (i, c) in self.objective.iter().enumerate() {
            if *c != 0.0 {
                obj.terms.push((VarId(i), *c));
            }
        }
        obj.fmt_into(&mut out, &self.names);
        out.push('\n');
        for (i, name) in self.names.iter().enumerate() {
            writeln!(out, "var {}: lb={} ub={}", name, self.lower[i], self.upper[i]).unwrap();
        }
        for (label, e) in &self.eqs {
            write!(out, "eq {label}: ").unwrap();
            e.fmt_into(&mut out, &self.names);
            out.push_str(" = 0\n");
        }
        for (label, e) in &self.ineqs {
            write!(out, "ge {label}: ").unwrap();
            e.fmt_into(&mut out, &self.names);
            out.push_str(" >= 0\n");
        }
        for blk in &self.cones {
            writeln!(out, "cone {}: ||z||^2 <= u*w", blk.label).unwrap();
            out.push_str("  u: ");
            blk.u.fmt_into(&mut out, &self.names);
            out.push_str("\n  w: ");
            blk.w.fmt_into(&mut out, &self.names);
            out.push('\n');
            for (i, z) in blk.z.iter().enumerate() {
                write!(out, "  z[{i}]: ").unwrap();
                z.fmt_into(&mut out, &self.names);
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// Solver stopped at reduced accuracy but the iterate is usable.
    NearOptimal,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub status: SolveStatus,
    pub iterations: u32,
    /// Absolute duality gap reported by the interior-point solver.
    pub duality_gap: f64,
}

impl ConicSolution {
    pub fn value(&self, expr: &AffExpr) -> f64 {
        expr.eval(&self.x)
    }

    pub fn var(&self, v: VarId) -> f64 {
        self.x[v.0]
    }
}

/// Tightness of one hyperbolic block at a solution point: `residual` is
/// (u·w − ‖z‖²) / max(1, |u·w|); ~0 means the cone is active.
#[derive(Debug, Clone, Serialize)]
pub struct ConeActivity {
    pub label: String,
    pub u: f64,
    pub w: f64,
    pub z_norm_sq: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TightnessReport {
    pub cones: Vec<ConeActivity>,
    /// Worst equality residual, normalized by the row's coefficient
    /// magnitude (clamped below at 1) so joule-scale and newton-scale rows
    /// are comparable.
    pub max_eq_violation: f64,
    /// Most negative inequality value (0 when all inequalities hold),
    /// normalized like the equalities.
    pub max_ineq_violation: f64,
    /// Worst bound violation measured in each variable's natural scale.
    pub max_bound_violation: f64,
}

impl TightnessReport {
    /// Largest slack residual among cones whose label starts with `prefix`.
    pub fn max_residual_with_prefix(&self, prefix: &str) -> f64 {
        self.cones
            .iter()
            .filter(|c| c.label.starts_with(prefix))
            .map(|c| c.residual)
            .fold(0.0, f64::max)
    }
}

/// Largest magnitude among an expression's coefficients (after variable
/// scaling) and its constant.
pub(crate) fn scaled_inf_norm(expr: &AffExpr, col_scale: &[f64]) -> f64 {
    let coeffs = expr
        .terms
        .iter()
        .fold(0.0_f64, |m, (v, c)| m.max((c * col_scale[v.0]).abs()));
    coeffs.max(expr.constant.abs())
}

/// Evaluates every constraint of `program` at `x`.
pub fn check_tightness(program: &ConicProgram, x: &[f64]) -> TightnessReport {
    let cones = program
        .cones
        .iter()
        .map(|blk| {
            let u = blk.u.eval(x);
            let w = blk.w.eval(x);
            let z_norm_sq: f64 = blk.z.iter().map(|z| z.eval(x).powi(2)).sum();
            let uw = u * w;
            ConeActivity {
                label: blk.label.clone(),
                u,
                w,
                z_norm_sq,
                residual: (uw - z_norm_sq) / uw.abs().max(1.0),
            }
        })
        .collect();
    let row_norm = |e: &AffExpr| scaled_inf_norm(e, &program.scales).max(1.0);
    let max_eq_violation = program
        .eqs
        .iter()
        .map(|(_, e)| e.eval(x).abs() / row_norm(e))
        .fold(0.0, f64::max);
    let max_ineq_violation = program
        .ineqs
        .iter()
        .map(|(_, e)| (-e.eval(x)).max(0.0) / row_norm(e))
        .fold(0.0, f64::max);
    let mut max_bound_violation = 0.0f64;
    for (i, xi) in x.iter().enumerate() {
        let (lo, hi) = (program.lower[i], program.upper[i]);
        let s = program.scales[i];
        if lo.is_finite() {
            max_bound_violation = max_bound_violation.max((lo - xi) / s);
        }
        if hi.is_finite() {
            max_bound_violation = max_bound_violation.max((xi - hi) / s);
        }
    }
    TightnessReport {
        cones,
        max_eq_violation,
        max_ineq_violation,
        max_bound_violation,
    }
}

/// Lowers a hyperbolic point (u, w, z) to the standard second-order cone
/// vector (u+w, 2z…, u−w): membership ‖tail‖₂ ≤ head is equivalent to
/// u ≥ 0, w ≥ 0, ‖z‖² ≤ u·w.
pub fn rotated_to_soc(u: f64, w: f64, z: &[f64]) -> (f64, Vec<f64>) {
    let mut tail: Vec<f64> = z.iter().map(|zi| 2.0 * zi).collect();
    tail.push(u - w);
    (u + w, tail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lowering_identity_matches_rotated_membership() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut checked = 0;
        for _ in 0..20_000 {
            let u: f64 = rng.random_range(-2.0..2.0);
            let w: f64 = rng.random_range(-2.0..2.0);
            let z = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let rotated = u >= 0.0 && w >= 0.0 && z[0] * z[0] + z[1] * z[1] <= u * w;
            let (head, tail) = rotated_to_soc(u, w, &z);
            let soc = tail.iter().map(|t| t * t).sum::<f64>().sqrt() <= head;
            // Skip points within rounding distance of either boundary.
            let margin = (u * w - (z[0] * z[0] + z[1] * z[1])).abs();
            if margin < 1e-9 || u.abs() < 1e-9 || w.abs() < 1e-9 {
                continue;
            }
            assert_eq!(rotated, soc, "u={u} w={w} z={z:?}");
            checked += 1;
        }
        assert!(checked > 10_000);
    }

    #[test]
    fn bound_only_program() {
        let mut p = ConicProgram::new();
        let x = p.add_var("x", 3.0, f64::INFINITY);
        p.add_objective(x, 1.0);
        let sol = p.solve().unwrap();
        assert!((sol.var(x) - 3.0).abs() < 1e-7);
        assert!((sol.objective_value - 3.0).abs() < 1e-7);
    }

    #[test]
    fn constant_z_cone_program() {
        // min u  s.t.  ‖(1,1)‖² ≤ u·1  →  u* = 2.
        let mut p = ConicProgram::new();
        let u = p.add_var("u", 0.0, f64::INFINITY);
        p.add_objective(u, 1.0);
        p.add_hyperbolic(
            "fixed",
            AffExpr::var(u),
            AffExpr::constant(1.0),
            vec![AffExpr::constant(1.0), AffExpr::constant(1.0)],
        );
        let sol = p.solve().unwrap();
        assert!((sol.var(u) - 2.0).abs() < 1e-6, "u = {}", sol.var(u));
    }

    #[test]
    fn reciprocal_through_cone() {
        // min t  s.t.  t·v ≥ 1, v ≤ 10  →  t* = 0.1.
        let mut p = ConicProgram::new();
        let t = p.add_var("t", 0.0, f64::INFINITY);
        let v = p.add_var("v", 0.0, 10.0);
        p.add_objective(t, 1.0);
        p.add_hyperbolic(
            "recip",
            AffExpr::var(t),
            AffExpr::var(v),
            vec![AffExpr::constant(1.0)],
        );
        let sol = p.solve().unwrap();
        assert!((sol.var(t) - 0.1).abs() < 1e-6);
        let report = check_tightness(&p, &sol.x);
        assert!(report.max_residual_with_prefix("recip") < 1e-5);
    }

    #[test]
    fn equality_and_inequality_rows() {
        // min x + y  s.t.  x + 2y = 4, 1 − y ≥ 0, x ≥ 0.
        // Objective equals 4 − y on the equality, so y* = 1, x* = 2.
        let mut p = ConicProgram::new();
        let x = p.add_var("x", 0.0, f64::INFINITY);
        let y = p.add_var("y", f64::NEG_INFINITY, f64::INFINITY);
        p.add_objective(x, 1.0);
        p.add_objective(y, 1.0);
        p.add_eq("budget", AffExpr::var(x).term(y, 2.0).offset(-4.0));
        p.add_ineq("cap", AffExpr::constant(1.0).term(y, -1.0));
        let sol = p.solve().unwrap();
        assert!((sol.var(x) - 2.0).abs() < 1e-6);
        assert!((sol.var(y) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_program_reports_infeasible() {
        let mut p = ConicProgram::new();
        let x = p.add_var("x", 0.0, 1.0);
        p.add_eq("impossible", AffExpr::var(x).offset(-5.0));
        match p.solve() {
            Err(Error::Infeasible(_)) => {}
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn unbounded_program_reports_failure() {
        let mut p = ConicProgram::new();
        let x = p.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        p.add_objective(x, 1.0);
        match p.solve() {
            Err(Error::SolverFailure(_)) => {}
            other => panic!("expected solver failure, got {other:?}"),
        }
    }

    #[test]
    fn constraint_order_does_not_change_objective() {
        let build = |flip: bool| {
            let mut p = ConicProgram::new();
            let t = p.add_var("t", 0.0, f64::INFINITY);
            let v = p.add_var("v", 1.0, 20.0);
            let e = p.add_var("e", 0.0, 50.0);
            p.add_objective(t, 1.0);
            let rows: Vec<(&str, AffExpr)> = vec![
                ("cap", AffExpr::constant(15.0).term(v, -1.0)),
                ("store", AffExpr::var(e).term(v, -2.0)),
            ];
            let order: Vec<usize> = if flip { vec![1, 0] } else { vec![0, 1] };
            for i in order {
                let (label, expr) = rows[i].clone();
                p.add_ineq(label, expr);
            }
            p.add_hyperbolic(
                "recip",
                AffExpr::var(t),
                AffExpr::var(v),
                vec![AffExpr::constant(1.0)],
            );
            p.solve().unwrap().objective_value
        };
        let a = build(false);
        let b = build(true);
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn dump_lists_every_entity() {
        let mut p = ConicProgram::new();
        let t = p.add_var("t", 0.0, 4.0);
        let v = p.add_var("v", 1.0, 20.0);
        p.add_objective(t, 2.0);
        p.add_eq("link", AffExpr::var(t).term(v, -0.5));
        p.add_hyperbolic(
            "hyp",
            AffExpr::var(t),
            AffExpr::var(v),
            vec![AffExpr::constant(1.0)],
        );
        let text = p.dump();
        assert!(text.contains("minimize: 2*t"));
        assert!(text.contains("var t: lb=0 ub=4"));
        assert!(text.contains("eq link:"));
        assert!(text.contains("cone hyp: ||z||^2 <= u*w"));
        assert!(text.contains("  z[0]: 1"));
    }

    #[test]
    fn expr_canonicalization_merges_terms() {
        let mut e = AffExpr::var(VarId(3))
            .term(VarId(1), 2.0)
            .term(VarId(3), -1.0)
            .offset(5.0);
        e.canonicalize();
        assert_eq!(e.terms, vec![(VarId(1), 2.0)]);
        assert_eq!(e.constant, 5.0);
    }
}
