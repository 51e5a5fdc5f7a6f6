//! Lowers a [`ConicProgram`](super::ConicProgram) to the sparse standard form
//! `min ½xᵀPx + qᵀx  s.t.  Ax + s = b, s ∈ K` consumed by the Clarabel
//! interior-point solver, and maps its termination status back onto the
//! crate's error taxonomy.
//!
//! The lowering owns problem conditioning. Each variable is substituted by
//! `x = scale·x̃` (see [`ConicProgram::set_scale`](super::ConicProgram::set_scale)),
//! each equality/inequality row is divided by its largest coefficient, and
//! each hyperbolic block ‖z‖² ≤ u·w is rebalanced as (αu, βw, √(αβ)z) — an
//! exact reformulation — so the solver sees O(1) entries throughout. Without
//! this the solver's internal equilibration, which is limited to one scalar
//! per cone block, terminates on scaled residuals that can be orders of
//! magnitude smaller than the true ones, silently returning poor solutions.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use super::{scaled_inf_norm, AffExpr, ConicProgram, ConicSolution, SolveStatus};
use crate::error::{Error, InfeasibilityReport, Result};

/// Row/cone scale factors are clamped to this range; a row of exact zeros
/// keeps scale 1 rather than dividing by zero.
const EQUILIBRATION_CLAMP: (f64, f64) = (1e-10, 1e10);

struct Triplets {
    entries: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
    rows: usize,
    col_scale: Vec<f64>,
}

impl Triplets {
    fn new(col_scale: Vec<f64>) -> Self {
        Triplets {
            entries: Vec::new(),
            b: Vec::new(),
            rows: 0,
            col_scale,
        }
    }

    /// Appends a row encoding `s_row = premul·expr` (so A gets −coefficients
    /// and b gets the constant), substituting scaled variables.
    fn push_expr(&mut self, expr: &AffExpr, premul: f64) {
        for (v, c) in &expr.terms {
            self.entries
                .push((self.rows, v.0, -c * premul * self.col_scale[v.0]));
        }
        self.b.push(expr.constant * premul);
        self.rows += 1;
    }

    fn push_unit(&mut self, col: usize, coeff: f64, rhs: f64) {
        self.entries.push((self.rows, col, coeff));
        self.b.push(rhs);
        self.rows += 1;
    }

    /// Largest coefficient magnitude per row (zero for constant rows).
    fn row_inf_norms(&self) -> Vec<f64> {
        let mut m = vec![0.0_f64; self.rows];
        for (r, _, v) in &self.entries {
            m[*r] = m[*r].max(v.abs());
        }
        m
    }

    /// Multiplies each row (coefficients and constant) by its factor.
    fn apply_row_scales(&mut self, scale: &[f64]) {
        for (r, _, v) in &mut self.entries {
            *v *= scale[*r];
        }
        for (r, bv) in self.b.iter_mut().enumerate() {
            *bv *= scale[r];
        }
    }

    // Expressions are canonicalized and each constraint occupies its own
    // row, so (row, col) pairs are unique: a plain sort suffices.
    fn into_csc(mut self, ncols: usize) -> (CscMatrix<f64>, Vec<f64>) {
        self.entries.sort_unstable_by_key(|(r, c, _)| (*c, *r));
        let mut colptr = vec![0usize; ncols + 1];
        for (_, c, _) in &self.entries {
            colptr[c + 1] += 1;
        }
        for c in 0..ncols {
            colptr[c + 1] += colptr[c];
        }
        let rowval: Vec<usize> = self.entries.iter().map(|(r, _, _)| *r).collect();
        let nzval: Vec<f64> = self.entries.iter().map(|(_, _, v)| *v).collect();
        let a = CscMatrix::new(self.rows, ncols, colptr, rowval, nzval);
        (a, self.b)
    }
}

fn equilibration_factor(inf_norm: f64) -> f64 {
    if inf_norm > 0.0 {
        1.0 / inf_norm.clamp(EQUILIBRATION_CLAMP.0, EQUILIBRATION_CLAMP.1)
    } else {
        1.0
    }
}

pub(crate) fn solve(program: &ConicProgram) -> Result<ConicSolution> {
    let n = program.num_vars();
    if n == 0 {
        return Ok(ConicSolution {
            x: Vec::new(),
            objective_value: 0.0,
            status: SolveStatus::Optimal,
            iterations: 0,
            duality_gap: 0.0,
        });
    }

    let col_scale = program.scales.clone();
    let mut t = Triplets::new(col_scale.clone());
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

    // Variables pinned to a point join the zero cone as x̃ = v/s: a single
    // equality conditions far better than the pair of opposing inequalities
    // the box lowering would produce, and lets infeasibility certificates
    // form cleanly on heavily fixed instances (branch-and-bound nodes).
    let pinned: Vec<bool> = (0..n)
        .map(|i| {
            let (lo, hi) = program.bounds(crate::conic::VarId(i));
            lo.is_finite() && lo == hi
        })
        .collect();

    // Rows built from caller expressions; equilibrated individually below.
    // Unit rows (pins and bounds) are already O(1) and keep scale 1.
    let mut expr_rows: Vec<usize> = Vec::new();
    for (_, e) in &program.eqs {
        // expr = 0 lowers to s = −expr with s pinned to zero; sign is
        // irrelevant for the zero cone, so reuse s = expr.
        expr_rows.push(t.rows);
        t.push_expr(e, 1.0);
    }
    for i in 0..n {
        if pinned[i] {
            // s = v/s_i − x̃_i = 0.
            t.push_unit(i, 1.0, program.bounds(crate::conic::VarId(i)).0 / col_scale[i]);
        }
    }
    if t.rows > 0 {
        cones.push(SupportedConeT::ZeroConeT(t.rows));
    }

    let nonneg_before = t.rows;
    for (_, e) in &program.ineqs {
        expr_rows.push(t.rows);
        t.push_expr(e, 1.0);
    }
    for i in 0..n {
        if pinned[i] {
            continue;
        }
        let (lo, hi) = program.bounds(crate::conic::VarId(i));
        if lo.is_finite() {
            // s = x̃_i − lo/s_i ≥ 0.
            t.push_unit(i, -1.0, -lo / col_scale[i]);
        }
        if hi.is_finite() {
            // s = hi/s_i − x̃_i ≥ 0.
            t.push_unit(i, 1.0, hi / col_scale[i]);
        }
    }
    let nonneg_count = t.rows - nonneg_before;
    if nonneg_count > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(nonneg_count));
    }

    // Cones are handled below with their own two-parameter rebalancing,
    // which subsumes row scaling.
    let norms = t.row_inf_norms();
    let mut row_scale = vec![1.0_f64; t.rows];
    for &r in &expr_rows {
        row_scale[r] = equilibration_factor(norms[r]);
    }
    t.apply_row_scales(&row_scale);

    for blk in &program.cones {
        let alpha = equilibration_factor(scaled_inf_norm(&blk.u, &col_scale));
        let beta = equilibration_factor(scaled_inf_norm(&blk.w, &col_scale));
        let zeta = (alpha * beta).sqrt();
        let u = blk.u.clone().scaled(alpha);
        let w = blk.w.clone().scaled(beta);
        let head = u.clone().plus(&w);
        t.push_expr(&head, 1.0);
        for z in &blk.z {
            t.push_expr(&z.clone().scaled(zeta), 2.0);
        }
        let last = u.minus(&w);
        t.push_expr(&last, 1.0);
        cones.push(SupportedConeT::SecondOrderConeT(blk.z.len() + 2));
    }

    let (a, b) = t.into_csc(n);
    let p = CscMatrix::zeros((n, n));
    let q: Vec<f64> = program
        .objective_coeffs()
        .iter()
        .zip(&col_scale)
        .map(|(c, s)| c * s)
        .collect();

    // Stock interior-point tolerances (1e-8 gap/feasibility) unless the
    // program opted into higher precision: tightening across the board makes
    // badly conditioned stint instances stall before the last factorization
    // reaches the requested accuracy.
    let verbose = std::env::var_os("ENDURO_SOLVER_VERBOSE").is_some();
    let run = |tol: Option<f64>| -> Result<DefaultSolver<f64>> {
        let mut builder = DefaultSettingsBuilder::default();
        builder.verbose(verbose).max_iter(500);
        if let Some(tol) = tol {
            builder
                .tol_gap_abs(tol)
                .tol_gap_rel(tol)
                .tol_feas(tol.max(1e-10));
        }
        let settings = builder
            .build()
            .map_err(|e| Error::SolverFailure(format!("solver settings rejected: {e}")))?;
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
            .map_err(|e| Error::SolverFailure(format!("problem assembly rejected: {e:?}")))?;
        solver.solve();
        Ok(solver)
    };

    let mut solver = run(program.precision)?;
    if program.precision.is_some()
        && matches!(
            solver.solution.status,
            SolverStatus::InsufficientProgress | SolverStatus::NumericalError
        )
    {
        // Requested precision exceeds what this instance's conditioning
        // supports; retry once at stock tolerances (deterministic: the
        // fallback depends only on the first attempt's outcome).
        solver = run(None)?;
    }

    let status = match solver.solution.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved => SolveStatus::NearOptimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            return Err(Error::Infeasible(InfeasibilityReport {
                summary: "interior-point solver produced a primal infeasibility certificate".into(),
                missing_energy_j: None,
            }));
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            return Err(Error::SolverFailure(
                "objective is unbounded below (dual infeasibility certificate)".into(),
            ));
        }
        other => {
            return Err(Error::SolverFailure(format!(
                "interior-point solver stopped without a solution: {other:?}"
            )));
        }
    };

    let x: Vec<f64> = solver
        .solution
        .x
        .iter()
        .zip(&col_scale)
        .map(|(v, s)| v * s)
        .collect();

    Ok(ConicSolution {
        x,
        // qᵀx is invariant under the substitution: the scaled objective uses
        // q̃ = q·s against x̃ = x/s.
        objective_value: solver.solution.obj_val,
        status,
        iterations: solver.info.iterations,
        duality_gap: solver.info.gap_abs,
    })
}
