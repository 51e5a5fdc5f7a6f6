//! Race-strategy optimization: given a fitted stint-time surface, choose how
//! many stints to run, how many laps each covers, and how long to recharge
//! before each, so the car completes the most laps inside a fixed race
//! duration.
//!
//! The continuous relaxation is a second-order cone program: per stint k the
//! surface enters as t_stint·t_c ≥ ‖C·[1, t_c, N]‖² and the race-time budget
//! is an equality, so padding a stint beyond its minimal time is always
//! feasible. Stint existence binaries b_k and integer lap counts N_k are
//! resolved by branch and bound. While a binary is undecided its surface
//! cone is softened with a big-M term, t_stint + M(1−b); the moment a branch
//! decides b, the stint is rebuilt exactly (b = 1) or its variables are
//! pinned to zero and the cone dropped (b = 0).
//!
//! The search runs in two phases. Phase 1 is a best-first branch and bound
//! on the softened model; it proves the optimal lap count. Phase 2 re-solves
//! structurally — pit pattern fixed per candidate stint count, no big-M
//! anywhere — and keeps the first (fewest-stints) strategy matching the
//! proven lap count. The reported strategy therefore never depends on the
//! value of M, only relaxation bounds do.
//!
//! Stint 0 is special: it always runs and starts from the pre-race full
//! charge, whose duration does not consume race time.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::collections::BinaryHeap;
use std::path::Path;

use crate::conic::{AffExpr, ConicProgram, VarId};
use crate::error::{Error, Result};
use crate::surface::StintTimeSurface;

/// Problem statement for the upper level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RaceSpec {
    pub surface: StintTimeSurface,
    /// Total race duration [s]; stint driving plus in-race recharging must
    /// fill it exactly.
    pub t_race_s: f64,
    /// Stint slots available (including stint 0). Unused slots cost nothing.
    pub max_stints: usize,
    /// Big-M softening for undecided stint binaries [s]. Defaults to
    /// 100·t_race_s; only relaxation bounds depend on it, never the
    /// reported strategy.
    pub big_m_s: Option<f64>,
}

impl RaceSpec {
    pub fn validate(&self) -> Result<()> {
        self.surface.model.validate()?;
        if !(self.t_race_s.is_finite() && self.t_race_s > 0.0) {
            return Err(Error::Validation(format!(
                "race duration must be positive, got {}",
                self.t_race_s
            )));
        }
        if self.max_stints == 0 || self.max_stints > 128 {
            return Err(Error::Validation(format!(
                "max_stints must be in 1..=128, got {}",
                self.max_stints
            )));
        }
        let [n_lo, n_hi] = self.surface.n_laps_range;
        let [tc_lo, tc_hi] = self.surface.t_charge_range;
        if !(n_lo >= 0.0 && n_hi >= n_lo && tc_lo > 0.0 && tc_hi >= tc_lo) {
            return Err(Error::Validation(format!(
                "surface validity box is degenerate: N ∈ [{n_lo}, {n_hi}], t_c ∈ [{tc_lo}, {tc_hi}]"
            )));
        }
        if let Some(m) = self.big_m_s {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::Validation(format!(
                    "big_m_s must be positive, got {m}"
                )));
            }
        }
        Ok(())
    }

    fn big_m(&self) -> f64 {
        self.big_m_s.unwrap_or(100.0 * self.t_race_s)
    }
}

/// Whether lap counts are required to be integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RaceMode {
    /// Full problem: integer laps, binary stints.
    IntegerLaps,
    /// Lap counts stay continuous; stint binaries are still resolved. Used
    /// to study the structure of the relaxation (active stints come out
    /// uniform) and to bound the integer optimum.
    RelaxedLaps,
}

/// One stint of a computed strategy. Inactive slots keep zeros.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StintPlan {
    pub k: usize,
    pub active: bool,
    pub n_laps: f64,
    /// Recharge duration before this stint [s]; for stint 0 this is the
    /// pre-race full charge and does not count against the race budget.
    pub t_charge_s: f64,
    pub t_stint_s: f64,
}

/// Strategy returned by the branch-and-bound search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RaceStrategy {
    pub mode: RaceMode,
    pub t_race_s: f64,
    pub stints: Vec<StintPlan>,
    pub total_laps: f64,
    /// Driving plus in-race charging [s]; equals `t_race_s` by construction.
    pub total_time_s: f64,
    /// Best proven upper bound on achievable laps at termination.
    pub bound_laps: f64,
    /// Relaxations solved across both phases.
    pub nodes_explored: u64,
}

impl RaceStrategy {
    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    /// Cumulative race timeline, one row per stint slot:
    /// `stint,active,n_laps,t_charge_s,t_stint_s,cum_laps,cum_time_s`.
    pub fn write_timeline_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "stint",
            "active",
            "n_laps",
            "t_charge_s",
            "t_stint_s",
            "cum_laps",
            "cum_time_s",
        ])?;
        let mut cum_laps = 0.0;
        let mut cum_time = 0.0;
        for s in &self.stints {
            cum_laps += s.n_laps;
            cum_time += s.t_stint_s + if s.k == 0 { 0.0 } else { s.t_charge_s };
            w.write_record([
                s.k.to_string(),
                s.active.to_string(),
                s.n_laps.to_string(),
                s.t_charge_s.to_string(),
                s.t_stint_s.to_string(),
                cum_laps.to_string(),
                cum_time.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Variable layout: four per stint slot.
#[derive(Debug, Clone, Copy)]
pub struct RaceLayout {
    pub stints: usize,
}

impl RaceLayout {
    pub fn t_stint(&self, k: usize) -> VarId {
        VarId(4 * k)
    }
    pub fn t_charge(&self, k: usize) -> VarId {
        VarId(4 * k + 1)
    }
    pub fn n_laps(&self, k: usize) -> VarId {
        VarId(4 * k + 2)
    }
    pub fn b_pit(&self, k: usize) -> VarId {
        VarId(4 * k + 3)
    }
}

/// Branch-and-bound node: binary decisions (None = undecided) and
/// accumulated lap-count bounds.
#[derive(Debug, Clone)]
struct NodeState {
    b: Vec<Option<bool>>,
    n_lo: Vec<f64>,
    n_hi: Vec<f64>,
}

impl NodeState {
    fn root(spec: &RaceSpec) -> Self {
        let kk = spec.max_stints;
        let mut b = vec![None; kk];
        b[0] = Some(true);
        NodeState {
            b,
            n_lo: vec![0.0; kk],
            n_hi: vec![spec.surface.n_laps_range[1]; kk],
        }
    }

    /// All pit decisions fixed: the first `m` stints run, the rest do not.
    fn prefix(spec: &RaceSpec, m: usize) -> Self {
        let kk = spec.max_stints;
        let mut st = NodeState {
            b: vec![Some(false); kk],
            n_lo: vec![0.0; kk],
            n_hi: vec![0.0; kk],
        };
        for k in 0..m.min(kk) {
            st.b[k] = Some(true);
            st.n_hi[k] = spec.surface.n_laps_range[1];
        }
        st
    }

    /// Fixes b_k and propagates along the non-increasing pit ordering:
    /// enabling stint k enables every earlier stint, disabling it disables
    /// every later one.
    fn fix_b(&mut self, k: usize, value: bool) {
        if value {
            for j in 1..=k {
                self.b[j] = Some(true);
            }
        } else {
            for j in k..self.b.len() {
                self.b[j] = Some(false);
                self.n_lo[j] = 0.0;
                self.n_hi[j] = 0.0;
            }
        }
    }

    /// True when lap bounds still admit a value.
    fn consistent(&self, spec: &RaceSpec) -> bool {
        let n_edge = spec.surface.n_laps_range[0];
        self.b.iter().enumerate().all(|(k, b)| match b {
            Some(false) => true,
            // An enabled stint must fit the surface's lap validity box.
            Some(true) => self.n_lo[k].max(n_edge) <= self.n_hi[k] + 1e-12,
            None => self.n_lo[k] <= self.n_hi[k] + 1e-12,
        })
    }
}

/// Lower bound on the per-lap marginal time across the whole charge
/// validity box; used as the cut t_stint ≥ τ·N. Valid because t(N) along
/// fixed t_c is convex with nonnegative constant and quadratic parts, so
/// t/N never falls below the linear coefficient.
fn per_lap_time_floor(spec: &RaceSpec) -> f64 {
    let q = &spec.surface.model.q;
    let [tc_lo, tc_hi] = spec.surface.t_charge_range;
    let at = |tc: f64| 2.0 * (q[0][2] / tc + q[1][2]);
    at(tc_lo).min(at(tc_hi)).max(0.0)
}

fn assemble(spec: &RaceSpec, st: &NodeState) -> (ConicProgram, RaceLayout) {
    let kk = spec.max_stints;
    let layout = RaceLayout { stints: kk };
    let [n_edge, n_hi_glob] = spec.surface.n_laps_range;
    let [tc_lo, tc_hi] = spec.surface.t_charge_range;
    let big_m = spec.big_m();
    let c = spec.surface.model.sqrt_matrix();
    let tau = per_lap_time_floor(spec);

    let mut p = ConicProgram::new();
    // Fully decided programs are tiny and well-scaled; a tight gap keeps
    // the minimizer pinned on low-curvature valleys (near-uniform middle
    // stints would otherwise wobble at the stock tolerance). Nodes with
    // fractional stint indicators carry big-M rows whose magnitude makes
    // that gap unreachable, so they keep the solver's stock tolerance —
    // their job is bounding, not producing the canonical strategy.
    if st.b.iter().all(Option::is_some) {
        p.set_precision(1e-11);
    }
    for k in 0..kk {
        let (t_id, tc_id, n_id, b_id);
        match st.b[k] {
            Some(false) => {
                t_id = p.add_var(format!("t[{k}]"), 0.0, 0.0);
                tc_id = p.add_var(format!("tc[{k}]"), 0.0, 0.0);
                n_id = p.add_var(format!("n[{k}]"), 0.0, 0.0);
                b_id = p.add_var(format!("b[{k}]"), 0.0, 0.0);
            }
            Some(true) => {
                t_id = p.add_var(format!("t[{k}]"), 0.0, f64::INFINITY);
                // Stint 0 departs from the pre-race full charge.
                let (clo, chi) = if k == 0 { (tc_hi, tc_hi) } else { (tc_lo, tc_hi) };
                tc_id = p.add_var(format!("tc[{k}]"), clo, chi);
                n_id = p.add_var(
                    format!("n[{k}]"),
                    st.n_lo[k].max(n_edge),
                    st.n_hi[k].min(n_hi_glob),
                );
                b_id = p.add_var(format!("b[{k}]"), 1.0, 1.0);
            }
            None => {
                t_id = p.add_var(format!("t[{k}]"), 0.0, f64::INFINITY);
                tc_id = p.add_var(format!("tc[{k}]"), 0.0, tc_hi);
                n_id = p.add_var(format!("n[{k}]"), st.n_lo[k], st.n_hi[k].min(n_hi_glob));
                b_id = p.add_var(format!("b[{k}]"), 0.0, 1.0);
            }
        }
        p.set_scale(t_id, spec.t_race_s);
        p.set_scale(tc_id, tc_hi);
        p.set_scale(n_id, n_hi_glob.max(1.0));
        p.add_objective(n_id, -1.0);

        if st.b[k] == Some(false) {
            continue;
        }

        // Surface cone; exact when b is decided, big-M softened otherwise.
        let u = match st.b[k] {
            Some(true) => AffExpr::var(t_id),
            _ => AffExpr::var(t_id).term(b_id, -big_m).offset(big_m),
        };
        let z: Vec<AffExpr> = (0..3)
            .map(|r| {
                AffExpr::constant(c[(r, 0)])
                    .term(tc_id, c[(r, 1)])
                    .term(n_id, c[(r, 2)])
            })
            .collect();
        p.add_hyperbolic(format!("surface[{k}]"), u, AffExpr::var(tc_id), z);

        if tau > 0.0 {
            p.add_ineq(format!("lap-cut[{k}]"), AffExpr::var(t_id).term(n_id, -tau));
        }

        if st.b[k].is_none() {
            // Existence gates, meaningful only while b is fractional.
            p.add_ineq(
                format!("lap-gate[{k}]"),
                AffExpr::zero().term(b_id, n_hi_glob).term(n_id, -1.0),
            );
            p.add_ineq(
                format!("lap-edge[{k}]"),
                AffExpr::var(n_id).term(b_id, -n_edge),
            );
            p.add_ineq(
                format!("charge-edge[{k}]"),
                AffExpr::var(tc_id).term(b_id, -tc_lo),
            );
            p.add_ineq(
                format!("stint-gate[{k}]"),
                AffExpr::zero().term(b_id, big_m).term(t_id, -1.0),
            );
        }
    }

    // Later stints never run more laps than earlier ones (stint 0 excluded:
    // its full pre-race charge makes it structurally different). Pure
    // symmetry breaking among the interchangeable middle stints.
    for k in 1..kk.saturating_sub(1) {
        p.add_ineq(
            format!("lap-order[{k}]"),
            AffExpr::var(layout.n_laps(k)).term(layout.n_laps(k + 1), -1.0),
        );
        if st.b[k].is_none() || st.b[k + 1].is_none() {
            p.add_ineq(
                format!("pit-order[{k}]"),
                AffExpr::var(layout.b_pit(k)).term(layout.b_pit(k + 1), -1.0),
            );
        }
    }

    // The race clock must be filled exactly: driving plus in-race charging.
    // Padding is always feasible because the surface cone is one-sided.
    let mut budget = AffExpr::constant(-spec.t_race_s);
    for k in 0..kk {
        budget = budget.term(layout.t_stint(k), 1.0);
        if k > 0 {
            budget = budget.term(layout.t_charge(k), 1.0);
        }
    }
    p.add_eq("time-budget", budget);

    (p, layout)
}

struct NodeEval {
    bound_laps: f64,
    x: Vec<f64>,
}

/// Solves a node's relaxation; `Ok(None)` means the node is infeasible.
fn eval_node(spec: &RaceSpec, st: &NodeState, nodes: &mut u64) -> Result<Option<NodeEval>> {
    if !st.consistent(spec) {
        return Ok(None);
    }
    *nodes += 1;
    let (p, layout) = assemble(spec, st);
    let sol = match p.solve() {
        Ok(s) => s,
        Err(Error::Infeasible(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let bound_laps: f64 = (0..spec.max_stints)
        .map(|k| sol.var(layout.n_laps(k)))
        .sum();
    Ok(Some(NodeEval {
        bound_laps,
        x: sol.x,
    }))
}

struct HeapEntry {
    bound: f64,
    seq: u64,
    state: NodeState,
    eval: NodeEval,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.seq == other.seq
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    // Best-first: larger bound wins; ties resolved oldest-first so the
    // search order is deterministic.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then(other.seq.cmp(&self.seq))
    }
}

const INT_TOL: f64 = 1e-6;
/// Pruning slack [laps]: absorbs interior-point tolerance and the vanishing
/// budget residue (≈ surface-constant / M per undecided stint) that big-M
/// softening leaves in relaxations.
const PRUNE_SLACK: f64 = 1e-4;
const RELAX_EPS: f64 = 1e-9;
const NODE_BUDGET: u64 = 200_000;

/// Best strategy found so far, plus the lap count pruning is measured
/// against (which may be a seed without a strategy attached).
struct Incumbent {
    laps: f64,
    strategy: Option<RaceStrategy>,
}

impl Incumbent {
    /// Subtrees whose relaxation bound falls below this cannot improve.
    fn bar(&self, mode: RaceMode) -> f64 {
        match mode {
            RaceMode::IntegerLaps => self.laps + 1.0 - PRUNE_SLACK,
            RaceMode::RelaxedLaps => self.laps + RELAX_EPS,
        }
    }

    fn improves(&self, laps: f64, mode: RaceMode) -> bool {
        match mode {
            RaceMode::IntegerLaps => laps > self.laps + 0.5,
            RaceMode::RelaxedLaps => laps > self.laps + RELAX_EPS,
        }
    }
}

/// Key identifying a polish assignment: active-stint count, then pinned lap
/// counts (integer mode only; the relaxed polish depends on the count alone).
fn assignment_key(mode: RaceMode, b: &[Option<bool>], n_pinned: &[f64]) -> Vec<i64> {
    let mut key = vec![b.iter().filter(|v| **v == Some(true)).count() as i64];
    if mode == RaceMode::IntegerLaps {
        key.extend(n_pinned.iter().map(|v| v.round() as i64));
    }
    key
}

/// Re-solves an integral assignment structurally (pits fixed, laps pinned in
/// integer mode, no big-M anywhere) and adopts it if it beats the incumbent.
fn try_incumbent(
    spec: &RaceSpec,
    mode: RaceMode,
    b: &[Option<bool>],
    n: &[f64],
    polished: &mut BTreeSet<Vec<i64>>,
    inc: &mut Incumbent,
    nodes: &mut u64,
) -> Result<()> {
    let kk = spec.max_stints;
    let [n_edge, n_hi_glob] = spec.surface.n_laps_range;
    let mut st = NodeState {
        b: b.to_vec(),
        n_lo: vec![0.0; kk],
        n_hi: vec![0.0; kk],
    };
    for k in 0..kk {
        if b[k] != Some(true) {
            continue;
        }
        match mode {
            RaceMode::IntegerLaps => {
                let (lo, hi) = (n_edge.ceil(), n_hi_glob.floor());
                if lo > hi {
                    return Ok(());
                }
                let v = n[k].round().clamp(lo, hi);
                st.n_lo[k] = v;
                st.n_hi[k] = v;
            }
            RaceMode::RelaxedLaps => {
                st.n_hi[k] = n_hi_glob;
            }
        }
    }
    if !polished.insert(assignment_key(mode, b, &st.n_lo)) {
        return Ok(());
    }
    let Some(eval) = eval_node(spec, &st, nodes)? else {
        return Ok(());
    };
    let layout = RaceLayout { stints: kk };
    let stints: Vec<StintPlan> = (0..kk)
        .map(|k| {
            if b[k] != Some(true) {
                // Pinned slots carry only solver noise; report clean zeros.
                return StintPlan {
                    k,
                    active: false,
                    n_laps: 0.0,
                    t_charge_s: 0.0,
                    t_stint_s: 0.0,
                };
            }
            let n_val = eval.x[layout.n_laps(k).0];
            StintPlan {
                k,
                active: true,
                n_laps: match mode {
                    RaceMode::IntegerLaps => n_val.round(),
                    RaceMode::RelaxedLaps => n_val,
                },
                t_charge_s: eval.x[layout.t_charge(k).0],
                t_stint_s: eval.x[layout.t_stint(k).0],
            }
        })
        .collect();
    let laps: f64 = stints.iter().map(|s| s.n_laps).sum();
    if inc.improves(laps, mode) {
        let total_time: f64 = stints
            .iter()
            .map(|s| s.t_stint_s + if s.k == 0 { 0.0 } else { s.t_charge_s })
            .sum();
        inc.laps = laps;
        inc.strategy = Some(RaceStrategy {
            mode,
            t_race_s: spec.t_race_s,
            stints,
            total_laps: laps,
            total_time_s: total_time,
            bound_laps: laps,
            nodes_explored: 0,
        });
    }
    Ok(())
}

/// Best-first branch and bound from `root`, updating `inc` in place.
/// Branches undecided pit binaries first (a fractional binary makes its
/// big-M cone meaningless), propagating each decision along the pit
/// ordering; then, in integer mode, the most fractional lap count.
fn search(
    spec: &RaceSpec,
    mode: RaceMode,
    root: NodeState,
    inc: &mut Incumbent,
    polished: &mut BTreeSet<Vec<i64>>,
    nodes: &mut u64,
) -> Result<()> {
    let kk = spec.max_stints;
    let layout = RaceLayout { stints: kk };
    let Some(root_eval) = eval_node(spec, &root, nodes)? else {
        return Ok(());
    };
    if root_eval.bound_laps < inc.bar(mode) {
        return Ok(());
    }

    // Rounding head start: snap the root relaxation to the nearest pit
    // pattern and polish it, so pruning has a baseline immediately.
    if root.b.iter().any(Option::is_none) {
        let b_guess: Vec<Option<bool>> = root
            .b
            .iter()
            .enumerate()
            .map(|(k, b)| {
                Some(match b {
                    Some(v) => *v,
                    None => root_eval.x[layout.b_pit(k).0] >= 0.5,
                })
            })
            .collect();
        let n_guess: Vec<f64> = (0..kk).map(|k| root_eval.x[layout.n_laps(k).0]).collect();
        try_incumbent(spec, mode, &b_guess, &n_guess, polished, inc, nodes)?;
    }

    let mut heap = BinaryHeap::new();
    let mut seq: u64 = 0;
    heap.push(HeapEntry {
        bound: root_eval.bound_laps,
        seq,
        state: root,
        eval: root_eval,
    });

    while let Some(entry) = heap.pop() {
        if entry.bound < inc.bar(mode) {
            continue;
        }
        if *nodes > NODE_BUDGET {
            return Err(Error::SolverFailure(format!(
                "branch and bound exceeded {NODE_BUDGET} relaxations"
            )));
        }
        let eval = entry.eval;

        // Branch rule 1: first undecided binary with a fractional value.
        let frac_b = (1..kk).find(|&k| {
            entry.state.b[k].is_none() && {
                let v = eval.x[layout.b_pit(k).0];
                (v - v.round()).abs() > INT_TOL
            }
        });
        if let Some(k) = frac_b {
            for value in [true, false] {
                let mut child = entry.state.clone();
                child.fix_b(k, value);
                if let Some(ce) = eval_node(spec, &child, nodes)? {
                    if ce.bound_laps >= inc.bar(mode) {
                        seq += 1;
                        heap.push(HeapEntry {
                            bound: ce.bound_laps,
                            seq,
                            state: child,
                            eval: ce,
                        });
                    }
                }
            }
            continue;
        }

        // All binaries take integral values here; snap them for candidate
        // generation (children keep undecided ones undecided).
        let b_now: Vec<Option<bool>> = entry
            .state
            .b
            .iter()
            .enumerate()
            .map(|(k, b)| {
                Some(match b {
                    Some(v) => *v,
                    None => eval.x[layout.b_pit(k).0] >= 0.5,
                })
            })
            .collect();

        // Branch rule 2 (integer mode): most fractional lap count.
        if mode == RaceMode::IntegerLaps {
            let frac_n = (0..kk)
                .filter(|&k| b_now[k] == Some(true))
                .map(|k| {
                    let v = eval.x[layout.n_laps(k).0];
                    (k, (v - v.round()).abs())
                })
                .filter(|(_, f)| *f > INT_TOL)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            if let Some((k, _)) = frac_n {
                let v = eval.x[layout.n_laps(k).0];
                let halves = [
                    (entry.state.n_lo[k], v.floor()),
                    (v.floor() + 1.0, entry.state.n_hi[k]),
                ];
                for (lo, hi) in halves {
                    let mut child = entry.state.clone();
                    child.n_lo[k] = lo.max(child.n_lo[k]);
                    child.n_hi[k] = hi.min(child.n_hi[k]);
                    if let Some(ce) = eval_node(spec, &child, nodes)? {
                        if ce.bound_laps >= inc.bar(mode) {
                            seq += 1;
                            heap.push(HeapEntry {
                                bound: ce.bound_laps,
                                seq,
                                state: child,
                                eval: ce,
                            });
                        }
                    }
                }
                continue;
            }
        }

        // Fully integral relaxation: candidate incumbent, node closed (its
        // bound is attained by this very point, modulo big-M residue).
        let n_vals: Vec<f64> = (0..kk).map(|k| eval.x[layout.n_laps(k).0]).collect();
        try_incumbent(spec, mode, &b_now, &n_vals, polished, inc, nodes)?;
    }
    Ok(())
}

/// Maximizes completed laps. Deterministic: best-first search with FIFO
/// tie-breaking in phase 1, then an ascending sweep over active-stint
/// counts in phase 2 whose structural solves contain no big-M; lap-count
/// ties go to the fewest stints.
pub fn solve_race(spec: &RaceSpec, mode: RaceMode) -> Result<RaceStrategy> {
    spec.validate()?;
    let mut nodes: u64 = 0;

    // Phase 1: prove the optimal lap count on the softened model.
    let mut inc1 = Incumbent {
        laps: f64::NEG_INFINITY,
        strategy: None,
    };
    let mut memo1 = BTreeSet::new();
    search(
        spec,
        mode,
        NodeState::root(spec),
        &mut inc1,
        &mut memo1,
        &mut nodes,
    )?;
    if inc1.strategy.is_none() {
        return Err(Error::infeasible(format!(
            "no strategy fills a {} s race within the surface validity box",
            spec.t_race_s
        )));
    }
    let l_star = inc1.laps;

    // Phase 2: canonical big-M-free re-solve. Seeded just below the proven
    // optimum so equal-lap strategies are rediscovered, not skipped.
    let seed = match mode {
        RaceMode::IntegerLaps => l_star - 1.0,
        RaceMode::RelaxedLaps => l_star - 1e-6 * l_star.abs().max(1.0),
    };
    let mut inc2 = Incumbent {
        laps: seed,
        strategy: None,
    };
    let mut memo2 = BTreeSet::new();
    for m in 1..=spec.max_stints {
        search(
            spec,
            mode,
            NodeState::prefix(spec, m),
            &mut inc2,
            &mut memo2,
            &mut nodes,
        )?;
    }

    let mut best = inc2
        .strategy
        .or(inc1.strategy)
        .expect("phase 1 produced an incumbent");
    best.bound_laps = best.total_laps.max(l_star);
    best.nodes_explored = nodes;
    Ok(best)
}

/// Maximizes completed laps with the number of taken stints fixed. Every
/// pit binary is decided up front, so the whole search is structural — no
/// big-M softening appears in any subproblem.
pub fn solve_race_fixed(
    spec: &RaceSpec,
    mode: RaceMode,
    active_stints: usize,
) -> Result<RaceStrategy> {
    spec.validate()?;
    if !(1..=spec.max_stints).contains(&active_stints) {
        return Err(Error::Config(format!(
            "active_stints = {active_stints} outside [1, {}]",
            spec.max_stints
        )));
    }
    let mut nodes: u64 = 0;
    let mut inc = Incumbent {
        laps: f64::NEG_INFINITY,
        strategy: None,
    };
    let mut memo = BTreeSet::new();
    search(
        spec,
        mode,
        NodeState::prefix(spec, active_stints),
        &mut inc,
        &mut memo,
        &mut nodes,
    )?;
    let mut best = inc.strategy.ok_or_else(|| {
        Error::infeasible(format!(
            "no {active_stints}-stint strategy fills a {} s race within the \
             surface validity box",
            spec.t_race_s
        ))
    })?;
    best.bound_laps = best.total_laps;
    best.nodes_explored = nodes;
    Ok(best)
}
