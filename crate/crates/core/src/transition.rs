//! Locating the critical coupling `g*` and classifying the binding
//! transition.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::energy::Model;
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::groundstate::{minimize_with, Init, MinimizeOptions, MinimizeResult, MinimizeSummary, Status};
use crate::potentials::Potential;
use crate::spectrum;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    First,
    Second,
    NoTransition,
}

#[derive(Clone, Debug)]
pub struct TransitionOptions {
    /// `e(g, m) < -e_neg_tol` counts as binding.
    pub e_neg_tol: f64,
    /// Binding threshold for the one-dimensional always-binding probes.
    pub e_neg_tol_1d: f64,
    /// Bisection stops once the bracket is narrower than `tol_g_rel * g_hi`.
    pub tol_g_rel: f64,
    pub bracket: (f64, f64),
    pub max_expansions: usize,
    /// Probes `g_j = g* (1 + 2^-j)` for `j` in this range.
    pub j_range: (u32, u32),
    /// `||u||_4^4` ratio separating the compact and vanishing trends.
    pub trend_factor: f64,
    /// Lower bound on `||grad u||^2` of a first-order state at `g*`.
    pub rho_floor: f64,
    /// Smallest coupling probed before declaring `g* = 0`.
    pub g_floor: f64,
    pub newton_steps: usize,
    pub minimize: MinimizeOptions,
}

impl Default for TransitionOptions {
    fn default() -> Self {
        Self {
            e_neg_tol: 1e-6,
            e_neg_tol_1d: 1e-10,
            tol_g_rel: 1e-3,
            bracket: (1.0, 8.0),
            max_expansions: 24,
            j_range: (4, 8),
            trend_factor: 2.0,
            rho_floor: 1e-3,
            g_floor: 1e-3,
            newton_steps: 12,
            minimize: MinimizeOptions::default(),
        }
    }
}

/// `1e-5 max(1, K)`.
pub fn e_zero_tol(kinetic: f64) -> f64 {
    1e-5 * kinetic.max(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub g: f64,
    pub e: f64,
    pub total: f64,
    pub status: Status,
    pub binding: bool,
}

#[derive(Clone, Debug)]
pub struct GstarResult {
    pub g_star: f64,
    pub lo: f64,
    pub hi: f64,
    pub trace: Vec<Probe>,
    /// Whether the binding predicate is monotone along the probed couplings.
    pub monotone: bool,
    /// Localized state at `hi`, the warm start for later stages.
    pub hi_state: Option<Field>,
}

struct Prober<'a> {
    model: &'a Model,
    m: f64,
    opts: &'a TransitionOptions,
    trace: Vec<Probe>,
}

impl Prober<'_> {
    fn run(&mut self, g: f64, warm: Option<&Field>) -> Result<(bool, MinimizeResult)> {
        let mut o = self.opts.minimize.clone();
        if let Some(u) = warm {
            o.init = Init::Provided(u.clone());
        }
        if o.certify_below.is_none() {
            o.certify_below = Some(uniform_energy(self.model, g, self.m)? - self.opts.e_neg_tol);
        }
        let r = minimize_with(self.model, g, self.m, &o)?;
        let binding = r.e_estimate() < -self.opts.e_neg_tol;
        self.trace.push(Probe { g, e: r.e_estimate(), total: r.energy.total, status: r.status, binding });
        Ok((binding, r))
    }
}

/// Energy of the constant state of mass `m`, the spread-out limit on the box.
pub fn uniform_energy(model: &Model, g: f64, m: f64) -> Result<f64> {
    let grid = model.grid();
    let u = Field::constant(grid, (m / grid.volume()).sqrt());
    Ok(model.energy(&u, g)?.total)
}

fn predicate_monotone(trace: &[Probe]) -> bool {
    let mut sorted: Vec<&Probe> = trace.iter().collect();
    sorted.sort_by(|a, b| a.g.total_cmp(&b.g));
    // a coupling binds if any start found a binding state there
    let mut best: Vec<(f64, bool)> = Vec::new();
    for p in sorted {
        match best.last_mut() {
            Some((g, b)) if *g == p.g => *b |= p.binding,
            _ => best.push((p.g, p.binding)),
        }
    }
    let mut seen = false;
    for (_, b) in best {
        if b {
            seen = true;
        } else if seen {
            return false;
        }
    }
    true
}

/// Bisection on `e(g, m) < -e_neg_tol`, warm-starting each probe from the
/// localized state at the current upper end. The bracket is expanded
/// (doubling `hi`, halving `lo`) when an end has the wrong sign; `lo` falling
/// below `g_floor` yields `g* = 0`.
pub fn find_gstar(m: f64, p: &Potential, grid: &Grid, bracket: (f64, f64), tol_g: f64, opts: &TransitionOptions) -> Result<GstarResult> {
    search(m, p, grid, bracket, |_| tol_g, opts)
}

fn search(m: f64, p: &Potential, grid: &Grid, bracket: (f64, f64), tol: impl Fn(f64) -> f64, opts: &TransitionOptions) -> Result<GstarResult> {
    let (mut lo, mut hi) = bracket;
    let tol_g = tol(hi);
    if !(lo > 0.0 && hi > lo && tol_g > 0.0) {
        return Err(Error::InvalidParameter { name: "bracket", reason: format!("need 0 < lo < hi and tol_g > 0, got ({lo}, {hi}), {tol_g}") });
    }
    let model = Model::new(p, grid)?;
    let mut pr = Prober { model: &model, m, opts, trace: Vec::new() };
    let mut expansions = 0;
    let (mut ok, mut r) = pr.run(hi, None)?;
    while !ok {
        expansions += 1;
        if expansions > opts.max_expansions {
            return Err(Error::BracketNotFound { expansions });
        }
        lo = hi;
        hi *= 2.0;
        (ok, r) = pr.run(hi, None)?;
    }
    let mut hi_state = r.u;
    loop {
        let (ok, r) = pr.run(lo, Some(&hi_state))?;
        if !ok {
            break;
        }
        hi = lo;
        hi_state = r.u;
        lo *= 0.5;
        if lo < opts.g_floor {
            let monotone = predicate_monotone(&pr.trace);
            return Ok(GstarResult { g_star: 0.0, lo: 0.0, hi, trace: pr.trace, monotone, hi_state: Some(hi_state) });
        }
    }
    while hi - lo > tol(hi) {
        let mid = 0.5 * (lo + hi);
        let (ok, r) = pr.run(mid, Some(&hi_state))?;
        if ok {
            hi = mid;
            hi_state = r.u;
        } else {
            lo = mid;
        }
    }
    let monotone = predicate_monotone(&pr.trace);
    Ok(GstarResult { g_star: 0.5 * (lo + hi), lo, hi, trace: pr.trace, monotone, hi_state: Some(hi_state) })
}

/// Minimizers along a decreasing list of couplings, each warm-started from
/// the previous converged state (or `start`).
pub fn minimizer_sequence(m: f64, p: &Potential, grid: &Grid, g_seq: &[f64], start: Option<&Field>, opts: &MinimizeOptions) -> Result<Vec<MinimizeResult>> {
    if g_seq.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter { name: "g_seq", reason: "must be strictly decreasing".into() });
    }
    let model = Model::new(p, grid)?;
    let mut warm = start.cloned();
    let mut out = Vec::with_capacity(g_seq.len());
    for &g in g_seq {
        let mut o = opts.clone();
        if let Some(u) = &warm {
            o.init = Init::Provided(u.clone());
        }
        let r = minimize_with(&model, g, m, &o)?;
        if r.status == Status::Converged {
            warm = Some(r.u.clone());
        }
        out.push(r);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceRow {
    pub j: u32,
    pub g: f64,
    pub e: f64,
    pub status: Status,
    pub grad_sq: f64,
    pub l4: f64,
    pub concentration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    /// Coupling of the at-`g*` run after refinement on the localized branch.
    pub g_at_star: f64,
    pub at_gstar: Option<MinimizeSummary>,
    pub sequence: Vec<SequenceRow>,
    /// `||u||_4^4` at the first probe over its value at `g*`.
    pub l4_ratio: f64,
    pub bisection: Vec<Probe>,
    pub e_zero_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub d: usize,
    pub m: f64,
    pub potential: String,
    pub g_star: f64,
    pub bracket: (f64, f64),
    pub bracket_width: f64,
    pub order: Order,
    pub evidence: Evidence,
}

impl TransitionReport {
    /// Evidence trail as CSV: `stage,g,e,status,grad_sq,l4,concentration`.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("stage,g,e,status,grad_sq,l4,concentration\n");
        for p in &self.evidence.bisection {
            let _ = writeln!(s, "bisection,{:e},{:e},{},,,", p.g, p.e, status_name(p.status));
        }
        for r in &self.evidence.sequence {
            let _ = writeln!(s, "sequence_{},{:e},{:e},{},{:e},{:e},{:e}", r.j, r.g, r.e, status_name(r.status), r.grad_sq, r.l4, r.concentration);
        }
        if let Some(a) = &self.evidence.at_gstar {
            let d = &a.diagnostics;
            let _ = writeln!(
                s,
                "at_gstar,{:e},{:e},{},{:e},{:e},{:e}",
                self.evidence.g_at_star,
                a.energy.total,
                status_name(a.status),
                d.grad_sq,
                d.l4,
                d.concentration
            );
        }
        s
    }
}

pub fn status_name(s: Status) -> &'static str {
    match s {
        Status::Converged => "converged",
        Status::Vanished => "vanished",
        Status::BudgetExhausted => "budget_exhausted",
        Status::Certified => "certified",
    }
}

/// Drives the localized branch to zero energy with Newton steps
/// `g <- g + E / V(u)` (since `dE/dg = -V`), warm-starting every run.
fn refine_at_gstar(model: &Model, m: f64, g0: f64, span: (f64, f64), warm: &Field, opts: &TransitionOptions) -> Result<(f64, MinimizeResult)> {
    let mut g = g0;
    let mut warm = warm.clone();
    let mut last = None;
    for _ in 0..opts.newton_steps.max(1) {
        let o = opts.minimize.clone().with_init(Init::Provided(warm.clone()));
        let r = minimize_with(model, g, m, &o)?;
        if r.status != Status::Converged {
            return Ok((g, r));
        }
        let e = r.energy.total;
        if e.abs() <= e_zero_tol(r.energy.kinetic) {
            return Ok((g, r));
        }
        let next = (g + e / r.energy.interaction).clamp(span.0, span.1);
        warm = r.u.clone();
        last = Some(r);
        if next == g {
            break;
        }
        g = next;
    }
    Ok((g, last.expect("at least one step")))
}

/// Box large enough for the one-dimensional soliton at coupling `g`, keeping
/// the spacing of `base`.
pub fn one_d_probe_grid(p: &Potential, g: f64, m: f64, base: &Grid) -> Result<Grid> {
    let integral = p.sample(base).values().iter().sum::<f64>() * base.spacing();
    let width = 4.0 / (g * m * integral.abs().max(1e-300));
    let target = (16.0 * width).max(base.length());
    let mut n = base.n();
    while (n as f64) * base.spacing() < target {
        n *= 2;
    }
    Grid::new(1, n, n as f64 * base.spacing())
}

/// One-dimensional binding probes at decades of `g` down to `g_floor`.
pub fn one_d_binding_probes(m: f64, p: &Potential, base: &Grid, opts: &TransitionOptions) -> Result<Vec<Probe>> {
    let mut out = Vec::new();
    let mut g = 0.1;
    while g >= opts.g_floor * (1.0 - 1e-12) {
        let grid = one_d_probe_grid(p, g, m, base)?;
        let model = Model::new(p, &grid)?;
        let r = minimize_with(&model, g, m, &opts.minimize)?;
        let e = r.energy.total;
        let binding = r.status == Status::Converged && e < -opts.e_neg_tol_1d;
        out.push(Probe { g, e, total: e, status: r.status, binding });
        g /= 10.0;
    }
    Ok(out)
}

fn row(j: u32, g: f64, r: &MinimizeResult) -> SequenceRow {
    SequenceRow { j, g, e: r.e_estimate(), status: r.status, grad_sq: r.diagnostics.grad_sq, l4: r.diagnostics.l4, concentration: r.diagnostics.concentration }
}

/// Bisection with the stopping rule `hi - lo <= tol_g_rel * hi`.
pub fn find_gstar_relative(m: f64, p: &Potential, grid: &Grid, bracket: (f64, f64), tol_g_rel: f64, opts: &TransitionOptions) -> Result<GstarResult> {
    search(m, p, grid, bracket, |hi| tol_g_rel * hi, opts)
}

/// The bisection stage of [`classify_transition`], with the bracket
/// `opts.bracket / m`.
pub fn locate_gstar(m: f64, p: &Potential, grid: &Grid, opts: &TransitionOptions) -> Result<GstarResult> {
    find_gstar_relative(m, p, grid, (opts.bracket.0 / m, opts.bracket.1 / m), opts.tol_g_rel, opts)
}

fn no_transition(d: usize, m: f64, p: &Potential, bracket: (f64, f64), bisection: Vec<Probe>) -> TransitionReport {
    TransitionReport {
        d,
        m,
        potential: p.to_string(),
        g_star: 0.0,
        bracket,
        bracket_width: bracket.1 - bracket.0,
        order: Order::NoTransition,
        evidence: Evidence { g_at_star: 0.0, at_gstar: None, sequence: Vec::new(), l4_ratio: 1.0, bisection, e_zero_tol: e_zero_tol(0.0) },
    }
}

/// Decides `NoTransition` for nonnegative one-dimensional kernels from the
/// decade probes; `None` when some probe fails to bind.
pub fn one_d_verdict(m: f64, p: &Potential, grid: &Grid, opts: &TransitionOptions) -> Result<Option<TransitionReport>> {
    if grid.dim() != 1 || !p.is_nonnegative() {
        return Ok(None);
    }
    let probes = one_d_binding_probes(m, p, grid, opts)?;
    if probes.iter().all(|q| q.binding) {
        return Ok(Some(no_transition(1, m, p, (0.0, opts.g_floor), probes)));
    }
    Ok(None)
}

/// Locates `g*` and decides the order of the transition from the
/// warm-started sequence `g_j = g* (1 + 2^-j)` and a run at `g*`.
pub fn classify_transition(m: f64, p: &Potential, grid: &Grid, opts: &TransitionOptions) -> Result<TransitionReport> {
    if let Some(rep) = one_d_verdict(m, p, grid, opts)? {
        return Ok(rep);
    }
    let gs = locate_gstar(m, p, grid, opts)?;
    classify_from_gstar(m, p, grid, &gs, opts)
}

/// The stages of [`classify_transition`] that follow the bisection.
pub fn classify_from_gstar(m: f64, p: &Potential, grid: &Grid, gs: &GstarResult, opts: &TransitionOptions) -> Result<TransitionReport> {
    let d = grid.dim();
    if gs.g_star == 0.0 {
        return Ok(no_transition(d, m, p, (gs.lo, gs.hi), gs.trace.clone()));
    }
    let g_star = gs.g_star;
    let hi_state = gs.hi_state.clone().ok_or_else(|| Error::InvalidParameter { name: "gstar", reason: "missing state at the upper bracket end".into() })?;
    let js: Vec<u32> = (opts.j_range.0..=opts.j_range.1).collect();
    let g_seq: Vec<f64> = js.iter().map(|&j| g_star * (1.0 + 0.5f64.powi(j as i32))).collect();
    let seq = minimizer_sequence(m, p, grid, &g_seq, Some(&hi_state), &opts.minimize)?;
    let sequence: Vec<SequenceRow> = js.iter().zip(&g_seq).zip(&seq).map(|((&j, &g), r)| row(j, g, r)).collect();

    let model = Model::new(p, grid)?;
    let warm = seq.iter().rev().find(|r| r.status == Status::Converged).map(|r| r.u.clone()).unwrap_or(hi_state);
    let width = gs.hi - gs.lo;
    let (g_at, at) = refine_at_gstar(&model, m, gs.hi, (gs.lo - width, gs.hi + width), &warm, opts)?;
    let tol_e = e_zero_tol(at.energy.kinetic);
    let l4_ratio = sequence[0].l4 / at.diagnostics.l4;
    let first = at.status == Status::Converged
        && at.energy.total.abs() <= tol_e
        && at.diagnostics.grad_sq >= opts.rho_floor
        && l4_ratio < opts.trend_factor;
    let second = at.status == Status::Vanished && l4_ratio >= opts.trend_factor;
    let evidence = Evidence { g_at_star: g_at, at_gstar: Some(at.summary()), sequence, l4_ratio, bisection: gs.trace.clone(), e_zero_tol: tol_e };
    let mut report = TransitionReport {
        d,
        m,
        potential: p.to_string(),
        g_star,
        bracket: (gs.lo, gs.hi),
        bracket_width: width,
        order: Order::First,
        evidence,
    };
    report.order = match (first, second) {
        (true, false) => Order::First,
        (false, true) => Order::Second,
        _ => return Err(Error::Inconclusive(serde_json::to_string(&report)?)),
    };
    Ok(report)
}

/// The localized state at `g*`: Newton refinement of the coupling from the
/// bisection's upper state. Returns the refined coupling and the run there.
pub fn state_at_gstar(m: f64, p: &Potential, grid: &Grid, gs: &GstarResult, opts: &TransitionOptions) -> Result<(f64, MinimizeResult)> {
    let hi_state = gs.hi_state.as_ref().ok_or_else(|| Error::InvalidParameter { name: "gstar", reason: "missing state at the upper bracket end".into() })?;
    let model = Model::new(p, grid)?;
    let width = gs.hi - gs.lo;
    refine_at_gstar(&model, m, gs.hi, (gs.lo - width, gs.hi + width), hi_state, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClrRow {
    pub g: f64,
    pub e: f64,
    pub status: Status,
    pub integral: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClrWitness {
    pub rows: Vec<ClrRow>,
    /// Half the last integral.
    pub floor: f64,
    pub nondegenerate: bool,
}

/// `int (V_+ * u_j^2)^{3/2}` along warm-started minimizers at the
/// decreasing couplings `g_seq`.
pub fn clr_witness(m: f64, p: &Potential, grid: &Grid, g_seq: &[f64], start: Option<&Field>, opts: &MinimizeOptions) -> Result<ClrWitness> {
    if grid.dim() != 3 {
        return Err(Error::DimensionMismatch { expected: 3, found: grid.dim() });
    }
    let seq = minimizer_sequence(m, p, grid, g_seq, start, opts)?;
    clr_witness_of(p, g_seq, &seq)
}

pub fn clr_witness_of(p: &Potential, g_seq: &[f64], seq: &[MinimizeResult]) -> Result<ClrWitness> {
    let rows = g_seq
        .iter()
        .zip(seq)
        .map(|(&g, r)| Ok(ClrRow { g, e: r.e_estimate(), status: r.status, integral: spectrum::clr_integral(&r.u, p)? }))
        .collect::<Result<Vec<_>>>()?;
    let floor = 0.5 * rows.last().map(|r| r.integral).unwrap_or(0.0);
    let nondegenerate = floor > 0.0 && rows.iter().all(|r| r.integral >= floor);
    Ok(ClrWitness { rows, floor, nondegenerate })
}
