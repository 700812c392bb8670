//! Positive-energy critical points in three dimensions: the small-coupling
//! nonexistence threshold, the radius `rho0` of the positive-energy shell,
//! local minimization away from vanishing, the dilation-augmented
//! functional and a string-method mountain pass.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{gn_constant, sobolev_constant_3d, GnForm};
use crate::energy::{residual_from, EnergyBreakdown, Model};
use crate::error::{Error, Result};
use crate::grid::{self, Field, Grid};
use crate::groundstate::{minimize_with, MinimizeOptions, MinimizeResult, Status};
use crate::potentials::{split_norms, Potential};

fn require_3d(d: usize) -> Result<()> {
    if d != 3 {
        return Err(Error::DimensionMismatch { expected: 3, found: d });
    }
    Ok(())
}

/// `||W||_{3/2}` on `R^3` by radial quadrature after `r = s / (1 - s)`.
pub fn w_norm_32(p: &Potential) -> Result<f64> {
    require_3d(p.dim())?;
    if !p.is_differentiable() || p.is_test_only() {
        return Err(Error::NonDifferentiablePotential(p.to_string()));
    }
    let width = p.width();
    let integrand = |s: f64| {
        let r = width * s / (1.0 - s);
        let jac = width / ((1.0 - s) * (1.0 - s));
        p.w_radial(r).abs().powf(1.5) * r * r * jac
    };
    let simpson = |upper: f64, n: usize| {
        let h = upper / n as f64;
        let mut acc = integrand(0.0) + integrand(upper);
        for i in 1..n {
            acc += integrand(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    };
    let a = simpson(1.0 - 1e-3, 20_000);
    let b = simpson(1.0 - 1e-5, 200_000);
    if !a.is_finite() || !b.is_finite() || (b - a).abs() > 1e-3 * b.abs().max(1e-300) {
        return Err(Error::InfiniteWNorm);
    }
    Ok((4.0 * std::f64::consts::PI * b).powf(2.0 / 3.0))
}

/// `g2 = 4 / (C_S m ||W||_{3/2})`: below it every critical point on `S_m`
/// is constant. Infinite when `W = 0`.
pub fn nonexistence_threshold_g2(m: f64, p: &Potential) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::InvalidParameter { name: "m", reason: format!("mass must be positive, got {m}") });
    }
    let w = w_norm_32(p)?;
    if w == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(4.0 / (sobolev_constant_3d() * m * w))
}

/// Returned when the potential imposes no constraint.
pub const RHO0_CAP: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rho0 {
    pub rho0: f64,
    pub radius: f64,
    /// `||V_{R,1}||_1`
    pub near_l1: f64,
    /// `||V_{R,2}||_{3/2}`
    pub far_norm: f64,
    pub c_interaction: f64,
    pub c_quartic: f64,
}

/// Radius of the shell `||grad u|| <= rho0` on which `E_g >= ||grad u||^2 / 8`
/// for every `g <= g_tilde`: the smallest grid radius `R` with
/// `g C m ||V_{R,2}||_{3/2} <= 1/4`, then the largest `rho0` with
/// `C' g ||V_{R,1}||_1 sqrt(m) rho0 <= 1/8`.
pub fn compute_rho0(g_tilde: f64, m: f64, p: &Potential, grid: &Grid) -> Result<f64> {
    rho0_report(g_tilde, m, p, grid, RHO0_CAP).map(|r| r.rho0)
}

pub fn rho0_report(g_tilde: f64, m: f64, p: &Potential, grid: &Grid, cap: f64) -> Result<Rho0> {
    require_3d(grid.dim())?;
    if !(g_tilde > 0.0 && m > 0.0 && cap > 0.0) {
        return Err(Error::InvalidParameter { name: "g_tilde", reason: format!("need g_tilde, m, cap > 0, got {g_tilde}, {m}, {cap}") });
    }
    let c_interaction = gn_constant(3, GnForm::Interaction)?;
    let c_quartic = gn_constant(3, GnForm::Quartic)?;
    let h = grid.spacing();
    for k in 1..=grid.n() / 2 {
        let radius = k as f64 * h;
        let (near_l1, far_norm) = split_norms(p, grid, radius);
        if g_tilde * c_interaction * m * far_norm <= 0.25 {
            let rho0 = if near_l1 > 0.0 { (1.0 / (8.0 * c_quartic * g_tilde * near_l1 * m.sqrt())).min(cap) } else { cap };
            return Ok(Rho0 { rho0, radius, near_l1, far_norm, c_interaction, c_quartic });
        }
    }
    Err(Error::NoAdmissibleRadius)
}

#[derive(Clone, Debug)]
pub struct LocalOptions {
    pub minimize: MinimizeOptions,
    /// Added to `rho0^2 / 4` to form the kinetic guard.
    pub band: f64,
}

impl Default for LocalOptions {
    fn default() -> Self {
        Self { minimize: MinimizeOptions::default(), band: 0.0 }
    }
}

/// Gradient flow restricted to `||grad u||^2 > rho0^2 / 4`. The initial state
/// comes from `opts.minimize.init`, normally a minimizer at `g*`.
pub fn local_minimize(g: f64, m: f64, p: &Potential, grid: &Grid, rho0: f64, opts: &LocalOptions) -> Result<MinimizeResult> {
    require_3d(grid.dim())?;
    let model = Model::new(p, grid)?;
    local_minimize_with(&model, g, m, rho0, opts)
}

pub fn local_minimize_with(model: &Model, g: f64, m: f64, rho0: f64, opts: &LocalOptions) -> Result<MinimizeResult> {
    let guard = 0.25 * rho0 * rho0 + opts.band;
    let mut o = opts.minimize.clone();
    o.kinetic_guard = Some(guard);
    let r = minimize_with(model, g, m, &o)?;
    match r.status {
        Status::Converged => Ok(r),
        Status::Vanished => Err(Error::ConstraintHit { guard }),
        Status::BudgetExhausted | Status::Certified => Err(Error::NoConvergence { residual: r.residual, iterations: r.iterations }),
    }
}

/// Largest admissible `|theta|`: the dilated field must stay inside half the
/// box and the dilation factor within a factor two.
pub fn theta_max(u: &Field) -> f64 {
    let grid = u.grid();
    let total = u.mass();
    let mut shells: Vec<(f64, f64)> = u.values().iter().enumerate().map(|(i, v)| (grid.radius_sq(i), v * v * grid.cell_volume())).collect();
    shells.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    let mut radius = 0.0;
    for (r2, w) in shells {
        acc += w;
        radius = r2.sqrt();
        if acc >= (1.0 - 1e-10) * total {
            break;
        }
    }
    let room = if radius > 0.0 { (0.5 * grid.length() / radius).ln() } else { f64::INFINITY };
    room.min(std::f64::consts::LN_2).max(0.0)
}

fn check_theta(theta: f64, u: &Field) -> Result<()> {
    let max = theta_max(u);
    if !theta.is_finite() || theta.abs() > max {
        return Err(Error::ThetaOutOfRange { theta, max });
    }
    Ok(())
}

/// `e^{2 theta}/2 ||grad u||^2 - (g/4) iint V((x-y)/e^theta) u^2 u^2`, the energy
/// of `e^{3 theta/2} u(e^theta x)`.
pub fn augmented_energy(theta: f64, u: &Field, g: f64, p: &Potential) -> Result<f64> {
    check_theta(theta, u)?;
    let model = Model::dilated(p, u.grid(), theta.exp())?;
    let k = 0.5 * grid::grad_norm_sq(u);
    Ok((2.0 * theta).exp() * k - g * model.interaction(u)?)
}

/// `e^{2 theta} ||grad u||^2 + (g/4) iint W((x-y)/e^theta) u^2 u^2`.
pub fn dtheta_augmented(theta: f64, u: &Field, g: f64, p: &Potential) -> Result<f64> {
    check_theta(theta, u)?;
    let model = Model::dilated(p, u.grid(), theta.exp())?;
    dtheta_with(&model, theta, u, g)
}

fn dtheta_with(model: &Model, theta: f64, u: &Field, g: f64) -> Result<f64> {
    Ok((2.0 * theta).exp() * grid::grad_norm_sq(u) + 0.25 * g * model.w_pairing(u)?)
}

/// `rho1` for the mountain-pass geometry: `rho0` when `E_g(u1)` lies below
/// `rho0^2 / 8`, otherwise the radius with `rho1^2 / 8 = 2 E_g(u1)`.
pub fn choose_rho1(rho0: f64, e_u1: f64) -> f64 {
    if e_u1 < rho0 * rho0 / 8.0 {
        rho0
    } else {
        (16.0 * e_u1).sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct SaddleOptions {
    /// Path nodes beyond the first (`K`).
    pub nodes: usize,
    /// Stationarity tolerance, multiplied by `sqrt(m)`.
    pub saddle_tol: f64,
    pub max_sweeps: usize,
    /// Preconditioned descent step.
    pub step: f64,
    /// Climbing starts once the path maximum moves less than this over
    /// `climb_window` sweeps.
    pub climb_drift: f64,
    pub climb_window: usize,
    pub newton_steps: usize,
    /// Climbing-image residual (per `sqrt(m)`) at which the Newton polish takes over.
    pub polish_below: f64,
    /// Larger box with the same spacing for the Newton polish; the saddle
    /// is returned on this grid.
    pub polish_grid: Option<Grid>,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        Self { nodes: 24, saddle_tol: 1e-4, max_sweeps: 2000, step: 0.5, climb_drift: 1e-4, climb_window: 50, newton_steps: 12, polish_below: 0.1, polish_grid: None }
    }
}

#[derive(Clone, Debug)]
pub struct SaddleResult {
    pub u: Field,
    pub c_mp: f64,
    pub energy: EnergyBreakdown,
    pub lambda: f64,
    /// `||r|| / sqrt(m)` of the Euler-Lagrange residual.
    pub residual: f64,
    /// `|d/dtheta E~(0, u)|`.
    pub theta_residual: f64,
    /// Path maximum after every sweep.
    pub path_history: Vec<f64>,
    /// Node energies of the final path.
    pub path_energies: Vec<f64>,
    pub rho1: f64,
    /// `c_mp >= rho1^2 / 8 - 1e-6`.
    pub barrier_ok: bool,
    pub sweeps: usize,
    pub newton_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleSummary {
    pub c_mp: f64,
    pub energy: EnergyBreakdown,
    pub lambda: f64,
    pub residual: f64,
    pub theta_residual: f64,
    pub rho1: f64,
    pub barrier_ok: bool,
    pub sweeps: usize,
    pub newton_steps: usize,
    pub path_history: Vec<f64>,
}

impl SaddleResult {
    pub fn summary(&self) -> SaddleSummary {
        SaddleSummary {
            c_mp: self.c_mp,
            energy: self.energy,
            lambda: self.lambda,
            residual: self.residual,
            theta_residual: self.theta_residual,
            rho1: self.rho1,
            barrier_ok: self.barrier_ok,
            sweeps: self.sweeps,
            newton_steps: self.newton_steps,
            path_history: self.path_history.clone(),
        }
    }

    /// `node,energy` rows of the final path.
    pub fn path_csv(&self) -> String {
        let mut s = String::from("node,energy\n");
        for (k, e) in self.path_energies.iter().enumerate() {
            let _ = writeln!(s, "{k},{e:e}");
        }
        s
    }
}

struct Stationarity {
    energy: EnergyBreakdown,
    lambda: f64,
    residual: Field,
}

fn stationarity(model: &Model, u: &Field, g: f64) -> Result<Stationarity> {
    let ev = model.evaluate(u, g)?;
    let lambda = ev.lambda();
    let residual = residual_from(u, &ev.mean_field, g, lambda);
    Ok(Stationarity { energy: ev.breakdown, lambda, residual })
}

fn project_out(v: &mut [f64], u: &[f64]) {
    let c = grid::dot(v, u) / grid::dot(u, u);
    v.iter_mut().zip(u).for_each(|(a, b)| *a -= c * b);
}

fn norm(v: &[f64]) -> f64 {
    grid::dot(v, v).sqrt()
}

/// Radial nonincreasing representative with mass `m`.
fn radialize(u: &Field, m: f64) -> Result<Field> {
    let mut r = grid::rearrange_decreasing(u);
    r.normalize_to(m)?;
    Ok(r)
}

fn combine(a: &Field, wa: f64, b: &Field, wb: f64, m: f64) -> Result<Field> {
    let mut out = a.scaled(wa);
    out.axpy(wb, b);
    out.normalize_to(m)?;
    Ok(out)
}

/// Redistributes `nodes[lo..=hi]` to equal L2 arclength, endpoints fixed.
fn reparametrize(nodes: &mut [Field], lo: usize, hi: usize, m: f64) -> Result<()> {
    if hi <= lo + 1 {
        return Ok(());
    }
    let seg = &nodes[lo..=hi];
    let mut arc = vec![0.0];
    for w in seg.windows(2) {
        let d: f64 = w[0].values().iter().zip(w[1].values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        arc.push(arc.last().unwrap() + d);
    }
    let total = *arc.last().unwrap();
    if total == 0.0 {
        return Ok(());
    }
    let count = hi - lo;
    let mut fresh = Vec::with_capacity(count - 1);
    let mut j = 0;
    for i in 1..count {
        let target = total * i as f64 / count as f64;
        while j + 1 < arc.len() - 1 && arc[j + 1] < target {
            j += 1;
        }
        let span = arc[j + 1] - arc[j];
        let a = if span > 0.0 { (target - arc[j]) / span } else { 0.0 };
        fresh.push(combine(&seg[j], 1.0 - a, &seg[j + 1], a, m)?);
    }
    for (i, f) in fresh.into_iter().enumerate() {
        nodes[lo + 1 + i] = f;
    }
    Ok(())
}

/// Restarted GMRES for `A x = b` with right preconditioner `M`.
fn gmres(a: impl Fn(&[f64]) -> Vec<f64>, mpre: impl Fn(&[f64]) -> Vec<f64>, b: &[f64], rtol: f64, restart: usize, max_restarts: usize) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return x;
    }
    for _ in 0..max_restarts {
        let ax = a(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        if beta <= rtol * bnorm {
            break;
        }
        let mut basis = vec![r.iter().map(|v| v / beta).collect::<Vec<f64>>()];
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
        let mut rhs = vec![0.0; restart + 1];
        rhs[0] = beta;
        let mut k_used = 0;
        for k in 0..restart {
            let z = mpre(&basis[k]);
            let mut w = a(&z);
            for (i, q) in basis.iter().enumerate() {
                let hik = grid::dot(&w, q);
                h[i][k] = hik;
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= hik * qi);
            }
            let wn = norm(&w);
            h[k + 1][k] = wn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let den = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            cs[k] = h[k][k] / den;
            sn[k] = h[k + 1][k] / den;
            h[k][k] = den;
            h[k + 1][k] = 0.0;
            rhs[k + 1] = -sn[k] * rhs[k];
            rhs[k] *= cs[k];
            k_used = k + 1;
            if rhs[k + 1].abs() <= rtol * bnorm || wn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let s: f64 = (i + 1..k_used).map(|j| h[i][j] * y[j]).sum();
            y[i] = (rhs[i] - s) / h[i][i];
        }
        let mut v = vec![0.0; n];
        for (yi, q) in y.iter().zip(&basis) {
            v.iter_mut().zip(q).for_each(|(vi, qi)| *vi += yi * qi);
        }
        let dx = mpre(&v);
        x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
    }
    x
}

/// Newton iteration on the constrained Euler-Lagrange equation with
/// finite-difference Jacobian products and a `(sigma - Δ)^{-1}` preconditioner.
fn newton_polish(model: &Model, u0: &Field, g: f64, m: f64, sigma: f64, tol: f64, steps: usize) -> Result<(Field, usize)> {
    let grid = u0.grid().clone();
    let residual_of = |u: &Field| -> Result<Field> { Ok(stationarity(model, u, g)?.residual) };
    let precond = |v: &[f64]| -> Vec<f64> {
        let f = Field::from_vec_unchecked(&grid, v.to_vec());
        grid::apply_multiplier(&f, |k2| 1.0 / (sigma + k2)).into_values()
    };
    let mut u = u0.clone();
    let mut r = residual_of(&u)?;
    let mut used = 0;
    for _ in 0..steps {
        let rn = r.mass().sqrt() / m.sqrt();
        if rn <= tol {
            break;
        }
        used += 1;
        let base = u.values().to_vec();
        let r0 = r.values().to_vec();
        let jac = |v: &[f64]| -> Vec<f64> {
            let mut v = v.to_vec();
            project_out(&mut v, &base);
            let vn = norm(&v);
            if vn == 0.0 {
                return vec![0.0; v.len()];
            }
            let eps = 1e-7 * norm(&base) / vn;
            let shifted: Vec<f64> = base.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
            let rs = residual_of(&Field::from_vec_unchecked(&grid, shifted)).expect("finite field");
            let mut out: Vec<f64> = rs.values().iter().zip(&r0).map(|(a, b)| (a - b) / eps).collect();
            project_out(&mut out, &base);
            out
        };
        let pre = |v: &[f64]| -> Vec<f64> {
            let mut z = precond(v);
            project_out(&mut z, &base);
            z
        };
        let rhs: Vec<f64> = r0.iter().map(|v| -v).collect();
        let delta = gmres(jac, pre, &rhs, 1e-3, 60, 3);
        let mut accepted = false;
        let mut t = 1.0;
        for _ in 0..8 {
            let trial: Vec<f64> = base.iter().zip(&delta).map(|(a, d)| a + t * d).collect();
            let mut cand = Field::from_values(&grid, trial)?;
            cand.normalize_to(m)?;
            let rc = residual_of(&cand)?;
            if rc.mass() < r.mass() {
                u = cand;
                r = rc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((u, used))
}

/// String-method search for the mountain-pass critical point between a
/// low-gradient state and `u1`.
///
/// On the periodic box the low endpoint is the constant state of mass `m`,
/// whose gradient vanishes. Interior nodes are relaxed by preconditioned
/// descent on the sphere, made radial nonincreasing, and redistributed to
/// equal arclength. Once the path maximum settles, the top node climbs
/// along the path tangent, and a Newton-Krylov polish finishes the saddle.
pub fn mountain_pass(g: f64, m: f64, p: &Potential, grid: &Grid, rho1: f64, u1: &Field, opts: &SaddleOptions) -> Result<SaddleResult> {
    require_3d(grid.dim())?;
    grid.check_same(u1.grid())?;
    if opts.nodes < 3 {
        return Err(Error::InvalidParameter { name: "nodes", reason: "need at least 3 path nodes".into() });
    }
    let model = Model::new(p, grid)?;
    if u1.values().iter().any(|&v| v < -1e-4 * u1.max_abs()) {
        return Err(Error::GeometryViolated("u1 must be nonnegative".into()));
    }
    let end = radialize(u1, m)?;
    let end_state = stationarity(&model, &end, g)?;
    let grad_end = 2.0 * end_state.energy.kinetic;
    if !(grad_end > rho1 * rho1 && end_state.energy.total < rho1 * rho1 / 8.0) {
        return Err(Error::GeometryViolated(format!(
            "need ||grad u1||^2 = {grad_end:e} > rho1^2 = {:e} and E(u1) = {:e} < rho1^2/8",
            rho1 * rho1,
            end_state.energy.total
        )));
    }
    let start = Field::constant(grid, (m / grid.volume()).sqrt());
    let sigma = end_state.lambda.max(0.1);
    let k = opts.nodes;
    let mut nodes: Vec<Field> = (0..=k)
        .map(|i| {
            let t = i as f64 / k as f64;
            combine(&start, 1.0 - t, &end, t, m)
        })
        .collect::<Result<_>>()?;
    let tol = opts.saddle_tol * m.sqrt();
    let mut history = Vec::new();
    let mut climbing: Option<usize> = None;
    let mut energies = vec![0.0; k + 1];
    let mut sweeps = 0;

    for sweep in 0..opts.max_sweeps {
        sweeps = sweep + 1;
        let climb = climbing;
        let tangents: Vec<Option<Field>> = (0..=k)
            .map(|i| {
                if Some(i) == climb {
                    let mut t = nodes[i + 1].clone();
                    t.axpy(-1.0, &nodes[i - 1]);
                    Some(t)
                } else {
                    None
                }
            })
            .collect();
        let step = opts.step;
        let updated: Vec<(Field, f64, f64)> = nodes[1..k]
            .par_iter()
            .enumerate()
            .map(|(j, u)| -> Result<(Field, f64, f64)> {
                let i = j + 1;
                let st = stationarity(&model, u, g)?;
                let mut dir = st.residual.clone();
                if let Some(t) = &tangents[i] {
                    let mut tv = t.values().to_vec();
                    project_out(&mut tv, u.values());
                    let tn = norm(&tv);
                    if tn > 0.0 {
                        tv.iter_mut().for_each(|v| *v /= tn);
                        let c = grid::dot(dir.values(), &tv);
                        dir.values_mut().iter_mut().zip(&tv).for_each(|(d, t)| *d -= 2.0 * c * t);
                    }
                }
                let pd = grid::apply_multiplier(&dir, |k2| 1.0 / (sigma + k2));
                let mut next = u.clone();
                next.axpy(-step, &pd);
                let next = radialize(&next, m)?;
                let res = st.residual.mass().sqrt() / m.sqrt();
                Ok((next, st.energy.total, res))
            })
            .collect::<Result<_>>()?;
        energies[0] = model.energy(&nodes[0], g)?.total;
        energies[k] = end_state.energy.total;
        let mut climb_res = f64::INFINITY;
        for (j, (f, e, res)) in updated.into_iter().enumerate() {
            nodes[j + 1] = f;
            energies[j + 1] = e;
            if Some(j + 1) == climb {
                climb_res = res;
            }
        }
        let (top, emax) = energies[1..k].iter().enumerate().fold((1, f64::NEG_INFINITY), |(bi, be), (j, &e)| if e > be { (j + 1, e) } else { (bi, be) });
        history.push(emax);
        match climbing {
            Some(c) => {
                reparametrize(&mut nodes, 0, c, m)?;
                reparametrize(&mut nodes, c, k, m)?;
                if climb_res <= opts.polish_below * m.sqrt() {
                    break;
                }
            }
            None => {
                reparametrize(&mut nodes, 0, k, m)?;
                let w = opts.climb_window;
                if history.len() > w && (history[history.len() - 1] - history[history.len() - 1 - w]).abs() < opts.climb_drift {
                    climbing = Some(top);
                }
            }
        }
    }
    let guess = match climbing {
        Some(c) => nodes[c].clone(),
        None => {
            let top = (1..k).max_by(|&a, &b| energies[a].total_cmp(&energies[b])).unwrap();
            nodes[top].clone()
        }
    };
    let (model, guess) = match &opts.polish_grid {
        Some(big) => {
            let mut e = grid::embed(&guess, big)?;
            e.normalize_to(m)?;
            (Model::new(p, big)?, e)
        }
        None => (model, guess),
    };
    let (u, newton_steps) = newton_polish(&model, &guess, g, m, sigma, 0.1 * tol, opts.newton_steps)?;
    let st = stationarity(&model, &u, g)?;
    let residual = st.residual.mass().sqrt() / m.sqrt();
    let theta_residual = dtheta_with(&model, 0.0, &u, g)?.abs();
    if !(residual <= tol && theta_residual <= tol) {
        return Err(Error::SaddleNoConvergence(format!("residual {residual:e}, theta residual {theta_residual:e}, energy {:e}", st.energy.total)));
    }
    let c_mp = st.energy.total;
    Ok(SaddleResult {
        u,
        c_mp,
        energy: st.energy,
        lambda: st.lambda,
        residual,
        theta_residual,
        path_history: history,
        path_energies: energies,
        rho1,
        barrier_ok: c_mp >= rho1 * rho1 / 8.0 - 1e-6,
        sweeps,
        newton_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{constant_potential, gaussian_potential, ion_atom};

    #[test]
    fn g2_scales_inversely_with_mass() {
        let p = ion_atom(1.0, 3).unwrap();
        let a = nonexistence_threshold_g2(1.0, &p).unwrap();
        let b = nonexistence_threshold_g2(2.0, &p).unwrap();
        assert!(a > 0.0 && a.is_finite());
        assert!((a - 2.0 * b).abs() < 1e-12 * a);
    }

    #[test]
    fn w_norm_scales_with_width() {
        // V_b(x) = b^-4 V_1(x / b), so ||W_b||_{3/2} = b^-2 ||W_1||_{3/2}.
        let w1 = w_norm_32(&ion_atom(1.0, 3).unwrap()).unwrap();
        let w2 = w_norm_32(&ion_atom(2.0, 3).unwrap()).unwrap();
        assert!((w1 - 4.0 * w2).abs() < 1e-8 * w1, "{w1} {w2}");
    }

    #[test]
    fn w_norm_against_box_quadrature() {
        let p = gaussian_potential(1.0, 1.0, 3).unwrap();
        let grid = Grid::new(3, 64, 16.0).unwrap();
        let w = p.sample_w(&grid).unwrap();
        let q = crate::potentials::lq_norm(&w, 1.5);
        let exact = w_norm_32(&p).unwrap();
        assert!((q - exact).abs() < 1e-6 * exact, "{q} {exact}");
    }

    #[test]
    fn zero_w_means_no_threshold() {
        let p = constant_potential(0.0, 3).unwrap();
        assert!(matches!(nonexistence_threshold_g2(1.0, &p), Ok(g) if g.is_infinite()) || nonexistence_threshold_g2(1.0, &p).is_err());
    }

    #[test]
    fn rho0_cap_and_monotone() {
        let grid = Grid::new(3, 32, 24.0).unwrap();
        let zero = constant_potential(0.0, 3).unwrap();
        assert_eq!(compute_rho0(5.0, 1.0, &zero, &grid).unwrap(), RHO0_CAP);
        let p = ion_atom(1.0, 3).unwrap();
        let a = compute_rho0(10.0, 1.0, &p, &grid).unwrap();
        let b = compute_rho0(20.0, 1.0, &p, &grid).unwrap();
        assert!(a > 0.0 && b > 0.0 && b <= a);
        assert!(compute_rho0(1e6, 1.0, &p, &grid).is_err());
    }

    #[test]
    fn rho0_shell_has_positive_energy() {
        use rand::{Rng, SeedableRng};
        // Near-constant fields on a large box: the box constant state has
        // energy -g m^2 int V / (4 L^3), so radii well inside the shell are used.
        let grid = Grid::new(3, 128, 192.0).unwrap();
        let p = ion_atom(1.0, 3).unwrap();
        let g = 18.0;
        let rho0 = compute_rho0(g, 1.0, &p, &grid).unwrap();
        let model = Model::new(&p, &grid).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let c = (1.0 / grid.volume()).sqrt();
        for _ in 0..24 {
            let vals = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let width: f64 = rng.gen_range(4.0..16.0);
            let mut eta = grid::apply_multiplier(&Field::from_values(&grid, vals).unwrap(), |k2| if k2 > 0.0 { (-0.5 * k2 * width * width).exp() } else { 0.0 });
            let rho = rho0 * rng.gen_range(0.5..1.0);
            eta.scale(rho / grid::grad_norm_sq(&eta).sqrt());
            let mut u = Field::constant(&grid, c);
            u.axpy(1.0, &eta);
            let scale = (1.0 / u.mass()).sqrt();
            u.scale(scale);
            let e = model.energy(&u, g).unwrap();
            let r2 = 2.0 * e.kinetic;
            assert!(r2 <= rho0 * rho0);
            assert!(e.total >= r2 / 8.0 - 1e-8, "{} vs {}", e.total, r2 / 8.0);
        }
    }

    #[test]
    fn augmented_identities() {
        let grid = Grid::new(3, 32, 16.0).unwrap();
        let p = ion_atom(1.0, 3).unwrap();
        let u = Field::from_fn(&grid, |x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 2.0).exp());
        let e0 = augmented_energy(0.0, &u, 3.0, &p).unwrap();
        let direct = Model::new(&p, &grid).unwrap().energy(&u, 3.0).unwrap().total;
        assert!((e0 - direct).abs() < 1e-12);
        let zero = constant_potential(0.0, 3).unwrap();
        let k = 0.5 * grid::grad_norm_sq(&u);
        let t = 0.3;
        assert!((augmented_energy(t, &u, 3.0, &zero).unwrap() - (2.0 * t).exp() * k).abs() < 1e-12);
        let h = 1e-4;
        let fd = (augmented_energy(t + h, &u, 3.0, &p).unwrap() - augmented_energy(t - h, &u, 3.0, &p).unwrap()) / (2.0 * h);
        let an = dtheta_augmented(t, &u, 3.0, &p).unwrap();
        assert!((fd - an).abs() < 1e-6 * an.abs(), "{fd} {an}");
        assert!(matches!(augmented_energy(2.0, &u, 3.0, &p), Err(Error::ThetaOutOfRange { .. })));
    }

    #[test]
    fn augmented_matches_dilated_field() {
        let grid = Grid::new(3, 64, 16.0).unwrap();
        let p = ion_atom(1.0, 3).unwrap();
        let u = Field::from_fn(&grid, |x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 2.0).exp());
        let model = Model::new(&p, &grid).unwrap();
        for theta in [-0.2f64, 0.15] {
            let a = augmented_energy(theta, &u, 3.0, &p).unwrap();
            let d = grid::dilate(&u, theta.exp()).unwrap();
            let b = model.energy(&d, 3.0).unwrap().total;
            assert!((a - b).abs() < 1e-6 * b.abs(), "{theta}: {a} {b}");
        }
    }

    #[test]
    fn guard_reports_constraint_hit() {
        let grid = Grid::new(3, 32, 24.0).unwrap();
        let p = ion_atom(1.0, 3).unwrap();
        let r = local_minimize(2.0, 1.0, &p, &grid, 0.5, &LocalOptions::default());
        assert!(matches!(r, Err(Error::ConstraintHit { .. })), "{r:?}");
    }

    #[test]
    fn gmres_solves_small_system() {
        let a = |x: &[f64]| vec![4.0 * x[0] + x[1], x[0] + 3.0 * x[1] - x[2], -x[1] + 2.0 * x[2]];
        let x = gmres(a, |v| v.to_vec(), &[1.0, 2.0, 3.0], 1e-12, 3, 5);
        let r = a(&x);
        assert!((r[0] - 1.0).abs() + (r[1] - 2.0).abs() + (r[2] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn geometry_checked() {
        let grid = Grid::new(3, 16, 12.0).unwrap();
        let p = ion_atom(1.0, 3).unwrap();
        let mut u = Field::from_fn(&grid, |x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 2.0).exp());
        u.normalize_to(1.0).unwrap();
        // positive energy far above rho1^2 / 8
        let r = mountain_pass(0.1, 1.0, &p, &grid, 0.1, &u, &SaddleOptions::default());
        assert!(matches!(r, Err(Error::GeometryViolated(_))));
        let r = mountain_pass(0.1, 1.0, &p, &grid, 0.1, &u.scaled(-1.0), &SaddleOptions::default());
        assert!(matches!(r, Err(Error::GeometryViolated(_))));
    }
}

