//! Mass-constrained minimization of the Hartree functional by a normalized
//! spectral gradient flow, with vanishing detection.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{EnergyBreakdown, Evaluation, Model};
use crate::error::{Error, Result};
use crate::grid::{self, Field, Grid};
use crate::potentials::Potential;

#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    GaussianBump,
    /// Gaussian bump plus seeded smooth noise of the given relative amplitude.
    PerturbedBump(f64),
    Random,
    Provided(Field),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Laplacian integrated implicitly: multiplier `1/(1 + dt |k|^2)`.
    SemiImplicit,
    Explicit,
}

#[derive(Clone, Debug)]
pub struct MinimizeOptions {
    pub max_iters: usize,
    /// Initial step; `None` means `0.5 h^2`.
    pub dt0: Option<f64>,
    /// Upper cap on the adaptive step.
    pub dt_max: f64,
    /// Converged once `||r||_2 <= grad_tol * sqrt(m)`.
    pub grad_tol: f64,
    /// Vanished once the block concentration stays below `vanish_tol * sqrt(m)`.
    pub vanish_tol: f64,
    pub vanish_window: usize,
    pub seed: u64,
    pub init: Init,
    pub scheme: Scheme,
    /// Polak-Ribiere momentum on top of the preconditioned step.
    pub momentum: bool,
    /// Recenter on the block of largest mass every this many steps (0: never).
    pub recenter_every: usize,
    /// Stop early with `Vanished` once `||grad u||^2` falls below this guard.
    pub kinetic_guard: Option<f64>,
    /// Stop early with `Certified` once the energy is below this level while
    /// the state is not vanishing.
    pub certify_below: Option<f64>,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            max_iters: 50_000,
            dt0: None,
            dt_max: 1e3,
            grad_tol: 1e-6,
            vanish_tol: 0.05,
            vanish_window: 200,
            seed: 0,
            init: Init::GaussianBump,
            scheme: Scheme::SemiImplicit,
            momentum: true,
            recenter_every: 50,
            kinetic_guard: None,
            certify_below: None,
        }
    }
}

impl MinimizeOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: &str| Err(Error::InvalidParameter { name, reason: reason.into() });
        if self.max_iters == 0 {
            return bad("max_iters", "must be at least 1");
        }
        if !(self.grad_tol > 0.0) || !(self.vanish_tol > 0.0) || !(self.dt_max > 0.0) {
            return bad("tolerances", "must be positive");
        }
        if let Some(dt) = self.dt0 {
            if !(dt > 0.0) {
                return bad("dt0", "must be positive");
            }
        }
        Ok(())
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    Vanished,
    BudgetExhausted,
    /// Stopped once a localized state fell below
    /// [`MinimizeOptions::certify_below`]; its energy bounds `e(g, m)` from above.
    Certified,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `max |u|`.
    pub peak: f64,
    /// `sup_z ||u||_{L^2(z+Q)}`.
    pub concentration: f64,
    /// `||u||_4^4`.
    pub l4: f64,
    /// `||grad u||^2`.
    pub grad_sq: f64,
    /// `-min u / max u` after the sign fix.
    pub negativity: f64,
}

impl Diagnostics {
    pub fn of(u: &Field) -> Self {
        let peak = u.max_abs();
        let min = u.values().iter().fold(f64::INFINITY, |a, &b| a.min(b));
        Self {
            peak,
            concentration: grid::concentration(u),
            l4: u.lp_norm_pow(4.0),
            grad_sq: grid::grad_norm_sq(u),
            negativity: if peak > 0.0 { (-min / peak).max(0.0) } else { 0.0 },
        }
    }
}

#[derive(Clone, Debug)]
pub struct MinimizeResult {
    pub u: Field,
    pub energy: EnergyBreakdown,
    pub lambda: f64,
    /// `||el_residual||_2 / sqrt(m)`.
    pub residual: f64,
    pub status: Status,
    pub iterations: usize,
    pub diagnostics: Diagnostics,
}

impl MinimizeResult {
    /// Estimate of `e(g, m)`: zero for vanished runs, otherwise the
    /// nonpositive part of the final energy.
    pub fn e_estimate(&self) -> f64 {
        match self.status {
            Status::Vanished => 0.0,
            _ => self.energy.total.min(0.0),
        }
    }

    pub fn summary(&self) -> MinimizeSummary {
        MinimizeSummary {
            energy: self.energy,
            e_estimate: self.e_estimate(),
            lambda: self.lambda,
            residual: self.residual,
            status: self.status,
            iterations: self.iterations,
            diagnostics: self.diagnostics,
        }
    }
}

/// Serializable view of a [`MinimizeResult`] without the field values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizeSummary {
    pub energy: EnergyBreakdown,
    pub e_estimate: f64,
    pub lambda: f64,
    pub residual: f64,
    pub status: Status,
    pub iterations: usize,
    pub diagnostics: Diagnostics,
}

pub fn initial_field(grid: &Grid, m: f64, init: &Init, seed: u64) -> Result<Field> {
    let mut u = match init {
        Init::GaussianBump => {
            let w = grid.length() / 16.0;
            Field::from_fn(grid, |x| (-x.iter().map(|c| c * c).sum::<f64>() / (2.0 * w * w)).exp())
        }
        Init::PerturbedBump(amp) => {
            let w = grid.length() / 16.0;
            let bump = Field::from_fn(grid, |x| (-x.iter().map(|c| c * c).sum::<f64>() / (2.0 * w * w)).exp());
            let mut noise = smooth_noise(grid, seed);
            noise.scale(amp / noise.max_abs().max(f64::MIN_POSITIVE));
            let mut u = bump;
            u.axpy(1.0, &noise.mul(&u));
            u
        }
        Init::Random => smooth_noise(grid, seed),
        Init::Provided(f) => {
            grid.check_same(f.grid())?;
            f.clone()
        }
    };
    u.normalize_to(m)?;
    Ok(u)
}

fn smooth_noise(grid: &Grid, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let noise = Field::from_vec_unchecked(grid, vals);
    let s = grid.length() / 16.0;
    grid::apply_multiplier(&noise, |k2| (-0.5 * k2 * s * s).exp())
}

struct PrevStep {
    r: Vec<Complex64>,
    dir: Vec<Complex64>,
    yr: f64,
}

fn spec_dot(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.conj() * y).re).sum()
}

/// One evaluation plus the spectral data the step needs.
struct Point {
    u: Field,
    ev: Evaluation,
    spec_u: Vec<Complex64>,
}

fn evaluate_point(model: &Model, u: Field, g: f64) -> Point {
    let grid = model.grid();
    let rho = u.squared();
    let (spec_u, spec_rho) = grid.plan().forward_pair(u.values(), rho.values());
    let grad_sq = grid::spectral_grad_norm_sq(grid, &spec_u);
    let mean_field = model.v_kernel().apply_spectrum(spec_rho);
    let pairing = rho.inner(&mean_field);
    let m = u.mass();
    let breakdown = EnergyBreakdown::new(0.5 * grad_sq, 0.25 * pairing, g, m);
    Point { u, ev: Evaluation { breakdown, grad_sq, mean_field, pairing }, spec_u }
}

/// Spectrum of the constrained gradient `r = -Δu + λu - g (V*u^2) u` and its norm.
fn residual_spectrum(model: &Model, p: &Point, g: f64) -> (Vec<Complex64>, f64) {
    let grid = model.grid();
    let plan = grid.plan();
    let lambda = p.ev.lambda();
    let nl: Vec<f64> = p.u.values().iter().zip(p.ev.mean_field.values()).map(|(u, phi)| (lambda - g * phi) * u).collect();
    let mut spec = plan.forward_real(&nl);
    for ((s, su), k2) in spec.iter_mut().zip(&p.spec_u).zip(plan.k_sq()) {
        *s += su * k2;
    }
    let norm = spec.iter().map(|c| c.norm_sqr()).sum::<f64>() * grid.cell_volume() / grid.len() as f64;
    (spec, norm.sqrt())
}

fn finish(p: Point, residual: f64, status: Status, iterations: usize) -> MinimizeResult {
    let mut u = p.u;
    if u.values().iter().sum::<f64>() < 0.0 {
        u.scale(-1.0);
    }
    let m = p.ev.breakdown.m;
    let lambda = p.ev.lambda();
    MinimizeResult {
        diagnostics: Diagnostics::of(&u),
        u,
        energy: p.ev.breakdown,
        lambda,
        residual: residual / m.sqrt(),
        status,
        iterations,
    }
}

pub fn minimize_mass(g: f64, m: f64, p: &Potential, grid: &Grid, opts: &MinimizeOptions) -> Result<MinimizeResult> {
    let model = Model::new(p, grid)?;
    minimize_with(&model, g, m, opts)
}

/// Minimization against a prebuilt [`Model`], so sweeps reuse kernel spectra.
pub fn minimize_with(model: &Model, g: f64, m: f64, opts: &MinimizeOptions) -> Result<MinimizeResult> {
    if !(g > 0.0) {
        return Err(Error::InvalidParameter { name: "g", reason: format!("must be positive, got {g}") });
    }
    if !(m > 0.0) {
        return Err(Error::InvalidParameter { name: "m", reason: format!("must be positive, got {m}") });
    }
    opts.validate()?;
    let grid = model.grid();
    let plan = grid.plan();
    let h = grid.spacing();
    let mut dt = opts.dt0.unwrap_or(0.5 * h * h).min(opts.dt_max);
    let sqrt_m = m.sqrt();

    let mut cur = evaluate_point(model, initial_field(grid, m, &opts.init, opts.seed)?, g);
    let mut prev: Option<PrevStep> = None;
    let mut low_conc_run = 0usize;
    let mut last_peak = cur.u.max_abs();

    for it in 0..opts.max_iters {
        let (r_spec, res) = residual_spectrum(model, &cur, g);
        let conc = grid::concentration(&cur.u);
        if res <= opts.grad_tol * sqrt_m {
            // A converged state that is both diffuse and nearly uniform is the
            // box-filling limit of a spreading sequence.
            let uniform = (m / grid.volume()).sqrt();
            let flat = conc < opts.vanish_tol * sqrt_m && cur.u.max_abs() <= 2.0 * uniform;
            let status = if flat { Status::Vanished } else { Status::Converged };
            return Ok(finish(cur, res, status, it));
        }
        let peak = cur.u.max_abs();
        if conc < opts.vanish_tol * sqrt_m && peak <= last_peak {
            low_conc_run += 1;
            if low_conc_run >= opts.vanish_window {
                return Ok(finish(cur, res, Status::Vanished, it));
            }
        } else {
            low_conc_run = 0;
        }
        last_peak = peak;
        if let Some(level) = opts.certify_below {
            if cur.ev.breakdown.total < level && conc >= opts.vanish_tol * sqrt_m {
                return Ok(finish(cur, res, Status::Certified, it));
            }
        }
        if let Some(guard) = opts.kinetic_guard {
            if cur.ev.grad_sq <= guard {
                return Ok(finish(cur, res, Status::Vanished, it));
            }
        }

        let e0 = cur.ev.breakdown.total;
        // Rounding level of the energy sum; well inside the 1e-12 contract.
        let noise = 1e-15 * (cur.ev.breakdown.kinetic + g * cur.ev.breakdown.interaction.abs());
        // Preconditioned gradient y = P r; P is the step multiplier.
        let y: Vec<Complex64> = match opts.scheme {
            Scheme::SemiImplicit => r_spec.iter().zip(plan.k_sq()).map(|(r, k2)| r * (dt / (1.0 + dt * k2))).collect(),
            Scheme::Explicit => r_spec.iter().map(|r| r * dt).collect(),
        };
        let yr = spec_dot(&y, &r_spec);
        let mut dir: Vec<Complex64> = y.iter().map(|c| -c).collect();
        if let (true, Some(prev)) = (opts.momentum, prev.as_ref()) {
            let beta = (yr - spec_dot(&y, &prev.r)) / prev.yr;
            if beta.is_finite() && beta > 0.0 {
                let mixed: Vec<Complex64> = dir.iter().zip(&prev.dir).map(|(d, p)| d + beta * p).collect();
                if spec_dot(&mixed, &r_spec) < 0.0 {
                    dir = mixed;
                }
            }
        }
        let mut step = 1.0;
        let mut halvings = 0usize;
        let next = loop {
            let mut trial: Vec<f64> = plan.inverse_real(dir.iter().map(|d| d * step).collect());
            // Tangent projection, then retraction onto the sphere.
            let along = grid::dot(&trial, cur.u.values()) / grid::dot(cur.u.values(), cur.u.values());
            for (t, u) in trial.iter_mut().zip(cur.u.values()) {
                *t = u + (*t - along * u);
            }
            let mut cand = Field::from_vec_unchecked(grid, trial);
            let finite = cand.values().iter().all(|v| v.is_finite()) && cand.normalize_to(m).is_ok();
            if finite {
                let pt = evaluate_point(model, cand, g);
                let e1 = pt.ev.breakdown.total;
                if e1.is_finite() && e1 <= e0 + noise {
                    break Some(pt);
                }
                if !e1.is_finite() {
                    halvings += 1;
                }
            } else {
                halvings += 1;
            }
            if halvings > 30 {
                return Err(Error::NanEncountered { halvings });
            }
            step *= 0.5;
            if step < 1e-12 {
                break None;
            }
        };
        let Some(next) = next else {
            // No decrease even for tiny steps: the energy is flat at machine precision.
            return Ok(finish(cur, res, Status::BudgetExhausted, it));
        };
        if step == 1.0 {
            dt = (dt * 1.5).min(opts.dt_max);
            prev = Some(PrevStep { r: r_spec, dir, yr });
        } else {
            dt *= step.max(0.25);
            prev = None;
        }
        cur = next;
        if opts.recenter_every > 0 && (it + 1) % opts.recenter_every == 0 {
            let shifted = grid::recenter(&cur.u)?;
            if shifted != cur.u {
                cur = evaluate_point(model, shifted, g);
                prev = None;
            }
        }
    }
    let (_, res) = residual_spectrum(model, &cur, g);
    Ok(finish(cur, res, Status::BudgetExhausted, opts.max_iters))
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub g: f64,
    pub e: f64,
    pub status: Status,
    pub total: f64,
    pub residual: f64,
}

impl CurvePoint {
    pub fn from_result(g: f64, r: &MinimizeResult) -> Self {
        Self { g, e: r.e_estimate(), status: r.status, total: r.energy.total, residual: r.residual }
    }
}

pub(crate) fn check_increasing(g_list: &[f64]) -> Result<()> {
    if g_list.is_empty() || g_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter { name: "g_list", reason: "must be nonempty and strictly increasing".into() });
    }
    Ok(())
}

/// `e(g, m)` along an increasing list of couplings, each run warm-started
/// from the previous localized state.
pub fn energy_curve(g_list: &[f64], m: f64, p: &Potential, grid: &Grid, opts: &MinimizeOptions) -> Result<Vec<CurvePoint>> {
    check_increasing(g_list)?;
    let model = Model::new(p, grid)?;
    let mut out = Vec::with_capacity(g_list.len());
    let mut warm: Option<Field> = None;
    for &g in g_list {
        let (point, next) = curve_step(&model, g, m, opts, warm.as_ref())?;
        warm = next;
        out.push(point);
    }
    Ok(out)
}

/// One probe of [`energy_curve`]: the point at `g` and the warm start for
/// the next coupling (the state itself if it converged).
pub fn curve_step(model: &Model, g: f64, m: f64, opts: &MinimizeOptions, warm: Option<&Field>) -> Result<(CurvePoint, Option<Field>)> {
    let mut o = opts.clone();
    if let Some(u) = warm {
        o.init = Init::Provided(u.clone());
    }
    let r = minimize_with(model, g, m, &o)?;
    let point = CurvePoint::from_result(g, &r);
    Ok((point, (r.status == Status::Converged).then_some(r.u)))
}

/// Like [`energy_curve`] but every probe starts cold, so probes run in
/// parallel on the current rayon pool. Output order follows `g_list`.
pub fn energy_table(g_list: &[f64], m: f64, p: &Potential, grid: &Grid, opts: &MinimizeOptions) -> Result<Vec<CurvePoint>> {
    use rayon::prelude::*;
    check_increasing(g_list)?;
    let model = Model::new(p, grid)?;
    g_list
        .par_iter()
        .map(|&g| minimize_with(&model, g, m, opts).map(|r| CurvePoint::from_result(g, &r)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubadditivityReport {
    pub g: f64,
    pub m1: f64,
    pub m2: f64,
    pub e1: f64,
    pub e2: f64,
    pub e_sum: f64,
    pub tolerance: f64,
    pub holds: bool,
    pub strict: bool,
}

pub fn check_subadditivity(g: f64, m1: f64, m2: f64, p: &Potential, grid: &Grid, opts: &MinimizeOptions) -> Result<SubadditivityReport> {
    if !(m1 > 0.0 && m2 > 0.0) {
        return Err(Error::InvalidParameter { name: "m", reason: "masses must be positive".into() });
    }
    let model = Model::new(p, grid)?;
    let e1 = minimize_with(&model, g, m1, opts)?.e_estimate();
    let e2 = minimize_with(&model, g, m2, opts)?.e_estimate();
    let e_sum = minimize_with(&model, g, m1 + m2, opts)?.e_estimate();
    let tolerance = 1e-5 * (1.0 + e_sum.abs());
    Ok(SubadditivityReport { g, m1, m2, e1, e2, e_sum, tolerance, holds: e_sum <= e1 + e2 + tolerance, strict: e_sum < e1 + e2 - tolerance })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub g: f64,
    pub m: f64,
    pub t: f64,
    pub e_m: f64,
    pub e_tm: f64,
    /// `t^2 e(g, m) - e(g, t m)`.
    pub gap: f64,
    pub margin: f64,
    pub strict: bool,
}

/// Compares `e(g, t m)` with `t^2 e(g, m)`. The larger mass is warm-started
/// from the scaled smaller-mass state.
pub fn check_strict_scaling(g: f64, m: f64, t: f64, p: &Potential, grid: &Grid, opts: &MinimizeOptions) -> Result<ScalingReport> {
    if !(t >= 1.0) {
        return Err(Error::InvalidParameter { name: "t", reason: format!("must be at least 1, got {t}") });
    }
    let model = Model::new(p, grid)?;
    let small = minimize_with(&model, g, m, opts)?;
    let mut o = opts.clone();
    if small.status == Status::Converged {
        o.init = Init::Provided(small.u.clone());
    }
    let large = minimize_with(&model, g, t * m, &o)?;
    let e_m = small.e_estimate();
    let e_tm = large.e_estimate();
    let margin = 1e-6 * e_m.abs();
    let gap = t * t * e_m - e_tm;
    Ok(ScalingReport { g, m, t, e_m, e_tm, gap, margin, strict: gap > margin })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailDecay {
    /// Fitted `-d log|u| / d|x|`.
    pub rate: f64,
    /// `R^2` of the least-squares fit.
    pub r_squared: f64,
    pub shells: usize,
    /// `sqrt(lambda) / 2`.
    pub reference: f64,
    /// `rate >= 0.5 * reference`.
    pub passes: bool,
}

/// Least-squares slope of the shell-averaged `log|u|` against `|x|` on
/// `[0.25 L, 0.4 L]`.
pub fn tail_decay_report(u: &Field, lambda: f64) -> Result<TailDecay> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter { name: "lambda", reason: format!("must be positive, got {lambda}") });
    }
    let grid = u.grid();
    let (lo, hi) = (0.25 * grid.length(), 0.4 * grid.length());
    let h = grid.spacing();
    let nbins = ((hi - lo) / h).ceil() as usize;
    let mut sums = vec![(0.0f64, 0usize); nbins.max(1)];
    for (i, v) in u.values().iter().enumerate() {
        let r = grid.radius_sq(i).sqrt();
        if r < lo || r >= hi || v.abs() < 1e-14 {
            continue;
        }
        let b = (((r - lo) / h) as usize).min(nbins - 1);
        sums[b].0 += v.abs().ln();
        sums[b].1 += 1;
    }
    let pts: Vec<(f64, f64)> = sums
        .iter()
        .enumerate()
        .filter(|(_, (_, c))| *c > 0)
        .map(|(b, (s, c))| (lo + (b as f64 + 0.5) * h, s / *c as f64))
        .collect();
    if pts.len() < 10 {
        return Err(Error::InsufficientTail { shells: pts.len() });
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 0.0 };
    let reference = lambda.sqrt() / 2.0;
    let rate = -slope;
    Ok(TailDecay { rate, r_squared, shells: pts.len(), reference, passes: rate >= 0.5 * reference })
}
