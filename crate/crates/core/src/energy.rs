//! Kinetic and interaction energies, the Hartree functional, its
//! Euler-Lagrange residual and multiplier, and the sampled lower bound.

use serde::{Deserialize, Serialize};

use crate::constants::{self, GnForm};
use crate::error::{Error, Result};
use crate::grid::{self, Field, Grid, KernelSpectrum};
use crate::potentials::{split_norms, Potential};

/// `K = 1/2 ||grad u||^2`, `V = 1/4 <u^2, V * u^2>`, `E_g = K - g V`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    pub interaction: f64,
    pub total: f64,
    pub g: f64,
    pub m: f64,
}

impl EnergyBreakdown {
    pub(crate) fn new(kinetic: f64, interaction: f64, g: f64, m: f64) -> Self {
        Self { kinetic, interaction, total: kinetic - g * interaction, g, m }
    }
}

/// Everything one flow step needs from a single evaluation.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub breakdown: EnergyBreakdown,
    /// `||grad u||^2`.
    pub grad_sq: f64,
    /// `V * u^2`.
    pub mean_field: Field,
    /// `int (V * u^2) u^2`.
    pub pairing: f64,
}

impl Evaluation {
    /// `(g <u^2, V*u^2> - ||grad u||^2) / m`.
    pub fn lambda(&self) -> f64 {
        (self.breakdown.g * self.pairing - self.grad_sq) / self.breakdown.m
    }
}

/// A potential sampled on a grid with its kernel spectra cached.
#[derive(Clone, Debug)]
pub struct Model {
    grid: Grid,
    potential: Potential,
    v_kernel: KernelSpectrum,
    w_kernel: Option<KernelSpectrum>,
}

impl Model {
    pub fn new(potential: &Potential, grid: &Grid) -> Result<Self> {
        if potential.dim() != grid.dim() {
            return Err(Error::DimensionMismatch { expected: grid.dim(), found: potential.dim() });
        }
        if !potential.is_symmetric() {
            return Err(Error::AsymmetricPotential(potential.to_string()));
        }
        let v_kernel = KernelSpectrum::new(&potential.sample(grid));
        let w_kernel = potential.sample_w(grid).ok().map(|w| KernelSpectrum::new(&w));
        Ok(Self { grid: grid.clone(), potential: potential.clone(), v_kernel, w_kernel })
    }

    /// A model whose kernel is `V(x / s)` (and `W(x / s)`), used by the
    /// dilation-augmented functional.
    pub fn dilated(potential: &Potential, grid: &Grid, s: f64) -> Result<Self> {
        if potential.dim() != grid.dim() {
            return Err(Error::DimensionMismatch { expected: grid.dim(), found: potential.dim() });
        }
        let v_kernel = KernelSpectrum::new(&potential.sample_scaled(grid, s));
        let w_kernel = potential.sample_w_scaled(grid, s).ok().map(|w| KernelSpectrum::new(&w));
        Ok(Self { grid: grid.clone(), potential: potential.clone(), v_kernel, w_kernel })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn v_kernel(&self) -> &KernelSpectrum {
        &self.v_kernel
    }

    pub fn w_kernel(&self) -> Result<&KernelSpectrum> {
        self.w_kernel.as_ref().ok_or_else(|| Error::NonDifferentiablePotential(self.potential.to_string()))
    }

    /// `V * u^2`.
    pub fn mean_field(&self, u: &Field) -> Result<Field> {
        self.grid.check_same(u.grid())?;
        self.v_kernel.apply(&u.squared())
    }

    /// `1/4 iint u^2(x) V(x-y) u^2(y)`.
    pub fn interaction(&self, u: &Field) -> Result<f64> {
        let rho = u.squared();
        Ok(0.25 * rho.inner(&self.v_kernel.apply(&rho)?))
    }

    /// `int u^2 (W * u^2)`.
    pub fn w_pairing(&self, u: &Field) -> Result<f64> {
        let rho = u.squared();
        let w = self.w_kernel()?;
        Ok(rho.inner(&w.apply(&rho)?))
    }

    pub fn energy(&self, u: &Field, g: f64) -> Result<EnergyBreakdown> {
        Ok(self.evaluate(u, g)?.breakdown)
    }

    /// Energy, mean field and pairing from one pair of transforms.
    pub fn evaluate(&self, u: &Field, g: f64) -> Result<Evaluation> {
        self.grid.check_same(u.grid())?;
        let rho = u.squared();
        let plan = self.grid.plan();
        let (spec_u, spec_rho) = plan.forward_pair(u.values(), rho.values());
        let grad_sq = grid::spectral_grad_norm_sq(&self.grid, &spec_u);
        let mean_field = self.v_kernel.apply_spectrum(spec_rho);
        let pairing = rho.inner(&mean_field);
        let m = u.mass();
        let breakdown = EnergyBreakdown::new(0.5 * grad_sq, 0.25 * pairing, g, m);
        Ok(Evaluation { breakdown, grad_sq, mean_field, pairing })
    }

    /// `-Δu + λu - g (V * u^2) u`.
    pub fn el_residual(&self, u: &Field, g: f64, lambda: f64) -> Result<Field> {
        let phi = self.mean_field(u)?;
        Ok(residual_from(u, &phi, g, lambda))
    }

    pub fn lagrange_multiplier(&self, u: &Field, g: f64) -> Result<f64> {
        if u.mass() <= 0.0 {
            return Err(Error::ZeroMass);
        }
        Ok(self.evaluate(u, g)?.lambda())
    }

    /// L2 gradient `-Δu - g (V * u^2) u` of the unconstrained functional.
    pub fn gradient(&self, u: &Field, g: f64) -> Result<Field> {
        self.el_residual(u, g, 0.0)
    }
}

pub(crate) fn residual_from(u: &Field, phi: &Field, g: f64, lambda: f64) -> Field {
    let mut r = grid::laplacian(u);
    r.scale(-1.0);
    for ((ri, ui), pi) in r.values_mut().iter_mut().zip(u.values()).zip(phi.values()) {
        *ri += lambda * ui - g * pi * ui;
    }
    r
}

pub fn interaction(u: &Field, p: &Potential) -> Result<f64> {
    Model::new(p, u.grid())?.interaction(u)
}

pub fn energy(u: &Field, g: f64, p: &Potential) -> Result<EnergyBreakdown> {
    if !(g > 0.0) {
        return Err(Error::InvalidParameter { name: "g", reason: format!("coupling must be positive, got {g}") });
    }
    Model::new(p, u.grid())?.energy(u, g)
}

pub fn el_residual(u: &Field, g: f64, lambda: f64, p: &Potential) -> Result<Field> {
    if !p.is_symmetric() {
        return Err(Error::AsymmetricPotential(p.to_string()));
    }
    Model::new(p, u.grid())?.el_residual(u, g, lambda)
}

pub fn lagrange_multiplier(u: &Field, g: f64, p: &Potential) -> Result<f64> {
    Model::new(p, u.grid())?.lagrange_multiplier(u, g)
}

/// Both sides of the split lower bound
/// `E_g(u) >= 1/4 ||grad u||^2 - (g/4) ||V_{R,1}||_inf m^2`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LowerBound {
    pub lhs: f64,
    pub rhs: f64,
    /// `g C m ||V_{R,2}||_{d/2} / 4`; the bound needs this below 1/4.
    pub smallness: f64,
}

impl LowerBound {
    pub fn holds(&self) -> bool {
        self.lhs >= self.rhs
    }
}

/// Evaluates the split lower bound at `u`. The bounded part uses `q = inf`
/// (catalog potentials are bounded); the tail uses the cached
/// Gagliardo-Nirenberg constant.
pub fn lower_bound_check(u: &Field, g: f64, p: &Potential, radius: f64) -> Result<LowerBound> {
    let grid = u.grid();
    let d = grid.dim();
    if d < 2 {
        return Err(Error::DimensionMismatch { expected: 3, found: d });
    }
    let c = constants::gn_constant(d, GnForm::Interaction)?;
    let (_, tail) = split_norms(p, grid, radius);
    let smallness = g * c * u.mass() * tail / 4.0;
    if smallness >= 0.25 {
        return Err(Error::SplitTooCoarse { value: smallness });
    }
    let sup_inner = p
        .sample(grid)
        .values()
        .iter()
        .enumerate()
        .filter(|(i, _)| grid.radius_sq(*i).sqrt() < radius)
        .fold(0.0f64, |m, (_, v)| m.max(v.abs()));
    let model = Model::new(p, grid)?;
    let ev = model.evaluate(u, g)?;
    let m = ev.breakdown.m;
    Ok(LowerBound { lhs: ev.breakdown.total, rhs: 0.25 * ev.grad_sq - 0.25 * g * sup_inner * m * m, smallness })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{constant_potential, delta_cell, gaussian_potential, ion_atom};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &Grid, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Field::from_values(grid, vals).unwrap()
    }

    fn smooth_random(grid: &Grid, seed: u64) -> Field {
        let f = random_field(grid, seed);
        grid::apply_multiplier(&f, |k2| (-k2).exp())
    }

    #[test]
    fn interaction_constant_kernel() {
        let g = Grid::new(2, 16, 5.0).unwrap();
        let u = random_field(&g, 1);
        let c = 0.7;
        let v = interaction(&u, &constant_potential(c, 2).unwrap()).unwrap();
        assert_relative_eq!(v, 0.25 * c * u.mass().powi(2), max_relative = 1e-12);
    }

    #[test]
    fn interaction_delta_kernel() {
        let g = Grid::new(1, 64, 10.0).unwrap();
        let u = random_field(&g, 2);
        let v = interaction(&u, &delta_cell(1).unwrap()).unwrap();
        let expect = 0.25 * g.cell_volume() * u.values().iter().map(|x| x.powi(4)).sum::<f64>();
        assert_relative_eq!(v, expect, max_relative = 1e-12);
    }

    #[test]
    fn interaction_matches_double_sum() {
        let p = ion_atom(1.0, 1).unwrap();
        let g = Grid::new(1, 64, 12.0).unwrap();
        for seed in 0..3 {
            let u = random_field(&g, seed);
            let fast = interaction(&u, &p).unwrap();
            let slow = crate::oracle::brute_interaction(&u, &p);
            assert!((fast - slow).abs() <= 1e-10 * slow.abs(), "{fast} vs {slow}");
        }
        let p = gaussian_potential(1.0, 0.8, 2).unwrap();
        let g = Grid::new(2, 16, 6.0).unwrap();
        let u = random_field(&g, 9);
        let fast = interaction(&u, &p).unwrap();
        let slow = crate::oracle::brute_interaction(&u, &p);
        assert!((fast - slow).abs() <= 1e-10 * slow.abs());
    }

    #[test]
    fn energy_examples() {
        let g = Grid::new(3, 16, 8.0).unwrap();
        let zero = constant_potential(0.0, 3).unwrap();
        let e = energy(&Field::constant(&g, 0.3), 2.0, &zero).unwrap();
        assert_eq!(e.total, 0.0);
        let m = 1.5;
        let u = Field::constant(&g, (m / g.volume()).sqrt());
        let gcoup = 2.0;
        let e = energy(&u, gcoup, &delta_cell(3).unwrap()).unwrap();
        assert_relative_eq!(e.total, -(gcoup / 4.0) * m * m / g.volume(), max_relative = 1e-12);
        assert_eq!(e.total, e.kinetic - gcoup * e.interaction);
        assert!(energy(&u, 0.0, &zero).is_err());
    }

    #[test]
    fn energy_matches_independent_quadrature() {
        let p = ion_atom(1.0, 1).unwrap();
        let g = Grid::new(1, 64, 12.0).unwrap();
        let u = smooth_random(&g, 4);
        let gc = 1.3;
        let e = energy(&u, gc, &p).unwrap();
        // kinetic from the analytic derivative of the trigonometric interpolant
        let n = g.n();
        let l = g.length();
        let mut dsum = 0.0;
        for i in 0..n {
            let x = g.axis_coord(i);
            let mut du = 0.0;
            for k in 0..n {
                let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                if k == n / 2 {
                    continue;
                }
                let kw = 2.0 * std::f64::consts::PI * kk / l;
                let mut cre = 0.0;
                let mut cim = 0.0;
                for j in 0..n {
                    let ph = -kw * g.axis_coord(j);
                    cre += u.values()[j] * ph.cos();
                    cim += u.values()[j] * ph.sin();
                }
                cre /= n as f64;
                cim /= n as f64;
                // derivative of c e^{i k x}
                du += -kw * (cre * (kw * x).sin() + cim * (kw * x).cos());
            }
            dsum += du * du;
        }
        let kinetic = 0.5 * dsum * g.spacing();
        let total = kinetic - gc * crate::oracle::brute_interaction(&u, &p);
        assert!((e.total - total).abs() <= 1e-10 * total.abs().max(1e-3), "{} vs {}", e.total, total);
    }

    #[test]
    fn residual_and_multiplier_examples() {
        let g = Grid::new(2, 16, 6.0).unwrap();
        let p = ion_atom(1.0, 2).unwrap();
        assert_eq!(el_residual(&Field::zeros(&g), 1.0, 0.5, &p).unwrap().max_abs(), 0.0);
        let zero = constant_potential(0.0, 2).unwrap();
        assert!(el_residual(&Field::constant(&g, 0.4), 1.0, 0.0, &zero).unwrap().max_abs() < 1e-14);
        let m = 2.0;
        let u = Field::constant(&g, (m / g.volume()).sqrt());
        let lam = lagrange_multiplier(&u, 3.0, &delta_cell(2).unwrap()).unwrap();
        assert_relative_eq!(lam, 3.0 * m / g.volume(), max_relative = 1e-12);
        let r = smooth_random(&g, 5);
        let lam = lagrange_multiplier(&r, 1.0, &zero).unwrap();
        assert_relative_eq!(lam, -grid::grad_norm_sq(&r) / r.mass(), max_relative = 1e-12);
        assert!(matches!(lagrange_multiplier(&Field::zeros(&g), 1.0, &p), Err(Error::ZeroMass)));
    }

    #[test]
    fn gradient_matches_directional_derivative() {
        let p = ion_atom(1.0, 2).unwrap();
        let g = Grid::new(2, 32, 10.0).unwrap();
        let model = Model::new(&p, &g).unwrap();
        let u = smooth_random(&g, 8);
        let phi = smooth_random(&g, 9);
        let gc = 2.5;
        let grad = model.gradient(&u, gc).unwrap();
        let eps = 1e-5;
        let mut up = u.clone();
        up.axpy(eps, &phi);
        let mut um = u.clone();
        um.axpy(-eps, &phi);
        let fd = (model.energy(&up, gc).unwrap().total - model.energy(&um, gc).unwrap().total) / (2.0 * eps);
        let an = grad.inner(&phi);
        assert!((fd - an).abs() <= 1e-6 * an.abs(), "{fd} vs {an}");
    }

    #[test]
    fn scaling_identity() {
        let p = ion_atom(1.0, 3).unwrap();
        let g = Grid::new(3, 16, 8.0).unwrap();
        let model = Model::new(&p, &g).unwrap();
        let u = smooth_random(&g, 3);
        let base = model.energy(&u, 1.7).unwrap();
        for t in [0.5f64, 2.0, 3.0] {
            let e = model.energy(&u.scaled(t.sqrt()), 1.7).unwrap();
            let expect = t * base.kinetic - 1.7 * t * t * base.interaction;
            assert!((e.total - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn dilation_identity_for_kinetic() {
        let g = Grid::new(3, 64, 24.0).unwrap();
        let u = Field::from_fn(&g, |x| (-(x[0] * x[0] + 2.0 * x[1] * x[1] + x[2] * x[2]) / 3.0).exp());
        let k = grid::grad_norm_sq(&u);
        for t in [0.7f64, 1.3] {
            let ut = grid::dilate(&u, t).unwrap();
            assert!((grid::grad_norm_sq(&ut) - t * t * k).abs() < 1e-8 * t * t * k);
            assert!((ut.mass() - u.mass()).abs() < 1e-8 * u.mass());
        }
    }

    #[test]
    fn lower_bound_on_random_fields() {
        for (d, n, l) in [(3usize, 16usize, 16.0), (2, 32, 16.0)] {
            let p = ion_atom(1.0, d).unwrap();
            let g = Grid::new(d, n, l).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
            for k in 0..100 {
                let mut u = smooth_random(&g, 100 + k);
                u.normalize_to(1.0).unwrap();
                let gc = rng.gen_range(0.5..3.0);
                let lb = lower_bound_check(&u, gc, &p, 4.0).unwrap();
                assert!(lb.holds(), "d={d} sample {k}: {lb:?}");
            }
        }
    }

    #[test]
    fn lower_bound_reports_coarse_split() {
        let p = ion_atom(1.0, 3).unwrap();
        let g = Grid::new(3, 16, 16.0).unwrap();
        let mut u = smooth_random(&g, 1);
        u.normalize_to(1.0).unwrap();
        assert!(matches!(lower_bound_check(&u, 1e4, &p, 0.1), Err(Error::SplitTooCoarse { .. })));
    }
}
