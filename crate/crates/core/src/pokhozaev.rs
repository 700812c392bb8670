//! Virial (Pokhozaev) identity residual and the two-dimensional `F` test.

use serde::{Deserialize, Serialize};

use crate::energy::Model;
use crate::error::{Error, Result};
use crate::grid::{self, Field, KernelSpectrum};
use crate::potentials::{find_rstar, Potential};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PokhozaevReport {
    pub lhs: f64,
    pub rhs: f64,
    pub relative_residual: f64,
    /// `(d-2)/2 ||grad u||^2`
    pub kinetic_term: f64,
    /// `(d/2) lambda ||u||^2`
    pub mass_term: f64,
    /// `(g/4) int u^2 (W * u^2)`
    pub w_term: f64,
    /// `(d/2) g int u^2 (V * u^2)`
    pub v_term: f64,
}

impl PokhozaevReport {
    fn from_terms(kinetic_term: f64, mass_term: f64, w_term: f64, v_term: f64) -> Self {
        let lhs = kinetic_term + mass_term;
        let rhs = w_term + v_term;
        let scale = [kinetic_term, mass_term, w_term, v_term].iter().fold(0.0f64, |a, t| a.max(t.abs()));
        Self { lhs, rhs, relative_residual: (lhs - rhs).abs() / (1.0 + scale), kinetic_term, mass_term, w_term, v_term }
    }
}

pub fn pokhozaev_residual(u: &Field, lambda: f64, g: f64, p: &Potential) -> Result<PokhozaevReport> {
    let model = Model::new(p, u.grid())?;
    pokhozaev_residual_with(&model, u, lambda, g)
}

pub fn pokhozaev_residual_with(model: &Model, u: &Field, lambda: f64, g: f64) -> Result<PokhozaevReport> {
    model.grid().check_same(u.grid())?;
    let d = u.grid().dim() as f64;
    let w = model.w_pairing(u)?;
    let v = 4.0 * model.interaction(u)?;
    Ok(PokhozaevReport::from_terms(
        0.5 * (d - 2.0) * grid::grad_norm_sq(u),
        0.5 * d * lambda * u.mass(),
        0.25 * g * w,
        0.5 * d * g * v,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirialCheck {
    pub grad_sq: f64,
    /// `-(g/4) int u^2 (W * u^2)`
    pub w_side: f64,
    pub relative: f64,
}

/// `||grad u||^2 = -(g/4) int u^2 (W * u^2)`, the difference of the
/// identity and the paired Euler-Lagrange equation.
pub fn virial_check(u: &Field, g: f64, p: &Potential) -> Result<VirialCheck> {
    let model = Model::new(p, u.grid())?;
    let grad_sq = grid::grad_norm_sq(u);
    let w_side = -0.25 * g * model.w_pairing(u)?;
    let relative = (grad_sq - w_side).abs() / grad_sq.abs().max(w_side.abs()).max(f64::MIN_POSITIVE);
    Ok(VirialCheck { grad_sq, w_side, relative })
}

/// `int (F * u^2) u^2` with `F = V/2 + W/4`, in two dimensions.
#[allow(non_snake_case)]
pub fn two_d_F_pairing(u: &Field, p: &Potential) -> Result<f64> {
    let grid = u.grid();
    if grid.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: grid.dim() });
    }
    find_rstar(p)?;
    let f = KernelSpectrum::new(&p.sample_f(grid)?);
    let rho = u.squared();
    Ok(rho.inner(&f.apply(&rho)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutocorrelationReport {
    pub monotone: bool,
    /// Largest increase between consecutive shells, relative to `max h`.
    pub max_violation: f64,
    pub shells: Vec<f64>,
}

/// Shell averages of `h = u^2 * u^2` out to half the box, checked for
/// monotone decrease up to `1e-8 max h`.
pub fn autocorrelation_monotone_check(u: &Field) -> Result<AutocorrelationReport> {
    let g = u.grid();
    let rho = u.squared();
    let h = grid::convolve(&rho, &rho)?;
    let dr = g.spacing();
    let nshell = (0.5 * g.length() / dr).floor() as usize;
    let mut sum = vec![0.0; nshell];
    let mut count = vec![0usize; nshell];
    for (i, &v) in h.values().iter().enumerate() {
        let k = (g.radius_sq(i).sqrt() / dr).round() as usize;
        if k < nshell {
            sum[k] += v;
            count[k] += 1;
        }
    }
    let shells: Vec<f64> = sum.iter().zip(&count).filter(|(_, &c)| c > 0).map(|(s, &c)| s / c as f64).collect();
    let peak = h.max_abs();
    let max_violation = shells.windows(2).map(|w| (w[1] - w[0]).max(0.0)).fold(0.0, f64::max) / peak.max(f64::MIN_POSITIVE);
    Ok(AutocorrelationReport { monotone: max_violation <= 1e-8, max_violation, shells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groundstate::{minimize_mass, MinimizeOptions, Status};
    use crate::potentials::{delta_cell, ion_atom};
    use crate::Grid;
    use rand::{Rng, SeedableRng};

    fn gaussian(grid: &Grid, s: f64) -> Field {
        Field::from_fn(grid, |x| (-x.iter().map(|c| c * c).sum::<f64>() / (2.0 * s * s)).exp())
    }

    #[test]
    fn zero_field() {
        let grid = Grid::new(3, 16, 8.0).unwrap();
        let p = ion_atom(1.0, 3).unwrap();
        let r = pokhozaev_residual(&Field::zeros(&grid), 0.3, 2.0, &p).unwrap();
        assert_eq!(r.relative_residual, 0.0);
        assert_eq!(r.lhs, 0.0);
        let g2 = Grid::new(2, 16, 8.0).unwrap();
        assert_eq!(two_d_F_pairing(&Field::zeros(&g2), &ion_atom(1.0, 2).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn not_differentiable() {
        let grid = Grid::new(1, 64, 16.0).unwrap();
        let u = gaussian(&grid, 1.0);
        let p = crate::potentials::step_1d(0.1).unwrap();
        assert!(matches!(pokhozaev_residual(&u, 1.0, 1.0, &p), Err(Error::NonDifferentiablePotential(_))));
    }

    #[test]
    fn soliton_satisfies_identity() {
        // -||u'||^2/2 + lambda m/2 = -(g/4) int u^4 + (g/2) int u^4 for the delta kernel, W = -delta.
        let grid = Grid::new(1, 1024, 64.0).unwrap();
        let p = delta_cell(1).unwrap();
        let opts = MinimizeOptions { grad_tol: 1e-8, ..Default::default() };
        let r = minimize_mass(1.0, 1.0, &p, &grid, &opts).unwrap();
        assert_eq!(r.status, Status::Converged);
        let rep = pokhozaev_residual(&r.u, r.lambda, 1.0, &p).unwrap();
        assert!(rep.relative_residual < 1e-6, "{rep:?}");
        let u4 = r.u.lp_norm_pow(4.0);
        assert!((rep.w_term + 0.25 * u4).abs() < 1e-12);
    }

    #[test]
    fn three_d_minimizer_and_virial() {
        let grid = Grid::new(3, 64, 24.0).unwrap();
        let p = ion_atom(1.0, 3).unwrap();
        let r = minimize_mass(30.0, 1.0, &p, &grid, &MinimizeOptions::default()).unwrap();
        assert_eq!(r.status, Status::Converged);
        let rep = pokhozaev_residual(&r.u, r.lambda, 30.0, &p).unwrap();
        let v = virial_check(&r.u, 30.0, &p).unwrap();
        assert!(rep.relative_residual < 1e-4, "{rep:?}");
        assert!(v.relative < 1e-3, "{v:?}");
    }

    #[test]
    fn random_field_is_not_critical() {
        let grid = Grid::new(3, 16, 8.0).unwrap();
        let p = ion_atom(1.0, 3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let vals = (0..grid.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let u = Field::from_values(&grid, vals).unwrap();
        let rep = pokhozaev_residual(&u, 1.0, 1.0, &p).unwrap();
        assert!(rep.relative_residual > 1e-2, "{rep:?}");
    }

    #[test]
    fn f_pairing_positive_for_gaussian() {
        let grid = Grid::new(2, 128, 64.0).unwrap();
        let p = ion_atom(1.0, 2).unwrap();
        let u = gaussian(&grid, 1.0);
        assert!(two_d_F_pairing(&u, &p).unwrap() > 0.0);
        assert!(two_d_F_pairing(&gaussian(&Grid::new(3, 8, 8.0).unwrap(), 1.0), &ion_atom(1.0, 3).unwrap()).is_err());
    }

    #[test]
    fn f_pairing_vanishes_for_wide_fields() {
        // For wide u the pairing tends to (int F) int u^4 with int F = 0.
        let grid = Grid::new(2, 256, 256.0).unwrap();
        let p = ion_atom(1.0, 2).unwrap();
        let narrow = gaussian(&grid, 1.0);
        let mut wide = gaussian(&grid, 20.0);
        let mut n = narrow.clone();
        n.normalize_to(1.0).unwrap();
        wide.normalize_to(1.0).unwrap();
        let a = two_d_F_pairing(&n, &p).unwrap();
        let b = two_d_F_pairing(&wide, &p).unwrap();
        assert!(b.abs() < 1e-3 * a, "{a} {b}");
    }

    #[test]
    fn autocorrelation_of_bump_and_gaussian() {
        let grid = Grid::new(2, 64, 32.0).unwrap();
        let g = gaussian(&grid, 2.0);
        assert!(autocorrelation_monotone_check(&g).unwrap().monotone);
        let ball = Field::from_fn(&grid, |x| if x[0] * x[0] + x[1] * x[1] < 9.0 { 1.0 } else { 0.0 });
        assert!(autocorrelation_monotone_check(&ball).unwrap().monotone);
    }

    #[test]
    fn sorted_noise_has_monotone_autocorrelation() {
        let grid = Grid::new(2, 32, 16.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let vals = (0..grid.len()).map(|i| if grid.radius_sq(i) < 16.0 { rng.gen_range(0.0..1.0) } else { 0.0 }).collect();
            let u = grid::rearrange_decreasing(&Field::from_values(&grid, vals).unwrap());
            let rep = autocorrelation_monotone_check(&u).unwrap();
            assert!(rep.monotone, "{}", rep.max_violation);
        }
    }
}
