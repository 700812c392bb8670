//! Quick invariant suites behind `choquard selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dump;
use crate::energy::{self, Model};
use crate::error::Result;
use crate::grid::{self, Field, Grid};
use crate::groundstate::{minimize_mass, MinimizeOptions, Status};
use crate::oracle;
use crate::pokhozaev;
use crate::potentials::{self, delta_cell, gaussian_potential, ion_atom};
use crate::spectrum::{lowest_eigenpair_of, Schrodinger};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

type Suite = fn() -> Result<(bool, String)>;

const SUITES: &[(&str, Suite)] = &[
    ("soliton", soliton),
    ("pokhozaev_soliton", pokhozaev_soliton),
    ("fft_vs_direct", fft_vs_direct),
    ("lanczos_vs_dense", lanczos_vs_dense),
    ("w_finite_difference", w_finite_difference),
    ("rearrangement", rearrangement),
    ("determinism", determinism),
    ("dump_round_trip", dump_round_trip),
];

pub fn run_suites() -> Vec<SuiteOutcome> {
    SUITES
        .iter()
        .map(|(name, f)| {
            let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
            SuiteOutcome { name: name.to_string(), passed, detail }
        })
        .collect()
}

fn random_field(grid: &Grid, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Field::from_values(grid, vals).expect("finite")
}

fn soliton_state() -> Result<(crate::groundstate::MinimizeResult, potentials::Potential)> {
    let grid = Grid::new(1, 1024, 64.0)?;
    let p = delta_cell(1)?;
    let opts = MinimizeOptions { grad_tol: 1e-8, ..Default::default() };
    Ok((minimize_mass(1.0, 1.0, &p, &grid, &opts)?, p))
}

/// `e = -g^2 m^3 / 96`, `lambda = g^2 m^2 / 16` at `g = m = 1`.
fn soliton() -> Result<(bool, String)> {
    let (r, _) = soliton_state()?;
    let e_err = (r.energy.total + 1.0 / 96.0).abs() * 96.0;
    let l_err = (r.lambda - 1.0 / 16.0).abs() * 16.0;
    Ok((r.status == Status::Converged && e_err < 1e-4 && l_err < 1e-3, format!("e rel err {e_err:.2e}, lambda rel err {l_err:.2e}")))
}

fn pokhozaev_soliton() -> Result<(bool, String)> {
    let (r, p) = soliton_state()?;
    let rep = pokhozaev::pokhozaev_residual(&r.u, r.lambda, 1.0, &p)?;
    Ok((rep.relative_residual < 1e-6, format!("relative residual {:.2e}", rep.relative_residual)))
}

fn fft_vs_direct() -> Result<(bool, String)> {
    let cases = [(Grid::new(1, 128, 24.0)?, ion_atom(1.0, 1)?), (Grid::new(2, 32, 8.0)?, gaussian_potential(1.0, 0.8, 2)?)];
    let mut worst: f64 = 0.0;
    for (k, (grid, p)) in cases.iter().enumerate() {
        let u = random_field(grid, k as u64);
        let fast = energy::interaction(&u, p)?;
        let slow = oracle::brute_interaction(&u, p);
        worst = worst.max((fast - slow).abs() / slow.abs());
    }
    Ok((worst <= 1e-10, format!("worst relative gap {worst:.2e}")))
}

fn lanczos_vs_dense() -> Result<(bool, String)> {
    let grid = Grid::new(2, 32, 10.0)?;
    let p = ion_atom(1.0, 2)?;
    let u = Field::from_fn(&grid, |x| (-x.iter().map(|c| c * c).sum::<f64>()).exp());
    let op = Schrodinger::new(&u, 5.0, &p)?;
    let exact = oracle::dense_lowest(&op);
    let r = lowest_eigenpair_of(&op, u.values(), 1e-10)?;
    let gap = (r.eigenvalue - exact).abs();
    Ok((gap < 1e-8, format!("lanczos {:.12e} vs dense {exact:.12e}", r.eigenvalue)))
}

fn w_finite_difference() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pots = [ion_atom(1.0, 3)?, ion_atom(0.5, 2)?, gaussian_potential(1.0, 1.0, 3)?, gaussian_potential(2.0, 0.7, 1)?];
    let mut worst: f64 = 0.0;
    for p in &pots {
        for _ in 0..1000 {
            let x: Vec<f64> = (0..p.dim()).map(|_| rng.gen_range(-3.0..3.0)).collect();
            worst = worst.max(potentials::w_fd_defect(p, &x, 1e-5) / (1.0 + p.w(&x).abs()));
        }
    }
    Ok((worst < 1e-6, format!("worst scaled defect {worst:.2e}")))
}

fn rearrangement() -> Result<(bool, String)> {
    let grid = Grid::new(2, 32, 16.0)?;
    let f = random_field(&grid, 3);
    let r = grid::rearrange_decreasing(&f);
    let mut a: Vec<f64> = f.values().iter().map(|v| v.abs()).collect();
    let mut b = r.values().to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let same_values = a == b;
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&i, &j| grid.radius_sq(i).total_cmp(&grid.radius_sq(j)));
    let mut nonincreasing = true;
    let (mut prev_min, mut cur_min, mut cur_r) = (f64::INFINITY, f64::INFINITY, -1.0);
    for &i in &order {
        let (rr, v) = (grid.radius_sq(i), r.values()[i]);
        if rr > cur_r {
            prev_min = prev_min.min(cur_min);
            cur_min = f64::INFINITY;
            cur_r = rr;
        }
        nonincreasing &= v <= prev_min;
        cur_min = cur_min.min(v);
    }
    Ok((same_values && nonincreasing, format!("equimeasurable: {same_values}, radially nonincreasing: {nonincreasing}")))
}

fn determinism() -> Result<(bool, String)> {
    let grid = Grid::new(2, 32, 16.0)?;
    let p = ion_atom(1.0, 2)?;
    let opts = MinimizeOptions { seed: 11, init: crate::groundstate::Init::Random, max_iters: 400, ..Default::default() };
    let model = Model::new(&p, &grid)?;
    let a = crate::groundstate::minimize_with(&model, 12.0, 1.0, &opts)?;
    let b = crate::groundstate::minimize_with(&model, 12.0, 1.0, &opts)?;
    let same = a.u.values().iter().zip(b.u.values()).all(|(x, y)| x.to_bits() == y.to_bits())
        && a.energy.total.to_bits() == b.energy.total.to_bits()
        && a.iterations == b.iterations;
    Ok((same, format!("bitwise identical after {} iterations: {same}", a.iterations)))
}

fn dump_round_trip() -> Result<(bool, String)> {
    let grid = Grid::new(3, 8, 5.0)?;
    let u = random_field(&grid, 5);
    let mut buf = Vec::new();
    dump::write_field(&mut buf, &u)?;
    let back = dump::read_field(buf.as_slice())?;
    let same = back.grid() == u.grid() && back.values().iter().zip(u.values()).all(|(x, y)| x.to_bits() == y.to_bits());
    Ok((same, format!("{} bytes, bitwise identical: {same}", buf.len())))
}
