//! Slow reference computations, independent of the FFT and Lanczos paths.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::grid::Field;
use crate::potentials::Potential;
use crate::spectrum::Schrodinger;

/// `1/4 h^{2d} sum_{x,y} u(x)^2 V(x - y) u(y)^2` with minimum-image
/// displacements, `O(N^2)`.
pub fn brute_interaction(u: &Field, p: &Potential) -> f64 {
    let g = u.grid();
    let w = g.cell_volume();
    let n = g.n() as isize;
    let h = g.spacing();
    let mut s = 0.0;
    for i in 0..g.len() {
        let xi = g.multi_index(i);
        for j in 0..g.len() {
            let xj = g.multi_index(j);
            let mut disp = [0.0; 3];
            for a in 0..g.dim() {
                let mut k = (xi[a] as isize - xj[a] as isize).rem_euclid(n);
                if k >= n / 2 {
                    k -= n;
                }
                disp[a] = k as f64 * h;
            }
            s += u.values()[i].powi(2) * p.v(&disp[..g.dim()]) * u.values()[j].powi(2);
        }
    }
    0.25 * w * w * s
}

/// Lowest eigenvalue of the operator assembled column by column and
/// diagonalized densely.
pub fn dense_lowest(op: &Schrodinger) -> f64 {
    let n = op.grid().len();
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = op.apply(&e);
        e[j] = 0.0;
        for i in 0..n {
            m[(i, j)] = col[i];
        }
    }
    let sym = (&m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b))
}
