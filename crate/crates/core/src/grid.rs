//! Periodic Cartesian grids, real fields sampled on them, and the spectral
//! machinery (FFT convolution, Laplacian, gradient norm, dilation) that every
//! other module builds on.
//!
//! Coordinates along each axis are `x_i = -L/2 + i*h`, `i = 0..n`, so the
//! origin sits at index `n/2`. Multi-dimensional fields are stored
//! lexicographically with the first axis slowest.

use std::fmt;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// A periodic uniform lattice on `[-L/2, L/2)^dim`.
#[derive(Clone)]
pub struct Grid {
    dim: usize,
    n: usize,
    length: f64,
    h: f64,
    plan: Arc<SpectralPlan>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .field("length", &self.length)
            .field("h", &self.h)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.n == other.n && self.length.to_bits() == other.length.to_bits()
    }
}

/// Builds a grid. `n` must be a power of two no smaller than 8.
pub fn make_grid(dim: usize, n: usize, length: f64) -> Result<Grid> {
    Grid::new(dim, n, length)
}

impl Grid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidDimension(dim));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::NonPowerOfTwo(n));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::NonpositiveLength(length));
        }
        // n is a power of two, so L/n is exact and h*n == L bit for bit.
        let h = length / n as f64;
        let plan = Arc::new(SpectralPlan::new(dim, n, length));
        Ok(Self { dim, n, length, h, plan })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Number of grid points, `n^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Box volume `L^dim`.
    pub fn volume(&self) -> f64 {
        self.length.powi(self.dim as i32)
    }

    /// Axis indices of a flat index, first axis first.
    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        let mut rest = idx;
        for a in (0..self.dim).rev() {
            out[a] = rest % self.n;
            rest /= self.n;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi[..self.dim].iter().fold(0, |acc, &i| acc * self.n + i)
    }

    /// Physical coordinate of a flat index; unused trailing axes are zero.
    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let mi = self.multi_index(idx);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.axis_coord(mi[a]);
        }
        x
    }

    pub fn axis_coord(&self, i: usize) -> f64 {
        -0.5 * self.length + i as f64 * self.h
    }

    /// Flat index of the grid point at the origin.
    pub fn origin_index(&self) -> usize {
        let half = [self.n / 2; 3];
        self.flat_index(&half)
    }

    /// `|x|^2` at a flat index.
    pub fn radius_sq(&self, idx: usize) -> f64 {
        self.coords(idx).iter().map(|c| c * c).sum()
    }

    pub(crate) fn plan(&self) -> &SpectralPlan {
        &self.plan
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// A real-valued sampled function on a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Grid) -> Self {
        Self { grid: grid.clone(), values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    /// Samples `f(x)` at every grid point; `x` has `dim` components.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let d = grid.dim();
        let values = (0..grid.len())
            .map(|i| {
                let x = grid.coords(i);
                f(&x[..d])
            })
            .collect();
        Self { grid: grid.clone(), values }
    }

    /// Wraps raw values, rejecting wrong lengths and non-finite entries.
    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidParameter {
                name: "values",
                reason: format!("expected {} values, got {}", grid.len(), values.len()),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid: grid.clone(), values })
    }

    pub(crate) fn from_vec_unchecked(grid: &Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `h^d * sum u^2`.
    pub fn mass(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().map(|v| v * v).sum::<f64>()
    }

    /// `h^d * sum u v`.
    pub fn inner(&self, other: &Field) -> f64 {
        self.grid.cell_volume() * dot(&self.values, &other.values)
    }

    /// `h^d * sum |u|^p`.
    pub fn lp_norm_pow(&self, p: f64) -> f64 {
        self.grid.cell_volume() * self.values.iter().map(|v| v.abs().powf(p)).sum::<f64>()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled(&self, s: f64) -> Field {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// `self + a * other`.
    pub fn axpy(&mut self, a: f64, other: &Field) {
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += a * o;
        }
    }

    /// Pointwise product.
    pub fn mul(&self, other: &Field) -> Field {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        Field::from_vec_unchecked(&self.grid, values)
    }

    pub fn squared(&self) -> Field {
        self.mul(self)
    }

    pub fn abs(&self) -> Field {
        Field::from_vec_unchecked(&self.grid, self.values.iter().map(|v| v.abs()).collect())
    }

    /// Rescales so that `mass == m`. Fails on the zero field.
    pub fn normalize_to(&mut self, m: f64) -> Result<()> {
        let cur = self.mass();
        if cur <= 0.0 {
            return Err(Error::ZeroMass);
        }
        self.scale((m / cur).sqrt());
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cached FFT plans and wave-number tables for one grid shape.
pub(crate) struct SpectralPlan {
    dim: usize,
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// `|k|^2` per flat spectral index, Nyquist included.
    k_sq: Vec<f64>,
    radial_order: OnceLock<Vec<usize>>,
}

impl SpectralPlan {
    fn new(dim: usize, n: usize, length: f64) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let k1: Vec<f64> = (0..n).map(|j| wave_number(j, n, length)).collect();
        let total = n.pow(dim as u32);
        let mut k_sq = vec![0.0; total];
        for (idx, slot) in k_sq.iter_mut().enumerate() {
            let mut rest = idx;
            let mut acc = 0.0;
            for _ in 0..dim {
                let k = k1[rest % n];
                acc += k * k;
                rest /= n;
            }
            *slot = acc;
        }
        Self { dim, n, forward, inverse, k_sq, radial_order: OnceLock::new() }
    }

    pub(crate) fn k_sq(&self) -> &[f64] {
        &self.k_sq
    }

    pub(crate) fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, true);
        buf
    }

    /// Forward transform of two real arrays with one complex FFT.
    pub(crate) fn forward_pair(&self, a: &[f64], b: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let mut buf: Vec<Complex64> = a.iter().zip(b).map(|(&x, &y)| Complex64::new(x, y)).collect();
        self.transform(&mut buf, true);
        let total = buf.len();
        let mut fa = vec![Complex64::new(0.0, 0.0); total];
        let mut fb = vec![Complex64::new(0.0, 0.0); total];
        for k in 0..total {
            let c = buf[k];
            let cm = buf[self.negate_index(k)].conj();
            fa[k] = 0.5 * (c + cm);
            fb[k] = Complex64::new(0.0, -0.5) * (c - cm);
        }
        (fa, fb)
    }

    /// Inverse transform that keeps only the real part, scaled by 1/N.
    pub(crate) fn inverse_real(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spec, false);
        let norm = 1.0 / spec.len() as f64;
        spec.into_iter().map(|c| c.re * norm).collect()
    }

    fn negate_index(&self, k: usize) -> usize {
        let n = self.n;
        let mut rest = k;
        let mut out = 0;
        let mut stride = 1;
        for _ in 0..self.dim {
            let j = rest % n;
            rest /= n;
            out += ((n - j) % n) * stride;
            stride *= n;
        }
        out
    }

    pub(crate) fn transform(&self, buf: &mut [Complex64], forward: bool) {
        let fft = if forward { &self.forward } else { &self.inverse };
        let n = self.n;
        let total = buf.len();
        // Last axis is contiguous.
        fft.process(buf);
        if self.dim == 1 {
            return;
        }
        let mut scratch = vec![Complex64::new(0.0, 0.0); total];
        for axis in 0..self.dim - 1 {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            let block = stride * n;
            // Gather lines along `axis` into contiguous rows.
            let mut row = 0;
            for base in (0..total).step_by(block) {
                for off in 0..stride {
                    let start = base + off;
                    let dst = &mut scratch[row * n..(row + 1) * n];
                    for (j, d) in dst.iter_mut().enumerate() {
                        *d = buf[start + j * stride];
                    }
                    row += 1;
                }
            }
            fft.process(&mut scratch);
            let mut row = 0;
            for base in (0..total).step_by(block) {
                for off in 0..stride {
                    let start = base + off;
                    let src = &scratch[row * n..(row + 1) * n];
                    for (j, s) in src.iter().enumerate() {
                        buf[start + j * stride] = *s;
                    }
                    row += 1;
                }
            }
        }
    }

    /// Grid points sorted by distance from the origin, ties lexicographic.
    fn radial_order(&self, grid: &Grid) -> &[usize] {
        self.radial_order.get_or_init(|| {
            let mut keyed: Vec<(f64, usize)> = (0..grid.len()).map(|i| (grid.radius_sq(i), i)).collect();
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            keyed.into_iter().map(|(_, i)| i).collect()
        })
    }
}

fn wave_number(j: usize, n: usize, length: f64) -> f64 {
    let signed = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
    2.0 * std::f64::consts::PI * signed / length
}

/// Moves a kernel sampled in box coordinates so that displacement zero sits
/// at flat index 0, as the FFT expects.
fn wrap_kernel(kernel: &Field) -> Vec<f64> {
    let grid = kernel.grid();
    let n = grid.n();
    let mut out = vec![0.0; grid.len()];
    for (idx, slot) in out.iter_mut().enumerate() {
        let mi = grid.multi_index(idx);
        let mut src = [0usize; 3];
        for a in 0..grid.dim() {
            src[a] = (mi[a] + n / 2) % n;
        }
        *slot = kernel.values()[grid.flat_index(&src)];
    }
    out
}

/// Fourier multiplier of a sampled kernel, pre-scaled by `h^d` so that
/// `convolve = IFFT(spectrum * FFT(f))`.
#[derive(Clone, Debug)]
pub struct KernelSpectrum {
    grid: Grid,
    spec: Vec<Complex64>,
}

impl KernelSpectrum {
    pub fn new(kernel: &Field) -> Self {
        let grid = kernel.grid().clone();
        let mut spec = grid.plan().forward_real(&wrap_kernel(kernel));
        let w = grid.cell_volume();
        spec.iter_mut().for_each(|c| *c *= w);
        Self { grid, spec }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn apply(&self, f: &Field) -> Result<Field> {
        self.grid.check_same(f.grid())?;
        let spec = self.grid.plan().forward_real(f.values());
        Ok(self.apply_spectrum(spec))
    }

    pub(crate) fn apply_spectrum(&self, mut spec: Vec<Complex64>) -> Field {
        for (s, k) in spec.iter_mut().zip(&self.spec) {
            *s *= k;
        }
        Field::from_vec_unchecked(&self.grid, self.grid.plan().inverse_real(spec))
    }
}

/// Periodic discrete convolution `h^d * sum_y kernel[x-y] f[y]`.
pub fn convolve(kernel: &Field, f: &Field) -> Result<Field> {
    kernel.grid().check_same(f.grid())?;
    KernelSpectrum::new(kernel).apply(f)
}

/// Spectral Laplacian (multiplier `-|k|^2`).
pub fn laplacian(f: &Field) -> Field {
    let plan = f.grid().plan();
    let mut spec = plan.forward_real(f.values());
    for (s, k2) in spec.iter_mut().zip(plan.k_sq()) {
        *s *= -k2;
    }
    Field::from_vec_unchecked(f.grid(), plan.inverse_real(spec))
}

/// `||grad f||_2^2` by Parseval, consistent with `<f, -laplacian(f)>`.
pub fn grad_norm_sq(f: &Field) -> f64 {
    let plan = f.grid().plan();
    let spec = plan.forward_real(f.values());
    spectral_grad_norm_sq(f.grid(), &spec)
}

pub(crate) fn spectral_grad_norm_sq(grid: &Grid, spec: &[Complex64]) -> f64 {
    let plan = grid.plan();
    let s: f64 = spec.iter().zip(plan.k_sq()).map(|(c, k2)| c.norm_sqr() * k2).sum();
    s * grid.cell_volume() / grid.len() as f64
}

/// Applies the multiplier `m(|k|^2)` in Fourier space.
pub(crate) fn apply_multiplier(f: &Field, m: impl Fn(f64) -> f64) -> Field {
    let plan = f.grid().plan();
    let mut spec = plan.forward_real(f.values());
    for (s, &k2) in spec.iter_mut().zip(plan.k_sq()) {
        *s *= m(k2);
    }
    Field::from_vec_unchecked(f.grid(), plan.inverse_real(spec))
}

/// Symmetric-decreasing rearrangement of `|f|` on the grid.
///
/// The sorted magnitudes are laid out on grid points ordered by distance from
/// the origin, with ties broken by flat index.
pub fn rearrange_decreasing(f: &Field) -> Field {
    let grid = f.grid();
    let order = grid.plan().radial_order(grid);
    let mut mags: Vec<f64> = f.values().iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut out = vec![0.0; grid.len()];
    for (&idx, v) in order.iter().zip(mags) {
        out[idx] = v;
    }
    Field::from_vec_unchecked(grid, out)
}

/// Odd number of grid points per axis closest to one unit of length.
fn block_width(grid: &Grid) -> usize {
    let q = ((1.0 / grid.spacing() - 1.0) / 2.0).round().max(0.0) as usize * 2 + 1;
    q.min(grid.n() - 1 + grid.n() % 2)
}

/// `||f||^2_{L^2(z+Q)}` for every grid point `z`, with `Q` a centred cube of
/// roughly unit side.
pub fn block_mass_map(f: &Field) -> Field {
    let grid = f.grid();
    let n = grid.n();
    let q = block_width(grid);
    let half = (q / 2) as isize;
    let mut cur: Vec<f64> = f.values().iter().map(|v| v * v).collect();
    let mut next = vec![0.0; cur.len()];
    for axis in 0..grid.dim() {
        let stride = n.pow((grid.dim() - 1 - axis) as u32);
        for (idx, slot) in next.iter_mut().enumerate() {
            let i = (idx / stride) % n;
            let base = idx - i * stride;
            let mut s = 0.0;
            for o in -half..=half {
                let j = (i as isize + o).rem_euclid(n as isize) as usize;
                s += cur[base + j * stride];
            }
            *slot = s;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    let w = grid.cell_volume();
    cur.iter_mut().for_each(|v| *v *= w);
    Field::from_vec_unchecked(grid, cur)
}

/// `sup_z ||f||_{L^2(z+Q)}`, the local concentration diagnostic.
pub fn concentration(f: &Field) -> f64 {
    block_mass_map(f).values().iter().fold(0.0f64, |m, &v| m.max(v)).sqrt()
}

/// Cyclic shift moving the grid point `from` to the origin.
pub fn shift_to_origin(f: &Field, from: usize) -> Field {
    let grid = f.grid();
    let n = grid.n();
    let src = grid.multi_index(from);
    let mut out = vec![0.0; grid.len()];
    for (idx, v) in f.values().iter().enumerate() {
        let mi = grid.multi_index(idx);
        let mut dst = [0usize; 3];
        for a in 0..grid.dim() {
            dst[a] = (mi[a] + n + n / 2 - src[a]) % n;
        }
        out[grid.flat_index(&dst)] = *v;
    }
    Field::from_vec_unchecked(grid, out)
}

/// Shifts `f` cyclically so the block of largest local mass is centred at
/// the origin. A block already at the origin that ties the maximum is kept.
pub fn recenter(f: &Field) -> Result<Field> {
    if f.values().iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroField);
    }
    let map = block_mass_map(f);
    let vals = map.values();
    let (best, max) = vals
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bm), (i, &v)| if v > bm { (i, v) } else { (bi, bm) });
    let origin = f.grid().origin_index();
    if vals[origin] >= max * (1.0 - 1e-12) {
        return Ok(f.clone());
    }
    Ok(shift_to_origin(f, best))
}

/// Copies `f` into the centre of a larger grid with the same spacing,
/// zero outside the original box.
pub fn embed(f: &Field, target: &Grid) -> Result<Field> {
    let src = f.grid();
    if src.dim() != target.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), found: src.dim() });
    }
    if target.n() < src.n() || (src.spacing() - target.spacing()).abs() > 1e-12 * src.spacing() {
        return Err(Error::GridMismatch);
    }
    let shift = (target.n() - src.n()) / 2;
    let mut out = vec![0.0; target.len()];
    for (i, &v) in f.values().iter().enumerate() {
        let mut mi = src.multi_index(i);
        mi[..src.dim()].iter_mut().for_each(|a| *a += shift);
        out[target.flat_index(&mi)] = v;
    }
    Field::from_values(target, out)
}

/// Mass-preserving dilation `t^{d/2} f(t x)` evaluated through the periodic
/// trigonometric interpolant of `f`, one axis at a time.
pub fn dilate(f: &Field, t: f64) -> Result<Field> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter { name: "t", reason: format!("dilation factor must be positive, got {t}") });
    }
    let grid = f.grid();
    let n = grid.n();
    let matrix = interpolation_matrix(grid, t);
    let mut cur = f.values().to_vec();
    let mut next = vec![0.0; cur.len()];
    let mut line = vec![0.0; n];
    for axis in 0..grid.dim() {
        let stride = n.pow((grid.dim() - 1 - axis) as u32);
        let block = stride * n;
        for base in (0..cur.len()).step_by(block) {
            for off in 0..stride {
                let start = base + off;
                for (j, l) in line.iter_mut().enumerate() {
                    *l = cur[start + j * stride];
                }
                for i in 0..n {
                    let row = &matrix[i * n..(i + 1) * n];
                    next[start + i * stride] = dot(row, &line);
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    let s = t.powf(grid.dim() as f64 / 2.0);
    cur.iter_mut().for_each(|v| *v *= s);
    Field::from_values(grid, cur)
}

/// Row `i` interpolates samples to the point `t * x_i`.
fn interpolation_matrix(grid: &Grid, t: f64) -> Vec<f64> {
    let n = grid.n();
    let length = grid.length();
    let mut m = vec![0.0; n * n];
    let two_pi = 2.0 * std::f64::consts::PI;
    for i in 0..n {
        let y = t * grid.axis_coord(i);
        for j in 0..n {
            let s = y - grid.axis_coord(j);
            let mut acc = 1.0;
            for k in 1..n / 2 {
                acc += 2.0 * (two_pi * k as f64 * s / length).cos();
            }
            acc += (std::f64::consts::PI * n as f64 * s / length).cos();
            m[i * n + j] = acc / n as f64;
        }
    }
    m
}
