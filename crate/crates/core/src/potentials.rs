//! Interaction potentials `V`, their dilation derivative `W = x . grad V`,
//! the combination `F = V/2 + W/4`, and helpers that measure them on a grid.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialKind {
    /// `1/(|x|^2 + b^2)^2`.
    IonAtom { b: f64 },
    /// `a exp(-|x|^2 / (2 s^2))`.
    Gaussian { a: f64, s: f64 },
    /// 1D: `1` on `|x| <= eps`, `-2` on `eps < |x| < 1`, `0` beyond.
    Step1d { eps: f64 },
    /// Discrete delta: `1/h^d` on the origin cell.
    DeltaCell,
    /// `V == c`.
    Constant { c: f64 },
    /// Radial table with linear interpolation, zero past the last radius.
    Table { r: Vec<f64>, v: Vec<f64>, w: Vec<f64> },
}

/// An interaction potential on `R^dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub kind: PotentialKind,
    pub dim: usize,
}

fn check_dim(dim: usize) -> Result<()> {
    if (1..=3).contains(&dim) {
        Ok(())
    } else {
        Err(Error::InvalidDimension(dim))
    }
}

pub fn ion_atom(b: f64, dim: usize) -> Result<Potential> {
    check_dim(dim)?;
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::InvalidParameter { name: "b", reason: format!("must be positive, got {b}") });
    }
    Ok(Potential { kind: PotentialKind::IonAtom { b }, dim })
}

pub fn gaussian_potential(a: f64, s: f64, dim: usize) -> Result<Potential> {
    check_dim(dim)?;
    if !(s > 0.0) || !s.is_finite() || !a.is_finite() {
        return Err(Error::InvalidParameter { name: "s", reason: format!("width must be positive, got {s}") });
    }
    Ok(Potential { kind: PotentialKind::Gaussian { a, s }, dim })
}

pub fn step_1d(eps: f64) -> Result<Potential> {
    if !(eps > 0.0 && eps < 0.25) {
        return Err(Error::InvalidParameter { name: "eps", reason: format!("must lie in (0, 1/4), got {eps}") });
    }
    Ok(Potential { kind: PotentialKind::Step1d { eps }, dim: 1 })
}

pub fn delta_cell(dim: usize) -> Result<Potential> {
    check_dim(dim)?;
    Ok(Potential { kind: PotentialKind::DeltaCell, dim })
}

pub fn constant_potential(c: f64, dim: usize) -> Result<Potential> {
    check_dim(dim)?;
    Ok(Potential { kind: PotentialKind::Constant { c }, dim })
}

/// Parses a whitespace-separated `r V(r) W(r)` table; `#` starts a comment.
pub fn parse_table(text: &str, dim: usize) -> Result<Potential> {
    check_dim(dim)?;
    let (mut r, mut v, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::BadTable(format!("line {}: {e}", lineno + 1)))?;
        if cols.len() != 3 {
            return Err(Error::BadTable(format!("line {}: expected 3 columns, found {}", lineno + 1, cols.len())));
        }
        if let Some(&last) = r.last() {
            if cols[0] <= last {
                return Err(Error::BadTable(format!("line {}: radii must increase", lineno + 1)));
            }
        } else if cols[0] < 0.0 {
            return Err(Error::BadTable("radii must be nonnegative".into()));
        }
        r.push(cols[0]);
        v.push(cols[1]);
        w.push(cols[2]);
    }
    if r.len() < 2 {
        return Err(Error::BadTable("need at least two rows".into()));
    }
    Ok(Potential { kind: PotentialKind::Table { r, v, w }, dim })
}

pub fn load_table(path: impl AsRef<Path>, dim: usize) -> Result<Potential> {
    parse_table(&fs::read_to_string(path)?, dim)
}

fn interp(r: &[f64], y: &[f64], x: f64) -> f64 {
    if x <= r[0] {
        return y[0];
    }
    if x > r[r.len() - 1] {
        return 0.0;
    }
    let i = r.partition_point(|&ri| ri < x).max(1);
    let t = (x - r[i - 1]) / (r[i] - r[i - 1]);
    y[i - 1] + t * (y[i] - y[i - 1])
}

impl fmt::Display for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            PotentialKind::IonAtom { b } => write!(f, "ion_atom:b={b}"),
            PotentialKind::Gaussian { a, s } => write!(f, "gaussian:a={a},s={s}"),
            PotentialKind::Step1d { eps } => write!(f, "step_1d:eps={eps}"),
            PotentialKind::DeltaCell => write!(f, "delta"),
            PotentialKind::Constant { c } => write!(f, "constant:c={c}"),
            PotentialKind::Table { r, .. } => write!(f, "table:{}rows", r.len()),
        }
    }
}

impl Potential {
    /// Parses `NAME[:key=value,...]`, e.g. `ion_atom:b=1` or
    /// `gaussian:a=1,s=2`. Tables are given as `table:PATH`.
    pub fn parse(spec: &str, dim: usize) -> Result<Self> {
        let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
        if name == "table" {
            return load_table(rest, dim);
        }
        let mut params = std::collections::BTreeMap::new();
        for kv in rest.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::ConfigInvalid(format!("potential parameter `{kv}` is not key=value")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::ConfigInvalid(format!("potential parameter `{k}` is not a number")))?;
            params.insert(k.trim().to_string(), v);
        }
        let mut take = |k: &str, default: Option<f64>| -> Result<f64> {
            params
                .remove(k)
                .or(default)
                .ok_or_else(|| Error::ConfigInvalid(format!("potential `{name}` needs `{k}`")))
        };
        let p = match name {
            "ion_atom" => ion_atom(take("b", Some(1.0))?, dim)?,
            "gaussian" => {
                let a = take("a", Some(1.0))?;
                gaussian_potential(a, take("s", Some(1.0))?, dim)?
            }
            "step_1d" => {
                if dim != 1 {
                    return Err(Error::DimensionMismatch { expected: 1, found: dim });
                }
                step_1d(take("eps", None)?)?
            }
            "delta" | "delta_cell" => delta_cell(dim)?,
            "constant" => constant_potential(take("c", None)?, dim)?,
            "zero" => constant_potential(0.0, dim)?,
            other => return Err(Error::ConfigInvalid(format!("unknown potential `{other}`"))),
        };
        if let Some(k) = params.keys().next() {
            return Err(Error::ConfigInvalid(format!("unknown potential parameter `{k}`")));
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_radial(&self) -> bool {
        !matches!(self.kind, PotentialKind::Step1d { .. }) || self.dim == 1
    }

    pub fn is_symmetric(&self) -> bool {
        true
    }

    pub fn is_nonincreasing(&self) -> bool {
        match &self.kind {
            PotentialKind::IonAtom { .. } | PotentialKind::Constant { .. } | PotentialKind::DeltaCell => true,
            PotentialKind::Gaussian { a, .. } => *a >= 0.0,
            PotentialKind::Step1d { .. } => false,
            PotentialKind::Table { v, .. } => v.windows(2).all(|w| w[1] <= w[0]) && *v.last().unwrap() >= 0.0,
        }
    }

    /// Marks fixtures outside the admissible class (the delta cell).
    pub fn is_test_only(&self) -> bool {
        matches!(self.kind, PotentialKind::DeltaCell)
    }

    /// Whether `W` is available. The delta cell carries the distributional
    /// identity `x . grad(delta) = -d delta`.
    pub fn is_differentiable(&self) -> bool {
        !matches!(self.kind, PotentialKind::Step1d { .. })
    }

    pub fn is_nonnegative(&self) -> bool {
        match &self.kind {
            PotentialKind::IonAtom { .. } | PotentialKind::DeltaCell => true,
            PotentialKind::Gaussian { a, .. } => *a >= 0.0,
            PotentialKind::Constant { c } => *c >= 0.0,
            PotentialKind::Step1d { .. } => false,
            PotentialKind::Table { v, .. } => v.iter().all(|&x| x >= 0.0),
        }
    }

    /// Characteristic width used to default search ranges.
    pub fn width(&self) -> f64 {
        match &self.kind {
            PotentialKind::IonAtom { b } => *b,
            PotentialKind::Gaussian { s, .. } => *s,
            PotentialKind::Step1d { .. } => 1.0,
            PotentialKind::DeltaCell | PotentialKind::Constant { .. } => 1.0,
            PotentialKind::Table { r, .. } => *r.last().unwrap() / 10.0,
        }
    }

    /// `V` as a function of the radius (radial potentials only).
    pub fn v_radial(&self, r: f64) -> f64 {
        match &self.kind {
            PotentialKind::IonAtom { b } => {
                let q = r * r + b * b;
                1.0 / (q * q)
            }
            PotentialKind::Gaussian { a, s } => a * (-r * r / (2.0 * s * s)).exp(),
            PotentialKind::Step1d { eps } => {
                if r <= *eps {
                    1.0
                } else if r < 1.0 {
                    -2.0
                } else {
                    0.0
                }
            }
            PotentialKind::DeltaCell => {
                if r == 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            PotentialKind::Constant { c } => *c,
            PotentialKind::Table { r: rs, v, .. } => interp(rs, v, r),
        }
    }

    /// `W = r V'(r)` as a function of the radius.
    pub fn w_radial(&self, r: f64) -> f64 {
        match &self.kind {
            PotentialKind::IonAtom { b } => {
                let q = r * r + b * b;
                -4.0 * r * r / (q * q * q)
            }
            PotentialKind::Gaussian { s, .. } => -(r * r / (s * s)) * self.v_radial(r),
            PotentialKind::Step1d { .. } | PotentialKind::Constant { .. } => 0.0,
            PotentialKind::DeltaCell => {
                if r == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    0.0
                }
            }
            PotentialKind::Table { r: rs, w, .. } => interp(rs, w, r),
        }
    }

    pub fn v(&self, x: &[f64]) -> f64 {
        self.v_radial(norm(x))
    }

    pub fn w(&self, x: &[f64]) -> f64 {
        self.w_radial(norm(x))
    }

    /// Samples `V(x / s)` on the grid; `s = 1` is the plain kernel.
    pub fn sample_scaled(&self, grid: &Grid, s: f64) -> Field {
        match &self.kind {
            PotentialKind::DeltaCell => delta_field(grid, s.powi(grid.dim() as i32)),
            _ => Field::from_fn(grid, |x| self.v_radial(norm(x) / s)),
        }
    }

    /// Samples `W(x / s)` on the grid.
    pub fn sample_w_scaled(&self, grid: &Grid, s: f64) -> Result<Field> {
        if !self.is_differentiable() {
            return Err(Error::NonDifferentiablePotential(self.to_string()));
        }
        Ok(match &self.kind {
            PotentialKind::DeltaCell => delta_field(grid, -(grid.dim() as f64) * s.powi(grid.dim() as i32)),
            _ => Field::from_fn(grid, |x| self.w_radial(norm(x) / s)),
        })
    }

    pub fn sample(&self, grid: &Grid) -> Field {
        self.sample_scaled(grid, 1.0)
    }

    pub fn sample_w(&self, grid: &Grid) -> Result<Field> {
        self.sample_w_scaled(grid, 1.0)
    }

    pub fn sample_f(&self, grid: &Grid) -> Result<Field> {
        let v = self.sample(grid);
        let w = self.sample_w(grid)?;
        let vals = v.values().iter().zip(w.values()).map(|(a, b)| 0.5 * a + 0.25 * b).collect();
        Field::from_values(grid, vals)
    }
}

fn delta_field(grid: &Grid, weight: f64) -> Field {
    let mut f = Field::zeros(grid);
    let o = grid.origin_index();
    let mut vals = f.clone().into_values();
    vals[o] = weight / grid.cell_volume();
    f = Field::from_values(grid, vals).expect("finite delta");
    f
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// `F = V/2 + W/4` at `x`.
pub fn eval_f(p: &Potential, x: &[f64]) -> Result<f64> {
    if !p.is_differentiable() || p.is_test_only() {
        return Err(Error::NonDifferentiablePotential(p.to_string()));
    }
    Ok(0.5 * p.v(x) + 0.25 * p.w(x))
}

/// Outcome of the `V + W/2 = 0` root search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RStar {
    pub r_star: f64,
    /// Sign changes of `V + W/2` seen on the sampled interval; a value other
    /// than 1 means the uniqueness assumption fails there.
    pub sign_changes: usize,
}

/// Root of `V(r) + W(r)/2` on `(0, r_max]` with `r_max` ten widths.
pub fn find_rstar(p: &Potential) -> Result<f64> {
    find_rstar_with(p, 10.0 * p.width()).map(|r| r.r_star)
}

pub fn find_rstar_with(p: &Potential, r_max: f64) -> Result<RStar> {
    if !p.is_differentiable() || p.is_test_only() {
        return Err(Error::NonDifferentiablePotential(p.to_string()));
    }
    let g = |r: f64| p.v_radial(r) + 0.5 * p.w_radial(r);
    const SAMPLES: usize = 4000;
    let mut changes = 0;
    let mut first = None;
    let mut prev = g(0.0);
    if !(prev > 0.0) {
        return Err(Error::NoSignChange { r_max });
    }
    for i in 1..=SAMPLES {
        let r = r_max * i as f64 / SAMPLES as f64;
        let cur = g(r);
        if (prev > 0.0) != (cur > 0.0) {
            changes += 1;
            if first.is_none() {
                first = Some((r_max * (i - 1) as f64 / SAMPLES as f64, r));
            }
        }
        prev = cur;
    }
    let (mut lo, mut hi) = first.ok_or(Error::NoSignChange { r_max })?;
    while hi - lo > 1e-13 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(RStar { r_star: 0.5 * (lo + hi), sign_changes: changes })
}

/// `(||V_{R,1}||_1, ||V_{R,2}||_{d/2})` by grid quadrature, with
/// `V_{R,1} = 1_{|x|<R} V` and `V_{R,2} = V - V_{R,1}`.
pub fn split_norms(p: &Potential, grid: &Grid, radius: f64) -> (f64, f64) {
    let v = p.sample(grid);
    let q = grid.dim() as f64 / 2.0;
    let w = grid.cell_volume();
    let (mut inner, mut outer) = (0.0, 0.0);
    for (i, val) in v.values().iter().enumerate() {
        if grid.radius_sq(i).sqrt() < radius {
            inner += val.abs();
        } else {
            outer += val.abs().powf(q);
        }
    }
    (w * inner, (w * outer).powf(1.0 / q))
}

/// `(int |f|^q)^{1/q}` over the box for a sampled field.
pub fn lq_norm(f: &Field, q: f64) -> f64 {
    f.lp_norm_pow(q).powf(1.0 / q)
}

/// `|W(x) - sum_a x_a (V(x + eps e_a) - V(x - eps e_a)) / (2 eps)|`.
pub fn w_fd_defect(p: &Potential, x: &[f64], eps: f64) -> f64 {
    let mut fd = 0.0;
    let mut y = x.to_vec();
    for a in 0..x.len() {
        y[a] = x[a] + eps;
        let plus = p.v(&y);
        y[a] = x[a] - eps;
        let minus = p.v(&y);
        y[a] = x[a];
        fd += x[a] * (plus - minus) / (2.0 * eps);
    }
    (p.w(x) - fd).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ion_atom_values() {
        let p = ion_atom(1.0, 3).unwrap();
        assert_eq!(p.v(&[0.0, 0.0, 0.0]), 1.0);
        assert_eq!(p.w(&[0.0, 0.0, 0.0]), 0.0);
        assert_relative_eq!(p.v(&[1.0, 0.0, 0.0]), 0.25);
        assert_relative_eq!(p.w(&[0.0, 1.0, 0.0]), -0.5);
        assert!(p.is_radial() && p.is_symmetric() && p.is_nonincreasing());
        assert!(matches!(ion_atom(0.0, 3), Err(Error::InvalidParameter { .. })));
        let p2 = ion_atom(2.0, 2).unwrap();
        assert_relative_eq!(p2.v(&[0.0, 0.0]), 1.0 / 16.0);
    }

    #[test]
    fn gaussian_values() {
        let p = gaussian_potential(1.0, 1.0, 2).unwrap();
        assert_eq!(p.v(&[0.0, 0.0]), 1.0);
        assert_eq!(p.w(&[0.0, 0.0]), 0.0);
        let e = (-0.5f64).exp();
        assert_relative_eq!(p.v(&[0.0, 1.0]), e);
        assert_relative_eq!(p.w(&[1.0, 0.0]), -e);
        assert!(!gaussian_potential(-1.0, 1.0, 1).unwrap().is_nonincreasing());
        assert!(gaussian_potential(1.0, 0.0, 1).is_err());
    }

    #[test]
    fn step_values() {
        let p = step_1d(0.1).unwrap();
        assert_eq!(p.v(&[0.05]), 1.0);
        assert_eq!(p.v(&[-0.5]), -2.0);
        assert_eq!(p.v(&[2.0]), 0.0);
        assert!(!p.is_differentiable() && !p.is_test_only() && p.is_symmetric());
        assert!(step_1d(0.3).is_err());
        assert!(step_1d(0.0).is_err());
        assert!(matches!(eval_f(&p, &[0.0]), Err(Error::NonDifferentiablePotential(_))));
        let g = Grid::new(1, 64, 8.0).unwrap();
        assert!(p.sample_w(&g).is_err());
    }

    #[test]
    fn finite_difference_w_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pots = [
            ion_atom(1.0, 3).unwrap(),
            ion_atom(0.5, 2).unwrap(),
            gaussian_potential(1.0, 1.0, 3).unwrap(),
            gaussian_potential(2.0, 0.7, 1).unwrap(),
        ];
        for p in &pots {
            for _ in 0..1000 {
                let x: Vec<f64> = (0..p.dim()).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let d = w_fd_defect(p, &x, 1e-5);
                assert!(d < 1e-6 * (1.0 + p.w(&x).abs()), "{p} at {x:?}: {d}");
            }
        }
    }

    #[test]
    fn radial_and_symmetric_spot_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ion_atom(1.3, 3).unwrap();
        for _ in 0..100 {
            let x = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
            let neg = [-x[0], -x[1], -x[2]];
            let perm = [x[2], -x[0], x[1]];
            assert_eq!(p.v(&x), p.v(&neg));
            assert_relative_eq!(p.v(&x), p.v(&perm), max_relative = 1e-14);
        }
    }

    #[test]
    fn f_values() {
        let p = ion_atom(1.0, 2).unwrap();
        assert_relative_eq!(eval_f(&p, &[0.0, 0.0]).unwrap(), 0.5);
        assert!(eval_f(&p, &[1.0, 0.0]).unwrap().abs() < 1e-15);
        let g = gaussian_potential(1.0, 1.0, 2).unwrap();
        assert!(eval_f(&g, &[2f64.sqrt(), 0.0]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn rstar_values() {
        assert!((find_rstar(&ion_atom(1.0, 2).unwrap()).unwrap() - 1.0).abs() < 1e-10);
        assert!((find_rstar(&ion_atom(2.0, 2).unwrap()).unwrap() - 2.0).abs() < 1e-10);
        let r = find_rstar_with(&gaussian_potential(1.0, 1.0, 2).unwrap(), 10.0).unwrap();
        assert!((r.r_star - 2f64.sqrt()).abs() < 1e-10);
        assert_eq!(r.sign_changes, 1);
        assert!(matches!(
            find_rstar(&constant_potential(1.0, 2).unwrap()),
            Err(Error::NoSignChange { .. })
        ));
    }

    #[test]
    fn rstar_sign_pattern() {
        let p = ion_atom(1.5, 2).unwrap();
        let r = find_rstar(&p).unwrap();
        for i in 1..200 {
            let s = 15.0 * i as f64 / 200.0;
            let f = eval_f(&p, &[s, 0.0]).unwrap();
            if s < r - 1e-9 {
                assert!(f > 0.0);
            } else if s > r + 1e-9 {
                assert!(f < 0.0);
            }
        }
    }

    #[test]
    fn split_norm_examples() {
        let p = ion_atom(1.0, 3).unwrap();
        let g = Grid::new(3, 32, 16.0).unwrap();
        let (_, tail) = split_norms(&p, &g, 8.0 * 3f64.sqrt() + 1.0);
        assert_eq!(tail, 0.0);
        let (inner, _) = split_norms(&p, &g, 3.0);
        let total: f64 = p.sample(&g).values().iter().map(|v| v.abs()).sum::<f64>() * g.cell_volume();
        let outside: f64 = (0..g.len())
            .filter(|&i| g.radius_sq(i).sqrt() >= 3.0)
            .map(|i| p.sample(&g).values()[i].abs())
            .sum::<f64>()
            * g.cell_volume();
        assert_relative_eq!(inner + outside, total, max_relative = 1e-12);
    }

    #[test]
    fn split_tail_shrinks_with_radius() {
        let p = ion_atom(1.0, 3).unwrap();
        let g = Grid::new(3, 32, 32.0).unwrap();
        let mut last = f64::INFINITY;
        for r in [1.0, 2.0, 4.0, 8.0, 12.0] {
            let (_, tail) = split_norms(&p, &g, r);
            assert!(tail < last);
            last = tail;
        }
    }

    #[test]
    fn table_parsing() {
        let text = "# r V W\n0 1 0\n1 0.5 -0.5 # mid\n\n2 0 0\n";
        let p = parse_table(text, 1).unwrap();
        assert_relative_eq!(p.v(&[0.5]), 0.75);
        assert_relative_eq!(p.w(&[1.5]), -0.25);
        assert_eq!(p.v(&[3.0]), 0.0);
        assert!(parse_table("0 1\n", 1).is_err());
        assert!(parse_table("1 1 0\n0 1 0\n", 1).is_err());
    }

    #[test]
    fn parse_spec_strings() {
        assert_eq!(Potential::parse("ion_atom:b=2", 3).unwrap(), ion_atom(2.0, 3).unwrap());
        assert_eq!(Potential::parse("gaussian:a=1,s=0.5", 2).unwrap(), gaussian_potential(1.0, 0.5, 2).unwrap());
        assert!(Potential::parse("ion_atom:q=1", 3).is_err());
        assert!(Potential::parse("coulomb", 3).is_err());
        assert!(Potential::parse("step_1d:eps=0.1", 2).is_err());
    }
}
