//! Box lattice for the exterior domain, masked Dirichlet operators,
//! quadrature, norms and the radial cutoff Ψ.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{pre, Error, Result};
use crate::linalg::{BandMatrix, Scalar};
use crate::C64;

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Obstacle {
    None,
    /// Centered ball (interval in 1D) of radius `a`.
    Ball { a: f64 },
}

impl Obstacle {
    pub fn radius(&self) -> f64 {
        match self {
            Obstacle::None => 0.0,
            Obstacle::Ball { a } => *a,
        }
    }
}

/// Lattice `x_i = -L + (i+1) h`, `h = 2L/(n+1)`, on each axis; the box
/// boundary nodes `i = -1, n` carry the Dirichlet zero and are not stored.
#[derive(Debug)]
pub struct Grid {
    dim: usize,
    half_width: f64,
    n: usize,
    h: f64,
    obstacle: Obstacle,
    active: Vec<usize>,
    lattice_to_active: Vec<u32>,
    // neighbours per active point: [axis0-, axis0+, axis1-, ...]
    nbr: Vec<[u32; 6]>,
    bandwidth: usize,
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, n: usize, obstacle: Obstacle) -> Result<Arc<Grid>> {
        if !(1..=3).contains(&dim) {
            return Err(pre(format!("dim must be 1, 2 or 3 (got {dim})")));
        }
        if n < 16 {
            return Err(pre(format!("need n >= 16 points per axis (got {n})")));
        }
        if !(half_width > 0.0) {
            return Err(pre("half width L must be positive"));
        }
        let a = obstacle.radius();
        if let Obstacle::Ball { a } = obstacle {
            if !(a > 0.0) {
                return Err(pre("obstacle radius must be positive"));
            }
            if half_width <= 4.0 * a {
                return Err(pre(format!("box half width {half_width} must exceed 4a = {}", 4.0 * a)));
            }
        }
        let h = 2.0 * half_width / (n as f64 + 1.0);
        let total = n.pow(dim as u32);
        let mut lattice_to_active = vec![NONE; total];
        let mut active = Vec::new();
        for idx in 0..total {
            let x = lattice_coords(idx, dim, n, half_width, h);
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            if obstacle == Obstacle::None || r > a {
                lattice_to_active[idx] = active.len() as u32;
                active.push(idx);
            }
        }
        if dim == 1 {
            let outside = active.iter().filter(|&&i| lattice_coords(i, 1, n, half_width, h)[0] > a).count();
            if outside < 8 {
                return Err(pre("fewer than 8 active points outside the obstacle"));
            }
        }
        let mut nbr = vec![[NONE; 6]; active.len()];
        let mut bandwidth = 0usize;
        for (k, &idx) in active.iter().enumerate() {
            let mut stride = 1usize;
            for axis in (0..dim).rev() {
                let i = (idx / stride) % n;
                if i > 0 {
                    let j = lattice_to_active[idx - stride];
                    nbr[k][2 * axis] = j;
                    if j != NONE {
                        bandwidth = bandwidth.max(k - j as usize);
                    }
                }
                if i + 1 < n {
                    let j = lattice_to_active[idx + stride];
                    nbr[k][2 * axis + 1] = j;
                    if j != NONE {
                        bandwidth = bandwidth.max(j as usize - k);
                    }
                }
                stride *= n;
            }
        }
        Ok(Arc::new(Grid { dim, half_width, n, h, obstacle, active, lattice_to_active, nbr, bandwidth }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn half_width(&self) -> f64 {
        self.half_width
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn obstacle(&self) -> Obstacle {
        self.obstacle
    }
    /// Number of active (interior, outside-obstacle) points.
    pub fn len(&self) -> usize {
        self.active.len()
    }
    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }
    /// Quadrature weight h^d.
    pub fn cell(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }
    /// Largest index distance between lattice neighbours.
    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }
    pub fn lattice_index(&self, k: usize) -> usize {
        self.active[k]
    }
    pub fn active_index(&self, lattice: usize) -> Option<usize> {
        let j = self.lattice_to_active[lattice];
        (j != NONE).then_some(j as usize)
    }
    pub fn point(&self, k: usize) -> [f64; 3] {
        lattice_coords(self.active[k], self.dim, self.n, self.half_width, self.h)
    }
    pub fn points(&self) -> Vec<[f64; 3]> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }
    /// Active neighbour along `axis` in direction `dir` (−1 or +1).
    pub fn neighbor(&self, k: usize, axis: usize, plus: bool) -> Option<usize> {
        let j = self.nbr[k][2 * axis + plus as usize];
        (j != NONE).then_some(j as usize)
    }

    pub fn same(&self, other: &Grid) -> bool {
        std::ptr::eq(self, other)
            || (self.dim == other.dim
                && self.n == other.n
                && self.half_width == other.half_width
                && self.obstacle == other.obstacle)
    }

    /// Masked Dirichlet Laplacian (zero extension across masked nodes).
    pub fn laplacian<T: Scalar>(&self, u: &[T], out: &mut [T]) {
        let inv = 1.0 / (self.h * self.h);
        let diag = -2.0 * self.dim as f64;
        for k in 0..self.len() {
            let nb = &self.nbr[k];
            let mut s = u[k] * diag;
            for &j in &nb[..2 * self.dim] {
                if j != NONE {
                    s += u[j as usize];
                }
            }
            out[k] = s * inv;
        }
    }

    pub fn laplacian_vec<T: Scalar>(&self, u: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); u.len()];
        self.laplacian(u, &mut out);
        out
    }

    /// Band matrix of `alpha * I + beta * Δ + diag(pot)`.
    pub fn band_operator<T: Scalar>(&self, alpha: T, beta: T, pot: Option<&[f64]>) -> BandMatrix<T> {
        let n = self.len();
        let bw = self.bandwidth.max(1);
        let mut m = BandMatrix::zeros(n, bw, bw);
        let inv = 1.0 / (self.h * self.h);
        for k in 0..n {
            let mut d = alpha + beta * (-2.0 * self.dim as f64 * inv);
            if let Some(v) = pot {
                d += T::from_f64(v[k]);
            }
            m.add(k, k, d);
            for &j in &self.nbr[k][..2 * self.dim] {
                if j != NONE {
                    m.add(k, j as usize, beta * inv);
                }
            }
        }
        m
    }

    /// Centered differences, one-sided where a neighbour is masked.
    pub fn gradient<T: Scalar>(&self, u: &[T]) -> Vec<Vec<T>> {
        let h = self.h;
        (0..self.dim)
            .map(|axis| {
                (0..self.len())
                    .map(|k| {
                        let m = self.neighbor(k, axis, false);
                        let p = self.neighbor(k, axis, true);
                        match (m, p) {
                            (Some(m), Some(p)) => (u[p] - u[m]) * (0.5 / h),
                            (None, Some(p)) => (u[p] - u[k]) * (1.0 / h),
                            (Some(m), None) => (u[k] - u[m]) * (1.0 / h),
                            (None, None) => T::zero(),
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Σ Re(u w̄) h^d
    pub fn inner<T: Scalar>(&self, u: &[T], w: &[T]) -> f64 {
        crate::linalg::dot_re(u, w) * self.cell()
    }

    pub fn l2<T: Scalar>(&self, u: &[T]) -> f64 {
        self.inner(u, u).sqrt()
    }

    /// Dirichlet form Σ|∇_h u|² h^d over lattice edges; equals (−Δ_h u, u).
    pub fn grad_sq<T: Scalar>(&self, u: &[T]) -> f64 {
        let lap = self.laplacian_vec(u);
        -self.inner(&lap, u)
    }

    pub fn h1<T: Scalar>(&self, u: &[T]) -> f64 {
        (self.inner(u, u) + self.grad_sq(u)).sqrt()
    }

    pub fn h2<T: Scalar>(&self, u: &[T]) -> f64 {
        let lap = self.laplacian_vec(u);
        (self.inner(u, u) - self.inner(&lap, u) + self.inner(&lap, &lap)).sqrt()
    }

    pub fn header(&self, cutoff: Option<&CutoffPsi>) -> GridHeader {
        GridHeader {
            dim: self.dim,
            L: self.half_width,
            n: self.n,
            obstacle_a: self.obstacle.radius(),
            R1: cutoff.map(|c| c.r1),
            R2: cutoff.map(|c| c.r2),
        }
    }
}

fn lattice_coords(idx: usize, dim: usize, n: usize, l: f64, h: f64) -> [f64; 3] {
    let mut x = [0.0; 3];
    let mut rem = idx;
    for axis in (0..dim).rev() {
        let i = rem % n;
        rem /= n;
        x[axis] = -l + (i as f64 + 1.0) * h;
    }
    x
}

/// Complex field on the active points of a grid (zero elsewhere).
#[derive(Clone, Debug)]
pub struct Field {
    grid: Arc<Grid>,
    pub values: Vec<C64>,
}

impl Field {
    pub fn zeros(grid: &Arc<Grid>) -> Field {
        Field { grid: grid.clone(), values: vec![C64::new(0.0, 0.0); grid.len()] }
    }

    pub fn from_values(grid: &Arc<Grid>, values: Vec<C64>) -> Result<Field> {
        if values.len() != grid.len() {
            return Err(pre(format!("field has {} values, grid has {} points", values.len(), grid.len())));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(pre("field contains non-finite values"));
        }
        Ok(Field { grid: grid.clone(), values })
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn([f64; 3]) -> C64) -> Field {
        let values = (0..grid.len()).map(|k| f(grid.point(k))).collect();
        Field { grid: grid.clone(), values }
    }

    pub fn from_real(grid: &Arc<Grid>, re: &[f64]) -> Field {
        Field { grid: grid.clone(), values: re.iter().map(|&x| C64::new(x, 0.0)).collect() }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    fn check(&self, other: &Field) -> Result<()> {
        if self.grid.same(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn laplacian(&self) -> Field {
        Field { grid: self.grid.clone(), values: self.grid.laplacian_vec(&self.values) }
    }

    pub fn gradient(&self) -> Vec<Field> {
        self.grid
            .gradient(&self.values)
            .into_iter()
            .map(|values| Field { grid: self.grid.clone(), values })
            .collect()
    }

    /// (u, w) = Re Σ u w̄ h^d
    pub fn real_inner(&self, other: &Field) -> Result<f64> {
        self.check(other)?;
        Ok(self.grid.inner(&self.values, &other.values))
    }

    pub fn norm_l2(&self) -> f64 {
        self.grid.l2(&self.values)
    }
    pub fn norm_h1(&self) -> f64 {
        self.grid.h1(&self.values)
    }
    pub fn norm_h2(&self) -> f64 {
        self.grid.h2(&self.values)
    }

    pub fn scale(&self, c: C64) -> Field {
        Field { grid: self.grid.clone(), values: self.values.iter().map(|v| v * c).collect() }
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.check(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(Field { grid: self.grid.clone(), values })
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.check(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Field { grid: self.grid.clone(), values })
    }

    /// self += c * other
    pub fn axpy(&mut self, c: C64, other: &Field) -> Result<()> {
        self.check(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        Ok(())
    }

    /// Full row-major lattice copy (masked points zero).
    pub fn to_lattice(&self) -> Vec<C64> {
        let g = &self.grid;
        let mut out = vec![C64::new(0.0, 0.0); g.n.pow(g.dim as u32)];
        for (k, v) in self.values.iter().enumerate() {
            out[g.active[k]] = *v;
        }
        out
    }

    /// Writes a one-line JSON header followed by the full lattice as
    /// little-endian complex64 (two f32 per value).
    pub fn write_to(&self, w: &mut impl Write, cutoff: Option<&CutoffPsi>) -> Result<()> {
        let header = serde_json::to_string(&self.grid.header(cutoff)).map_err(|e| pre(e.to_string()))?;
        writeln!(w, "{header}")?;
        let mut buf = Vec::with_capacity(8 * self.grid.n.pow(self.grid.dim as u32));
        for v in self.to_lattice() {
            buf.extend_from_slice(&(v.re as f32).to_le_bytes());
            buf.extend_from_slice(&(v.im as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<(Field, GridHeader)> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| pre("field file: missing header line"))?;
        let header: GridHeader =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| pre(format!("field header: {e}")))?;
        let obstacle = if header.obstacle_a > 0.0 { Obstacle::Ball { a: header.obstacle_a } } else { Obstacle::None };
        let grid = Grid::new(header.dim, header.L, header.n, obstacle)?;
        let data = &bytes[nl + 1..];
        let total = header.n.pow(header.dim as u32);
        if data.len() != 8 * total {
            return Err(pre(format!("field file: expected {} data bytes, found {}", 8 * total, data.len())));
        }
        let mut values = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let o = 8 * grid.active[k];
            let re = f32::from_le_bytes(data[o..o + 4].try_into().unwrap());
            let im = f32::from_le_bytes(data[o + 4..o + 8].try_into().unwrap());
            values.push(C64::new(re as f64, im as f64));
        }
        Ok((Field::from_values(&grid, values)?, header))
    }
}

#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub dim: usize,
    pub L: f64,
    pub n: usize,
    pub obstacle_a: f64,
    pub R1: Option<f64>,
    pub R2: Option<f64>,
}

/// Quintic smoothstep S(s) = 10s³ − 15s⁴ + 6s⁵ and its derivatives.
pub fn smoothstep(s: f64) -> (f64, f64, f64) {
    if s <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if s >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let s2 = s * s;
        (
            s2 * s * (10.0 - 15.0 * s + 6.0 * s2),
            30.0 * s2 * (1.0 - s) * (1.0 - s),
            60.0 * s * (1.0 - s) * (1.0 - 2.0 * s),
        )
    }
}

/// Septic smoothstep S(s) = 35s⁴ − 84s⁵ + 70s⁶ − 20s⁷ (C³) and its derivatives.
pub fn smoothstep7(s: f64) -> (f64, f64, f64) {
    if s <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if s >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let t = 1.0 - s;
        (
            s.powi(4) * (35.0 - 84.0 * s + 70.0 * s * s - 20.0 * s.powi(3)),
            140.0 * s.powi(3) * t.powi(3),
            420.0 * s * s * t * t * (1.0 - 2.0 * s),
        )
    }
}

/// Ramp profile of the cutoff.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CutoffProfile {
    /// Quintic smoothstep, C².
    Quintic,
    /// Septic smoothstep, C³; keeps the lattice Laplacian of ΨH second-order accurate.
    Septic,
}

/// Radial cutoff: Ψ = 0 for |x| ≤ R1, Ψ = 1 for |x| ≥ R2.
#[derive(Clone, Debug)]
pub struct CutoffPsi {
    pub r1: f64,
    pub r2: f64,
    pub psi: Vec<f64>,
    pub grad: Vec<Vec<f64>>,
    pub lap: Vec<f64>,
}

impl CutoffPsi {
    pub fn new(grid: &Grid, r1: f64, r2: f64) -> Result<CutoffPsi> {
        CutoffPsi::with_profile(grid, r1, r2, CutoffProfile::Quintic)
    }

    pub fn with_profile(grid: &Grid, r1: f64, r2: f64, profile: CutoffProfile) -> Result<CutoffPsi> {
        let step = match profile {
            CutoffProfile::Quintic => smoothstep,
            CutoffProfile::Septic => smoothstep7,
        };
        let a = grid.obstacle().radius();
        if r1 <= a {
            return Err(pre(format!("cutoff R1 = {r1} must exceed the obstacle radius {a}")));
        }
        if !(r1 < r2) || r2 >= grid.half_width() / 2.0 {
            return Err(pre(format!("cutoff needs R1 < R2 < L/2 (R1 = {r1}, R2 = {r2}, L = {})", grid.half_width())));
        }
        let d = grid.dim();
        let w = r2 - r1;
        let mut psi = Vec::with_capacity(grid.len());
        let mut grad = vec![Vec::with_capacity(grid.len()); d];
        let mut lap = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let x = grid.point(k);
            let rho = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            let (s0, s1, s2) = step((rho - r1) / w);
            psi.push(s0);
            let dr = s1 / w;
            for (axis, g) in grad.iter_mut().enumerate() {
                g.push(if rho > 0.0 { dr * x[axis] / rho } else { 0.0 });
            }
            let l = s2 / (w * w) + if rho > 0.0 { (d as f64 - 1.0) * dr / rho } else { 0.0 };
            lap.push(l);
        }
        Ok(CutoffPsi { r1, r2, psi, grad, lap })
    }

    /// Ψ ≡ 1 (no obstacle correction).
    pub fn identity(grid: &Grid) -> CutoffPsi {
        CutoffPsi {
            r1: 0.0,
            r2: 0.0,
            psi: vec![1.0; grid.len()],
            grad: vec![vec![0.0; grid.len()]; grid.dim()],
            lap: vec![0.0; grid.len()],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.r2 == 0.0
    }
}
