//! Small linear-algebra kit: a scalar trait shared by real and complex
//! fields, a banded LU with partial pivoting, and BiCGStab.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{num, Result};
use crate::C64;

pub trait Scalar:
    Copy
    + Send
    + Sync
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Mul<f64, Output = Self>
    + 'static
{
    fn zero() -> Self;
    fn from_f64(x: f64) -> Self;
    fn abs(self) -> f64;
    fn conj(self) -> Self;
    /// Re(self * conj(other))
    fn re_dot(self, other: Self) -> f64;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn abs(self) -> f64 {
        f64::abs(self)
    }
    fn conj(self) -> Self {
        self
    }
    fn re_dot(self, other: Self) -> f64 {
        self * other
    }
}

impl Scalar for C64 {
    fn zero() -> Self {
        C64::new(0.0, 0.0)
    }
    fn from_f64(x: f64) -> Self {
        C64::new(x, 0.0)
    }
    fn abs(self) -> f64 {
        self.norm()
    }
    fn conj(self) -> Self {
        C64::conj(&self)
    }
    fn re_dot(self, other: Self) -> f64 {
        self.re * other.re + self.im * other.im
    }
}

/// Square band matrix with `kl` sub- and `ku` super-diagonals, stored with
/// `kl` extra super-diagonals of room for pivoting fill-in.
#[derive(Clone, Debug)]
pub struct BandMatrix<T> {
    n: usize,
    kl: usize,
    ku: usize,
    w: usize,
    ab: Vec<T>,
}

impl<T: Scalar> BandMatrix<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let w = 2 * kl + ku + 1;
        BandMatrix { n, kl, ku, w, ab: vec![T::zero(); n * w] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.w + (j + self.kl - i)
    }

    /// Adds `v` at (i, j); panics if (i, j) is outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i},{j}) outside band");
        let k = self.idx(i, j);
        self.ab[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if j + self.kl < i || j > i + self.ku + self.kl {
            return T::zero();
        }
        self.ab[self.idx(i, j)]
    }

    pub fn matvec(&self, x: &[T], y: &mut [T]) {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let mut s = T::zero();
            for j in lo..=hi {
                s += self.ab[self.idx(i, j)] * x[j];
            }
            y[i] = s;
        }
    }

    /// LU factorization with partial (row) pivoting.
    pub fn factor(mut self) -> Result<BandLu<T>> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut piv = vec![0usize; n];
        let mut scale = 0.0f64;
        for v in &self.ab {
            scale = scale.max(v.abs());
        }
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.ab[self.idx(k, k)].abs();
            for i in k + 1..=last {
                let a = self.ab[self.idx(i, k)].abs();
                if a > best {
                    best = a;
                    p = i;
                }
            }
            if best <= scale * 1e-300 || best == 0.0 {
                return Err(num(format!("band LU: singular pivot at column {k}")));
            }
            piv[k] = p;
            let jmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.idx(k, j);
                    let b = self.idx(p, j);
                    self.ab.swap(a, b);
                }
            }
            let pivot = self.ab[self.idx(k, k)];
            for i in k + 1..=last {
                let ik = self.idx(i, k);
                let l = self.ab[ik] / pivot;
                self.ab[ik] = l;
                if l.abs() != 0.0 {
                    for j in k + 1..=jmax {
                        let kj = self.ab[self.idx(k, j)];
                        let ij = self.idx(i, j);
                        self.ab[ij] -= l * kj;
                    }
                }
            }
        }
        Ok(BandLu { m: self, piv })
    }
}

#[derive(Clone, Debug)]
pub struct BandLu<T> {
    m: BandMatrix<T>,
    piv: Vec<usize>,
}

impl<T: Scalar> BandLu<T> {
    pub fn n(&self) -> usize {
        self.m.n
    }

    /// Solves A x = b in place.
    pub fn solve_in_place(&self, b: &mut [T]) {
        let m = &self.m;
        let n = m.n;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            let last = (k + m.kl).min(n - 1);
            for i in k + 1..=last {
                b[i] -= m.ab[m.idx(i, k)] * bk;
            }
        }
        for k in (0..n).rev() {
            let jmax = (k + m.kl + m.ku).min(n - 1);
            let mut s = b[k];
            for j in k + 1..=jmax {
                s -= m.ab[m.idx(k, j)] * b[j];
            }
            b[k] = s / m.ab[m.idx(k, k)];
        }
    }
}

pub fn dot_re<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re_dot(*y)).sum()
}

pub fn norm2<T: Scalar>(a: &[T]) -> f64 {
    dot_re(a, a).sqrt()
}

fn cdot(a: &[C64], b: &[C64]) -> C64 {
    // sum conj(a) * b
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// BiCGStab for complex systems, warm-started from `x`. Returns the
/// iteration count; fails if the relative residual stays above `tol`.
pub fn bicgstab(
    apply: impl Fn(&[C64], &mut [C64]),
    b: &[C64],
    x: &mut [C64],
    tol: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = b.len();
    let bnorm = norm2(b).max(1e-300);
    let mut r = vec![C64::new(0.0, 0.0); n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    if norm2(&r) <= tol * bnorm {
        return Ok(0);
    }
    let r0 = r.clone();
    let mut p = r.clone();
    let mut v = vec![C64::new(0.0, 0.0); n];
    let mut s = vec![C64::new(0.0, 0.0); n];
    let mut t = vec![C64::new(0.0, 0.0); n];
    let mut rho = cdot(&r0, &r);
    for it in 1..=max_iter {
        apply(&p, &mut v);
        let alpha = rho / cdot(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) <= tol * bnorm {
            for i in 0..n {
                x[i] += alpha * p[i];
            }
            return Ok(it);
        }
        apply(&s, &mut t);
        let tt = cdot(&t, &t);
        let omega = if tt.norm() > 0.0 { cdot(&t, &s) / tt } else { C64::new(0.0, 0.0) };
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm2(&r) <= tol * bnorm {
            return Ok(it);
        }
        let rho_new = cdot(&r0, &r);
        if rho_new.norm() == 0.0 || omega.norm() == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
    }
    Err(num(format!("BiCGStab did not reach tolerance {tol:e} in {max_iter} iterations")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn band_lu_matches_dense_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, kl, ku) = (40, 3, 2);
        let mut a = BandMatrix::<f64>::zeros(n, kl, ku);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                // weak diagonal forces pivoting
                let v: f64 = rng.gen_range(-1.0..1.0) + if i == j { 0.01 } else { 0.0 };
                a.add(i, j, v);
                dense[i][j] = v;
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..n).map(|i| (0..n).map(|j| dense[i][j] * x[j]).sum()).collect();
        let mut y = b.clone();
        a.factor().unwrap().solve_in_place(&mut y);
        for i in 0..n {
            assert!((y[i] - x[i]).abs() < 1e-9, "{i}: {} vs {}", y[i], x[i]);
        }
    }

    #[test]
    fn bicgstab_solves_shifted_laplacian() {
        let n = 50;
        let apply = |x: &[C64], y: &mut [C64]| {
            for i in 0..n {
                let l = if i > 0 { x[i - 1] } else { C64::new(0.0, 0.0) };
                let r = if i + 1 < n { x[i + 1] } else { C64::new(0.0, 0.0) };
                y[i] = x[i] - C64::new(0.0, 0.3) * (l + r - 2.0 * x[i]);
            }
        };
        let b: Vec<C64> = (0..n).map(|i| C64::new(i as f64, 1.0)).collect();
        let mut x = vec![C64::new(0.0, 0.0); n];
        bicgstab(apply, &b, &mut x, 1e-12, 500).unwrap();
        let mut y = vec![C64::new(0.0, 0.0); n];
        apply(&x, &mut y);
        let err: f64 = y.iter().zip(&b).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-9);
    }
}
