//! Dense Cholesky factorization and preconditioned conjugate gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

const PIVOT_FLOOR: f64 = 1e-13;

/// Row-major dense square matrix.
#[derive(Debug, Clone)]
pub(crate) struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Lower-triangular Cholesky factor.
    pub fn cholesky(self) -> Result<Cholesky> {
        self.factor().map(|l| Cholesky { l })
    }

    fn factor(mut self) -> Result<Self> {
        let n = self.n;
        for j in 0..n {
            let diag = self.get(j, j);
            if !(diag > 0.0 && diag.is_finite()) {
                return Err(Error::IllConditioned { pivot: j });
            }
            let mut d = diag;
            for k in 0..j {
                let l = self.get(j, k);
                d -= l * l;
            }
            if !d.is_finite() {
                return Err(Error::IllConditioned { pivot: j });
            }
            // Pivots lost to cancellation are floored relative to the diagonal.
            let d = d.max(PIVOT_FLOOR * diag);
            let d = libm::sqrt(d);
            self.data[j * n + j] = d;
            for i in j + 1..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= self.get(i, k) * self.get(j, k);
                }
                self.data[i * n + j] = s / d;
            }
        }
        Ok(self)
    }

}

/// Factor produced by [`SymMatrix::cholesky`].
#[derive(Debug, Clone)]
pub(crate) struct Cholesky {
    l: SymMatrix,
}

impl Cholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let l = &self.l;
        let n = l.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l.get(i, k) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l.get(k, i) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        y
    }
}

/// Preconditioned conjugate gradients for a symmetric positive-definite
/// operator. Stops once `||b - Ax|| <= tol * ||b||` or after `max_iter`
/// iterations and returns the best iterate seen.
pub(crate) fn pcg(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precondition: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Vec<f64> {
    let norm = |v: &[f64]| libm::sqrt(dot(v, v));
    let target = tol * norm(b);
    let mut x = x0;
    let ax = apply(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, a)| bi - a).collect();
    let mut best = (norm(&r), x.clone());
    if best.0 <= target {
        return x;
    }
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0 && rz.is_finite()) {
            break;
        }
        let alpha = rz / pap;
        for ((xi, ri), (pi, api)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&ap)) {
            *xi += alpha * pi;
            *ri -= alpha * api;
        }
        // Recompute the residual directly so rounding does not accumulate.
        let ax = apply(&x);
        for ((ri, bi), a) in r.iter_mut().zip(b).zip(&ax) {
            *ri = bi - a;
        }
        let rn = norm(&r);
        if rn < best.0 {
            best = (rn, x.clone());
        }
        if rn <= target {
            break;
        }
        z = precondition(&r);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    best.1
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
