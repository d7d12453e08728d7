//! Dense upper-Hessenberg LU factorization with adjacent-row pivoting.
//!
//! Every matrix of the form `alpha I + beta U` built from a truncated
//! generator is upper Hessenberg, so elimination touches one subdiagonal
//! entry per column and costs `O(N^2)` instead of `O(N^3)`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular to working precision at pivot {0}")]
    Singular(usize),
    #[error("expected a square matrix with {expected} entries, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("right-hand side has length {got}, expected {expected}")]
    RhsLength { expected: usize, got: usize },
}

#[derive(Clone, Debug)]
pub struct HessenbergLu {
    n: usize,
    /// Row-major `R` after elimination; entries below the diagonal are stale.
    r: Vec<f64>,
    mult: Vec<f64>,
    swapped: Vec<bool>,
}

impl HessenbergLu {
    /// Factors a row-major `n x n` upper-Hessenberg matrix in place.
    ///
    /// Entries below the first subdiagonal are ignored.
    pub fn factor(n: usize, mut a: Vec<f64>) -> Result<Self, LinalgError> {
        if a.len() != n * n {
            return Err(LinalgError::Shape { expected: n * n, got: a.len() });
        }
        let mut mult = vec![0.0; n.saturating_sub(1)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
        for k in 0..n.saturating_sub(1) {
            let (top, bottom) = a.split_at_mut((k + 1) * n);
            let row_k = &mut top[k * n..];
            let row_k1 = &mut bottom[..n];
            if row_k1[k].abs() > row_k[k].abs() {
                row_k[k..].swap_with_slice(&mut row_k1[k..]);
                swapped[k] = true;
            }
            let piv = row_k[k];
            if piv.abs() <= f64::EPSILON * 1e-3 * scale {
                return Err(LinalgError::Singular(k));
            }
            let l = row_k1[k] / piv;
            mult[k] = l;
            if l != 0.0 {
                for (y, x) in row_k1[k + 1..].iter_mut().zip(&row_k[k + 1..]) {
                    *y -= l * x;
                }
            }
        }
        if n > 0 && a[n * n - 1].abs() <= f64::EPSILON * 1e-3 * scale {
            return Err(LinalgError::Singular(n - 1));
        }
        Ok(HessenbergLu { n, r: a, mult, swapped })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn check(&self, b: &[f64]) -> Result<(), LinalgError> {
        if b.len() != self.n {
            Err(LinalgError::RhsLength { expected: self.n, got: b.len() })
        } else {
            Ok(())
        }
    }

    /// Solves `A x = b`, overwriting `b` with `x`.
    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<(), LinalgError> {
        self.check(b)?;
        let n = self.n;
        for k in 0..n.saturating_sub(1) {
            if self.swapped[k] {
                b.swap(k, k + 1);
            }
            b[k + 1] -= self.mult[k] * b[k];
        }
        for i in (0..n).rev() {
            let row = &self.r[i * n..(i + 1) * n];
            let s: f64 = row[i + 1..].iter().zip(&b[i + 1..]).map(|(r, x)| r * x).sum();
            b[i] = (b[i] - s) / row[i];
        }
        Ok(())
    }

    /// Solves `A^T x = b`, overwriting `b` with `x`.
    pub fn solve_transpose_in_place(&self, b: &mut [f64]) -> Result<(), LinalgError> {
        self.check(b)?;
        let n = self.n;
        for i in 0..n {
            let row = &self.r[i * n..(i + 1) * n];
            let yi = b[i] / row[i];
            b[i] = yi;
            for (bj, r) in b[i + 1..].iter_mut().zip(&row[i + 1..]) {
                *bj -= r * yi;
            }
        }
        for k in (0..n.saturating_sub(1)).rev() {
            b[k] -= self.mult[k] * b[k + 1];
            if self.swapped[k] {
                b.swap(k, k + 1);
            }
        }
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let mut x = b.to_vec();
        self.solve_transpose_in_place(&mut x)?;
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hessenberg(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in i.saturating_sub(1)..n {
                a[i * n + j] = rng.random_range(-1.0..1.0);
            }
        }
        a
    }

    #[test]
    fn matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 2, 5, 40] {
            let a = random_hessenberg(n, &mut rng);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dense = DMatrix::from_row_slice(n, n, &a);
            let lu = HessenbergLu::factor(n, a).unwrap();
            let x = lu.solve(&b).unwrap();
            let xt = lu.solve_transpose(&b).unwrap();
            let r = &dense * DVector::from_vec(x) - DVector::from_vec(b.clone());
            let rt = dense.transpose() * DVector::from_vec(xt) - DVector::from_vec(b);
            assert!(r.amax() < 1e-9, "n={n} {}", r.amax());
            assert!(rt.amax() < 1e-9, "n={n} {}", rt.amax());
        }
    }

    #[test]
    fn pivots_on_zero_diagonal() {
        // [[0, 1], [1, 0]] needs the swap.
        let lu = HessenbergLu::factor(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(lu.solve(&[2.0, 3.0]).unwrap(), vec![3.0, 2.0]);
        assert_eq!(lu.solve_transpose(&[2.0, 3.0]).unwrap(), vec![3.0, 2.0]);
    }

    #[test]
    fn detects_singularity() {
        let err = HessenbergLu::factor(2, vec![1.0, 1.0, 1.0, 1.0]).unwrap_err();
        assert_eq!(err, LinalgError::Singular(1));
    }
}
