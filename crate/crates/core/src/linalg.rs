//! Small dense kernels for the K×K systems that appear in every time step.
//!
//! Matrices are row-major `&[f64]` of side `k`. The factor count is small
//! (tens at most), so these avoid allocation-heavy general-purpose routines in
//! the inner loops.

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    k: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn new(a: &[f64], k: usize) -> Result<Self> {
        let mut l = vec![0.0; k * k];
        Self::factor_into(a, k, &mut l)?;
        Ok(Cholesky { k, l })
    }

    /// Factor `a` into the provided buffer, reusing its allocation.
    pub fn factor_into(a: &[f64], k: usize, l: &mut [f64]) -> Result<()> {
        debug_assert_eq!(a.len(), k * k);
        for i in 0..k {
            for j in 0..=i {
                let mut s = a[i * k + j];
                for p in 0..j {
                    s -= l[i * k + p] * l[j * k + p];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Numerical(format!(
                            "matrix not positive definite at pivot {i} (value {s})"
                        )));
                    }
                    l[i * k + i] = s.sqrt();
                } else {
                    l[i * k + j] = s / l[j * k + j];
                }
            }
            for j in i + 1..k {
                l[i * k + j] = 0.0;
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn factor(&self) -> &[f64] {
        &self.l
    }

    pub fn log_det(&self) -> f64 {
        log_det_from_factor(&self.l, self.k)
    }

    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        forward_sub(&self.l, self.k, b);
        backward_sub_transposed(&self.l, self.k, b);
    }

    /// Overwrite `z` with `L^{-T} z`; a draw from N(0, A^{-1}) when `z` is standard normal.
    pub fn solve_lt_in_place(&self, z: &mut [f64]) {
        backward_sub_transposed(&self.l, self.k, z);
    }

    pub fn inverse(&self) -> Vec<f64> {
        let k = self.k;
        let mut inv = vec![0.0; k * k];
        let mut col = vec![0.0; k];
        for j in 0..k {
            col.iter_mut().for_each(|c| *c = 0.0);
            col[j] = 1.0;
            self.solve_in_place(&mut col);
            for i in 0..k {
                inv[i * k + j] = col[i];
            }
        }
        inv
    }
}

pub fn log_det_from_factor(l: &[f64], k: usize) -> f64 {
    2.0 * (0..k).map(|i| l[i * k + i].ln()).sum::<f64>()
}

/// Solve `L x = b` in place.
pub fn forward_sub(l: &[f64], k: usize, b: &mut [f64]) {
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s -= l[i * k + p] * b[p];
        }
        b[i] = s / l[i * k + i];
    }
}

/// Solve `L^T x = b` in place.
pub fn backward_sub_transposed(l: &[f64], k: usize, b: &mut [f64]) {
    for i in (0..k).rev() {
        let mut s = b[i];
        for p in i + 1..k {
            s -= l[p * k + i] * b[p];
        }
        b[i] = s / l[i * k + i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spd(k: usize, seed: u64) -> Vec<f64> {
        // B B' + k I with a cheap deterministic B.
        let mut b = vec![0.0; k * k];
        let mut s = seed;
        for v in b.iter_mut() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
        }
        let mut a = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                a[i * k + j] = (0..k).map(|p| b[i * k + p] * b[j * k + p]).sum::<f64>();
            }
            a[i * k + i] += k as f64;
        }
        a
    }

    #[test]
    fn solve_and_inverse_match_nalgebra() {
        let k = 5;
        let a = spd(k, 3);
        let chol = Cholesky::new(&a, k).unwrap();
        let m = nalgebra::DMatrix::from_row_slice(k, k, &a);
        let inv = m.clone().try_inverse().unwrap();
        let ours = chol.inverse();
        for i in 0..k {
            for j in 0..k {
                assert_relative_eq!(ours[i * k + j], inv[(i, j)], epsilon = 1e-12);
            }
        }
        assert_relative_eq!(chol.log_det(), m.determinant().ln(), epsilon = 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        assert!(Cholesky::new(&[1.0, 2.0, 2.0, 1.0], 2).is_err());
        assert!(Cholesky::new(&[f64::NAN], 1).is_err());
    }
}
