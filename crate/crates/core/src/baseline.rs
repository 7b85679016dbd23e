//! PCA with varimax rotation, used as a comparison baseline for loading and
//! group-map recovery.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

use crate::error::{Error, Result};

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn to_array(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Principal-component loadings (eigenvectors scaled by the square root of
/// their eigenvalues) of the N×N sample second-moment matrix of N×T series.
pub fn pca_loadings(series: &[&Array2<f64>], k: usize) -> Result<Array2<f64>> {
    let n = series.first().map(|y| y.nrows()).ok_or_else(|| Error::validation("no series"))?;
    if k == 0 || k > n {
        return Err(Error::validation(format!("need 1 ≤ K ≤ N, got K = {k}, N = {n}")));
    }
    let mut cov = Array2::<f64>::zeros((n, n));
    let mut t_total = 0usize;
    for y in series {
        if y.nrows() != n {
            return Err(Error::Dimension("series with different region counts".into()));
        }
        cov = cov + y.dot(&y.t());
        t_total += y.ncols();
    }
    cov /= t_total as f64;
    let eig = SymmetricEigen::new(to_dmatrix(&cov));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    Ok(Array2::from_shape_fn((n, k), |(i, j)| {
        let c = order[j];
        eig.eigenvectors[(i, c)] * eig.eigenvalues[c].max(0.0).sqrt()
    }))
}

/// Kaiser varimax rotation.
pub fn varimax(loadings: &Array2<f64>, max_iter: usize, tol: f64) -> Array2<f64> {
    let a = to_dmatrix(loadings);
    let (p, k) = (a.nrows(), a.ncols());
    if k < 2 {
        return loadings.clone();
    }
    let mut rot = DMatrix::<f64>::identity(k, k);
    let mut d = 0.0;
    for _ in 0..max_iter {
        let l = &a * &rot;
        let col_ss: Vec<f64> = (0..k).map(|j| l.column(j).iter().map(|v| v * v).sum()).collect();
        let target = DMatrix::from_fn(p, k, |i, j| l[(i, j)].powi(3) - l[(i, j)] * col_ss[j] / p as f64);
        let b = a.transpose() * target;
        let svd = b.svd(true, true);
        let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
        rot = u * vt;
        let d_new: f64 = svd.singular_values.iter().sum();
        if d > 0.0 && d_new < d * (1.0 + tol) {
            break;
        }
        d = d_new;
    }
    to_array(&(a * rot))
}

/// Per-subject PCA-varimax loadings from every condition of that subject.
pub fn pca_varimax(series: &[&Array2<f64>], k: usize) -> Result<Array2<f64>> {
    Ok(varimax(&pca_loadings(series, k)?, 500, 1e-8))
}

/// Membership by magnitude: `|λ| ≥ fraction · max |column|`.
pub fn membership_by_magnitude(loadings: &Array2<f64>, fraction: f64) -> Array2<bool> {
    let mut out = Array2::from_elem(loadings.dim(), false);
    for (j, col) in loadings.columns().into_iter().enumerate() {
        let mx = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (i, v) in col.iter().enumerate() {
            out[[i, j]] = mx > 0.0 && v.abs() >= fraction * mx;
        }
    }
    out
}

/// Group map as the across-subject frequency of membership.
pub fn group_frequency(memberships: &[Array2<bool>]) -> Array2<f64> {
    let dim = memberships[0].dim();
    let s = memberships.len() as f64;
    Array2::from_shape_fn(dim, |idx| memberships.iter().filter(|m| m[idx]).count() as f64 / s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn varimax_recovers_simple_structure() {
        let truth = array![[1.0, 0.0], [0.9, 0.0], [0.8, 0.0], [0.0, 1.0], [0.0, 0.9], [0.0, 0.7]];
        let theta: f64 = 0.6;
        let rot = array![[theta.cos(), -theta.sin()], [theta.sin(), theta.cos()]];
        let rotated = truth.dot(&rot);
        let back = varimax(&rotated, 500, 1e-12);
        // Up to column order and sign each column has one zero block.
        for col in back.columns() {
            let small = col.iter().filter(|v| v.abs() < 1e-4).count();
            assert_eq!(small, 3, "{back:?}");
        }
    }

    #[test]
    fn pca_loadings_reproduce_covariance_of_rank_k_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = array![[1.0, 0.0], [0.5, 0.5], [0.0, 1.0], [0.3, -0.4]];
        let f = Array2::from_shape_fn((2, 50_000), |_| rng.sample::<f64, _>(StandardNormal));
        let y = l.dot(&f);
        let p = pca_loadings(&[&y], 2).unwrap();
        let a = p.dot(&p.t());
        let b = l.dot(&l.t());
        for (x, z) in a.iter().zip(b.iter()) {
            assert!((x - z).abs() < 0.05);
        }
    }

    #[test]
    fn magnitude_membership() {
        let l = array![[1.0, 0.1], [-0.6, -2.0], [0.4, 1.5]];
        let m = membership_by_magnitude(&l, 0.5);
        assert_eq!(m, array![[true, false], [true, true], [false, true]]);
        assert_eq!(group_frequency(&[m.clone(), Array2::from_elem((3, 2), false)])[[0, 0]], 0.5);
    }
}
