//! Idiosyncratic variances, spike-and-slab loadings, latent factors and group
//! inclusion probabilities.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::types::{ConditionState, SubjectState};

/// Draw from IG(shape, rate).
pub fn draw_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let g: f64 = Gamma::new(shape, 1.0 / rate).unwrap().sample(rng);
    (1.0 / g).min(f64::MAX)
}

/// Keep probabilities strictly inside (0, 1).
#[inline]
pub fn clamp_open_unit(p: f64) -> f64 {
    p.clamp(1e-12, 1.0 - 1e-12)
}

/// Conjugate posterior (shape, rate) of σ²_n for one region given its row of
/// loadings and the factor paths.
pub fn sigma2_posterior(
    y_row: &[f64],
    loading_row: &[f64],
    factors: &ArrayView2<f64>,
    shape: f64,
    rate: f64,
) -> (f64, f64) {
    let t_len = y_row.len();
    let mut rss = 0.0;
    for (t, &y) in y_row.iter().enumerate() {
        let mut fit = 0.0;
        for (k, &l) in loading_row.iter().enumerate() {
            if l != 0.0 {
                fit += l * factors[[k, t]];
            }
        }
        let r = y - fit;
        rss += r * r;
    }
    (shape + 0.5 * t_len as f64, rate + 0.5 * rss)
}

/// Refresh every σ²_n of one (condition, subject) block.
pub fn update_sigma2<R: Rng + ?Sized>(
    y: &Array2<f64>,
    loadings: &Array2<f64>,
    factors: &Array2<f64>,
    shape: f64,
    rate: f64,
    rng: &mut R,
) -> Array1<f64> {
    let n = y.nrows();
    let fv = factors.view();
    Array1::from_shape_fn(n, |i| {
        let row = y.row(i);
        let lrow = loadings.row(i);
        let (a, b) = sigma2_posterior(
            row.as_slice().expect("contiguous rows"),
            lrow.to_vec().as_slice(),
            &fv,
            shape,
            rate,
        );
        draw_inverse_gamma(a, b, rng)
    })
}

/// Sufficient statistics of the conditional of one loading:
/// `precision = Σ f²/σ²`, `mean_acc = Σ f r/σ²` with `r` the partial residual
/// excluding this factor, summed over time and conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadingColumnStats {
    pub precision: f64,
    pub mean_acc: f64,
}

impl LoadingColumnStats {
    /// Log Bayes factor of slab N(0, τ²) against the spike at zero.
    pub fn log_bayes_factor(&self, tau2: f64) -> f64 {
        let post_prec = self.precision + 1.0 / tau2;
        -0.5 * (tau2 * post_prec).ln() + 0.5 * self.mean_acc * self.mean_acc / post_prec
    }

    /// Posterior (mean, variance) of the loading under the slab.
    pub fn slab_posterior(&self, tau2: f64) -> (f64, f64) {
        let v = 1.0 / (self.precision + 1.0 / tau2);
        (v * self.mean_acc, v)
    }

    /// P(z = 1 | everything else) under prior inclusion probability `prior`.
    pub fn inclusion_probability(&self, prior: f64, tau2: f64) -> f64 {
        if prior <= 0.0 {
            return 0.0;
        }
        if prior >= 1.0 {
            return 1.0;
        }
        let log_odds = (prior / (1.0 - prior)).ln() + self.log_bayes_factor(tau2);
        1.0 / (1.0 + (-log_odds).exp())
    }
}

/// Joint draw of (z, λ) for one entry: z from its collapsed odds, then λ from
/// the slab posterior or zero.
pub fn update_loading_entry<R: Rng + ?Sized>(
    stats: &LoadingColumnStats,
    prior: f64,
    tau2: f64,
    rng: &mut R,
) -> (bool, f64) {
    let p = stats.inclusion_probability(prior, tau2);
    let z = rng.random::<f64>() < p;
    if z {
        let (m, v) = stats.slab_posterior(tau2);
        (true, m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
    } else {
        (false, 0.0)
    }
}

/// Sweep every loading of one subject (regions outer, factors inner) with
/// incrementally maintained residuals.
///
/// `series[g]` and `blocks[g]` are this subject's data and latent block for
/// condition `g`.
pub fn update_subject_loadings<R: Rng + ?Sized>(
    subject: &mut SubjectState,
    series: &[&Array2<f64>],
    blocks: &[&ConditionState],
    prior_prob: &Array2<f64>,
    tau2: f64,
    rng: &mut R,
) {
    let (n_regions, k_factors) = subject.loadings.dim();
    let f2: Vec<Vec<f64>> = blocks
        .iter()
        .map(|b| {
            (0..k_factors)
                .map(|k| b.factors.row(k).iter().map(|v| v * v).sum())
                .collect()
        })
        .collect();
    let mut resid: Vec<Vec<f64>> = series.iter().map(|y| vec![0.0; y.ncols()]).collect();

    for n in 0..n_regions {
        for (g, y) in series.iter().enumerate() {
            let f = &blocks[g].factors;
            let e = &mut resid[g];
            e.copy_from_slice(y.row(n).as_slice().expect("contiguous rows"));
            for k in 0..k_factors {
                let l = subject.loadings[[n, k]];
                if l != 0.0 {
                    for (ev, fv) in e.iter_mut().zip(f.row(k).iter()) {
                        *ev -= l * fv;
                    }
                }
            }
        }
        for k in 0..k_factors {
            let old = subject.loadings[[n, k]];
            let mut precision = 0.0;
            let mut cross = 0.0;
            for (g, blk) in blocks.iter().enumerate() {
                let inv = 1.0 / blk.sigma2[n];
                precision += f2[g][k] * inv;
                let dot: f64 = blk
                    .factors
                    .row(k)
                    .iter()
                    .zip(&resid[g])
                    .map(|(f, e)| f * e)
                    .sum();
                cross += dot * inv;
            }
            let stats = LoadingColumnStats {
                precision,
                mean_acc: cross + old * precision,
            };
            let (z, l) = update_loading_entry(&stats, prior_prob[[n, k]], tau2, rng);
            subject.inclusion[[n, k]] = z;
            subject.loadings[[n, k]] = l;
            let delta = l - old;
            if delta != 0.0 {
                for (g, blk) in blocks.iter().enumerate() {
                    for (ev, fv) in resid[g].iter_mut().zip(blk.factors.row(k).iter()) {
                        *ev -= delta * fv;
                    }
                }
            }
        }
    }
}

/// Precompute `Λ' Γ⁻¹ Λ` (row-major K×K).
pub fn weighted_gram(loadings: &Array2<f64>, sigma2: &Array1<f64>) -> Vec<f64> {
    let (n, k) = loadings.dim();
    let mut out = vec![0.0; k * k];
    for i in 0..n {
        let w = 1.0 / sigma2[i];
        for a in 0..k {
            let la = loadings[[i, a]];
            if la == 0.0 {
                continue;
            }
            for b in 0..k {
                out[a * k + b] += la * loadings[[i, b]] * w;
            }
        }
    }
    out
}

/// Posterior precision `Λ'Γ⁻¹Λ + Ω_t⁻¹` and linear term `Λ'Γ⁻¹y_t` of f_t.
pub fn factor_precision(
    gram: &[f64],
    loadings: &Array2<f64>,
    sigma2: &Array1<f64>,
    y_t: &[f64],
    h_t: &[f64],
    precision: &mut [f64],
    linear: &mut [f64],
) {
    let (n, k) = loadings.dim();
    precision.copy_from_slice(gram);
    for a in 0..k {
        precision[a * k + a] += (-h_t[a]).exp();
    }
    linear.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        let w = y_t[i] / sigma2[i];
        for a in 0..k {
            linear[a] += loadings[[i, a]] * w;
        }
    }
}

/// Posterior (mean, covariance) of f_t; covariance row-major K×K.
pub fn factor_posterior(
    y_t: &[f64],
    loadings: &Array2<f64>,
    h_t: &[f64],
    sigma2: &Array1<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = loadings.ncols();
    let gram = weighted_gram(loadings, sigma2);
    let mut prec = vec![0.0; k * k];
    let mut lin = vec![0.0; k];
    factor_precision(&gram, loadings, sigma2, y_t, h_t, &mut prec, &mut lin);
    let chol = Cholesky::new(&prec, k)?;
    chol.solve_in_place(&mut lin);
    Ok((lin, chol.inverse()))
}

/// Draw every f_t of one (condition, subject) block.
pub fn update_factors<R: Rng + ?Sized>(
    y: &Array2<f64>,
    loadings: &Array2<f64>,
    block: &mut ConditionState,
    rng: &mut R,
) -> Result<()> {
    let (n, k) = loadings.dim();
    let t_len = y.ncols();
    let gram = weighted_gram(loadings, &block.sigma2);
    let mut prec = vec![0.0; k * k];
    let mut l = vec![0.0; k * k];
    let mut lin = vec![0.0; k];
    let mut z = vec![0.0; k];
    let mut y_t = vec![0.0; n];
    let mut h_t = vec![0.0; k];
    for t in 0..t_len {
        for i in 0..n {
            y_t[i] = y[[i, t]];
        }
        for a in 0..k {
            h_t[a] = block.log_vol[[a, t]];
        }
        factor_precision(&gram, loadings, &block.sigma2, &y_t, &h_t, &mut prec, &mut lin);
        Cholesky::factor_into(&prec, k, &mut l)
            .map_err(|e| Error::Numerical(format!("factor posterior at t = {t}: {e}")))?;
        crate::linalg::forward_sub(&l, k, &mut lin);
        crate::linalg::backward_sub_transposed(&l, k, &mut lin);
        for zv in z.iter_mut() {
            *zv = rng.sample(StandardNormal);
        }
        crate::linalg::backward_sub_transposed(&l, k, &mut z);
        for a in 0..k {
            let v = lin[a] + z[a];
            if !v.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite factor draw at t = {t}, factor {a}"
                )));
            }
            block.factors[[a, t]] = v;
        }
    }
    Ok(())
}

/// Draw Π₀ from its Beta conditional given every subject's indicators.
pub fn update_group_inclusion<R: Rng + ?Sized>(
    inclusion: &[&Array2<bool>],
    prior_mean: &Array2<f64>,
    concentration: f64,
    rng: &mut R,
) -> Array2<f64> {
    let (n, k) = prior_mean.dim();
    let s = inclusion.len() as f64;
    Array2::from_shape_fn((n, k), |(i, j)| {
        let hits = inclusion.iter().filter(|z| z[[i, j]]).count() as f64;
        let a = concentration * prior_mean[[i, j]] + hits;
        let b = concentration * (1.0 - prior_mean[[i, j]]) + s - hits;
        clamp_open_unit(Beta::new(a, b).unwrap().sample(rng))
    })
}

/// Column rescaling move along the scale ridge of factor `k` of one subject:
/// `λ_k → cλ_k`, `f_k → f_k/c`, `h_k → h_k − 2 log c` and `μ_k → μ_k − 2 log c`
/// in every condition. The observed-data likelihood is unchanged; the
/// acceptance ratio reduces to the μ and slab prior ratios times `c^m`, with
/// `m` the number of nonzero loadings in the column.
#[allow(clippy::too_many_arguments)]
pub fn rescale_column<R: Rng + ?Sized>(
    subject: &mut SubjectState,
    blocks: &mut [&mut ConditionState],
    k: usize,
    step: f64,
    mu_mean: f64,
    mu_var: f64,
    tau2: f64,
    rng: &mut R,
) -> bool {
    let u = step * rng.sample::<f64, _>(StandardNormal);
    let c = u.exp();
    let col = subject.loadings.column(k);
    let m = col.iter().filter(|v| **v != 0.0).count() as f64;
    let ss: f64 = col.iter().map(|v| v * v).sum();
    let mut log_ratio = m * u - (c * c - 1.0) * ss / (2.0 * tau2);
    for b in blocks.iter() {
        let mu = b.sv[k].mu;
        let d0 = mu - mu_mean;
        let d1 = mu - 2.0 * u - mu_mean;
        log_ratio += (d0 * d0 - d1 * d1) / (2.0 * mu_var);
    }
    let within = blocks.iter().all(|b| {
        b.log_vol
            .row(k)
            .iter()
            .all(|h| (h - 2.0 * u).abs() <= crate::sv::H_BOUND)
    });
    let accept = within && (log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio);
    if accept {
        subject.loadings.column_mut(k).mapv_inplace(|v| v * c);
        for b in blocks.iter_mut() {
            b.factors.row_mut(k).mapv_inplace(|v| v / c);
            b.log_vol.row_mut(k).mapv_inplace(|v| v - 2.0 * u);
            b.sv[k].mu -= 2.0 * u;
        }
    }
    accept
}

/// Log prior of column `j` of the indicators placed in column `k` of Π₀.
fn column_log_prior(inclusion: &Array2<bool>, j: usize, prior_prob: &Array2<f64>, k: usize) -> f64 {
    inclusion
        .column(j)
        .iter()
        .zip(prior_prob.column(k))
        .map(|(z, p)| if *z { p.max(f64::MIN_POSITIVE).ln() } else { (1.0 - p).max(f64::MIN_POSITIVE).ln() })
        .sum()
}

/// Gibbs choice between keeping and swapping every pair of one subject's
/// columns, carrying the factors, log-volatilities and SV parameters along.
/// Only `z_s | Π₀` depends on the labels, so the swap probability is the
/// logistic of its log-ratio. Returns the number of swaps.
pub fn relabel_columns<R: Rng + ?Sized>(
    subject: &mut SubjectState,
    blocks: &mut [&mut ConditionState],
    prior_prob: &Array2<f64>,
    rng: &mut R,
) -> usize {
    let k_count = subject.loadings.ncols();
    let mut swaps = 0;
    for a in 0..k_count {
        for b in a + 1..k_count {
            let z = &subject.inclusion;
            let log_ratio = column_log_prior(z, a, prior_prob, b) + column_log_prior(z, b, prior_prob, a)
                - column_log_prior(z, a, prior_prob, a)
                - column_log_prior(z, b, prior_prob, b);
            let p_swap = 1.0 / (1.0 + (-log_ratio).exp());
            if rng.random::<f64>() < p_swap {
                swap_columns(&mut subject.loadings, a, b);
                swap_columns(&mut subject.inclusion, a, b);
                for blk in blocks.iter_mut() {
                    swap_rows(&mut blk.factors, a, b);
                    swap_rows(&mut blk.log_vol, a, b);
                    blk.sv.swap(a, b);
                    blk.tuning.swap(a, b);
                }
                swaps += 1;
            }
        }
    }
    swaps
}

fn swap_columns<T: Clone>(m: &mut Array2<T>, a: usize, b: usize) {
    for mut row in m.rows_mut() {
        row.swap(a, b);
    }
}

fn swap_rows<T: Clone>(m: &mut Array2<T>, a: usize, b: usize) {
    for mut col in m.columns_mut() {
        col.swap(a, b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sv::{SvParams, SvTuning};
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigma2_zero_residual_posterior() {
        let y = [0.0; 10];
        let f = Array2::<f64>::zeros((1, 10));
        let (a, b) = sigma2_posterior(&y, &[0.0], &f.view(), 2.0, 1.0);
        assert_eq!((a, b), (7.0, 1.0));
        // IG(7, 1) mean = 1/6.
        assert_relative_eq!(b / (a - 1.0), 1.0 / 6.0);
    }

    #[test]
    fn sigma2_concentrates_for_standardized_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = 20_000;
        let y = Array2::from_shape_fn((1, t), |_| rng.sample::<f64, _>(StandardNormal));
        let f = Array2::<f64>::zeros((1, t));
        let l = Array2::<f64>::zeros((1, 1));
        let draws: Vec<f64> = (0..200)
            .map(|_| update_sigma2(&y, &l, &f, 2.0, 1.0, &mut rng)[0])
            .collect();
        let m = draws.iter().sum::<f64>() / 200.0;
        assert!((m - 1.0).abs() < 0.05, "{m}");
    }

    #[test]
    fn inclusion_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let st = LoadingColumnStats {
            precision: 50.0,
            mean_acc: 40.0,
        };
        for _ in 0..100 {
            assert_eq!(update_loading_entry(&st, 0.0, 1.0, &mut rng), (false, 0.0));
            assert!(update_loading_entry(&st, 1.0, 1.0, &mut rng).0);
        }
    }

    /// Brute-force marginalization of one loading on a fine grid.
    #[test]
    fn inclusion_odds_match_grid_marginalization() {
        let f = [0.7, -1.2, 0.4];
        let r = [0.5, -0.9, 0.1];
        let sigma2 = 0.6;
        let tau2 = 1.3;
        let prior = 0.35;
        let precision: f64 = f.iter().map(|v| v * v).sum::<f64>() / sigma2;
        let mean_acc: f64 = f.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / sigma2;
        let st = LoadingColumnStats {
            precision,
            mean_acc,
        };
        let p = st.inclusion_probability(prior, tau2);

        let lik = |l: f64| -> f64 {
            f.iter()
                .zip(&r)
                .map(|(fv, rv)| -0.5 * (rv - l * fv).powi(2) / sigma2)
                .sum::<f64>()
                .exp()
        };
        let (lo, hi, m) = (-15.0, 15.0, 10_000);
        let dx = (hi - lo) / m as f64;
        let slab: f64 = (0..m)
            .map(|i| {
                let l = lo + dx * (i as f64 + 0.5);
                let prior_d = (-0.5 * l * l / tau2).exp() / (2.0 * std::f64::consts::PI * tau2).sqrt();
                lik(l) * prior_d * dx
            })
            .sum();
        let spike = lik(0.0);
        let brute = prior * slab / (prior * slab + (1.0 - prior) * spike);
        assert!((p - brute).abs() < 1e-4, "{p} vs {brute}");
    }

    #[test]
    fn factor_update_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Λ = 0: posterior equals the prior N(0, Ω_t).
        let l = Array2::<f64>::zeros((4, 2));
        let (m, c) = factor_posterior(&[1.0, 2.0, 3.0, 4.0], &l, &[0.5, -0.3], &Array1::ones(4)).unwrap();
        assert_eq!(m, vec![0.0, 0.0]);
        assert_relative_eq!(c[0], 0.5f64.exp());
        assert_relative_eq!(c[3], (-0.3f64).exp());
        assert_eq!(c[1], 0.0);

        // Λ = I, Γ = εI: posterior mean tends to y_t.
        let l = Array2::<f64>::eye(3);
        let y = [0.3, -1.1, 2.0];
        let (m, _) = factor_posterior(&y, &l, &[0.0; 3], &Array1::from_elem(3, 1e-10)).unwrap();
        for (a, b) in m.iter().zip(&y) {
            assert!((a - b).abs() < 1e-8);
        }
        let _ = &mut rng;
    }

    /// Dense oracle: Σ = (Λ'Γ⁻¹Λ + Ω⁻¹)⁻¹ and m = ΣΛ'Γ⁻¹y via nalgebra's LU.
    #[test]
    fn factor_posterior_matches_dense_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, k) = (6, 3);
        let l = Array2::from_shape_fn((n, k), |_| rng.random_range(-1.0..1.0));
        let s2 = Array1::from_shape_fn(n, |_| rng.random_range(0.2..1.5));
        let h: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (m, c) = factor_posterior(&y, &l, &h, &s2).unwrap();

        let lm = nalgebra::DMatrix::from_fn(n, k, |i, j| l[[i, j]]);
        let ginv = nalgebra::DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / s2[i] } else { 0.0 });
        let oinv = nalgebra::DMatrix::from_fn(k, k, |i, j| if i == j { (-h[i]).exp() } else { 0.0 });
        let prec = lm.transpose() * &ginv * &lm + oinv;
        let cov = prec.lu().try_inverse().unwrap();
        let mean = &cov * lm.transpose() * &ginv * nalgebra::DVector::from_vec(y.clone());
        for i in 0..k {
            assert!((m[i] - mean[i]).abs() < 1e-10);
            for j in 0..k {
                assert!((c[i * k + j] - cov[(i, j)]).abs() < 1e-10);
                assert!((c[i * k + j] - c[j * k + i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn group_inclusion_conjugacy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z_on = array![[true]];
        let z_off = array![[false]];
        let zs = [&z_on, &z_on, &z_on, &z_off];
        let prior = array![[0.5]];
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| update_group_inclusion(&zs, &prior, 2.0, &mut rng)[[0, 0]])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        // Beta(4, 2): mean 2/3, variance 2/63.
        let se = (2.0f64 / 63.0 / n as f64).sqrt();
        assert!((mean - 2.0 / 3.0).abs() < 3.0 * se, "{mean}");

        let none: [&Array2<bool>; 0] = [];
        let draws: Vec<f64> = (0..n)
            .map(|_| update_group_inclusion(&none, &array![[0.25]], 4.0, &mut rng)[[0, 0]])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        // Beta(1, 3): mean 1/4, variance 3/80.
        let se = (3.0f64 / 80.0 / n as f64).sqrt();
        assert!((mean - 0.25).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn subject_sweep_keeps_spike_slab_coherent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (n, k, t) = (5, 2, 40);
        let y = Array2::from_shape_fn((n, t), |_| rng.sample::<f64, _>(StandardNormal));
        let block = ConditionState {
            factors: Array2::from_shape_fn((k, t), |_| rng.sample::<f64, _>(StandardNormal)),
            log_vol: Array2::zeros((k, t)),
            sv: vec![
                SvParams {
                    mu: 0.0,
                    phi: 0.5,
                    delta2: 0.1
                };
                k
            ],
            sigma2: Array1::ones(n),
            tuning: vec![SvTuning::default(); k],
        };
        let mut subj = SubjectState {
            loadings: Array2::from_elem((n, k), 0.3),
            inclusion: Array2::from_elem((n, k), true),
        };
        let prior = Array2::from_elem((n, k), 0.5);
        for _ in 0..50 {
            update_subject_loadings(&mut subj, &[&y], &[&block], &prior, 1.0, &mut rng);
            for (l, z) in subj.loadings.iter().zip(subj.inclusion.iter()) {
                assert_eq!(*z, *l != 0.0);
            }
        }
    }

    #[test]
    fn rescale_leaves_fit_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, k, t) = (4, 2, 10);
        let mut subj = SubjectState {
            loadings: Array2::from_shape_fn((n, k), |_| rng.random_range(-1.0..1.0)),
            inclusion: Array2::from_elem((n, k), true),
        };
        let mut blk = ConditionState {
            factors: Array2::from_shape_fn((k, t), |_| rng.random_range(-1.0..1.0)),
            log_vol: Array2::zeros((k, t)),
            sv: vec![
                SvParams {
                    mu: 0.0,
                    phi: 0.5,
                    delta2: 0.1
                };
                k
            ],
            sigma2: Array1::ones(n),
            tuning: vec![SvTuning::default(); k],
        };
        let before = subj.loadings.dot(&blk.factors);
        let mut accepted = 0;
        for _ in 0..50 {
            let mut bl = [&mut blk];
            accepted += rescale_column(&mut subj, &mut bl, 0, 0.3, 0.0, 1.0, 1.0, &mut rng) as u32;
        }
        assert!(accepted > 0);
        let after = subj.loadings.dot(&blk.factors);
        for (a, b) in before.iter().zip(after.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let hk = blk.log_vol[[0, 0]];
        assert_relative_eq!(hk, blk.sv[0].mu, epsilon = 1e-12);
    }

    #[test]
    fn relabel_follows_group_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, t) = (4, 6);
        let inclusion = array![[true, false], [true, false], [false, true], [false, true]];
        let loadings = Array2::from_shape_fn((n, 2), |(i, j)| if inclusion[[i, j]] { 1.0 + i as f64 } else { 0.0 });
        let mut subj = SubjectState { loadings, inclusion };
        let mut blk = ConditionState {
            factors: Array2::from_shape_fn((2, t), |(k, j)| (k * t + j) as f64),
            log_vol: Array2::from_shape_fn((2, t), |(k, _)| k as f64),
            sv: vec![
                SvParams { mu: 0.0, phi: 0.5, delta2: 0.1 },
                SvParams { mu: 1.0, phi: 0.6, delta2: 0.2 },
            ],
            sigma2: Array1::ones(n),
            tuning: vec![SvTuning::default(); 2],
        };
        let fit = subj.loadings.dot(&blk.factors);
        // The group map has the two ICNs in the opposite order.
        let pi0 = array![[0.01, 0.99], [0.01, 0.99], [0.99, 0.01], [0.99, 0.01]];
        let swaps = relabel_columns(&mut subj, &mut [&mut blk], &pi0, &mut rng);
        assert_eq!(swaps, 1);
        assert_eq!(subj.inclusion, array![[false, true], [false, true], [true, false], [true, false]]);
        assert_eq!(subj.loadings.dot(&blk.factors), fit);
        assert_eq!(blk.log_vol.row(0).to_vec(), vec![1.0; t]);
        assert_eq!((blk.sv[0].mu, blk.sv[1].phi), (1.0, 0.5));
        // Once the labels agree a swap has probability about 1e-8.
        assert_eq!(relabel_columns(&mut subj, &mut [&mut blk], &pi0, &mut rng), 0);
    }
}
