//! Post-sampling analysis: label/sign alignment, posterior summaries, group
//! map thresholding, model selection scores, recovery metrics, map matching
//! and lagged cross-correlation of amplitudes with a stimulus.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{backward_sub_transposed, forward_sub, log_det_from_factor, Cholesky};
use crate::loading::{factor_precision, weighted_gram};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

// ---------------------------------------------------------------------------
// Likelihood

/// Observed-data log-likelihood of one block with the factors integrated out:
/// `y_t ~ N(0, Λ Ω_t Λ' + Γ)`, evaluated through the K×K capacitance matrix.
///
/// Returns the log-likelihood and the number of time points skipped because
/// the covariance was not numerically positive definite.
pub fn observed_log_likelihood(
    y: &Array2<f64>,
    loadings: &Array2<f64>,
    log_vol: &Array2<f64>,
    sigma2: &Array1<f64>,
) -> Result<(f64, usize)> {
    let (n, k) = loadings.dim();
    let t_len = y.ncols();
    if y.nrows() != n || log_vol.dim() != (k, t_len) || sigma2.len() != n {
        return Err(Error::Dimension(format!(
            "likelihood: y {}×{}, loadings {n}×{k}, log_vol {:?}, sigma2 {}",
            y.nrows(),
            t_len,
            log_vol.dim(),
            sigma2.len()
        )));
    }
    let gram = weighted_gram(loadings, sigma2);
    let log_det_gamma: f64 = sigma2.iter().map(|v| v.ln()).sum();
    let mut prec = vec![0.0; k * k];
    let mut l = vec![0.0; k * k];
    let mut lin = vec![0.0; k];
    let mut y_t = vec![0.0; n];
    let mut h_t = vec![0.0; k];
    let mut total = 0.0;
    let mut skipped = 0;
    for t in 0..t_len {
        for i in 0..n {
            y_t[i] = y[[i, t]];
        }
        for a in 0..k {
            h_t[a] = log_vol[[a, t]];
        }
        factor_precision(&gram, loadings, sigma2, &y_t, &h_t, &mut prec, &mut lin);
        if Cholesky::factor_into(&prec, k, &mut l).is_err() {
            skipped += 1;
            continue;
        }
        let quad_gamma: f64 = y_t.iter().zip(sigma2.iter()).map(|(y, s)| y * y / s).sum();
        forward_sub(&l, k, &mut lin);
        let quad_cap: f64 = lin.iter().map(|v| v * v).sum();
        let log_det = log_det_gamma + h_t.iter().sum::<f64>() + log_det_from_factor(&l, k);
        let ll = -0.5 * (n as f64 * LN_2PI + log_det + quad_gamma - quad_cap);
        if ll.is_finite() {
            total += ll;
        } else {
            skipped += 1;
        }
    }
    let _ = backward_sub_transposed;
    Ok((total, skipped))
}

/// Number of entries in the packed lower triangle of an N×N matrix.
pub fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Add `Λ Ω_t Λ' + Γ` of every time point to `acc`, a packed lower triangle
/// (row-major, `i·(i+1)/2 + j` for `j ≤ i`) per column.
pub fn accumulate_covariance(acc: &mut Array2<f64>, loadings: &Array2<f64>, log_vol: &Array2<f64>, sigma2: &Array1<f64>) {
    let (n, k) = loadings.dim();
    debug_assert_eq!(acc.dim(), (packed_len(n), log_vol.ncols()));
    let mut w = vec![0.0; k];
    for (t, mut col) in acc.columns_mut().into_iter().enumerate() {
        for (a, wa) in w.iter_mut().enumerate() {
            *wa = log_vol[[a, t]].exp();
        }
        let mut idx = 0;
        for i in 0..n {
            for j in 0..=i {
                let mut v = if i == j { sigma2[i] } else { 0.0 };
                for (a, wa) in w.iter().enumerate() {
                    v += loadings[[i, a]] * loadings[[j, a]] * wa;
                }
                col[idx] += v;
                idx += 1;
            }
        }
    }
}

/// `Σ_t log N(y_t; 0, C_t)` with each `C_t` given as a packed lower triangle
/// column. Returns the total and the count of skipped non-PD time points.
pub fn packed_gaussian_log_likelihood(y: &Array2<f64>, covariance: &Array2<f64>) -> Result<(f64, usize)> {
    let (n, t_len) = y.dim();
    if covariance.dim() != (packed_len(n), t_len) {
        return Err(Error::Dimension(format!(
            "likelihood: y {n}×{t_len}, packed covariance {:?}",
            covariance.dim()
        )));
    }
    let mut full = vec![0.0; n * n];
    let mut l = vec![0.0; n * n];
    let mut r = vec![0.0; n];
    let mut total = 0.0;
    let mut skipped = 0;
    for t in 0..t_len {
        let mut idx = 0;
        for i in 0..n {
            for j in 0..=i {
                full[i * n + j] = covariance[[idx, t]];
                full[j * n + i] = covariance[[idx, t]];
                idx += 1;
            }
        }
        if Cholesky::factor_into(&full, n, &mut l).is_err() {
            skipped += 1;
            continue;
        }
        for i in 0..n {
            r[i] = y[[i, t]];
        }
        forward_sub(&l, n, &mut r);
        let quad: f64 = r.iter().map(|v| v * v).sum();
        total += -0.5 * (n as f64 * LN_2PI + log_det_from_factor(&l, n) + quad);
    }
    Ok((total, skipped))
}

// ---------------------------------------------------------------------------
// Alignment

/// Column permutation and sign flips mapping a draw onto a reference:
/// aligned column `j` is `signs[j] * draw[:, permutation[j]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPlan {
    pub permutation: Vec<usize>,
    pub signs: Vec<f64>,
}

impl AlignmentPlan {
    pub fn identity(k: usize) -> Self {
        AlignmentPlan {
            permutation: (0..k).collect(),
            signs: vec![1.0; k],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.permutation.iter().enumerate().all(|(j, &p)| j == p) && self.signs.iter().all(|&s| s == 1.0)
    }

    pub fn inverse(&self) -> Self {
        let k = self.permutation.len();
        let mut permutation = vec![0; k];
        let mut signs = vec![1.0; k];
        for (j, &p) in self.permutation.iter().enumerate() {
            permutation[p] = j;
            signs[p] = self.signs[j];
        }
        AlignmentPlan { permutation, signs }
    }

    /// The plan equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &AlignmentPlan) -> Self {
        let permutation = next.permutation.iter().map(|&p| self.permutation[p]).collect();
        let signs = next
            .permutation
            .iter()
            .zip(&next.signs)
            .map(|(&p, &s)| s * self.signs[p])
            .collect();
        AlignmentPlan { permutation, signs }
    }

    /// Permute and flip the columns of an N×K matrix.
    pub fn apply_columns(&self, m: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(m.dim());
        for (j, (&p, &s)) in self.permutation.iter().zip(&self.signs).enumerate() {
            out.column_mut(j).assign(&(&m.column(p) * s));
        }
        out
    }

    /// Permute the columns of a matrix without sign changes (indicators,
    /// inclusion probabilities).
    pub fn permute_columns<T: Clone + Default>(&self, m: &Array2<T>) -> Array2<T> {
        let (n, k) = m.dim();
        Array2::from_shape_fn((n, k), |(i, j)| m[[i, self.permutation[j]]].clone())
    }

    /// Permute and flip the rows of a K×T factor path.
    pub fn apply_rows(&self, m: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(m.dim());
        for (j, (&p, &s)) in self.permutation.iter().zip(&self.signs).enumerate() {
            out.row_mut(j).assign(&(&m.row(p) * s));
        }
        out
    }

    /// Permute the rows of a K×T path without sign changes (log-volatilities).
    pub fn permute_rows(&self, m: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(m.dim());
        for (j, &p) in self.permutation.iter().enumerate() {
            out.row_mut(j).assign(&m.row(p));
        }
        out
    }

    pub fn permute<T: Clone>(&self, v: &[T]) -> Vec<T> {
        self.permutation.iter().map(|&p| v[p].clone()).collect()
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Greedy assignment on a K×K score table (rows: draw columns, cols:
/// reference columns): highest remaining score first, ties to lower reference
/// index then lower draw index. Returns `assignment[ref] = draw`.
fn greedy_assign(score: &Array2<f64>) -> Vec<usize> {
    let k = score.nrows();
    let mut used_draw = vec![false; k];
    let mut used_ref = vec![false; k];
    let mut out = vec![usize::MAX; k];
    for _ in 0..k {
        let mut best: Option<(usize, usize, f64)> = None;
        for j in 0..k {
            if used_ref[j] {
                continue;
            }
            for i in 0..k {
                if used_draw[i] {
                    continue;
                }
                let s = score[[i, j]];
                if best.is_none_or(|(_, _, b)| s > b) {
                    best = Some((i, j, s));
                }
            }
        }
        let (i, j, _) = best.expect("remaining pair");
        used_draw[i] = true;
        used_ref[j] = true;
        out[j] = i;
    }
    out
}

/// Flip a column so its largest-magnitude entry is positive.
pub fn canonical_sign(col: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for &v in col {
        if v.abs() > best.abs() {
            best = v;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Apply the canonical sign to every column of a reference matrix.
pub fn canonicalize(reference: &Array2<f64>) -> Array2<f64> {
    let mut out = reference.clone();
    for mut col in out.columns_mut() {
        let s = canonical_sign(&col.to_vec());
        col.mapv_inplace(|v| v * s);
    }
    out
}

/// Plan aligning `draw` (N×K) to `reference` (N×K): permutation by greedy
/// absolute correlation, then each column's sign chosen to agree with its
/// reference column (falling back to a positive largest entry when the two are
/// orthogonal).
pub fn plan_alignment(draw: &Array2<f64>, reference: &Array2<f64>) -> AlignmentPlan {
    let k = draw.ncols();
    let cols: Vec<Vec<f64>> = (0..k).map(|i| draw.column(i).to_vec()).collect();
    let refs: Vec<Vec<f64>> = (0..k).map(|j| reference.column(j).to_vec()).collect();
    let score = Array2::from_shape_fn((k, k), |(i, j)| pearson(&cols[i], &refs[j]).abs());
    let permutation = greedy_assign(&score);
    let signs = permutation
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let dot: f64 = cols[p].iter().zip(&refs[j]).map(|(a, b)| a * b).sum();
            if dot > 0.0 {
                1.0
            } else if dot < 0.0 {
                -1.0
            } else {
                canonical_sign(&cols[p])
            }
        })
        .collect();
    AlignmentPlan { permutation, signs }
}

/// Alignment of several subjects sharing column labels: one permutation from
/// the stacked loadings, then per-subject signs against each subject's own
/// reference.
pub fn plan_alignment_joint(draws: &[&Array2<f64>], references: &[&Array2<f64>]) -> Vec<AlignmentPlan> {
    assert_eq!(draws.len(), references.len());
    let stack = |ms: &[&Array2<f64>]| {
        let views: Vec<_> = ms.iter().map(|m| m.view()).collect();
        ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths")
    };
    let shared = plan_alignment(&stack(draws), &stack(references));
    draws
        .iter()
        .zip(references)
        .map(|(d, r)| {
            let signs = shared
                .permutation
                .iter()
                .enumerate()
                .map(|(j, &p)| {
                    let dot = d.column(p).dot(&r.column(j));
                    if dot > 0.0 {
                        1.0
                    } else if dot < 0.0 {
                        -1.0
                    } else {
                        canonical_sign(&d.column(p).to_vec())
                    }
                })
                .collect();
            AlignmentPlan {
                permutation: shared.permutation.clone(),
                signs,
            }
        })
        .collect()
}

/// One posterior draw of a subject's loadings with the quantities that must
/// move with its columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkedDraw {
    pub loadings: Array2<f64>,
    /// Per condition, K×T.
    pub factors: Vec<Array2<f64>>,
    /// Per condition, K×T.
    pub log_vol: Vec<Array2<f64>>,
    /// Per condition, length K.
    pub mu: Vec<Vec<f64>>,
}

impl LinkedDraw {
    pub fn apply(&self, plan: &AlignmentPlan) -> LinkedDraw {
        LinkedDraw {
            loadings: plan.apply_columns(&self.loadings),
            factors: self.factors.iter().map(|f| plan.apply_rows(f)).collect(),
            log_vol: self.log_vol.iter().map(|h| plan.permute_rows(h)).collect(),
            mu: self.mu.iter().map(|m| plan.permute(m)).collect(),
        }
    }
}

/// Align every draw to `reference`; returns the aligned draws and their plans.
pub fn align_draws(draws: &[LinkedDraw], reference: &Array2<f64>) -> (Vec<LinkedDraw>, Vec<AlignmentPlan>) {
    draws
        .iter()
        .map(|d| {
            let plan = plan_alignment(&d.loadings, reference);
            (d.apply(&plan), plan)
        })
        .unzip()
}

// ---------------------------------------------------------------------------
// Summaries

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Median,
    Mean,
}

impl std::str::FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(Estimator::Median),
            "mean" => Ok(Estimator::Mean),
            other => Err(Error::validation(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntrySummary {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Point estimate and equal-tailed credible interval of one scalar.
pub fn posterior_summary(draws: &[f64], estimator: Estimator, level: f64) -> Result<EntrySummary> {
    if draws.len() < 2 {
        return Err(Error::validation(format!(
            "posterior summary needs at least 2 draws, got {}",
            draws.len()
        )));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let tail = 0.5 * (1.0 - level);
    let estimate = match estimator {
        Estimator::Median => quantile_sorted(&sorted, 0.5),
        Estimator::Mean => draws.iter().sum::<f64>() / draws.len() as f64,
    };
    Ok(EntrySummary {
        estimate,
        lower: quantile_sorted(&sorted, tail),
        upper: quantile_sorted(&sorted, 1.0 - tail),
    })
}

/// Summaries of every entry of a draw table stored row-per-draw.
pub fn summarize_table(
    draws: &[f64],
    entries: usize,
    estimator: Estimator,
    level: f64,
) -> Result<Vec<EntrySummary>> {
    if entries == 0 {
        return Ok(Vec::new());
    }
    let count = draws.len() / entries;
    (0..entries)
        .map(|e| {
            let col: Vec<f64> = (0..count).map(|d| draws[d * entries + e]).collect();
            posterior_summary(&col, estimator, level)
        })
        .collect()
}

/// Binary group map: region `n` belongs to map `k` iff π̂ ≥ threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMap {
    pub probabilities: Array2<f64>,
    pub included: Array2<bool>,
    pub threshold: f64,
}

impl GroupMap {
    /// Region sets, one per map.
    pub fn sets(&self) -> Vec<BTreeSet<usize>> {
        self.included
            .columns()
            .into_iter()
            .map(|c| c.iter().enumerate().filter(|(_, v)| **v).map(|(i, _)| i).collect())
            .collect()
    }
}

pub fn threshold_group_map(probabilities: &Array2<f64>, threshold: f64) -> Result<GroupMap> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::validation(format!("threshold must lie in (0,1), got {threshold}")));
    }
    Ok(GroupMap {
        probabilities: probabilities.clone(),
        included: probabilities.mapv(|p| p >= threshold),
        threshold,
    })
}

// ---------------------------------------------------------------------------
// Model selection

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub aic: f64,
    pub bic: f64,
    pub dic: f64,
    /// Log-likelihood at the posterior-mean plug-in.
    pub plugin_log_likelihood: f64,
    pub mean_deviance: f64,
    /// Effective number of parameters of the DIC (mean deviance minus plug-in deviance).
    pub p_dic: f64,
    pub parameters: usize,
    pub observations: usize,
    pub plugin: PlugIn,
}

/// Which posterior mean the plug-in likelihood is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlugIn {
    /// Mean of the implied covariance `Λ Ω_t Λ' + Γ` at every time point.
    Covariance,
    /// Mean unit direction and mean contributed variance of every column.
    Columns,
}

/// Free-parameter count: nonzero loadings plus σ² and (μ, φ, δ²) for every
/// (condition, subject); log-volatility paths are latent and not counted.
pub fn parameter_count(
    nonzero_loadings: usize,
    regions: usize,
    factors: usize,
    conditions: usize,
    subjects: usize,
) -> usize {
    nonzero_loadings + conditions * subjects * (regions + 3 * factors)
}

/// AIC and BIC at the plug-in, DIC as `2·mean(D) − D(θ̂)`.
pub fn model_selection_scores(
    deviance_draws: &[f64],
    plugin_log_likelihood: f64,
    parameters: usize,
    observations: usize,
) -> Result<ModelScores> {
    if deviance_draws.is_empty() {
        return Err(Error::validation("model selection needs stored deviance draws"));
    }
    let mean_dev = deviance_draws.iter().sum::<f64>() / deviance_draws.len() as f64;
    let plugin_dev = -2.0 * plugin_log_likelihood;
    let p = parameters as f64;
    Ok(ModelScores {
        aic: plugin_dev + 2.0 * p,
        bic: plugin_dev + p * (observations as f64).ln(),
        dic: 2.0 * mean_dev - plugin_dev,
        plugin_log_likelihood,
        mean_deviance: mean_dev,
        p_dic: mean_dev - plugin_dev,
        parameters,
        observations,
        plugin: PlugIn::Columns,
    })
}

// ---------------------------------------------------------------------------
// Metrics

pub fn mae(estimate: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    if estimate.dim() != truth.dim() {
        return Err(Error::Dimension(format!(
            "mae: {:?} vs {:?}",
            estimate.dim(),
            truth.dim()
        )));
    }
    let n = estimate.len() as f64;
    Ok(estimate.iter().zip(truth.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

/// `sqrt(Σ_t ‖Λ̂ f̂_t − Λ f_t‖² / T)` for N×K loadings and K×T factors.
pub fn rmse_reconstruction(
    loadings_hat: &Array2<f64>,
    factors_hat: &Array2<f64>,
    loadings: &Array2<f64>,
    factors: &Array2<f64>,
) -> Result<f64> {
    if loadings_hat.dim() != loadings.dim()
        || factors_hat.dim() != factors.dim()
        || loadings.ncols() != factors.nrows()
    {
        return Err(Error::Dimension("rmse: shapes are not conformable".into()));
    }
    let est = loadings_hat.dot(factors_hat);
    let tru = loadings.dot(factors);
    rmse_of_fits(&est, &tru)
}

/// Same metric on already-reconstructed N×T signals.
pub fn rmse_of_fits(estimate: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    if estimate.dim() != truth.dim() {
        return Err(Error::Dimension("rmse: shapes differ".into()));
    }
    let t = estimate.ncols() as f64;
    let ss: f64 = estimate.iter().zip(truth.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((ss / t).sqrt())
}

// ---------------------------------------------------------------------------
// Map matching

/// |a ∩ b| / |a ∪ b|, defined as 0 when both are empty.
pub fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMatching {
    /// `(index in A, index in B, similarity)`, ordered by index in A.
    pub pairs: Vec<(usize, usize, f64)>,
    pub mean: f64,
    pub sd: f64,
    /// Full K×K similarity table, rows indexed by A.
    pub table: Vec<Vec<f64>>,
}

/// One-to-one greedy matching of two equally sized lists of region sets.
pub fn match_maps(a: &[BTreeSet<usize>], b: &[BTreeSet<usize>]) -> Result<MapMatching> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "map lists differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let k = a.len();
    if k == 0 {
        return Err(Error::validation("no maps to match"));
    }
    let table: Vec<Vec<f64>> = a.iter().map(|sa| b.iter().map(|sb| jaccard(sa, sb)).collect()).collect();
    // greedy_assign expects rows = draw, cols = reference; here rows = B, cols = A.
    let score = Array2::from_shape_fn((k, k), |(i, j)| table[j][i]);
    let assign = greedy_assign(&score);
    let pairs: Vec<(usize, usize, f64)> = assign.iter().enumerate().map(|(ia, &ib)| (ia, ib, table[ia][ib])).collect();
    let sims: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    let mean = sims.iter().sum::<f64>() / k as f64;
    let sd = if k > 1 {
        (sims.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(MapMatching { pairs, mean, sd, table })
}

// ---------------------------------------------------------------------------
// Lagged cross-correlation

/// Pearson correlation between `stimulus[t]` and `amplitude[t + lag]` for
/// `lag = 1..=max_lag`; returns the lag with the largest correlation and the
/// whole curve (index 0 is lag 1).
pub fn lagged_crosscorr(amplitude: &[f64], stimulus: &[f64], max_lag: usize) -> Result<(usize, Vec<f64>)> {
    let t = amplitude.len();
    if stimulus.len() != t {
        return Err(Error::Dimension(format!(
            "amplitude has {t} points, stimulus {}",
            stimulus.len()
        )));
    }
    if max_lag == 0 || max_lag + 2 > t {
        return Err(Error::validation(format!("max lag {max_lag} must be in 1..{}", t.saturating_sub(1))));
    }
    let constant = |x: &[f64]| x.iter().all(|v| *v == x[0]);
    if constant(amplitude) || constant(stimulus) {
        return Err(Error::validation("lagged correlation of a constant series is undefined"));
    }
    let curve: Vec<f64> = (1..=max_lag).map(|lag| pearson(&stimulus[..t - lag], &amplitude[lag..])).collect();
    let mut best = 0;
    for (i, &c) in curve.iter().enumerate() {
        if c > curve[best] {
            best = i;
        }
    }
    Ok((best + 1, curve))
}
