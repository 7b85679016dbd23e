//! Domain types shared by every sampler block.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sv::{SvParams, SvTuning};

/// Problem size. Condition 0 is rest whenever the dataset has one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    pub regions: usize,
    pub factors: usize,
    pub subjects: usize,
    /// Time points per condition, indexed by `g`.
    pub time_lengths: Vec<usize>,
}

impl Dimensions {
    pub fn conditions(&self) -> usize {
        self.time_lengths.len()
    }

    /// Flat index of the (condition, subject) block.
    #[inline]
    pub fn block(&self, g: usize, s: usize) -> usize {
        g * self.subjects + s
    }

    pub fn blocks(&self) -> usize {
        self.conditions() * self.subjects
    }

    /// Total time points summed over subjects and conditions.
    pub fn total_time(&self) -> usize {
        self.subjects * self.time_lengths.iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.regions == 0 || self.factors == 0 || self.subjects == 0 {
            return Err(Error::validation("all counts must be at least 1"));
        }
        if self.factors >= self.regions {
            return Err(Error::validation(format!(
                "K < N required (K = {}, N = {})",
                self.factors, self.regions
            )));
        }
        if self.time_lengths.is_empty() {
            return Err(Error::validation("at least one condition required"));
        }
        if let Some(g) = self.time_lengths.iter().position(|&t| t == 0) {
            return Err(Error::validation(format!("condition {g} has no time points")));
        }
        Ok(())
    }
}

/// Detrended region series for every (condition, subject).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// `series[g][s]` is N×T_g, time as the trailing index.
    pub series: Vec<Vec<Array2<f64>>>,
    pub condition_names: Vec<String>,
    pub subject_ids: Vec<String>,
    /// Whether condition 0 is a resting-state condition.
    pub has_rest: bool,
}

impl Dataset {
    /// Build a dataset with generated names, validating shapes.
    pub fn from_series(series: Vec<Vec<Array2<f64>>>, has_rest: bool) -> Result<Self> {
        let conditions = series.len();
        let subjects = series.first().map_or(0, Vec::len);
        let condition_names = (0..conditions)
            .map(|g| {
                if g == 0 && has_rest {
                    "rest".to_string()
                } else {
                    format!("task{g}")
                }
            })
            .collect();
        let subject_ids = (0..subjects).map(|s| format!("s{}", s + 1)).collect();
        let ds = Dataset {
            series,
            condition_names,
            subject_ids,
            has_rest,
        };
        ds.check()?;
        Ok(ds)
    }

    pub fn regions(&self) -> usize {
        self.series
            .first()
            .and_then(|c| c.first())
            .map_or(0, |m| m.nrows())
    }

    pub fn subjects(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    pub fn time_lengths(&self) -> Vec<usize> {
        self.series
            .iter()
            .map(|c| c.first().map_or(0, |m| m.ncols()))
            .collect()
    }

    pub fn dims(&self, factors: usize) -> Dimensions {
        Dimensions {
            regions: self.regions(),
            factors,
            subjects: self.subjects(),
            time_lengths: self.time_lengths(),
        }
    }

    #[inline]
    pub fn y(&self, g: usize, s: usize) -> &Array2<f64> {
        &self.series[g][s]
    }

    /// Shape and finiteness checks.
    pub fn check(&self) -> Result<()> {
        if self.series.is_empty() || self.series[0].is_empty() {
            return Err(Error::validation("no series listed"));
        }
        let n = self.regions();
        let s_count = self.subjects();
        for (g, cond) in self.series.iter().enumerate() {
            if cond.len() != s_count {
                return Err(Error::validation(format!(
                    "condition {g} has {} subjects, expected {s_count}",
                    cond.len()
                )));
            }
            let t = cond[0].ncols();
            for (s, y) in cond.iter().enumerate() {
                if y.nrows() != n {
                    return Err(Error::validation(format!(
                        "region count mismatch: condition {g}, subject {s} has {} regions, expected {n}",
                        y.nrows()
                    )));
                }
                if y.ncols() != t {
                    return Err(Error::validation(format!(
                        "condition {g}: subject {s} has {} time points, expected {t}",
                        y.ncols()
                    )));
                }
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::validation(format!(
                        "non-finite value in condition {g}, subject {s}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Variance of all observed values pooled together.
    pub fn pooled_variance(&self) -> f64 {
        let mut n = 0usize;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for y in self.series.iter().flatten() {
            for &v in y.iter() {
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
        if n < 2 {
            return 1.0;
        }
        let mean = sum / n as f64;
        (sq - n as f64 * mean * mean) / (n as f64 - 1.0)
    }
}

fn default_mu_var() -> f64 {
    1.0
}
fn default_phi_a() -> f64 {
    20.0
}
fn default_phi_b() -> f64 {
    2.5
}
fn default_delta_scale() -> f64 {
    0.5
}
fn default_sigma_shape() -> f64 {
    2.0
}
fn default_one() -> f64 {
    1.0
}
fn default_concentration() -> f64 {
    2.0
}
fn default_alpha1() -> f64 {
    2.0
}

/// Fixed prior constants.
///
/// Serialized names follow the model notation (`B_mu`, `A`, `S2`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Prior mean of μ.
    #[serde(default)]
    pub b_mu: f64,
    /// Prior variance of μ.
    #[serde(rename = "B_mu", default = "default_mu_var")]
    pub big_b_mu: f64,
    /// Beta shapes for (φ+1)/2.
    #[serde(default = "default_phi_a")]
    pub a_phi: f64,
    #[serde(default = "default_phi_b")]
    pub b_phi: f64,
    /// δ² ~ Gamma(1/2, rate 1/(2 B_delta)).
    #[serde(rename = "B_delta", default = "default_delta_scale")]
    pub big_b_delta: f64,
    /// Inverse-gamma shape for σ².
    #[serde(default = "default_sigma_shape")]
    pub c_sigma: f64,
    /// Inverse-gamma rate for σ². `None` matches the prior mean to the pooled
    /// data variance when a run is configured.
    #[serde(default)]
    pub d_sigma: Option<f64>,
    /// Slab variance for loadings.
    #[serde(default = "default_one")]
    pub tau2_load: f64,
    /// Beta concentration for group inclusion probabilities.
    #[serde(default = "default_concentration")]
    pub c: f64,
    /// Prior mean map for Π₀ (N rows of K); `None` means 0.5 everywhere.
    #[serde(rename = "A", default)]
    pub a_map: Option<Vec<Vec<f64>>>,
    /// Beta shapes for the regression inclusion rate θ.
    #[serde(default = "default_one")]
    pub a: f64,
    #[serde(default = "default_one")]
    pub b: f64,
    /// τ² ~ IG(1/2, S2/2) in the behavioral regression.
    #[serde(rename = "S2", default = "default_one")]
    pub s2: f64,
    /// σ²_g ~ IG(alpha1, alpha2).
    #[serde(default = "default_alpha1")]
    pub alpha1: f64,
    #[serde(default = "default_one")]
    pub alpha2: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl Hyperparameters {
    pub fn sigma_rate(&self) -> f64 {
        self.d_sigma.unwrap_or(1.0)
    }

    /// Fill in the empirical σ² rate: IG(c, d) has mean d/(c-1), matched to
    /// the pooled variance.
    pub fn resolved_for(&self, data: &Dataset) -> Self {
        let mut h = self.clone();
        if h.d_sigma.is_none() {
            let v = data.pooled_variance();
            h.d_sigma = Some((h.c_sigma - 1.0).max(1e-3) * v);
        }
        h
    }

    pub fn prior_mean_map(&self, regions: usize, factors: usize) -> Result<Array2<f64>> {
        match &self.a_map {
            None => Ok(Array2::from_elem((regions, factors), 0.5)),
            Some(rows) => {
                if rows.len() != regions || rows.iter().any(|r| r.len() != factors) {
                    return Err(Error::Dimension(format!(
                        "A must be {regions}×{factors}"
                    )));
                }
                Ok(Array2::from_shape_fn((regions, factors), |(n, k)| rows[n][k]))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("B_mu", self.big_b_mu),
            ("a_phi", self.a_phi),
            ("b_phi", self.b_phi),
            ("B_delta", self.big_b_delta),
            ("c_sigma", self.c_sigma),
            ("tau2_load", self.tau2_load),
            ("c", self.c),
            ("a", self.a),
            ("b", self.b),
            ("S2", self.s2),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::validation(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(d) = self.d_sigma {
            if !(d > 0.0) {
                return Err(Error::validation(format!("d_sigma must be positive, got {d}")));
            }
        }
        if let Some(rows) = &self.a_map {
            for v in rows.iter().flatten() {
                if !(*v > 0.0 && *v < 1.0) {
                    return Err(Error::validation(format!("A entries must lie in (0,1), got {v}")));
                }
            }
        }
        Ok(())
    }
}

/// Loadings and membership indicators of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectState {
    /// N×K.
    pub loadings: Array2<f64>,
    /// N×K, `true` when the region belongs to the ICN.
    pub inclusion: Array2<bool>,
}

/// Latent paths and per-condition parameters of one (condition, subject) block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionState {
    /// K×T latent factors.
    pub factors: Array2<f64>,
    /// K×T log-volatilities.
    pub log_vol: Array2<f64>,
    /// Per-factor AR(1) parameters.
    pub sv: Vec<SvParams>,
    /// Idiosyncratic variances, length N.
    pub sigma2: Array1<f64>,
    /// Proposal scales for the Metropolis steps of each factor.
    pub tuning: Vec<SvTuning>,
}

/// Complete current value of every latent variable of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub subjects: Vec<SubjectState>,
    /// Indexed by `Dimensions::block(g, s)`.
    pub blocks: Vec<ConditionState>,
    /// N×K group inclusion probabilities.
    pub group_prob: Array2<f64>,
}

impl ChainState {
    #[inline]
    pub fn block(&self, dims: &Dimensions, g: usize, s: usize) -> &ConditionState {
        &self.blocks[dims.block(g, s)]
    }
}

/// List every violated state invariant; empty when the state is valid.
pub fn validate_state(state: &ChainState, dims: &Dimensions) -> Vec<String> {
    let mut out = Vec::new();
    let (n, k) = (dims.regions, dims.factors);
    if state.subjects.len() != dims.subjects {
        out.push(format!(
            "expected {} subjects, found {}",
            dims.subjects,
            state.subjects.len()
        ));
    }
    for (s, subj) in state.subjects.iter().enumerate() {
        if subj.loadings.dim() != (n, k) || subj.inclusion.dim() != (n, k) {
            out.push(format!("subject {s}: loading shape is not {n}×{k}"));
            continue;
        }
        for ((idx, &l), &z) in subj.loadings.indexed_iter().zip(subj.inclusion.iter()) {
            if !z && l != 0.0 {
                out.push(format!(
                    "nonzero loading with zero indicator at subject {s}, entry {idx:?}"
                ));
            }
            if !l.is_finite() {
                out.push(format!("non-finite loading at subject {s}, entry {idx:?}"));
            }
        }
    }
    if state.blocks.len() != dims.blocks() {
        out.push(format!(
            "expected {} condition blocks, found {}",
            dims.blocks(),
            state.blocks.len()
        ));
    }
    for (b, blk) in state.blocks.iter().enumerate() {
        let (g, s) = (b / dims.subjects.max(1), b % dims.subjects.max(1));
        let t = dims.time_lengths.get(g).copied().unwrap_or(0);
        if blk.factors.dim() != (k, t) || blk.log_vol.dim() != (k, t) {
            out.push(format!("block ({g},{s}): path shape is not {k}×{t}"));
        }
        if blk.sv.len() != k {
            out.push(format!("block ({g},{s}): expected {k} SV parameter sets"));
        }
        for (j, p) in blk.sv.iter().enumerate() {
            if !(p.phi.abs() < 1.0) {
                out.push(format!(
                    "non-stationary AR coefficient at block ({g},{s}), factor {j}: phi = {}",
                    p.phi
                ));
            }
            if !(p.delta2 > 0.0) || !p.delta2.is_finite() {
                out.push(format!(
                    "non-positive variance delta2 at block ({g},{s}), factor {j}"
                ));
            }
            if !p.mu.is_finite() {
                out.push(format!("non-finite mu at block ({g},{s}), factor {j}"));
            }
        }
        if blk.sigma2.len() != n {
            out.push(format!("block ({g},{s}): expected {n} idiosyncratic variances"));
        }
        if blk.sigma2.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            out.push(format!("non-positive variance sigma2 at block ({g},{s})"));
        }
        if blk.factors.iter().chain(blk.log_vol.iter()).any(|v| !v.is_finite()) {
            out.push(format!("non-finite latent path at block ({g},{s})"));
        }
    }
    if state.group_prob.dim() != (n, k) {
        out.push(format!("group inclusion map is not {n}×{k}"));
    } else if state.group_prob.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        out.push("group inclusion probability outside (0,1)".to_string());
    }
    out
}

/// `Λ Ω Λ' + Γ` for diagonal `Ω` (length K) and `Γ` (length N).
pub fn reconstruct_covariance(
    loadings: &Array2<f64>,
    omega: &[f64],
    gamma: &[f64],
) -> Result<Array2<f64>> {
    let (n, k) = loadings.dim();
    if omega.len() != k || gamma.len() != n {
        return Err(Error::Dimension(format!(
            "loadings {n}×{k} with {} factor variances and {} idiosyncratic variances",
            omega.len(),
            gamma.len()
        )));
    }
    let scaled = loadings * &Array1::from(omega.to_vec());
    let mut cov = scaled.dot(&loadings.t());
    for i in 0..n {
        cov[[i, i]] += gamma[i];
    }
    Ok(cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn tiny_state(dims: &Dimensions) -> ChainState {
        let (n, k) = (dims.regions, dims.factors);
        let subjects = (0..dims.subjects)
            .map(|_| SubjectState {
                loadings: Array2::zeros((n, k)),
                inclusion: Array2::from_elem((n, k), false),
            })
            .collect();
        let mut blocks = Vec::new();
        for &t in &dims.time_lengths {
            for _ in 0..dims.subjects {
                blocks.push(ConditionState {
                    factors: Array2::zeros((k, t)),
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
                });
            }
        }
        ChainState {
            subjects,
            blocks,
            group_prob: Array2::from_elem((n, k), 0.5),
        }
    }

    fn dims() -> Dimensions {
        Dimensions {
            regions: 3,
            factors: 2,
            subjects: 2,
            time_lengths: vec![4, 5],
        }
    }

    #[test]
    fn vacuous_state_is_valid() {
        let d = dims();
        assert!(validate_state(&tiny_state(&d), &d).is_empty());
    }

    #[test]
    fn loading_without_indicator_is_reported() {
        let d = dims();
        let mut st = tiny_state(&d);
        st.subjects[0].loadings[[0, 0]] = 0.5;
        let report = validate_state(&st, &d);
        assert_eq!(report.len(), 1);
        assert!(report[0].contains("nonzero loading with zero indicator"));
    }

    #[test]
    fn unit_phi_is_reported() {
        let d = dims();
        let mut st = tiny_state(&d);
        st.blocks[1].sv[0].phi = 1.0;
        let report = validate_state(&st, &d);
        assert!(report.iter().any(|m| m.contains("non-stationary AR coefficient")));
    }

    #[test]
    fn dimension_rules() {
        let mut d = dims();
        assert!(d.validate().is_ok());
        d.factors = 3;
        let err = d.validate().unwrap_err().to_string();
        assert!(err.contains("K < N required"));
    }

    #[test]
    fn covariance_hand_cases() {
        let zero = Array2::<f64>::zeros((3, 2));
        let cov = reconstruct_covariance(&zero, &[1.0, 2.0], &[0.5, 0.6, 0.7]).unwrap();
        assert_eq!(cov, Array2::from_diag(&array![0.5, 0.6, 0.7]));

        let l = array![[1.0], [1.0]];
        let cov = reconstruct_covariance(&l, &[1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(cov, array![[2.0, 1.0], [1.0, 2.0]]);

        assert!(reconstruct_covariance(&l, &[1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn covariance_matches_rank_one_sum_and_low_rank() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (n, k) = (6, 3);
        let l = Array2::from_shape_fn((n, k), |_| rng.random_range(-1.0..1.0));
        let h: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let omega: Vec<f64> = h.iter().map(|v: &f64| v.exp()).collect();
        let gamma: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let cov = reconstruct_covariance(&l, &omega, &gamma).unwrap();
        let mut direct = Array2::<f64>::zeros((n, n));
        for kk in 0..k {
            for i in 0..n {
                for j in 0..n {
                    direct[[i, j]] += h[kk].exp() * l[[i, kk]] * l[[j, kk]];
                }
            }
        }
        for i in 0..n {
            direct[[i, i]] += gamma[i];
        }
        for (a, b) in cov.iter().zip(direct.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
        // Symmetric, positive definite, and rank(Σ - Γ) ≤ K.
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| cov[[i, j]]);
        assert!(m.clone().cholesky().is_some());
        let mut low = m.clone();
        for i in 0..n {
            low[(i, i)] -= gamma[i];
        }
        let mut sv: Vec<f64> = low.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(sv[k..].iter().all(|v| *v < 1e-10));
    }

    #[test]
    fn hyperparameter_defaults() {
        let h = Hyperparameters::default();
        assert_eq!(h.big_b_mu, 1.0);
        assert_eq!(h.a_phi, 20.0);
        assert_eq!(h.b_phi, 2.5);
        assert_eq!(h.big_b_delta, 0.5);
        assert_eq!(h.c_sigma, 2.0);
        assert!(h.validate().is_ok());
        let json = serde_json::to_string(&h).unwrap();
        assert!(json.contains("\"B_mu\""));
    }
}
