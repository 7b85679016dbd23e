//! Task-effect statistics on posterior μ draws and the sparse behavioral
//! regression sampler.
//!
//! The activation of ICN `k` for subject `s` under a task is the two-sample KS
//! distance between the task and rest posterior draws of μ. Behavioral scores
//! are regressed on these distances with a spike-and-slab prior:
//! `z = Δβ + e`, `e ~ N(0, σ²I)`, `β_k | π_k=1 ~ N(0, σ²τ²)`, `π_k ~ Bern(θ)`.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::loading::{clamp_open_unit, draw_inverse_gamma};
use crate::posthoc::quantile_sorted;
use crate::types::Hyperparameters;

/// Two-sample Kolmogorov–Smirnov distance `sup_x |F_a(x) − F_b(x)|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::validation("KS statistic needs two non-empty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    Ok(ks_sorted(&a, &b))
}

/// KS distance of two already sorted samples.
pub fn ks_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic two-sample critical value `c(α)·sqrt((m+n)/(mn))`.
pub fn ks_critical_value(alpha: f64, m: usize, n: usize) -> f64 {
    let c = (-(0.5 * alpha).ln() / 2.0).sqrt();
    c * ((m + n) as f64 / (m as f64 * n as f64)).sqrt()
}

/// When a KS distance counts as an activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum ThresholdPolicy {
    /// Asymptotic KS critical value at this level for the draw counts used.
    Asymptotic(f64),
    Fixed(f64),
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::Asymptotic(0.05)
    }
}

impl ThresholdPolicy {
    pub fn threshold(&self, m: usize, n: usize) -> f64 {
        match *self {
            ThresholdPolicy::Asymptotic(alpha) => ks_critical_value(alpha, m, n),
            ThresholdPolicy::Fixed(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationLabel {
    None,
    Excited,
    Inhibited,
}

/// KS distances, mean-difference signs and labels, all S×K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEffect {
    pub delta: Array2<f64>,
    pub sign: Array2<i8>,
    pub label: Array2<ActivationLabel>,
    pub threshold: Array2<f64>,
}

impl TaskEffect {
    /// Fractions of (none, excited, inhibited) labels.
    pub fn label_proportions(&self) -> (f64, f64, f64) {
        let n = self.label.len().max(1) as f64;
        let count = |l| self.label.iter().filter(|x| **x == l).count() as f64 / n;
        (
            count(ActivationLabel::None),
            count(ActivationLabel::Excited),
            count(ActivationLabel::Inhibited),
        )
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Task effects from posterior μ draws indexed `[s][k]`.
pub fn compute_task_effects(
    rest: &[Vec<Vec<f64>>],
    task: &[Vec<Vec<f64>>],
    policy: ThresholdPolicy,
) -> Result<TaskEffect> {
    if rest.is_empty() {
        return Err(Error::validation("task effects require rest"));
    }
    if rest.len() != task.len() {
        return Err(Error::Dimension(format!(
            "rest draws for {} subjects, task draws for {}",
            rest.len(),
            task.len()
        )));
    }
    let s_count = rest.len();
    let k = rest[0].len();
    let mut delta = Array2::zeros((s_count, k));
    let mut sign = Array2::zeros((s_count, k));
    let mut label = Array2::from_elem((s_count, k), ActivationLabel::None);
    let mut threshold = Array2::zeros((s_count, k));
    for s in 0..s_count {
        if rest[s].len() != k || task[s].len() != k {
            return Err(Error::Dimension(format!("subject {s}: expected {k} factors")));
        }
        for j in 0..k {
            let (r, t) = (&rest[s][j], &task[s][j]);
            if r.is_empty() {
                return Err(Error::validation("task effects require rest"));
            }
            let d = ks_statistic(t, r)?;
            let diff = mean(t) - mean(r);
            let sg: i8 = if diff > 0.0 {
                1
            } else if diff < 0.0 {
                -1
            } else {
                0
            };
            let thr = policy.threshold(t.len(), r.len());
            delta[[s, j]] = d;
            sign[[s, j]] = sg;
            threshold[[s, j]] = thr;
            label[[s, j]] = if d < thr || sg == 0 {
                ActivationLabel::None
            } else if sg > 0 {
                ActivationLabel::Excited
            } else {
                ActivationLabel::Inhibited
            };
        }
    }
    Ok(TaskEffect {
        delta,
        sign,
        label,
        threshold,
    })
}

// ---------------------------------------------------------------------------
// Sparse regression

/// Current value of the regression block for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionState {
    pub beta: Vec<f64>,
    pub pi: Vec<bool>,
    pub theta: f64,
    pub tau2: f64,
    pub sigma2: f64,
}

impl RegressionState {
    pub fn initial(k: usize) -> Self {
        RegressionState {
            beta: vec![0.0; k],
            pi: vec![true; k],
            theta: 0.5,
            tau2: 1.0,
            sigma2: 1.0,
        }
    }

    /// Draw every quantity from the prior.
    pub fn from_prior<R: Rng + ?Sized>(k: usize, hyper: &Hyperparameters, rng: &mut R) -> Self {
        let theta = clamp_open_unit(Beta::new(hyper.a, hyper.b).unwrap().sample(rng));
        let tau2 = draw_inverse_gamma(0.5, 0.5 * hyper.s2, rng);
        let sigma2 = draw_inverse_gamma(hyper.alpha1, hyper.alpha2, rng);
        let pi: Vec<bool> = (0..k).map(|_| rng.random::<f64>() < theta).collect();
        let sd = (sigma2 * tau2).sqrt();
        let beta = pi
            .iter()
            .map(|&p| if p { sd * rng.sample::<f64, _>(StandardNormal) } else { 0.0 })
            .collect();
        RegressionState {
            beta,
            pi,
            theta,
            tau2,
            sigma2,
        }
    }

    pub fn active(&self) -> usize {
        self.pi.iter().filter(|p| **p).count()
    }
}

fn residual(z: &Array1<f64>, x: &Array2<f64>, beta: &[f64]) -> Vec<f64> {
    (0..z.len())
        .map(|i| z[i] - (0..beta.len()).map(|k| x[[i, k]] * beta[k]).sum::<f64>())
        .collect()
}

fn check_regression_inputs(z: &Array1<f64>, x: &Array2<f64>, state: &RegressionState) -> Result<()> {
    if x.nrows() != z.len() {
        return Err(Error::Dimension(format!(
            "design has {} rows, response has {}",
            x.nrows(),
            z.len()
        )));
    }
    if state.beta.len() != x.ncols() || state.pi.len() != x.ncols() {
        return Err(Error::Dimension("regression state does not match design width".into()));
    }
    if x.iter().chain(z.iter()).any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite value in regression inputs"));
    }
    Ok(())
}

/// Find the most collinear active column pair for error reporting.
fn collinear_pair(x: &Array2<f64>, active: &[usize]) -> (usize, usize) {
    let mut best = (active[0], active[0], -1.0);
    for (a, &i) in active.iter().enumerate() {
        for &j in &active[a + 1..] {
            let ci = x.column(i);
            let cj = x.column(j);
            let num = ci.dot(&cj).abs();
            let den = (ci.dot(&ci) * cj.dot(&cj)).sqrt();
            let c = if den > 0.0 { num / den } else { 1.0 };
            if c > best.2 {
                best = (i, j, c);
            }
        }
    }
    (best.0, best.1)
}

/// Joint Gaussian draw of the active coefficients; inactive ones are zero.
pub fn update_beta<R: Rng + ?Sized>(
    z: &Array1<f64>,
    x: &Array2<f64>,
    state: &mut RegressionState,
    rng: &mut R,
) -> Result<()> {
    let active: Vec<usize> = (0..x.ncols()).filter(|&k| state.pi[k]).collect();
    state.beta.iter_mut().for_each(|b| *b = 0.0);
    let m = active.len();
    if m == 0 {
        return Ok(());
    }
    // Precision in units of 1/σ²: X'X + I/τ².
    let mut prec = vec![0.0; m * m];
    let mut lin = vec![0.0; m];
    for (a, &i) in active.iter().enumerate() {
        lin[a] = x.column(i).dot(z);
        for (b, &j) in active.iter().enumerate() {
            prec[a * m + b] = x.column(i).dot(&x.column(j));
        }
        prec[a * m + a] += 1.0 / state.tau2;
    }
    let chol = Cholesky::new(&prec, m).map_err(|_| {
        let (i, j) = collinear_pair(x, &active);
        Error::Numerical(format!(
            "singular regression posterior: columns {i} and {j} are collinear"
        ))
    })?;
    chol.solve_in_place(&mut lin);
    let mut e: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    chol.solve_lt_in_place(&mut e);
    let sd = state.sigma2.sqrt();
    for (a, &i) in active.iter().enumerate() {
        state.beta[i] = lin[a] + sd * e[a];
    }
    Ok(())
}

/// Joint update of `(π_k, β_k)` with β_k integrated out for the indicator.
pub fn update_indicator<R: Rng + ?Sized>(
    z: &Array1<f64>,
    x: &Array2<f64>,
    k: usize,
    state: &mut RegressionState,
    rng: &mut R,
) {
    let col = x.column(k);
    let mut r = residual(z, x, &state.beta);
    for (ri, xi) in r.iter_mut().zip(col.iter()) {
        *ri += xi * state.beta[k];
    }
    let xr: f64 = col.iter().zip(&r).map(|(a, b)| a * b).sum();
    let zeta = col.dot(&col) + 1.0 / state.tau2;
    let log_bf = -0.5 * (state.tau2 * zeta).ln() + xr * xr / (2.0 * state.sigma2 * zeta);
    let log_odds = (state.theta / (1.0 - state.theta)).ln() + log_bf;
    let p = 1.0 / (1.0 + (-log_odds).exp());
    let include = rng.random::<f64>() < p;
    state.pi[k] = include;
    state.beta[k] = if include {
        xr / zeta + (state.sigma2 / zeta).sqrt() * rng.sample::<f64, _>(StandardNormal)
    } else {
        0.0
    };
}

/// One full sweep: θ, τ², σ², β (active block), then every (π_k, β_k).
pub fn regression_gibbs_sweep<R: Rng + ?Sized>(
    z: &Array1<f64>,
    x: &Array2<f64>,
    state: &RegressionState,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<RegressionState> {
    check_regression_inputs(z, x, state)?;
    let mut st = state.clone();
    let k = x.ncols() as f64;
    let s = z.len() as f64;
    let on = st.active() as f64;
    st.theta = clamp_open_unit(Beta::new(hyper.a + on, hyper.b + k - on).unwrap().sample(rng));
    let bb: f64 = st.beta.iter().map(|b| b * b).sum();
    st.tau2 = draw_inverse_gamma(0.5 + 0.5 * on, 0.5 * hyper.s2 + bb / (2.0 * st.sigma2), rng);
    let rss: f64 = residual(z, x, &st.beta).iter().map(|r| r * r).sum();
    st.sigma2 = draw_inverse_gamma(
        hyper.alpha1 + 0.5 * s + 0.5 * on,
        hyper.alpha2 + 0.5 * rss + bb / (2.0 * st.tau2),
        rng,
    );
    update_beta(z, x, &mut st, rng)?;
    for j in 0..x.ncols() {
        update_indicator(z, x, j, &mut st, rng);
    }
    Ok(st)
}

/// Stored draws of a regression chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionDraws {
    /// `beta[d][k]`.
    pub beta: Vec<Vec<f64>>,
    pub pi: Vec<Vec<bool>>,
    pub theta: Vec<f64>,
    pub tau2: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl RegressionDraws {
    pub fn inclusion_probabilities(&self) -> Vec<f64> {
        let k = self.pi.first().map_or(0, Vec::len);
        let n = self.pi.len().max(1) as f64;
        (0..k)
            .map(|j| self.pi.iter().filter(|p| p[j]).count() as f64 / n)
            .collect()
    }

    pub fn beta_column(&self, k: usize) -> Vec<f64> {
        self.beta.iter().map(|b| b[k]).collect()
    }
}

/// Run the regression sampler and keep every draw after burn-in.
pub fn run_regression<R: Rng + ?Sized>(
    z: &Array1<f64>,
    x: &Array2<f64>,
    hyper: &Hyperparameters,
    sweeps: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<RegressionDraws> {
    if burn_in >= sweeps {
        return Err(Error::validation("burn-in must be smaller than the sweep count"));
    }
    let mut st = RegressionState::initial(x.ncols());
    let kept = sweeps - burn_in;
    let mut out = RegressionDraws {
        beta: Vec::with_capacity(kept),
        pi: Vec::with_capacity(kept),
        theta: Vec::with_capacity(kept),
        tau2: Vec::with_capacity(kept),
        sigma2: Vec::with_capacity(kept),
    };
    for it in 0..sweeps {
        st = regression_gibbs_sweep(z, x, &st, hyper, rng)?;
        if it >= burn_in {
            out.beta.push(st.beta.clone());
            out.pi.push(st.pi.clone());
            out.theta.push(st.theta);
            out.tau2.push(st.tau2);
            out.sigma2.push(st.sigma2);
        }
    }
    Ok(out)
}

/// Per-ICN association flag: the equal-tailed credible interval of β_k
/// excludes zero.
pub fn summarize_associations(beta_draws: &[Vec<f64>], level: f64) -> Result<Vec<bool>> {
    if beta_draws.len() < 100 {
        return Err(Error::validation(format!(
            "association summary needs at least 100 draws, got {}",
            beta_draws.len()
        )));
    }
    let k = beta_draws[0].len();
    let tail = 0.5 * (1.0 - level);
    Ok((0..k)
        .map(|j| {
            let mut col: Vec<f64> = beta_draws.iter().map(|b| b[j]).collect();
            col.sort_by(|a, b| a.total_cmp(b));
            let lo = quantile_sorted(&col, tail);
            let hi = quantile_sorted(&col, 1.0 - tail);
            lo > 0.0 || hi < 0.0
        })
        .collect())
}

/// Ordinary least squares with intercept, reported next to the Bayesian flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsReport {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub df: usize,
}

pub fn ols_report(z: &Array1<f64>, x: &Array2<f64>) -> Result<OlsReport> {
    let (s, k) = x.dim();
    if z.len() != s {
        return Err(Error::Dimension("design and response lengths differ".into()));
    }
    if s <= k + 1 {
        return Err(Error::validation(format!(
            "OLS needs more observations ({s}) than coefficients ({})",
            k + 1
        )));
    }
    let p = k + 1;
    let design = |i: usize, j: usize| if j == 0 { 1.0 } else { x[[i, j - 1]] };
    let mut xtx = vec![0.0; p * p];
    let mut xtz = vec![0.0; p];
    for i in 0..s {
        for a in 0..p {
            xtz[a] += design(i, a) * z[i];
            for b in 0..p {
                xtx[a * p + b] += design(i, a) * design(i, b);
            }
        }
    }
    let chol = Cholesky::new(&xtx, p)
        .map_err(|_| Error::Numerical("OLS design matrix is rank deficient".into()))?;
    let mut coef = xtz;
    chol.solve_in_place(&mut coef);
    let rss: f64 = (0..s)
        .map(|i| {
            let fit: f64 = (0..p).map(|a| design(i, a) * coef[a]).sum();
            (z[i] - fit).powi(2)
        })
        .sum();
    let df = s - p;
    let s2 = rss / df as f64;
    let inv = chol.inverse();
    let t_dist = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| Error::Numerical(format!("t distribution: {e}")))?;
    let mut out = OlsReport {
        intercept: coef[0],
        coefficients: coef[1..].to_vec(),
        std_errors: Vec::with_capacity(k),
        t_values: Vec::with_capacity(k),
        p_values: Vec::with_capacity(k),
        df,
    };
    for a in 1..p {
        let se = (s2 * inv[a * p + a]).sqrt();
        let t = coef[a] / se;
        out.std_errors.push(se);
        out.t_values.push(t);
        out.p_values.push(if t.is_finite() { 2.0 * t_dist.sf(t.abs()) } else { 0.0 });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ks_examples() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[10.0, 20.0]).unwrap(), 1.0);
        let d = ks_statistic(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        assert!((d - 1.0 / 3.0).abs() < 1e-15);
        assert!(ks_statistic(&[], &[1.0]).is_err());
    }

    /// Brute-force sup over every pooled sample point.
    fn ks_brute(a: &[f64], b: &[f64]) -> f64 {
        let ecdf = |s: &[f64], x: f64| s.iter().filter(|v| **v <= x).count() as f64 / s.len() as f64;
        a.iter()
            .chain(b)
            .map(|&x| (ecdf(a, x) - ecdf(b, x)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn ks_matches_brute_force_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let a: Vec<f64> = (0..rng.random_range(1..15)).map(|_| rng.random_range(0..6) as f64).collect();
            let b: Vec<f64> = (0..rng.random_range(1..15)).map(|_| rng.random_range(0..6) as f64).collect();
            assert!((ks_statistic(&a, &b).unwrap() - ks_brute(&a, &b)).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn ks_symmetric_and_bounded(a in proptest::collection::vec(-5.0f64..5.0, 1..30),
                                    b in proptest::collection::vec(-5.0f64..5.0, 1..30)) {
            let ab = ks_statistic(&a, &b).unwrap();
            prop_assert_eq!(ab, ks_statistic(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn critical_value_constant() {
        let v = ks_critical_value(0.05, 1, 1) / 2f64.sqrt();
        assert!((v - 1.3581).abs() < 1e-4);
    }

    #[test]
    fn task_effect_examples() {
        let rest = vec![vec![vec![0.1, 0.2, 0.3, 0.4]]];
        let same = compute_task_effects(&rest, &rest, ThresholdPolicy::default()).unwrap();
        assert_eq!(same.delta[[0, 0]], 0.0);
        assert_eq!(same.label[[0, 0]], ActivationLabel::None);
        let shifted = vec![vec![rest[0][0].iter().map(|v| v + 100.0).collect::<Vec<_>>()]];
        let up = compute_task_effects(&rest, &shifted, ThresholdPolicy::Fixed(0.5)).unwrap();
        assert_eq!(up.delta[[0, 0]], 1.0);
        assert_eq!(up.sign[[0, 0]], 1);
        assert_eq!(up.label[[0, 0]], ActivationLabel::Excited);
        let down = compute_task_effects(&shifted, &rest, ThresholdPolicy::Fixed(0.5)).unwrap();
        assert_eq!(down.label[[0, 0]], ActivationLabel::Inhibited);
        assert!(compute_task_effects(&[], &[], ThresholdPolicy::default()).is_err());
    }

    #[test]
    fn null_model_sigma_conditional() {
        // All indicators off, θ pinned near zero: β stays zero and σ² follows
        // IG(α₁ + S/2, α₂ + z'z/2).
        let z = array![1.0, -2.0, 0.5, 1.5];
        let x = Array2::from_shape_fn((4, 2), |(i, j)| (i + j) as f64 * 0.1);
        let hyper = Hyperparameters {
            a: 1e-3,
            b: 1e6,
            ..Hyperparameters::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut st = RegressionState {
            pi: vec![false, false],
            ..RegressionState::initial(2)
        };
        let mut acc = 0.0;
        let n = 100_000;
        for _ in 0..n {
            st = regression_gibbs_sweep(&z, &x, &st, &hyper, &mut rng).unwrap();
            assert!(st.pi.iter().zip(&st.beta).all(|(p, b)| *p || *b == 0.0));
            acc += st.sigma2;
        }
        let shape = hyper.alpha1 + 2.0;
        let rate = hyper.alpha2 + 0.5 * z.dot(&z);
        let expect = rate / (shape - 1.0);
        let sd = expect / (shape - 2.0).sqrt();
        assert!((acc / n as f64 - expect).abs() < 3.0 * sd / (n as f64).sqrt() * 1.5);
    }

    #[test]
    fn flat_slab_limit_gives_ols() {
        let z = array![1.0, 2.1, 2.9, 4.2, 5.0];
        let x = array![[1.0], [2.0], [3.0], [4.0], [5.0]];
        let mut st = RegressionState {
            tau2: 1e12,
            sigma2: 1e-8,
            ..RegressionState::initial(1)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        update_beta(&z, &x, &mut st, &mut rng).unwrap();
        let ols = x.column(0).dot(&z) / x.column(0).dot(&x.column(0));
        assert!((st.beta[0] - ols).abs() < 1e-3);
    }

    /// Enumerated posterior over indicator patterns at fixed (θ, τ², σ²):
    /// z | π ~ N(0, σ²(I + τ² X_π X_π')).
    fn enumerate_models(z: &Array1<f64>, x: &Array2<f64>, theta: f64, tau2: f64, sigma2: f64) -> Vec<f64> {
        let (s, k) = x.dim();
        let mut logp = Vec::new();
        for mask in 0..(1usize << k) {
            let mut cov = nalgebra::DMatrix::<f64>::identity(s, s) * sigma2;
            let mut m = 0;
            for j in 0..k {
                if mask >> j & 1 == 1 {
                    m += 1;
                    let c = nalgebra::DVector::from_fn(s, |i, _| x[[i, j]]);
                    cov += &c * c.transpose() * (sigma2 * tau2);
                }
            }
            let zv = nalgebra::DVector::from_fn(s, |i, _| z[i]);
            let chol = cov.clone().cholesky().unwrap();
            let quad = zv.dot(&chol.solve(&zv));
            let ld = cov.determinant().ln();
            logp.push(m as f64 * theta.ln() + (k - m) as f64 * (1.0 - theta).ln() - 0.5 * ld - 0.5 * quad);
        }
        let mx = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logp.iter().map(|l| (l - mx).exp()).collect();
        let tot: f64 = w.iter().sum();
        w.into_iter().map(|v| v / tot).collect()
    }

    #[test]
    fn indicator_frequencies_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = 12;
        let x = Array2::from_shape_fn((s, 3), |_| rng.random_range(0.0..1.0));
        let z = Array1::from_shape_fn(s, |i| 0.8 * x[[i, 0]] + 0.3 * rng.sample::<f64, _>(StandardNormal));
        let (theta, tau2, sigma2) = (0.4, 2.0, 0.15);
        let oracle = enumerate_models(&z, &x, theta, tau2, sigma2);
        let mut st = RegressionState {
            theta,
            tau2,
            sigma2,
            ..RegressionState::initial(3)
        };
        let n = 200_000;
        let mut counts = vec![0.0; 8];
        for _ in 0..n {
            update_beta(&z, &x, &mut st, &mut rng).unwrap();
            for j in 0..3 {
                update_indicator(&z, &x, j, &mut st, &mut rng);
            }
            let mask: usize = (0..3).map(|j| (st.pi[j] as usize) << j).sum();
            counts[mask] += 1.0;
        }
        for (c, o) in counts.iter().zip(&oracle) {
            assert!((c / n as f64 - o).abs() < 1e-2, "{} vs {o}", c / n as f64);
        }
    }

    #[test]
    fn planted_coefficient_is_included() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = 20;
        let x = Array2::from_shape_fn((s, 2), |_| rng.random_range(-1.0..1.0));
        let z = Array1::from_shape_fn(s, |i| 2.0 * x[[i, 0]] + 0.3 * rng.sample::<f64, _>(StandardNormal));
        let draws = run_regression(&z, &x, &Hyperparameters::default(), 11_000, 1_000, &mut rng).unwrap();
        let p = draws.inclusion_probabilities();
        assert!(p[0] > 0.9 && p[1] < 0.5, "{p:?}");
    }

    #[test]
    fn association_examples() {
        let zeros = vec![vec![0.0]; 200];
        assert_eq!(summarize_associations(&zeros, 0.95).unwrap(), vec![false]);
        let uni: Vec<Vec<f64>> = (0..200).map(|i| vec![1.0 + i as f64 / 199.0]).collect();
        assert_eq!(summarize_associations(&uni, 0.95).unwrap(), vec![true]);
        let mix: Vec<Vec<f64>> = (0..200).map(|i| vec![if i % 2 == 0 { 0.0 } else { 1.0 }]).collect();
        assert_eq!(summarize_associations(&mix, 0.95).unwrap(), vec![false]);
        assert!(summarize_associations(&zeros[..50], 0.95).is_err());
    }

    #[test]
    fn ols_recovers_exact_fit_and_pvalues() {
        let x = array![[1.0, 0.3], [2.0, -0.1], [3.0, 0.4], [4.0, 0.0], [5.0, 0.2], [6.0, -0.3]];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = Array1::from_shape_fn(6, |i| 1.0 + 2.0 * x[[i, 0]] + 0.01 * rng.sample::<f64, _>(StandardNormal));
        let r = ols_report(&z, &x).unwrap();
        assert!((r.coefficients[0] - 2.0).abs() < 0.05);
        assert!((r.intercept - 1.0).abs() < 0.2);
        assert!(r.p_values[0] < 1e-6);
        assert_eq!(r.df, 3);
        assert!(r.p_values.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}
