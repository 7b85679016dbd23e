//! Stochastic-volatility block: log-volatility paths and their AR(1)
//! parameters for one factor of one (condition, subject) block.
//!
//! The path is refreshed by single-site random-walk Metropolis sweeps. The
//! parameters get a centered update (independence proposal for φ, Gibbs draw
//! for μ, random walk on log δ²) followed by an interweaving move that redraws
//! μ and δ in the non-centered parameterization `h̃ = (h − μ)/δ`.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::types::Hyperparameters;

/// Proposals that would push any log-volatility beyond this bound are rejected.
pub const H_BOUND: f64 = 40.0;

/// Acceptance rate the adaptive random walks aim for.
pub const TARGET_ACCEPTANCE: f64 = 0.44;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvParams {
    pub mu: f64,
    pub phi: f64,
    pub delta2: f64,
}

impl SvParams {
    pub fn is_valid(&self) -> bool {
        self.phi.abs() < 1.0 && self.delta2 > 0.0 && self.mu.is_finite() && self.delta2.is_finite()
    }

    pub fn stationary_var(&self) -> f64 {
        self.delta2 / (1.0 - self.phi * self.phi)
    }
}

/// Random-walk scales, adapted during burn-in and frozen afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvTuning {
    /// Multiplier on the per-site conditional standard deviation.
    pub h_scale: f64,
    pub log_delta2_step: f64,
    pub log_delta_step: f64,
}

impl Default for SvTuning {
    fn default() -> Self {
        SvTuning {
            h_scale: 2.0,
            log_delta2_step: 0.5,
            log_delta_step: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MhCounter {
    pub accepted: u64,
    pub proposed: u64,
}

impl MhCounter {
    #[inline]
    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn merge(&mut self, other: &MhCounter) {
        self.accepted += other.accepted;
        self.proposed += other.proposed;
    }
}

/// Acceptance bookkeeping for the SV moves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SvStats {
    pub h: MhCounter,
    pub phi: MhCounter,
    pub delta2: MhCounter,
    pub asis_mu: MhCounter,
    pub asis_delta: MhCounter,
    /// Proposals rejected because they crossed `H_BOUND`.
    pub guard_rejections: u64,
}

impl SvStats {
    pub fn merge(&mut self, o: &SvStats) {
        self.h.merge(&o.h);
        self.phi.merge(&o.phi);
        self.delta2.merge(&o.delta2);
        self.asis_mu.merge(&o.asis_mu);
        self.asis_delta.merge(&o.asis_delta);
        self.guard_rejections += o.guard_rejections;
    }
}

impl SvTuning {
    /// Robbins–Monro step on the log proposal scales.
    pub fn adapt(&mut self, stats: &SvStats, iteration: u64) {
        let gain = (1.0 / ((iteration + 1) as f64).sqrt()).min(0.5);
        let step = |scale: &mut f64, c: &MhCounter| {
            if c.proposed > 0 {
                let next = *scale * ((c.rate() - TARGET_ACCEPTANCE) * gain).exp();
                *scale = next.clamp(1e-3, 50.0);
            }
        };
        step(&mut self.h_scale, &stats.h);
        step(&mut self.log_delta2_step, &stats.delta2);
        step(&mut self.log_delta_step, &stats.asis_delta);
    }
}

/// Prior constants of the SV parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvPrior {
    pub mu_mean: f64,
    pub mu_var: f64,
    pub phi_a: f64,
    pub phi_b: f64,
    /// δ² ~ Gamma(1/2, rate 1/(2 · delta_scale)).
    pub delta_scale: f64,
}

impl From<&Hyperparameters> for SvPrior {
    fn from(h: &Hyperparameters) -> Self {
        SvPrior {
            mu_mean: h.b_mu,
            mu_var: h.big_b_mu,
            phi_a: h.a_phi,
            phi_b: h.b_phi,
            delta_scale: h.big_b_delta,
        }
    }
}

impl SvPrior {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> SvParams {
        let mu = self.mu_mean + self.mu_var.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let u: f64 = Beta::new(self.phi_a, self.phi_b).unwrap().sample(rng);
        let phi = (2.0 * u - 1.0).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
        let delta2 = Gamma::new(0.5, 2.0 * self.delta_scale)
            .unwrap()
            .sample(rng)
            .max(1e-300);
        SvParams { mu, phi, delta2 }
    }

    fn ln_phi_prior(&self, phi: f64) -> f64 {
        let u = 0.5 * (phi + 1.0);
        (self.phi_a - 1.0) * u.ln() + (self.phi_b - 1.0) * (1.0 - u).ln()
    }

    fn ln_mu_prior(&self, mu: f64) -> f64 {
        let d = mu - self.mu_mean;
        -0.5 * d * d / self.mu_var
    }
}

/// Simulate an AR(1) log-volatility path started from its stationary law.
pub fn simulate_path<R: Rng + ?Sized>(params: &SvParams, len: usize, rng: &mut R) -> Vec<f64> {
    let mut h = Vec::with_capacity(len);
    if len == 0 {
        return h;
    }
    let sd0 = params.stationary_var().sqrt();
    let sd = params.delta2.sqrt();
    h.push(params.mu + sd0 * rng.sample::<f64, _>(StandardNormal));
    for t in 1..len {
        let prev = h[t - 1];
        h.push(params.mu + params.phi * (prev - params.mu) + sd * rng.sample::<f64, _>(StandardNormal));
    }
    h
}

/// Gaussian part of the full conditional of `h_t` given its neighbours:
/// returns (mean, precision).
#[inline]
pub fn neighbour_conditional(h: &[f64], t: usize, p: &SvParams) -> (f64, f64) {
    let len = h.len();
    let (mu, phi, d2) = (p.mu, p.phi, p.delta2);
    if len == 1 {
        return (mu, (1.0 - phi * phi) / d2);
    }
    if t == 0 {
        (mu + phi * (h[1] - mu), 1.0 / d2)
    } else if t + 1 == len {
        (mu + phi * (h[t - 1] - mu), 1.0 / d2)
    } else {
        let prec = (1.0 + phi * phi) / d2;
        let mean = mu + phi * ((h[t - 1] - mu) + (h[t + 1] - mu)) / (1.0 + phi * phi);
        (mean, prec)
    }
}

/// Unnormalized log full conditional of `h_t = x`.
#[inline]
pub fn site_log_density(x: f64, f_t: f64, mean: f64, prec: f64) -> f64 {
    let d = x - mean;
    -0.5 * prec * d * d - 0.5 * x - 0.5 * f_t * f_t * (-x).exp()
}

/// One random-walk Metropolis update of `h[t]`. Returns whether it moved.
pub fn update_h_site<R: Rng + ?Sized>(
    f_t: f64,
    h: &mut [f64],
    t: usize,
    params: &SvParams,
    scale: f64,
    rng: &mut R,
    stats: &mut SvStats,
) -> bool {
    let (mean, prec) = neighbour_conditional(h, t, params);
    let step = scale / (prec + 0.5).sqrt();
    let cur = h[t];
    let prop = cur + step * rng.sample::<f64, _>(StandardNormal);
    if !(prop.abs() <= H_BOUND) {
        stats.guard_rejections += 1;
        stats.h.record(false);
        return false;
    }
    let log_ratio = site_log_density(prop, f_t, mean, prec) - site_log_density(cur, f_t, mean, prec);
    let accept = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
    if accept {
        h[t] = prop;
    }
    stats.h.record(accept);
    accept
}

/// Forward single-site sweep over the whole path.
pub fn update_h_path<R: Rng + ?Sized>(
    f: &[f64],
    h: &mut [f64],
    params: &SvParams,
    tuning: &SvTuning,
    rng: &mut R,
    stats: &mut SvStats,
) {
    debug_assert_eq!(f.len(), h.len());
    for t in 0..h.len() {
        update_h_site(f[t], h, t, params, tuning.h_scale, rng, stats);
    }
}

/// Sufficient statistics of the AR(1) likelihood of a path.
struct ArStats {
    len: usize,
    x0: f64,
    sxx: f64,
    sxy: f64,
    syy: f64,
}

fn ar_stats(h: &[f64], mu: f64) -> ArStats {
    let mut s = ArStats {
        len: h.len(),
        x0: h.first().map_or(0.0, |v| v - mu),
        sxx: 0.0,
        sxy: 0.0,
        syy: 0.0,
    };
    for w in h.windows(2) {
        let (a, b) = (w[0] - mu, w[1] - mu);
        s.sxx += a * a;
        s.sxy += a * b;
        s.syy += b * b;
    }
    s
}

impl ArStats {
    /// Σ of squared innovations including the stationary first term.
    fn quad(&self, phi: f64) -> f64 {
        let first = if self.len > 0 {
            (1.0 - phi * phi) * self.x0 * self.x0
        } else {
            0.0
        };
        first + self.syy - 2.0 * phi * self.sxy + phi * phi * self.sxx
    }
}

/// Log density of a path under AR(1) parameters (stationary start).
pub fn path_log_density(h: &[f64], p: &SvParams) -> f64 {
    if h.is_empty() {
        return 0.0;
    }
    let st = ar_stats(h, p.mu);
    -0.5 * (h.len() as f64) * (LN_2PI + p.delta2.ln()) + 0.5 * (1.0 - p.phi * p.phi).ln()
        - 0.5 * st.quad(p.phi) / p.delta2
}

/// φ | h, μ, δ²: proposal from the Gaussian regression conditional (flat
/// prior), corrected by the Beta prior and the stationary first term.
pub fn update_phi<R: Rng + ?Sized>(
    h: &[f64],
    params: &mut SvParams,
    prior: &SvPrior,
    rng: &mut R,
    stats: &mut SvStats,
) {
    let cur = params.phi;
    let st = ar_stats(h, params.mu);
    let stationary_term = |phi: f64| -> f64 {
        if st.len == 0 {
            0.0
        } else {
            0.5 * (1.0 - phi * phi).ln() - 0.5 * (1.0 - phi * phi) * st.x0 * st.x0 / params.delta2
        }
    };
    let (prop, log_ratio) = if st.len >= 2 && st.sxx > 0.0 {
        let mean = st.sxy / st.sxx;
        let sd = (params.delta2 / st.sxx).sqrt();
        let prop = mean + sd * rng.sample::<f64, _>(StandardNormal);
        if !(prop.abs() < 1.0) {
            stats.phi.record(false);
            return;
        }
        let lr = prior.ln_phi_prior(prop) + stationary_term(prop)
            - prior.ln_phi_prior(cur)
            - stationary_term(cur);
        (prop, lr)
    } else {
        let u: f64 = Beta::new(prior.phi_a, prior.phi_b).unwrap().sample(rng);
        let prop = 2.0 * u - 1.0;
        if !(prop.abs() < 1.0) {
            stats.phi.record(false);
            return;
        }
        (prop, stationary_term(prop) - stationary_term(cur))
    };
    let accept = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
    if accept {
        params.phi = prop;
    }
    stats.phi.record(accept);
}

/// Gaussian full conditional of μ given the path, φ and δ²: (mean, variance).
pub fn mu_conditional(h: &[f64], params: &SvParams, prior: &SvPrior) -> (f64, f64) {
    let (phi, d2) = (params.phi, params.delta2);
    let mut prec = 1.0 / prior.mu_var;
    let mut num = prior.mu_mean / prior.mu_var;
    if let Some(&h0) = h.first() {
        let n1 = (h.len() - 1) as f64;
        prec += ((1.0 - phi * phi) + n1 * (1.0 - phi) * (1.0 - phi)) / d2;
        let innov: f64 = h.windows(2).map(|w| w[1] - phi * w[0]).sum();
        num += ((1.0 - phi * phi) * h0 + (1.0 - phi) * innov) / d2;
    }
    (num / prec, 1.0 / prec)
}

pub fn update_mu<R: Rng + ?Sized>(h: &[f64], params: &mut SvParams, prior: &SvPrior, rng: &mut R) {
    let (m, v) = mu_conditional(h, params, prior);
    params.mu = m + v.sqrt() * rng.sample::<f64, _>(StandardNormal);
}

/// Random walk on log δ² against the Gamma prior and the AR(1) likelihood.
pub fn update_delta2<R: Rng + ?Sized>(
    h: &[f64],
    params: &mut SvParams,
    prior: &SvPrior,
    step: f64,
    rng: &mut R,
    stats: &mut SvStats,
) {
    let st = ar_stats(h, params.mu);
    let q = st.quad(params.phi);
    let n = st.len as f64;
    // Gamma(1/2) prior on δ², Jacobian of the log transform, AR likelihood.
    let target = |l: f64| -> f64 {
        let d2 = l.exp();
        0.5 * l - d2 / (2.0 * prior.delta_scale) - 0.5 * n * l - 0.5 * q / d2
    };
    let cur = params.delta2.ln();
    let prop = cur + step * rng.sample::<f64, _>(StandardNormal);
    let log_ratio = target(prop) - target(cur);
    let accept = prop.is_finite()
        && prop.exp() > 0.0
        && prop.exp().is_finite()
        && (log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio);
    if accept {
        params.delta2 = prop.exp();
    }
    stats.delta2.record(accept);
}

/// Centered parameter update: φ, then μ, then δ².
pub fn update_sv_params<R: Rng + ?Sized>(
    h: &[f64],
    params: &SvParams,
    prior: &SvPrior,
    tuning: &SvTuning,
    rng: &mut R,
    stats: &mut SvStats,
) -> SvParams {
    let mut p = *params;
    update_phi(h, &mut p, prior, rng, stats);
    update_mu(h, &mut p, prior, rng);
    update_delta2(h, &mut p, prior, tuning.log_delta2_step, rng, stats);
    p
}

/// Log target of μ in the non-centered parameterization, excluding the
/// factor-likelihood part that the proposal matches exactly.
pub fn nc_mu_log_prior(mu: f64, prior: &SvPrior) -> f64 {
    prior.ln_mu_prior(mu)
}

/// Σ_t f_t² exp(−δ h̃_t): the only statistic of the data the non-centered μ
/// conditional depends on.
pub fn nc_scale_stat(f: &[f64], h_tilde: &[f64], delta: f64) -> f64 {
    f.iter()
        .zip(h_tilde)
        .map(|(fv, ht)| fv * fv * (-delta * ht).exp())
        .sum()
}

/// Factor log-likelihood as a function of (μ, δ) for fixed h̃.
pub fn nc_log_likelihood(f: &[f64], h_tilde: &[f64], mu: f64, delta: f64) -> f64 {
    f.iter()
        .zip(h_tilde)
        .map(|(fv, ht)| {
            let h = mu + delta * ht;
            -0.5 * h - 0.5 * fv * fv * (-h).exp()
        })
        .sum()
}

/// Log target of log δ in the non-centered parameterization: half-normal prior
/// on δ (the image of the Gamma prior on δ²), log Jacobian, factor likelihood.
pub fn nc_log_delta_target(
    log_delta: f64,
    f: &[f64],
    h_tilde: &[f64],
    mu: f64,
    prior: &SvPrior,
) -> f64 {
    let delta = log_delta.exp();
    -delta * delta / (2.0 * prior.delta_scale) + log_delta + nc_log_likelihood(f, h_tilde, mu, delta)
}

fn within_bound(mu: f64, delta: f64, h_tilde: &[f64]) -> bool {
    h_tilde.iter().all(|ht| (mu + delta * ht).abs() <= H_BOUND)
}

/// Interweaving move: redraw μ and δ with the standardized path held fixed,
/// then map back to the centered path. The path is only rewritten when a
/// proposal was accepted.
pub fn interweave_asis<R: Rng + ?Sized>(
    h: &mut [f64],
    params: &SvParams,
    f: &[f64],
    prior: &SvPrior,
    tuning: &SvTuning,
    rng: &mut R,
    stats: &mut SvStats,
) -> SvParams {
    let mut p = *params;
    if h.is_empty() {
        return p;
    }
    let mut delta = p.delta2.sqrt();
    let h_tilde: Vec<f64> = h.iter().map(|v| (v - p.mu) / delta).collect();
    let mut moved = false;

    // μ: the factor likelihood in w = exp(−μ) is a Gamma(T/2, a/2) kernel, used
    // as an independence proposal; the acceptance ratio is the prior ratio.
    let a = nc_scale_stat(f, &h_tilde, delta);
    if a > 0.0 && a.is_finite() {
        let w: f64 = Gamma::new(0.5 * h.len() as f64, 2.0 / a).unwrap().sample(rng);
        let prop = -w.ln();
        if prop.is_finite() && within_bound(prop, delta, &h_tilde) {
            let lr = nc_mu_log_prior(prop, prior) - nc_mu_log_prior(p.mu, prior);
            let accept = lr >= 0.0 || rng.random::<f64>().ln() < lr;
            if accept {
                p.mu = prop;
                moved = true;
            }
            stats.asis_mu.record(accept);
        } else {
            stats.guard_rejections += 1;
            stats.asis_mu.record(false);
        }
    }

    // δ: random walk on log δ.
    let cur = delta.ln();
    let prop = cur + tuning.log_delta_step * rng.sample::<f64, _>(StandardNormal);
    let prop_delta = prop.exp();
    if prop_delta > 0.0 && prop_delta.is_finite() && within_bound(p.mu, prop_delta, &h_tilde) {
        let lr = nc_log_delta_target(prop, f, &h_tilde, p.mu, prior)
            - nc_log_delta_target(cur, f, &h_tilde, p.mu, prior);
        let accept = lr >= 0.0 || rng.random::<f64>().ln() < lr;
        if accept {
            delta = prop_delta;
            p.delta2 = prop_delta * prop_delta;
            moved = true;
        }
        stats.asis_delta.record(accept);
    } else {
        stats.guard_rejections += 1;
        stats.asis_delta.record(false);
    }

    if moved {
        for (hv, ht) in h.iter_mut().zip(&h_tilde) {
            *hv = p.mu + delta * ht;
        }
    }
    p
}

/// Full SV update for one factor: path, centered parameters, interweaving.
/// When `adapt_iteration` is set, proposal scales are adapted afterwards.
#[allow(clippy::too_many_arguments)]
pub fn sweep_factor<R: Rng + ?Sized>(
    f: &[f64],
    h: &mut [f64],
    params: &mut SvParams,
    tuning: &mut SvTuning,
    prior: &SvPrior,
    adapt_iteration: Option<u64>,
    rng: &mut R,
) -> SvStats {
    let mut stats = SvStats::default();
    update_h_path(f, h, params, tuning, rng, &mut stats);
    *params = update_sv_params(h, params, prior, tuning, rng, &mut stats);
    *params = interweave_asis(h, params, f, prior, tuning, rng, &mut stats);
    if let Some(it) = adapt_iteration {
        tuning.adapt(&stats, it);
    }
    stats
}
