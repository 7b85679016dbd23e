//! One chain of the full sampler: initialization and the per-sweep schedule
//! σ² → SV → loadings → factors → (column rescale) → (relabel) → Π₀.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{for_each_mut, map_indices, try_for_each_mut, Execution};
use crate::loading::{
    relabel_columns, rescale_column, update_factors, update_group_inclusion, update_sigma2, update_subject_loadings,
};
use crate::posthoc::observed_log_likelihood;
use crate::rng::{block_stream, stream, StreamKind};
use crate::sv::{sweep_factor, MhCounter, SvParams, SvPrior, SvStats, SvTuning};
use crate::types::{validate_state, ChainState, ConditionState, Dataset, Dimensions, Hyperparameters, SubjectState};

/// Settings that change the transition kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    /// Hyperparameters with `d_sigma` resolved.
    pub hyper: Hyperparameters,
    /// Keep Π₀ fixed at its prior mean instead of sampling it.
    pub single_subject: bool,
    /// Enable the column rescale move.
    pub scale_move: bool,
    /// Standard deviation of the log scale proposal.
    pub scale_step: f64,
    /// Enable the per-subject column swap move (joint mode only).
    pub relabel_move: bool,
    /// Proposal scales adapt during sweeps `0..adapt_until`.
    pub adapt_until: usize,
    /// Evaluate the observed-data log-likelihood after every sweep.
    pub track_loglik: bool,
    pub execution: Execution,
}

impl SamplerSettings {
    pub fn new(hyper: Hyperparameters) -> Self {
        SamplerSettings {
            hyper,
            single_subject: false,
            scale_move: true,
            scale_step: 0.1,
            relabel_move: true,
            adapt_until: 0,
            track_loglik: true,
            execution: Execution::default(),
        }
    }
}

/// Acceptance counters accumulated over sweeps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub h: MhCounter,
    pub phi: MhCounter,
    pub delta2: MhCounter,
    pub asis_mu: MhCounter,
    pub asis_delta: MhCounter,
    pub scale: MhCounter,
    /// Proposed = column pairs visited, accepted = pairs swapped.
    pub relabel: MhCounter,
    pub guard_rejections: u64,
}

impl AcceptanceStats {
    pub fn absorb(&mut self, sv: &SvStats) {
        self.h.merge(&sv.h);
        self.phi.merge(&sv.phi);
        self.delta2.merge(&sv.delta2);
        self.asis_mu.merge(&sv.asis_mu);
        self.asis_delta.merge(&sv.asis_delta);
        self.guard_rejections += sv.guard_rejections;
    }

    pub fn merge(&mut self, o: &AcceptanceStats) {
        self.h.merge(&o.h);
        self.phi.merge(&o.phi);
        self.delta2.merge(&o.delta2);
        self.asis_mu.merge(&o.asis_mu);
        self.asis_delta.merge(&o.asis_delta);
        self.scale.merge(&o.scale);
        self.relabel.merge(&o.relabel);
        self.guard_rejections += o.guard_rejections;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepReport {
    pub acceptance: AcceptanceStats,
    /// Observed-data log-likelihood after the sweep (0 when not tracked).
    pub loglik: f64,
    /// Time points skipped by the likelihood because of a failed factorization.
    pub skipped: usize,
}

/// Starting state: all indicators on, loadings 0.1·slab draws, σ² = 1,
/// Π₀ at its prior mean, SV parameters at b_μ / prior mean of φ / δ² = 0.1,
/// h = 0 and factors drawn from N(0, 1).
pub fn initialize(dims: &Dimensions, hyper: &Hyperparameters, seed: u64, chain: u64) -> Result<ChainState> {
    dims.validate()?;
    let (n, k, s_count) = (dims.regions, dims.factors, dims.subjects);
    let prior_mean = hyper.prior_mean_map(n, k)?;
    let mut rng = stream(seed, StreamKind::Init, &[chain]);
    let slab_sd = hyper.tau2_load.sqrt();
    let subjects: Vec<SubjectState> = (0..s_count)
        .map(|_| SubjectState {
            loadings: Array2::from_shape_fn((n, k), |_| 0.1 * slab_sd * rng.sample::<f64, _>(StandardNormal)),
            inclusion: Array2::from_elem((n, k), true),
        })
        .collect();
    let phi0 = 2.0 * hyper.a_phi / (hyper.a_phi + hyper.b_phi) - 1.0;
    let mut blocks = Vec::with_capacity(dims.blocks());
    for &t_len in &dims.time_lengths {
        for _ in 0..s_count {
            blocks.push(ConditionState {
                factors: Array2::from_shape_fn((k, t_len), |_| rng.sample::<f64, _>(StandardNormal)),
                log_vol: Array2::zeros((k, t_len)),
                sv: vec![
                    SvParams {
                        mu: hyper.b_mu,
                        phi: phi0,
                        delta2: 0.1,
                    };
                    k
                ],
                sigma2: Array1::ones(n),
                tuning: vec![SvTuning::default(); k],
            });
        }
    }
    Ok(ChainState {
        subjects,
        blocks,
        group_prob: prior_mean,
    })
}

/// Everything a chain needs besides its mutable state.
pub struct Sampler<'a> {
    pub data: &'a Dataset,
    pub dims: Dimensions,
    pub settings: SamplerSettings,
    pub seed: u64,
    pub chain: u64,
    prior_mean: Array2<f64>,
    sv_prior: SvPrior,
}

impl<'a> Sampler<'a> {
    pub fn new(data: &'a Dataset, factors: usize, settings: SamplerSettings, seed: u64, chain: u64) -> Result<Self> {
        data.check()?;
        let dims = data.dims(factors);
        dims.validate()?;
        settings.hyper.validate()?;
        if settings.hyper.d_sigma.is_none() {
            return Err(Error::validation("d_sigma must be resolved before sampling"));
        }
        let prior_mean = settings.hyper.prior_mean_map(dims.regions, dims.factors)?;
        let sv_prior = SvPrior::from(&settings.hyper);
        Ok(Sampler {
            data,
            dims,
            settings,
            seed,
            chain,
            prior_mean,
            sv_prior,
        })
    }

    pub fn initial_state(&self) -> Result<ChainState> {
        initialize(&self.dims, &self.settings.hyper, self.seed, self.chain)
    }

    fn rng(&self, sweep: usize, kind: StreamKind, idx: &[u64]) -> crate::rng::BlockRng {
        block_stream(self.seed, self.chain, sweep as u64, kind, idx)
    }

    /// Run one full sweep in place.
    pub fn sweep(&self, state: &mut ChainState, sweep: usize) -> Result<SweepReport> {
        let exec = self.settings.execution;
        let dims = &self.dims;
        let s_count = dims.subjects;
        let hyper = &self.settings.hyper;
        let mut report = SweepReport::default();

        // σ²
        {
            let subjects = &state.subjects;
            let shape = hyper.c_sigma;
            let rate = hyper.sigma_rate();
            for_each_mut(exec, &mut state.blocks, |b, blk| {
                let (g, s) = (b / s_count, b % s_count);
                let mut rng = self.rng(sweep, StreamKind::Sigma2, &[g as u64, s as u64]);
                blk.sigma2 = update_sigma2(self.data.y(g, s), &subjects[s].loadings, &blk.factors, shape, rate, &mut rng);
            });
        }

        // SV paths and parameters
        {
            let adapt = (sweep < self.settings.adapt_until).then_some(sweep as u64);
            let prior = &self.sv_prior;
            let stats = map_sv(exec, &mut state.blocks, |b, blk| {
                let (g, s) = (b / s_count, b % s_count);
                let mut acc = SvStats::default();
                let ConditionState {
                    factors,
                    log_vol,
                    sv,
                    tuning,
                    ..
                } = blk;
                for k in 0..factors.nrows() {
                    let mut rng = self.rng(sweep, StreamKind::Volatility, &[g as u64, s as u64, k as u64]);
                    let f = factors.row(k);
                    let mut h = log_vol.row_mut(k);
                    let st = sweep_factor(
                        f.as_slice().expect("contiguous factor rows"),
                        h.as_slice_mut().expect("contiguous volatility rows"),
                        &mut sv[k],
                        &mut tuning[k],
                        prior,
                        adapt,
                        &mut rng,
                    );
                    acc.merge(&st);
                }
                acc
            });
            for st in &stats {
                report.acceptance.absorb(st);
            }
        }

        // Loadings and indicators
        {
            let blocks = &state.blocks;
            let prior_prob = if self.settings.single_subject {
                &self.prior_mean
            } else {
                &state.group_prob
            };
            let tau2 = hyper.tau2_load;
            let g_count = dims.conditions();
            for_each_mut(exec, &mut state.subjects, |s, subj| {
                let mut rng = self.rng(sweep, StreamKind::Loadings, &[s as u64]);
                let series: Vec<&Array2<f64>> = (0..g_count).map(|g| self.data.y(g, s)).collect();
                let blks: Vec<&ConditionState> = (0..g_count).map(|g| &blocks[g * s_count + s]).collect();
                update_subject_loadings(subj, &series, &blks, prior_prob, tau2, &mut rng);
            });
        }

        // Factors
        {
            let subjects = &state.subjects;
            try_for_each_mut(exec, &mut state.blocks, |b, blk| {
                let (g, s) = (b / s_count, b % s_count);
                let mut rng = self.rng(sweep, StreamKind::Factors, &[g as u64, s as u64]);
                update_factors(self.data.y(g, s), &subjects[s].loadings, blk, &mut rng)
                    .map_err(|e| Error::Numerical(format!("chain {}, sweep {sweep}, block ({g},{s}): {e}", self.chain)))
            })?;
        }

        // Column rescale along the scale ridge
        if self.settings.scale_move {
            for s in 0..s_count {
                for k in 0..dims.factors {
                    let mut rng = self.rng(sweep, StreamKind::ScaleMove, &[s as u64, k as u64]);
                    let mut blks: Vec<&mut ConditionState> = state
                        .blocks
                        .iter_mut()
                        .enumerate()
                        .filter(|(b, _)| b % s_count == s)
                        .map(|(_, blk)| blk)
                        .collect();
                    let accepted = rescale_column(
                        &mut state.subjects[s],
                        &mut blks,
                        k,
                        self.settings.scale_step,
                        hyper.b_mu,
                        hyper.big_b_mu,
                        hyper.tau2_load,
                        &mut rng,
                    );
                    report.acceptance.scale.record(accepted);
                }
            }
        }

        // Subject column labels against the group map
        if self.settings.relabel_move && !self.settings.single_subject {
            let k = dims.factors;
            for s in 0..s_count {
                let mut rng = self.rng(sweep, StreamKind::Relabel, &[s as u64]);
                let mut blks: Vec<&mut ConditionState> = state
                    .blocks
                    .iter_mut()
                    .enumerate()
                    .filter(|(b, _)| b % s_count == s)
                    .map(|(_, blk)| blk)
                    .collect();
                let swaps = relabel_columns(&mut state.subjects[s], &mut blks, &state.group_prob, &mut rng);
                let pairs = (k * k.saturating_sub(1) / 2) as u64;
                report.acceptance.relabel.proposed += pairs;
                report.acceptance.relabel.accepted += swaps as u64;
            }
        }

        // Group inclusion probabilities
        if !self.settings.single_subject {
            let mut rng = self.rng(sweep, StreamKind::GroupInclusion, &[]);
            let z: Vec<&Array2<bool>> = state.subjects.iter().map(|s| &s.inclusion).collect();
            state.group_prob = update_group_inclusion(&z, &self.prior_mean, hyper.c, &mut rng);
        }

        if self.settings.track_loglik {
            let (ll, skipped) = self.log_likelihood(state)?;
            report.loglik = ll;
            report.skipped = skipped;
        }
        Ok(report)
    }

    /// Observed-data log-likelihood of the current state summed over blocks.
    pub fn log_likelihood(&self, state: &ChainState) -> Result<(f64, usize)> {
        log_likelihood(self.data, state, self.settings.execution)
    }

    /// Invariant violations of a state (empty when valid).
    pub fn check_state(&self, state: &ChainState) -> Vec<String> {
        validate_state(state, &self.dims)
    }
}

fn map_sv<F>(exec: Execution, blocks: &mut [ConditionState], f: F) -> Vec<SvStats>
where
    F: Fn(usize, &mut ConditionState) -> SvStats + Sync + Send,
{
    let mut out = vec![SvStats::default(); blocks.len()];
    let mut pairs: Vec<(&mut ConditionState, &mut SvStats)> = blocks.iter_mut().zip(out.iter_mut()).collect();
    for_each_mut(exec, &mut pairs, |b, (blk, st)| {
        **st = f(b, blk);
    });
    out
}

/// Observed-data log-likelihood of a state summed over every block.
pub fn log_likelihood(data: &Dataset, state: &ChainState, exec: Execution) -> Result<(f64, usize)> {
    let s_count = data.subjects();
    let parts = map_indices(exec, state.blocks.len(), |b| {
        let (g, s) = (b / s_count, b % s_count);
        let blk = &state.blocks[b];
        observed_log_likelihood(data.y(g, s), &state.subjects[s].loadings, &blk.log_vol, &blk.sigma2)
    });
    let mut total = 0.0;
    let mut skipped = 0;
    for p in parts {
        let (ll, sk) = p?;
        total += ll;
        skipped += sk;
    }
    Ok((total, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{gen_dataset, SimScenario};

    fn small() -> (Dataset, Hyperparameters) {
        let mut sc = SimScenario::small_scale(40, 3);
        sc.subjects = 2;
        sc.fractions = vec![0.7, 1.0];
        let (ds, _) = gen_dataset(&sc).unwrap();
        let hyper = Hyperparameters::default().resolved_for(&ds);
        (ds, hyper)
    }

    #[test]
    fn state_stays_valid_across_sweeps() {
        let (ds, hyper) = small();
        let mut settings = SamplerSettings::new(hyper);
        settings.adapt_until = 20;
        let sampler = Sampler::new(&ds, 3, settings, 1, 0).unwrap();
        let mut state = sampler.initial_state().unwrap();
        assert!(sampler.check_state(&state).is_empty());
        for it in 0..50 {
            let rep = sampler.sweep(&mut state, it).unwrap();
            assert!(rep.loglik.is_finite());
            let v = sampler.check_state(&state);
            assert!(v.is_empty(), "sweep {it}: {v:?}");
        }
    }

    #[test]
    fn serial_and_parallel_sweeps_are_bit_identical() {
        let (ds, hyper) = small();
        let mut a_set = SamplerSettings::new(hyper.clone());
        a_set.execution = Execution::Serial;
        let mut b_set = SamplerSettings::new(hyper);
        b_set.execution = Execution::Parallel;
        let a = Sampler::new(&ds, 3, a_set, 9, 1).unwrap();
        let b = Sampler::new(&ds, 3, b_set, 9, 1).unwrap();
        let mut sa = a.initial_state().unwrap();
        let mut sb = b.initial_state().unwrap();
        for it in 0..15 {
            let ra = a.sweep(&mut sa, it).unwrap();
            let rb = b.sweep(&mut sb, it).unwrap();
            assert_eq!(ra.loglik.to_bits(), rb.loglik.to_bits());
        }
        assert_eq!(sa, sb);
    }

    #[test]
    fn single_subject_mode_keeps_prior_mean() {
        let (ds, hyper) = small();
        let mut settings = SamplerSettings::new(hyper);
        settings.single_subject = true;
        let sampler = Sampler::new(&ds, 3, settings, 2, 0).unwrap();
        let mut state = sampler.initial_state().unwrap();
        for it in 0..5 {
            sampler.sweep(&mut state, it).unwrap();
        }
        assert!(state.group_prob.iter().all(|p| *p == 0.5));
    }

    #[test]
    fn unresolved_sigma_rate_is_rejected() {
        let (ds, _) = small();
        assert!(Sampler::new(&ds, 3, SamplerSettings::new(Hyperparameters::default()), 1, 0).is_err());
        let hyper = Hyperparameters::default().resolved_for(&ds);
        let err = Sampler::new(&ds, 6, SamplerSettings::new(hyper), 1, 0).err().unwrap();
        assert!(err.to_string().contains("K < N required"));
    }
}
