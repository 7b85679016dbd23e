//! Run configuration and the high-level operations behind the CLI verbs:
//! multi-chain fitting with aligned storage, summaries, the behavioral
//! regression, K selection and map comparison.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::behavior::{
    compute_task_effects, ols_report, run_regression, summarize_associations, OlsReport, TaskEffect,
    ThresholdPolicy,
};
use crate::error::{Error, Result};
use crate::exec::{map_indices, Execution};
use crate::ingest::{load_dataset, center_scale_dataset, write_dataset};
use crate::posthoc::{
    accumulate_covariance, canonicalize, match_maps, model_selection_scores, observed_log_likelihood,
    packed_gaussian_log_likelihood, packed_len, parameter_count, plan_alignment, plan_alignment_joint,
    posterior_summary, summarize_table, threshold_group_map, AlignmentPlan, Estimator, GroupMap, MapMatching,
    ModelScores, PlugIn,
};
use crate::rng::{stream, StreamKind};
use crate::sampler::{AcceptanceStats, Sampler, SamplerSettings};
use crate::simulate::SimTruth;
use crate::store::{DrawTable, StoragePolicy};
use crate::types::{ChainState, Dataset, Dimensions, Hyperparameters};

fn default_one() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_level() -> f64 {
    0.95
}
fn default_scale_step() -> f64 {
    0.1
}

/// Everything that determines a fit. Field names are the JSON config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset manifest path (relative paths resolve against the config file).
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Number of latent ICNs.
    pub k: usize,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default = "default_one")]
    pub chains: usize,
    /// Total sweeps per chain, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default = "default_one")]
    pub thin: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Keep Π₀ fixed at A (independent per-subject models).
    #[serde(default)]
    pub single_subject: bool,
    #[serde(default = "default_true")]
    pub scale_move: bool,
    #[serde(default = "default_scale_step")]
    pub scale_step: f64,
    /// Gibbs swaps of a subject's column labels towards the group map.
    #[serde(default = "default_true")]
    pub relabel_move: bool,
    /// Standardize every region series before fitting.
    #[serde(default)]
    pub standardize: bool,
    #[serde(default)]
    pub execution: Execution,
    /// Pool aligned draws of all chains in summaries (chain 0 only otherwise).
    #[serde(default)]
    pub pool: bool,
    #[serde(default = "default_level")]
    pub credible_level: f64,
    /// Also write every draw table as CSV.
    #[serde(default)]
    pub csv_export: bool,
}

impl RunConfig {
    pub fn new(k: usize, iterations: usize, burn_in: usize) -> Self {
        RunConfig {
            manifest: None,
            k,
            hyperparameters: Hyperparameters::default(),
            chains: 1,
            iterations,
            burn_in,
            thin: 1,
            seed: 0,
            out_dir: None,
            single_subject: false,
            scale_move: true,
            scale_step: default_scale_step(),
            relabel_move: true,
            standardize: false,
            execution: Execution::default(),
            pool: false,
            credible_level: default_level(),
            csv_export: false,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        if let Some(m) = &cfg.manifest {
            if m.is_relative() {
                cfg.manifest = Some(path.parent().unwrap_or(Path::new(".")).join(m));
            }
        }
        Ok(cfg)
    }

    pub fn policy(&self) -> StoragePolicy {
        StoragePolicy {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::validation("chains must be at least 1"));
        }
        self.policy().validate()?;
        if self.policy().stored_count() == 0 {
            return Err(Error::validation("no draws would be stored; increase iterations or lower thin"));
        }
        if !(self.credible_level > 0.0 && self.credible_level < 1.0) {
            return Err(Error::validation("credible_level must lie in (0,1)"));
        }
        if !(self.scale_step > 0.0) {
            return Err(Error::validation("scale_step must be positive"));
        }
        if self.k == 0 {
            return Err(Error::validation("k must be at least 1"));
        }
        self.hyperparameters.validate()
    }

    /// Load (and optionally standardize) the dataset named by the manifest.
    pub fn load_data(&self) -> Result<Dataset> {
        let m = self
            .manifest
            .as_ref()
            .ok_or_else(|| Error::validation("config has no manifest"))?;
        let ds = load_dataset(m)?;
        if self.standardize {
            center_scale_dataset(&ds)
        } else {
            Ok(ds)
        }
    }
}

// ---------------------------------------------------------------------------
// Chains

/// Aligned draws and running means of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub chain: usize,
    /// `[S, N, K]`.
    pub lambda: DrawTable,
    /// Indicators as 0/1, `[S, N, K]`.
    pub z: DrawTable,
    /// `[G, S, K]`.
    pub mu: DrawTable,
    pub phi: DrawTable,
    pub delta2: DrawTable,
    /// `[G, S, N]`.
    pub sigma2: DrawTable,
    /// `[N, K]`.
    pub pi0: DrawTable,
    /// Observed-data log-likelihood at each stored draw, `[1]`.
    pub loglik: DrawTable,
    /// Log-likelihood after every sweep, burn-in included.
    pub loglik_trace: Vec<f64>,
    /// Posterior means per block `g·S + s`, each K×T_g.
    pub factor_mean: Vec<Array2<f64>>,
    pub log_vol_mean: Vec<Array2<f64>>,
    pub amplitude_mean: Vec<Array2<f64>>,
    /// Means in the unit-norm scale: every draw's loading columns divided by
    /// their norm, and the variance each column contributes,
    /// ‖λ_k‖²·exp(h_kt). Per subject (N×K) and per block (K×T_g); the
    /// model-selection plug-in.
    pub unit_loadings_mean: Vec<Array2<f64>>,
    pub unit_amplitude_mean: Vec<Array2<f64>>,
    /// Mean implied covariance `Λ Ω_t Λ' + Γ` per block, one packed lower
    /// triangle per time point. Empty when it would exceed
    /// [`COVARIANCE_MEAN_BUDGET`].
    pub covariance_mean: Vec<Array2<f64>>,
    /// Per-subject alignment reference, N×K.
    pub reference: Vec<Array2<f64>>,
    pub acceptance: AcceptanceStats,
    pub burn_in_acceptance: AcceptanceStats,
    pub skipped_points: usize,
}

/// A numerical failure with the state at which it happened.
#[derive(Debug)]
pub struct FitFailure {
    pub error: Error,
    pub snapshot: Option<FailureSnapshot>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailureSnapshot {
    pub chain: usize,
    pub sweep: usize,
    pub message: String,
    pub state: ChainState,
}

impl From<Error> for FitFailure {
    fn from(error: Error) -> Self {
        FitFailure { error, snapshot: None }
    }
}

impl std::fmt::Display for FitFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)
    }
}

/// Builds the alignment reference from a window of draws.
struct ReferenceBuilder {
    joint: bool,
    sum: Vec<Array2<f64>>,
    count: usize,
}

impl ReferenceBuilder {
    fn new(joint: bool) -> Self {
        ReferenceBuilder {
            joint,
            sum: Vec::new(),
            count: 0,
        }
    }

    fn current(&self) -> Vec<Array2<f64>> {
        self.sum.iter().map(|s| s / self.count as f64).collect()
    }

    fn add(&mut self, state: &ChainState) {
        let loadings: Vec<&Array2<f64>> = state.subjects.iter().map(|s| &s.loadings).collect();
        if self.count == 0 {
            self.sum = loadings.iter().map(|l| canonicalize(l)).collect();
        } else {
            let reference = self.current();
            let plans = plans_for(self.joint, &loadings, &reference);
            for ((acc, l), p) in self.sum.iter_mut().zip(&loadings).zip(&plans) {
                *acc += &p.apply_columns(l);
            }
        }
        self.count += 1;
    }

    fn finish(self, fallback: &ChainState) -> Vec<Array2<f64>> {
        if self.count == 0 {
            fallback.subjects.iter().map(|s| canonicalize(&s.loadings)).collect()
        } else {
            self.current().iter().map(canonicalize).collect()
        }
    }
}

fn plans_for(joint: bool, draws: &[&Array2<f64>], reference: &[Array2<f64>]) -> Vec<AlignmentPlan> {
    if joint {
        let refs: Vec<&Array2<f64>> = reference.iter().collect();
        plan_alignment_joint(draws, &refs)
    } else {
        draws.iter().zip(reference).map(|(d, r)| plan_alignment(d, r)).collect()
    }
}

fn flat(m: &Array2<f64>) -> impl Iterator<Item = f64> + '_ {
    m.iter().copied()
}

/// Run one chain with in-flight alignment of the stored draws.
pub fn run_chain(
    data: &Dataset,
    factors: usize,
    settings: &SamplerSettings,
    policy: StoragePolicy,
    seed: u64,
    chain: usize,
) -> std::result::Result<ChainOutput, FitFailure> {
    policy.validate()?;
    let mut settings = settings.clone();
    settings.adapt_until = policy.burn_in;
    let sampler = Sampler::new(data, factors, settings.clone(), seed, chain as u64)?;
    let dims = sampler.dims.clone();
    let (n, k, s_count, g_count) = (dims.regions, dims.factors, dims.subjects, dims.conditions());
    let kept = policy.stored_count();
    let joint = !settings.single_subject;

    let mut out = ChainOutput {
        chain,
        lambda: DrawTable::with_capacity("lambda", &[s_count, n, k], kept),
        z: DrawTable::with_capacity("z", &[s_count, n, k], kept),
        mu: DrawTable::with_capacity("mu", &[g_count, s_count, k], kept),
        phi: DrawTable::with_capacity("phi", &[g_count, s_count, k], kept),
        delta2: DrawTable::with_capacity("delta2", &[g_count, s_count, k], kept),
        sigma2: DrawTable::with_capacity("sigma2", &[g_count, s_count, n], kept),
        pi0: DrawTable::with_capacity("pi0", &[n, k], kept),
        loglik: DrawTable::with_capacity("loglik", &[1], kept),
        loglik_trace: Vec::with_capacity(policy.iterations),
        factor_mean: Vec::new(),
        log_vol_mean: Vec::new(),
        amplitude_mean: Vec::new(),
        unit_loadings_mean: vec![Array2::zeros((n, k)); s_count],
        unit_amplitude_mean: Vec::new(),
        covariance_mean: Vec::new(),
        reference: Vec::new(),
        acceptance: AcceptanceStats::default(),
        burn_in_acceptance: AcceptanceStats::default(),
        skipped_points: 0,
    };
    for g in 0..g_count {
        for _ in 0..s_count {
            let t = dims.time_lengths[g];
            out.factor_mean.push(Array2::zeros((k, t)));
            out.log_vol_mean.push(Array2::zeros((k, t)));
            out.amplitude_mean.push(Array2::zeros((k, t)));
            out.unit_amplitude_mean.push(Array2::zeros((k, t)));
        }
    }
    if packed_len(n) * s_count * dims.time_lengths.iter().sum::<usize>() <= COVARIANCE_MEAN_BUDGET {
        for g in 0..g_count {
            for _ in 0..s_count {
                out.covariance_mean.push(Array2::zeros((packed_len(n), dims.time_lengths[g])));
            }
        }
    }

    let mut state = sampler.initial_state()?;
    let window_start = policy.burn_in / 2;
    let mut builder = Some(ReferenceBuilder::new(joint));
    let mut reference: Option<Vec<Array2<f64>>> = None;
    let mut stored = 0usize;

    for it in 0..policy.iterations {
        let rep = match sampler.sweep(&mut state, it) {
            Ok(r) => r,
            Err(error) => {
                return Err(FitFailure {
                    snapshot: Some(FailureSnapshot {
                        chain,
                        sweep: it,
                        message: error.to_string(),
                        state,
                    }),
                    error,
                })
            }
        };
        out.loglik_trace.push(rep.loglik);
        out.skipped_points += rep.skipped;
        if it < policy.burn_in {
            out.burn_in_acceptance.merge(&rep.acceptance);
            if it >= window_start {
                builder.as_mut().expect("builder").add(&state);
            }
            continue;
        }
        out.acceptance.merge(&rep.acceptance);
        if !policy.keeps(it) {
            continue;
        }
        let reference = reference.get_or_insert_with(|| builder.take().expect("builder").finish(&state));
        let loadings: Vec<&Array2<f64>> = state.subjects.iter().map(|s| &s.loadings).collect();
        let plans = plans_for(joint, &loadings, reference);
        let loglik = if settings.track_loglik {
            rep.loglik
        } else {
            sampler.log_likelihood(&state)?.0
        };
        record_draw(&mut out, &state, &plans, &dims, joint, loglik);
        stored += 1;
    }

    let denom = stored.max(1) as f64;
    for m in out
        .factor_mean
        .iter_mut()
        .chain(out.log_vol_mean.iter_mut())
        .chain(out.amplitude_mean.iter_mut())
        .chain(out.unit_loadings_mean.iter_mut())
        .chain(out.unit_amplitude_mean.iter_mut())
        .chain(out.covariance_mean.iter_mut())
    {
        *m /= denom;
    }
    out.reference = reference.unwrap_or_else(|| builder.take().expect("builder").finish(&state));
    Ok(out)
}

fn record_draw(
    out: &mut ChainOutput,
    state: &ChainState,
    plans: &[AlignmentPlan],
    dims: &Dimensions,
    joint: bool,
    loglik: f64,
) {
    let s_count = dims.subjects;
    let mut lam = Vec::with_capacity(out.lambda.width());
    let mut z = Vec::with_capacity(out.z.width());
    let mut norms = Vec::with_capacity(s_count);
    for (s, (subj, plan)) in state.subjects.iter().zip(plans).enumerate() {
        let aligned = plan.apply_columns(&subj.loadings);
        lam.extend(flat(&aligned));
        z.extend(plan.permute_columns(&subj.inclusion).iter().map(|v| if *v { 1.0 } else { 0.0 }));
        let col_norms: Vec<f64> = aligned.columns().into_iter().map(|c| c.dot(&c).sqrt()).collect();
        for (mut acc, (col, nrm)) in out.unit_loadings_mean[s]
            .columns_mut()
            .into_iter()
            .zip(aligned.columns().into_iter().zip(&col_norms))
        {
            if *nrm > 0.0 {
                acc.scaled_add(1.0 / nrm, &col);
            }
        }
        norms.push(col_norms);
    }
    out.lambda.push(&lam);
    out.z.push(&z);
    let mut mu = Vec::with_capacity(out.mu.width());
    let mut phi = Vec::with_capacity(out.mu.width());
    let mut d2 = Vec::with_capacity(out.mu.width());
    let mut s2 = Vec::with_capacity(out.sigma2.width());
    for (b, blk) in state.blocks.iter().enumerate() {
        let plan = &plans[b % s_count];
        for p in plan.permute(&blk.sv) {
            mu.push(p.mu);
            phi.push(p.phi);
            d2.push(p.delta2);
        }
        s2.extend(blk.sigma2.iter().copied());
        let f = plan.apply_rows(&blk.factors);
        let h = plan.permute_rows(&blk.log_vol);
        out.factor_mean[b] += &f;
        out.amplitude_mean[b] += &h.mapv(f64::exp);
        out.log_vol_mean[b] += &h;
        for (mut acc, (row, nrm)) in out.unit_amplitude_mean[b]
            .rows_mut()
            .into_iter()
            .zip(h.rows().into_iter().zip(&norms[b % s_count]))
        {
            let sq = nrm * nrm;
            acc.zip_mut_with(&row, |a, v| *a += sq * v.exp());
        }
    }
    for (b, acc) in out.covariance_mean.iter_mut().enumerate() {
        let blk = &state.blocks[b];
        accumulate_covariance(acc, &state.subjects[b % s_count].loadings, &blk.log_vol, &blk.sigma2);
    }
    out.mu.push(&mu);
    out.phi.push(&phi);
    out.delta2.push(&d2);
    out.sigma2.push(&s2);
    let pi0 = if joint {
        plans[0].permute_columns(&state.group_prob)
    } else {
        state.group_prob.clone()
    };
    out.pi0.push(&pi0.iter().copied().collect::<Vec<_>>());
    out.loglik.push(&[loglik]);
}

impl ChainOutput {
    /// Re-express every stored quantity under further per-subject plans.
    pub fn realign(&mut self, plans: &[AlignmentPlan], joint: bool) {
        let [s_count, n, k] = [self.lambda.shape[0], self.lambda.shape[1], self.lambda.shape[2]];
        let g_count = self.mu.shape[0];
        for d in 0..self.lambda.draws() {
            for (table, signed) in [(&mut self.lambda, true), (&mut self.z, false)] {
                let draw = table.draw_mut(d);
                for (s, plan) in plans.iter().enumerate() {
                    let slot = &mut draw[s * n * k..(s + 1) * n * k];
                    let m = Array2::from_shape_vec((n, k), slot.to_vec()).expect("shape");
                    let a = if signed { plan.apply_columns(&m) } else { plan.permute_columns(&m) };
                    slot.copy_from_slice(a.as_slice().expect("standard layout"));
                }
            }
            for table in [&mut self.mu, &mut self.phi, &mut self.delta2] {
                let draw = table.draw_mut(d);
                for g in 0..g_count {
                    for (s, plan) in plans.iter().enumerate() {
                        let off = (g * s_count + s) * k;
                        let v = plan.permute(&draw[off..off + k]);
                        draw[off..off + k].copy_from_slice(&v);
                    }
                }
            }
            if joint {
                let draw = self.pi0.draw_mut(d);
                let m = Array2::from_shape_vec((n, k), draw.to_vec()).expect("shape");
                draw.copy_from_slice(plans[0].permute_columns(&m).as_slice().expect("layout"));
            }
        }
        for (b, ((f, h), a)) in self
            .factor_mean
            .iter_mut()
            .zip(self.log_vol_mean.iter_mut())
            .zip(self.amplitude_mean.iter_mut())
            .enumerate()
        {
            let plan = &plans[b % s_count];
            *f = plan.apply_rows(f);
            *h = plan.permute_rows(h);
            *a = plan.permute_rows(a);
        }
        for (b, u) in self.unit_amplitude_mean.iter_mut().enumerate() {
            *u = plans[b % s_count].permute_rows(u);
        }
        for (u, plan) in self.unit_loadings_mean.iter_mut().zip(plans) {
            *u = plan.apply_columns(u);
        }
        for (r, plan) in self.reference.iter_mut().zip(plans) {
            *r = plan.apply_columns(r);
        }
    }
}

// ---------------------------------------------------------------------------
// Fit results

/// All chains of one fit, aligned to the reference of chain 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub dims: Dimensions,
    pub settings: SamplerSettings,
    pub policy: StoragePolicy,
    pub seed: u64,
    pub condition_names: Vec<String>,
    pub subject_ids: Vec<String>,
    pub has_rest: bool,
    pub pool: bool,
    pub credible_level: f64,
    pub chains: Vec<ChainOutput>,
}

pub fn sampler_settings(cfg: &RunConfig, data: &Dataset) -> SamplerSettings {
    let mut s = SamplerSettings::new(cfg.hyperparameters.resolved_for(data));
    s.single_subject = cfg.single_subject;
    s.scale_move = cfg.scale_move;
    s.scale_step = cfg.scale_step;
    s.relabel_move = cfg.relabel_move;
    s.execution = cfg.execution;
    s
}

/// Run every chain (in parallel when enabled) and align them to chain 0.
pub fn fit(data: &Dataset, cfg: &RunConfig) -> std::result::Result<FitResult, FitFailure> {
    cfg.validate()?;
    let dims = data.dims(cfg.k);
    dims.validate()?;
    let settings = sampler_settings(cfg, data);
    let policy = cfg.policy();
    let results = map_indices(cfg.execution, cfg.chains, |c| run_chain(data, cfg.k, &settings, policy, cfg.seed, c));
    let mut chains = Vec::with_capacity(cfg.chains);
    for r in results {
        chains.push(r?);
    }
    let joint = !cfg.single_subject;
    if chains.len() > 1 {
        let reference = chains[0].reference.clone();
        for ch in chains.iter_mut().skip(1) {
            let own: Vec<&Array2<f64>> = ch.reference.iter().collect();
            let plans = plans_for(joint, &own, &reference);
            ch.realign(&plans, joint);
        }
    }
    Ok(FitResult {
        dims,
        settings,
        policy,
        seed: cfg.seed,
        condition_names: data.condition_names.clone(),
        subject_ids: data.subject_ids.clone(),
        has_rest: data.has_rest,
        pool: cfg.pool,
        credible_level: cfg.credible_level,
        chains,
    })
}

impl FitResult {
    fn used(&self) -> &[ChainOutput] {
        if self.pool {
            &self.chains
        } else {
            &self.chains[..1]
        }
    }

    fn pooled(&self, pick: impl Fn(&ChainOutput) -> &DrawTable) -> DrawTable {
        let tables: Vec<&DrawTable> = self.used().iter().map(pick).collect();
        DrawTable::concat(&tables).expect("chains share shapes")
    }

    pub fn stored_draws(&self) -> usize {
        self.used().iter().map(|c| c.lambda.draws()).sum()
    }

    fn matrices(&self, values: &[f64], rows: usize, cols: usize) -> Vec<Array2<f64>> {
        values
            .chunks(rows * cols)
            .map(|c| Array2::from_shape_vec((rows, cols), c.to_vec()).expect("shape"))
            .collect()
    }

    fn point(&self, table: &DrawTable, estimator: Estimator) -> Result<Vec<f64>> {
        Ok(summarize_table(&table.data, table.width(), estimator, self.credible_level)?
            .into_iter()
            .map(|s| s.estimate)
            .collect())
    }

    /// Per-subject point estimate of Λ (N×K each).
    pub fn lambda_estimate(&self, estimator: Estimator) -> Result<Vec<Array2<f64>>> {
        let t = self.pooled(|c| &c.lambda);
        Ok(self.matrices(&self.point(&t, estimator)?, self.dims.regions, self.dims.factors))
    }

    /// Per-subject posterior inclusion probabilities of the indicators.
    pub fn inclusion_probability(&self) -> Vec<Array2<f64>> {
        let t = self.pooled(|c| &c.z);
        self.matrices(&t.mean(), self.dims.regions, self.dims.factors)
    }

    pub fn pi0_estimate(&self, estimator: Estimator) -> Result<Array2<f64>> {
        let t = self.pooled(|c| &c.pi0);
        Ok(self.matrices(&self.point(&t, estimator)?, self.dims.regions, self.dims.factors).remove(0))
    }

    fn average_blocks(&self, pick: impl Fn(&ChainOutput) -> &Vec<Array2<f64>>) -> Vec<Array2<f64>> {
        let used = self.used();
        let mut acc: Vec<Array2<f64>> = pick(&used[0]).clone();
        for c in &used[1..] {
            for (a, m) in acc.iter_mut().zip(pick(c)) {
                *a += m;
            }
        }
        let n = used.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Posterior mean factor paths per block `g·S + s`.
    pub fn factor_mean(&self) -> Vec<Array2<f64>> {
        self.average_blocks(|c| &c.factor_mean)
    }

    pub fn log_vol_mean(&self) -> Vec<Array2<f64>> {
        self.average_blocks(|c| &c.log_vol_mean)
    }

    pub fn amplitude_mean(&self) -> Vec<Array2<f64>> {
        self.average_blocks(|c| &c.amplitude_mean)
    }

    /// `Λ̂_s f̂_t` over all conditions of subject `s`, N×ΣT.
    pub fn reconstruction(&self, estimator: Estimator) -> Result<Vec<Array2<f64>>> {
        let lam = self.lambda_estimate(estimator)?;
        let f = self.factor_mean();
        Ok(reconstruct_all(&self.dims, &lam, &f))
    }

    /// μ draws `[s][k]` of one condition.
    pub fn mu_draws(&self, g: usize) -> Vec<Vec<Vec<f64>>> {
        let t = self.pooled(|c| &c.mu);
        let (s_count, k) = (self.dims.subjects, self.dims.factors);
        (0..s_count)
            .map(|s| (0..k).map(|j| t.entry((g * s_count + s) * k + j)).collect())
            .collect()
    }

    /// KS task effects of condition `g` against rest.
    pub fn task_effects(&self, g: usize, policy: ThresholdPolicy) -> Result<TaskEffect> {
        if !self.has_rest {
            return Err(Error::validation("task effects require rest"));
        }
        if g == 0 || g >= self.dims.conditions() {
            return Err(Error::validation(format!(
                "task condition index {g} must be in 1..{}",
                self.dims.conditions()
            )));
        }
        compute_task_effects(&self.mu_draws(0), &self.mu_draws(g), policy)
    }

    /// AIC / BIC at the posterior-mean plug-in and DIC from stored deviances.
    ///
    /// The loadings are identified only up to column scale and, for
    /// redundant columns, rotation, so the plug-in is the posterior mean of
    /// the implied covariance `Λ Ω_t Λ' + Γ` at every time point. When that
    /// accumulator was over budget it falls back to the mean unit direction
    /// of each column with the mean variance it contributes.
    pub fn model_selection(&self, data: &Dataset) -> Result<ModelScores> {
        let dims = &self.dims;
        let (n, k, s_count) = (dims.regions, dims.factors, dims.subjects);
        let incl = self.inclusion_probability();
        let nonzero = incl.iter().flat_map(|m| m.iter()).filter(|p| **p >= 0.5).count();
        let p = parameter_count(nonzero, n, k, dims.conditions(), s_count);
        let deviance: Vec<f64> = self.pooled(|c| &c.loglik).data.iter().map(|l| -2.0 * l).collect();
        if self.used().iter().all(|c| !c.covariance_mean.is_empty()) {
            let cov = self.average_blocks(|c| &c.covariance_mean);
            let mut plugin = 0.0;
            for (b, cb) in cov.iter().enumerate() {
                plugin += packed_gaussian_log_likelihood(data.y(b / s_count, b % s_count), cb)?.0;
            }
            let mut scores = model_selection_scores(&deviance, plugin, p, dims.total_time())?;
            scores.plugin = PlugIn::Covariance;
            return Ok(scores);
        }
        let mut lam_mean = self.average_blocks(|c| &c.unit_loadings_mean);
        // Extrinsic mean direction: averaged unit columns, renormalised.
        for m in &mut lam_mean {
            for mut col in m.columns_mut() {
                let nrm = col.dot(&col).sqrt();
                if nrm > 0.0 {
                    col /= nrm;
                }
            }
        }
        let sig = self.pooled(|c| &c.sigma2).mean();
        let h: Vec<Array2<f64>> = self
            .average_blocks(|c| &c.unit_amplitude_mean)
            .into_iter()
            .map(|a| a.mapv(|v| v.max(f64::MIN_POSITIVE).ln()))
            .collect();
        let mut plugin = 0.0;
        for (b, hb) in h.iter().enumerate() {
            let (g, s) = (b / s_count, b % s_count);
            let s2 = Array1::from(sig[b * n..(b + 1) * n].to_vec());
            plugin += observed_log_likelihood(data.y(g, s), &lam_mean[s], hb, &s2)?.0;
        }
        model_selection_scores(&deviance, plugin, p, dims.total_time())
    }
}

/// Concatenate `Λ_s F_{g,s}` over conditions for every subject.
pub fn reconstruct_all(dims: &Dimensions, loadings: &[Array2<f64>], factors: &[Array2<f64>]) -> Vec<Array2<f64>> {
    let s_count = dims.subjects;
    (0..s_count)
        .map(|s| {
            let parts: Vec<Array2<f64>> = (0..dims.conditions())
                .map(|g| loadings[s].dot(&factors[g * s_count + s]))
                .collect();
            let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
            ndarray::concatenate(ndarray::Axis(1), &views).expect("equal region counts")
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Persistence

/// Machine-readable description of a run, enough to re-run it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config: Option<RunConfig>,
    pub dims: Dimensions,
    pub settings: SamplerSettings,
    pub policy: StoragePolicy,
    pub seed: u64,
    pub chains: usize,
    pub stored_draws_per_chain: Vec<usize>,
    pub condition_names: Vec<String>,
    pub subject_ids: Vec<String>,
    pub has_rest: bool,
    pub pool: bool,
    pub credible_level: f64,
    pub bic_sample_size: usize,
    pub acceptance: Vec<AcceptanceRates>,
    pub skipped_likelihood_points: Vec<usize>,
    pub decisions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub chain: usize,
    pub h: f64,
    pub phi: f64,
    pub delta2: f64,
    pub asis_mu: f64,
    pub asis_delta: f64,
    pub scale: f64,
    pub relabel: f64,
    pub guard_rejections: u64,
}

impl AcceptanceRates {
    fn from_stats(chain: usize, a: &AcceptanceStats) -> Self {
        AcceptanceRates {
            chain,
            h: a.h.rate(),
            phi: a.phi.rate(),
            delta2: a.delta2.rate(),
            asis_mu: a.asis_mu.rate(),
            asis_delta: a.asis_delta.rate(),
            scale: a.scale.rate(),
            relabel: a.relabel.rate(),
            guard_rejections: a.guard_rejections,
        }
    }
}

/// Largest number of values (per chain) spent on the mean implied
/// covariance; beyond it model selection falls back to the column plug-in.
pub const COVARIANCE_MEAN_BUDGET: usize = 1 << 24;

const DECISIONS: &[&str] = &[
    "sweep order: sigma2, SV (single-site h, centered phi/mu/delta2, non-centered mu/delta interweave), loadings, factors, column rescale, pairwise column relabel (joint mode), Pi0",
    "h proposal scales adapt towards 0.44 acceptance during burn-in and are frozen afterwards",
    "alignment reference: signed mean of loadings over the second half of burn-in, largest entry of each column positive",
    "draw signs follow agreement with the matched reference column",
    "BIC sample size: number of time points summed over subjects and conditions",
    "DIC: 2 * mean deviance - deviance at the posterior mean",
    "AIC/BIC/DIC plug-in: posterior mean of the implied covariance per time point (column plug-in when over budget)",
    "d_sigma default: (c_sigma - 1) * pooled data variance",
];

fn write_matrix_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn block_table(name: &str, blocks: &[Array2<f64>], dims: &Dimensions, g: usize) -> DrawTable {
    let s_count = dims.subjects;
    let t = dims.time_lengths[g];
    let mut table = DrawTable::new(name, &[s_count, dims.factors, t]);
    let mut v = Vec::with_capacity(table.width());
    for s in 0..s_count {
        v.extend(blocks[g * s_count + s].iter().copied());
    }
    table.push(&v);
    table
}

fn table_blocks(table: &DrawTable, dims: &Dimensions, g: usize) -> Vec<Array2<f64>> {
    let (k, t) = (dims.factors, dims.time_lengths[g]);
    table.draw(0).chunks(k * t).map(|c| Array2::from_shape_vec((k, t), c.to_vec()).expect("shape")).collect()
}

impl FitResult {
    pub fn metadata(&self, config: Option<&RunConfig>) -> RunMetadata {
        RunMetadata {
            // The output location is not part of the job, so equal jobs
            // written to different places stay byte-identical.
            config: config.map(|c| RunConfig { out_dir: None, ..c.clone() }),
            dims: self.dims.clone(),
            settings: self.settings.clone(),
            policy: self.policy,
            seed: self.seed,
            chains: self.chains.len(),
            stored_draws_per_chain: self.chains.iter().map(|c| c.lambda.draws()).collect(),
            condition_names: self.condition_names.clone(),
            subject_ids: self.subject_ids.clone(),
            has_rest: self.has_rest,
            pool: self.pool,
            credible_level: self.credible_level,
            bic_sample_size: self.dims.total_time(),
            acceptance: self.chains.iter().map(|c| AcceptanceRates::from_stats(c.chain, &c.acceptance)).collect(),
            skipped_likelihood_points: self.chains.iter().map(|c| c.skipped_points).collect(),
            decisions: DECISIONS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Write draw tables per chain, metadata and point-estimate tables.
    pub fn write(&self, dir: &Path, config: Option<&RunConfig>, csv_export: bool) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("metadata.json"), &self.metadata(config))?;
        for c in &self.chains {
            let cdir = dir.join(format!("chain{}", c.chain));
            fs::create_dir_all(&cdir).map_err(|e| Error::io(&cdir, e))?;
            let mut trace = DrawTable::new("loglik_trace", &[1]);
            trace.data = c.loglik_trace.clone();
            let mut reference = DrawTable::new("reference", &[self.dims.subjects, self.dims.regions, self.dims.factors]);
            reference.push(&c.reference.iter().flat_map(|r| r.iter().copied()).collect::<Vec<_>>());
            let mut tables = vec![
                &c.lambda, &c.z, &c.mu, &c.phi, &c.delta2, &c.sigma2, &c.pi0, &c.loglik,
            ]
            .into_iter()
            .cloned()
            .collect::<Vec<_>>();
            tables.push(trace);
            tables.push(reference);
            let mut unit = DrawTable::new("unit_loadings_mean", &[self.dims.subjects, self.dims.regions, self.dims.factors]);
            unit.push(&c.unit_loadings_mean.iter().flat_map(|r| r.iter().copied()).collect::<Vec<_>>());
            tables.push(unit);
            for g in 0..self.dims.conditions() {
                tables.push(block_table(&format!("factor_mean_g{g}"), &c.factor_mean, &self.dims, g));
                tables.push(block_table(&format!("log_vol_mean_g{g}"), &c.log_vol_mean, &self.dims, g));
                tables.push(block_table(&format!("amplitude_mean_g{g}"), &c.amplitude_mean, &self.dims, g));
                tables.push(block_table(&format!("unit_amplitude_mean_g{g}"), &c.unit_amplitude_mean, &self.dims, g));
                if !c.covariance_mean.is_empty() {
                    let s_count = self.dims.subjects;
                    let blocks = &c.covariance_mean[g * s_count..(g + 1) * s_count];
                    let (p, t) = blocks[0].dim();
                    let mut table = DrawTable::new(&format!("covariance_mean_g{g}"), &[s_count, p, t]);
                    table.push(&blocks.iter().flat_map(|b| b.iter().copied()).collect::<Vec<_>>());
                    tables.push(table);
                }
            }
            for t in &tables {
                t.write_bin(&cdir.join(format!("{}.bin", t.name)))?;
                if csv_export && !t.name.contains("_mean_g") {
                    t.write_csv(&cdir.join(format!("{}.csv", t.name)))?;
                }
            }
            let mut acc = serde_json::Map::new();
            acc.insert(
                "sampling".into(),
                serde_json::to_value(AcceptanceRates::from_stats(c.chain, &c.acceptance)).expect("json"),
            );
            acc.insert(
                "burn_in".into(),
                serde_json::to_value(AcceptanceRates::from_stats(c.chain, &c.burn_in_acceptance)).expect("json"),
            );
            write_json(&cdir.join("acceptance.json"), &acc)?;
        }
        self.write_estimates(dir, Estimator::Median)
    }

    /// Per-subject Λ̂ and Π̂₀ tables.
    pub fn write_estimates(&self, dir: &Path, estimator: Estimator) -> Result<()> {
        let k = self.dims.factors;
        let lam = self.lambda_estimate(estimator)?;
        let mut header = vec!["subject".to_string(), "region".to_string()];
        header.extend((0..k).map(|j| format!("k{j}")));
        let mut rows = Vec::new();
        for (s, l) in lam.iter().enumerate() {
            for (i, row) in l.rows().into_iter().enumerate() {
                let mut r = vec![self.subject_ids[s].clone(), i.to_string()];
                r.extend(row.iter().map(|v| format!("{v}")));
                rows.push(r);
            }
        }
        write_matrix_csv(&dir.join("lambda_hat.csv"), &header, &rows)?;
        let pi0 = self.pi0_estimate(estimator)?;
        write_map_csv(&dir.join("pi0_hat.csv"), &pi0.mapv(|v| format!("{v}")))
    }

    /// Read a store written by [`FitResult::write`].
    pub fn read(dir: &Path) -> Result<FitResult> {
        let meta_path = dir.join("metadata.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: RunMetadata = serde_json::from_str(&text).map_err(|e| Error::parse(&meta_path, e.to_string()))?;
        let mut chains = Vec::with_capacity(meta.chains);
        for c in 0..meta.chains {
            let cdir = dir.join(format!("chain{c}"));
            let read = |name: &str| DrawTable::read_bin(&cdir.join(format!("{name}.bin")));
            let reference = read("reference")?;
            let (n, k) = (meta.dims.regions, meta.dims.factors);
            let mut factor_mean = Vec::new();
            let mut log_vol_mean = Vec::new();
            let mut amplitude_mean = Vec::new();
            let mut unit_amplitude_mean = Vec::new();
            let mut covariance_mean = Vec::new();
            for g in 0..meta.dims.conditions() {
                let path = cdir.join(format!("covariance_mean_g{g}.bin"));
                if path.exists() {
                    let (p, t) = (packed_len(n), meta.dims.time_lengths[g]);
                    let table = DrawTable::read_bin(&path)?;
                    covariance_mean.extend(
                        table.draw(0).chunks(p * t).map(|c| Array2::from_shape_vec((p, t), c.to_vec()).expect("shape")),
                    );
                }
                unit_amplitude_mean.extend(table_blocks(&read(&format!("unit_amplitude_mean_g{g}"))?, &meta.dims, g));
                factor_mean.extend(table_blocks(&read(&format!("factor_mean_g{g}"))?, &meta.dims, g));
                log_vol_mean.extend(table_blocks(&read(&format!("log_vol_mean_g{g}"))?, &meta.dims, g));
                amplitude_mean.extend(table_blocks(&read(&format!("amplitude_mean_g{g}"))?, &meta.dims, g));
            }
            chains.push(ChainOutput {
                chain: c,
                lambda: read("lambda")?,
                z: read("z")?,
                mu: read("mu")?,
                phi: read("phi")?,
                delta2: read("delta2")?,
                sigma2: read("sigma2")?,
                pi0: read("pi0")?,
                loglik: read("loglik")?,
                loglik_trace: read("loglik_trace")?.data,
                factor_mean,
                log_vol_mean,
                amplitude_mean,
                unit_amplitude_mean,
                covariance_mean,
                unit_loadings_mean: read("unit_loadings_mean")?
                    .draw(0)
                    .chunks(n * k)
                    .map(|ch| Array2::from_shape_vec((n, k), ch.to_vec()).expect("shape"))
                    .collect(),
                reference: reference
                    .draw(0)
                    .chunks(n * k)
                    .map(|ch| Array2::from_shape_vec((n, k), ch.to_vec()).expect("shape"))
                    .collect(),
                acceptance: AcceptanceStats::default(),
                burn_in_acceptance: AcceptanceStats::default(),
                skipped_points: meta.skipped_likelihood_points.get(c).copied().unwrap_or(0),
            });
        }
        let res = FitResult {
            dims: meta.dims,
            settings: meta.settings,
            policy: meta.policy,
            seed: meta.seed,
            condition_names: meta.condition_names,
            subject_ids: meta.subject_ids,
            has_rest: meta.has_rest,
            pool: meta.pool,
            credible_level: meta.credible_level,
            chains,
        };
        if res.chains.is_empty() || res.stored_draws() < 2 {
            return Err(Error::validation(format!("store {} holds no draws", dir.display())));
        }
        Ok(res)
    }
}

/// Write an N×K map as CSV with header `region,k0,...`.
pub fn write_map_csv(path: &Path, values: &Array2<String>) -> Result<()> {
    let mut header = vec!["region".to_string()];
    header.extend((0..values.ncols()).map(|j| format!("k{j}")));
    let rows: Vec<Vec<String>> = values
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, r)| std::iter::once(i.to_string()).chain(r.iter().cloned()).collect())
        .collect();
    write_matrix_csv(path, &header, &rows)
}

/// Read a map CSV (header `region,k0,...`); nonzero entries are members.
pub fn read_map_csv(path: &Path) -> Result<Vec<BTreeSet<usize>>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let k = reader.headers().map_err(|e| Error::parse(path, e.to_string()))?.len().saturating_sub(1);
    if k == 0 {
        return Err(Error::parse(path, "map needs at least one column after 'region'"));
    }
    let mut sets = vec![BTreeSet::new(); k];
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e.to_string()))?;
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::parse(path, format!("non-numeric cell '{cell}' at row {}", i + 2)))?;
            if v != 0.0 {
                sets[j].insert(i);
            }
        }
    }
    Ok(sets)
}

// ---------------------------------------------------------------------------
// Commands

/// Write simulated data, its manifest and the ground truth.
pub fn write_simulation(dir: &Path, data: &Dataset, truth: &SimTruth) -> Result<PathBuf> {
    let manifest = write_dataset(dir, data)?;
    write_json(&dir.join("truth.json"), truth)?;
    write_json(&dir.join("scenario.json"), &truth.scenario)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryReport {
    pub stored_draws: usize,
    pub threshold: f64,
    pub estimator: Estimator,
    pub group_map_entries: usize,
    pub files: Vec<String>,
}

/// Summary tables of a store: Λ, SV parameters, σ², Π₀, the thresholded
/// group map and, when a rest condition exists, KS task effects.
pub fn summarize(
    store: &FitResult,
    out: &Path,
    threshold: f64,
    estimator: Estimator,
    policy: ThresholdPolicy,
) -> Result<SummaryReport> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let level = store.credible_level;
    let dims = &store.dims;
    let (n, k, s_count) = (dims.regions, dims.factors, dims.subjects);
    let mut files = Vec::new();
    let fmt = |v: f64| format!("{v}");

    let lam = store.pooled(|c| &c.lambda);
    let lam_sum = summarize_table(&lam.data, lam.width(), estimator, level)?;
    let incl = store.inclusion_probability();
    let mut rows = Vec::new();
    for s in 0..s_count {
        for i in 0..n {
            for j in 0..k {
                let e = &lam_sum[(s * n + i) * k + j];
                rows.push(vec![
                    store.subject_ids[s].clone(),
                    i.to_string(),
                    j.to_string(),
                    fmt(e.estimate),
                    fmt(e.lower),
                    fmt(e.upper),
                    fmt(incl[s][[i, j]]),
                ]);
            }
        }
    }
    let header: Vec<String> = ["subject", "region", "factor", "estimate", "lower", "upper", "inclusion_prob"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write_matrix_csv(&out.join("lambda_summary.csv"), &header, &rows)?;
    files.push("lambda_summary.csv".into());

    let mut rows = Vec::new();
    let tables = [
        ("mu", store.pooled(|c| &c.mu)),
        ("phi", store.pooled(|c| &c.phi)),
        ("delta2", store.pooled(|c| &c.delta2)),
    ];
    let sums: Vec<_> = tables
        .iter()
        .map(|(_, t)| summarize_table(&t.data, t.width(), estimator, level))
        .collect::<Result<_>>()?;
    for g in 0..dims.conditions() {
        for s in 0..s_count {
            for j in 0..k {
                let idx = (g * s_count + s) * k + j;
                let mut r = vec![store.condition_names[g].clone(), store.subject_ids[s].clone(), j.to_string()];
                for sm in &sums {
                    r.extend([fmt(sm[idx].estimate), fmt(sm[idx].lower), fmt(sm[idx].upper)]);
                }
                rows.push(r);
            }
        }
    }
    let mut header: Vec<String> = vec!["condition".into(), "subject".into(), "factor".into()];
    for (name, _) in &tables {
        header.extend([format!("{name}"), format!("{name}_lower"), format!("{name}_upper")]);
    }
    write_matrix_csv(&out.join("sv_summary.csv"), &header, &rows)?;
    files.push("sv_summary.csv".into());

    let sig = store.pooled(|c| &c.sigma2);
    let sig_sum = summarize_table(&sig.data, sig.width(), estimator, level)?;
    let mut rows = Vec::new();
    for g in 0..dims.conditions() {
        for s in 0..s_count {
            for i in 0..n {
                let e = &sig_sum[(g * s_count + s) * n + i];
                rows.push(vec![
                    store.condition_names[g].clone(),
                    store.subject_ids[s].clone(),
                    i.to_string(),
                    fmt(e.estimate),
                    fmt(e.lower),
                    fmt(e.upper),
                ]);
            }
        }
    }
    let header: Vec<String> = ["condition", "subject", "region", "estimate", "lower", "upper"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write_matrix_csv(&out.join("sigma2_summary.csv"), &header, &rows)?;
    files.push("sigma2_summary.csv".into());

    let pi0 = store.pi0_estimate(estimator)?;
    write_map_csv(&out.join("pi0_summary.csv"), &pi0.mapv(fmt))?;
    files.push("pi0_summary.csv".into());
    let map: GroupMap = threshold_group_map(&pi0, threshold)?;
    write_map_csv(&out.join("group_map.csv"), &map.included.mapv(|b| if b { "1".into() } else { "0".into() }))?;
    files.push("group_map.csv".into());

    if store.has_rest && dims.conditions() > 1 {
        let mut rows = Vec::new();
        for g in 1..dims.conditions() {
            let te = store.task_effects(g, policy)?;
            for s in 0..s_count {
                for j in 0..k {
                    rows.push(vec![
                        store.condition_names[g].clone(),
                        store.subject_ids[s].clone(),
                        j.to_string(),
                        fmt(te.delta[[s, j]]),
                        te.sign[[s, j]].to_string(),
                        format!("{:?}", te.label[[s, j]]).to_lowercase(),
                        fmt(te.threshold[[s, j]]),
                    ]);
                }
            }
        }
        let header: Vec<String> = ["condition", "subject", "factor", "ks", "sign", "label", "threshold"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        write_matrix_csv(&out.join("task_effects.csv"), &header, &rows)?;
        files.push("task_effects.csv".into());
    }

    let report = SummaryReport {
        stored_draws: store.stored_draws(),
        threshold,
        estimator,
        group_map_entries: map.included.iter().filter(|b| **b).count(),
        files,
    };
    write_json(&out.join("summary.json"), &report)?;
    Ok(report)
}

/// Settings of the behavioral regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressSettings {
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub level: f64,
    pub threshold: ThresholdPolicy,
}

impl Default for RegressSettings {
    fn default() -> Self {
        RegressSettings {
            sweeps: 20_000,
            burn_in: 2_000,
            seed: 0,
            level: 0.95,
            threshold: ThresholdPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RegressReport {
    pub task: String,
    pub measure: String,
    pub subjects: Vec<String>,
    /// S×K KS distances used as regressors (before centering).
    pub delta: Array2<f64>,
    pub inclusion_probability: Vec<f64>,
    pub beta_estimate: Vec<f64>,
    pub beta_lower: Vec<f64>,
    pub beta_upper: Vec<f64>,
    pub associated: Vec<bool>,
    pub ols: Option<OlsReport>,
}

/// Regress behavioral scores on KS task effects. Both the response and the
/// KS columns are centered because the regression has no intercept.
pub fn regress_scores(
    z: &[f64],
    delta: &Array2<f64>,
    hyper: &Hyperparameters,
    settings: &RegressSettings,
) -> Result<(Vec<bool>, Vec<f64>, Vec<(f64, f64, f64)>, Option<OlsReport>)> {
    let s = z.len();
    if delta.nrows() != s {
        return Err(Error::Dimension(format!("{} scores for {} subjects", s, delta.nrows())));
    }
    let zm = z.iter().sum::<f64>() / s as f64;
    let zc = Array1::from_iter(z.iter().map(|v| v - zm));
    let mut xc = delta.clone();
    for mut col in xc.columns_mut() {
        let m = col.sum() / s as f64;
        col.mapv_inplace(|v| v - m);
    }
    let mut rng = stream(settings.seed, StreamKind::Regression, &[]);
    let draws = run_regression(&zc, &xc, hyper, settings.sweeps, settings.burn_in, &mut rng)?;
    let flags = summarize_associations(&draws.beta, settings.level)?;
    let incl = draws.inclusion_probabilities();
    let sums = (0..delta.ncols())
        .map(|k| {
            let e = posterior_summary(&draws.beta_column(k), Estimator::Median, settings.level)?;
            Ok((e.estimate, e.lower, e.upper))
        })
        .collect::<Result<Vec<_>>>()?;
    let ols = ols_report(&Array1::from(z.to_vec()), delta).ok();
    Ok((flags, incl, sums, ols))
}

/// Regression of one behavioral measure on the task effects of one condition.
pub fn regress(
    store: &FitResult,
    scores: &[f64],
    measure: &str,
    task: &str,
    settings: &RegressSettings,
) -> Result<RegressReport> {
    if !store.has_rest {
        return Err(Error::validation("task effects require rest"));
    }
    let g = store
        .condition_names
        .iter()
        .position(|c| c == task)
        .ok_or_else(|| Error::validation(format!("unknown task condition '{task}'")))?;
    let te = store.task_effects(g, settings.threshold)?;
    let (associated, incl, sums, ols) = regress_scores(scores, &te.delta, &store.settings.hyper, settings)?;
    Ok(RegressReport {
        task: task.to_string(),
        measure: measure.to_string(),
        subjects: store.subject_ids.clone(),
        delta: te.delta,
        inclusion_probability: incl,
        beta_estimate: sums.iter().map(|s| s.0).collect(),
        beta_lower: sums.iter().map(|s| s.1).collect(),
        beta_upper: sums.iter().map(|s| s.2).collect(),
        associated,
        ols,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct KScore {
    pub k: usize,
    pub scores: ModelScores,
    /// Smallest K whose AIC is within one standard deviation (over tested K)
    /// of the minimum.
    pub elbow: bool,
}

/// Fit every K in the list and report AIC/BIC/DIC.
pub fn select_k(data: &Dataset, cfg: &RunConfig, ks: &[usize]) -> std::result::Result<Vec<KScore>, FitFailure> {
    if ks.is_empty() {
        return Err(Error::validation("no K values given").into());
    }
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        data.dims(k).validate()?;
    }
    for &k in ks {
        let mut c = cfg.clone();
        c.k = k;
        let res = fit(data, &c)?;
        let scores = res.model_selection(data)?;
        out.push(KScore { k, scores, elbow: false });
    }
    let aic: Vec<f64> = out.iter().map(|r| r.scores.aic).collect();
    let min = aic.iter().cloned().fold(f64::INFINITY, f64::min);
    let sd = if aic.len() > 1 {
        let m = aic.iter().sum::<f64>() / aic.len() as f64;
        (aic.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (aic.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    if let Some(best) = out
        .iter()
        .enumerate()
        .filter(|(_, r)| r.scores.aic <= min + sd)
        .min_by_key(|(_, r)| r.k)
        .map(|(i, _)| i)
    {
        out[best].elbow = true;
    }
    Ok(out)
}

pub fn write_k_scores(path: &Path, rows: &[KScore]) -> Result<()> {
    let header: Vec<String> = ["k", "aic", "bic", "dic", "p_dic", "parameters", "plugin_loglik", "elbow"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                format!("{}", r.scores.aic),
                format!("{}", r.scores.bic),
                format!("{}", r.scores.dic),
                format!("{}", r.scores.p_dic),
                r.scores.parameters.to_string(),
                format!("{}", r.scores.plugin_log_likelihood),
                r.elbow.to_string(),
            ]
        })
        .collect();
    write_matrix_csv(path, &header, &body)
}

/// Match two map files one-to-one by Jaccard similarity.
pub fn compare_maps(a: &Path, b: &Path) -> Result<MapMatching> {
    let ma = read_map_csv(a)?;
    let mb = read_map_csv(b)?;
    match_maps(&ma, &mb)
}

/// `mean ± sd` with four decimals.
pub fn format_similarity(m: &MapMatching) -> String {
    format!("{:.4} ± {:.4}", m.mean, m.sd)
}
