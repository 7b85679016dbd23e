//! Ground-truth datasets drawn from the generative model.
//!
//! Every subject uses its own random stream derived from the scenario seed and
//! the subject index, so subjects can be generated in any order (or in
//! parallel) with identical results.

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indices, Execution};
use crate::loading::clamp_open_unit;
use crate::rng::{stream, BlockRng, StreamKind};
use crate::sv::{simulate_path, SvParams, SvTuning};
use crate::types::{ChainState, ConditionState, Dataset, Dimensions, SubjectState};

/// A quantity given as one scalar, one value per factor, or a full
/// `[condition][subject][factor]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactorValue {
    Scalar(f64),
    PerFactor(Vec<f64>),
    Full(Vec<Vec<Vec<f64>>>),
}

impl FactorValue {
    pub fn get(&self, g: usize, s: usize, k: usize) -> f64 {
        match self {
            FactorValue::Scalar(v) => *v,
            FactorValue::PerFactor(v) => v[k],
            FactorValue::Full(v) => v[g][s][k],
        }
    }

    fn check(&self, name: &str, dims: &Dimensions) -> Result<()> {
        let k = dims.factors;
        match self {
            FactorValue::Scalar(_) => Ok(()),
            FactorValue::PerFactor(v) if v.len() == k => Ok(()),
            FactorValue::Full(v)
                if v.len() == dims.conditions()
                    && v.iter().all(|c| c.len() == dims.subjects && c.iter().all(|r| r.len() == k)) =>
            {
                Ok(())
            }
            _ => Err(Error::validation(format!(
                "{name}: expected a scalar, {k} values, or a [condition][subject][factor] table"
            ))),
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            FactorValue::Scalar(v) => vec![*v],
            FactorValue::PerFactor(v) => v.clone(),
            FactorValue::Full(v) => v.iter().flatten().flatten().copied().collect(),
        }
    }
}

/// Idiosyncratic variance: one scalar or one value per region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegionValue {
    Scalar(f64),
    PerRegion(Vec<f64>),
}

impl RegionValue {
    pub fn get(&self, n: usize) -> f64 {
        match self {
            RegionValue::Scalar(v) => *v,
            RegionValue::PerRegion(v) => v[n],
        }
    }
}

/// Distribution of the nonzero loading values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum LoadingMode {
    /// N(0, tau2).
    Slab { tau2: f64 },
    /// ±magnitude with a random sign.
    FixedMagnitude { magnitude: f64 },
}

impl Default for LoadingMode {
    fn default() -> Self {
        LoadingMode::Slab { tau2: 1.0 }
    }
}

/// Membership drawn from group inclusion probabilities instead of fixed counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMembership {
    /// N rows of K probabilities.
    pub probabilities: Vec<Vec<f64>>,
}

fn default_true() -> bool {
    true
}

/// Everything needed to draw one synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub regions: usize,
    pub factors: usize,
    pub subjects: usize,
    /// Time points per condition.
    pub time_lengths: Vec<usize>,
    #[serde(default = "default_true")]
    pub has_rest: bool,
    /// Fraction of nonzero loadings per subject (ignored with `group`).
    #[serde(default)]
    pub fractions: Vec<f64>,
    #[serde(default)]
    pub group: Option<GroupMembership>,
    pub mu: FactorValue,
    pub phi: FactorValue,
    /// Standard deviation δ of the log-volatility innovations.
    pub delta: FactorValue,
    pub sigma2: RegionValue,
    #[serde(default)]
    pub loading_mode: LoadingMode,
    pub seed: u64,
}

/// Ground truth returned alongside the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub scenario: SimScenario,
    pub state: ChainState,
}

impl SimScenario {
    pub fn dims(&self) -> Dimensions {
        Dimensions {
            regions: self.regions,
            factors: self.factors,
            subjects: self.subjects,
            time_lengths: self.time_lengths.clone(),
        }
    }

    /// Six subjects with nonzero fractions 0.5 to 1.0, N=6, K=3, two
    /// conditions of `t` points, μ_k = 2 − k, φ = 0.9, δ = 0.5.
    pub fn small_scale(t: usize, seed: u64) -> Self {
        SimScenario {
            regions: 6,
            factors: 3,
            subjects: 6,
            time_lengths: vec![t, t],
            has_rest: true,
            fractions: vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            group: None,
            mu: FactorValue::PerFactor(vec![1.0, 0.0, -1.0]),
            phi: FactorValue::Scalar(0.9),
            delta: FactorValue::Scalar(0.5),
            sigma2: RegionValue::Scalar(0.07),
            loading_mode: LoadingMode::Slab { tau2: 1.0 },
            seed,
        }
    }

    /// Homogeneous group: every ICN covers a contiguous (wrapping) block of
    /// about 1.5·N/K regions with inclusion probability 0.95, 0.05 elsewhere;
    /// one condition of `t` points.
    pub fn homogeneous(regions: usize, factors: usize, subjects: usize, t: usize, seed: u64) -> Self {
        let width = ((1.5 * regions as f64 / factors as f64).round() as usize).max(1);
        let mut probs = vec![vec![0.05; factors]; regions];
        for k in 0..factors {
            let start = k * regions / factors;
            for j in 0..width {
                probs[(start + j) % regions][k] = 0.95;
            }
        }
        SimScenario {
            regions,
            factors,
            subjects,
            time_lengths: vec![t],
            has_rest: true,
            fractions: Vec::new(),
            group: Some(GroupMembership { probabilities: probs }),
            mu: FactorValue::Scalar(0.0),
            phi: FactorValue::Scalar(0.9),
            delta: FactorValue::Scalar(0.5),
            sigma2: RegionValue::Scalar(0.2),
            loading_mode: LoadingMode::Slab { tau2: 1.0 },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        dims.validate()?;
        match &self.group {
            Some(g) => {
                if g.probabilities.len() != self.regions
                    || g.probabilities.iter().any(|r| r.len() != self.factors)
                {
                    return Err(Error::validation(format!(
                        "group.probabilities must be {}×{}",
                        self.regions, self.factors
                    )));
                }
                if let Some(p) = g.probabilities.iter().flatten().find(|p| !(0.0..=1.0).contains(*p)) {
                    return Err(Error::validation(format!(
                        "group.probabilities entries must lie in [0,1], got {p}"
                    )));
                }
            }
            None => {
                if self.fractions.len() != self.subjects {
                    return Err(Error::validation(format!(
                        "fractions: expected {} values, got {}",
                        self.subjects,
                        self.fractions.len()
                    )));
                }
                if let Some(f) = self.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
                    return Err(Error::validation(format!("fractions: {f} is outside [0, 1]")));
                }
            }
        }
        self.mu.check("mu", &dims)?;
        self.phi.check("phi", &dims)?;
        self.delta.check("delta", &dims)?;
        if self.mu.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("mu: values must be finite"));
        }
        if let Some(p) = self.phi.values().into_iter().find(|p| !(p.abs() < 1.0)) {
            return Err(Error::validation(format!("phi: |phi| < 1 required, got {p}")));
        }
        if let Some(d) = self.delta.values().into_iter().find(|d| !(*d > 0.0)) {
            return Err(Error::validation(format!("delta: must be positive, got {d}")));
        }
        match &self.sigma2 {
            RegionValue::Scalar(v) if *v > 0.0 => {}
            RegionValue::PerRegion(v) if v.len() == self.regions && v.iter().all(|x| *x > 0.0) => {}
            _ => {
                return Err(Error::validation(format!(
                    "sigma2: expected a positive scalar or {} positive values",
                    self.regions
                )))
            }
        }
        match self.loading_mode {
            LoadingMode::Slab { tau2 } if tau2 > 0.0 => {}
            LoadingMode::FixedMagnitude { magnitude } if magnitude >= 0.0 => {}
            _ => return Err(Error::validation("loading_mode: invalid scale")),
        }
        Ok(())
    }
}

/// Number of nonzero loadings for a fraction of an N×K matrix.
pub fn nonzero_count(fraction: f64, regions: usize, factors: usize) -> usize {
    (fraction * (regions * factors) as f64).round() as usize
}

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

fn draw_value<R: Rng + ?Sized>(mode: LoadingMode, rng: &mut R) -> f64 {
    match mode {
        LoadingMode::Slab { tau2 } => tau2.sqrt() * rng.sample::<f64, _>(StandardNormal),
        LoadingMode::FixedMagnitude { magnitude } => {
            if rng.random::<bool>() {
                magnitude
            } else {
                -magnitude
            }
        }
    }
}

fn has_empty_column(z: &Array2<bool>) -> bool {
    z.columns().into_iter().any(|c| c.iter().all(|v| !v))
}

/// Indicators and loadings of one subject. Positions are redrawn until no
/// column is empty.
pub fn gen_subject_loadings<R: Rng + ?Sized>(
    scenario: &SimScenario,
    subject: usize,
    rng: &mut R,
) -> Result<SubjectState> {
    let (n, k) = (scenario.regions, scenario.factors);
    let mut z = Array2::from_elem((n, k), false);
    let mut placed = false;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        z.fill(false);
        match &scenario.group {
            Some(g) => {
                for ((i, j), v) in z.indexed_iter_mut() {
                    *v = rng.random::<f64>() < g.probabilities[i][j];
                }
            }
            None => {
                let count = nonzero_count(scenario.fractions[subject], n, k);
                if count < k {
                    return Err(Error::validation(format!(
                        "empty ICN: subject {subject} has {count} nonzero loadings for {k} factors"
                    )));
                }
                for idx in sample(rng, n * k, count) {
                    z[[idx / k, idx % k]] = true;
                }
            }
        }
        if !has_empty_column(&z) {
            placed = true;
            break;
        }
    }
    if !placed {
        return Err(Error::validation(format!(
            "empty ICN: could not place loadings for subject {subject} without an empty column"
        )));
    }
    let loadings = Array2::from_shape_fn((n, k), |(i, j)| {
        if z[[i, j]] {
            draw_value(scenario.loading_mode, rng)
        } else {
            0.0
        }
    });
    Ok(SubjectState {
        loadings,
        inclusion: z,
    })
}

/// Log-volatility path with a stationary start.
pub fn gen_sv_path<R: Rng + ?Sized>(params: &SvParams, len: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !params.is_valid() {
        return Err(Error::validation(format!(
            "non-stationary or invalid SV parameters: phi = {}, delta2 = {}",
            params.phi, params.delta2
        )));
    }
    Ok(simulate_path(params, len, rng))
}

struct SubjectDraw {
    loadings: SubjectState,
    blocks: Vec<ConditionState>,
    series: Vec<Array2<f64>>,
}

fn gen_subject(scenario: &SimScenario, s: usize) -> Result<SubjectDraw> {
    let mut rng: BlockRng = stream(scenario.seed, StreamKind::Simulation, &[s as u64]);
    let subj = gen_subject_loadings(scenario, s, &mut rng)?;
    let (n, k) = (scenario.regions, scenario.factors);
    let sigma2 = Array1::from_shape_fn(n, |i| scenario.sigma2.get(i));
    let mut blocks = Vec::with_capacity(scenario.time_lengths.len());
    let mut series = Vec::with_capacity(scenario.time_lengths.len());
    for (g, &t_len) in scenario.time_lengths.iter().enumerate() {
        let mut log_vol = Array2::zeros((k, t_len));
        let mut sv = Vec::with_capacity(k);
        for j in 0..k {
            let delta = scenario.delta.get(g, s, j);
            let p = SvParams {
                mu: scenario.mu.get(g, s, j),
                phi: scenario.phi.get(g, s, j),
                delta2: delta * delta,
            };
            let h = gen_sv_path(&p, t_len, &mut rng)?;
            log_vol.row_mut(j).assign(&Array1::from(h));
            sv.push(p);
        }
        let factors = Array2::from_shape_fn((k, t_len), |(j, t)| {
            (0.5 * log_vol[[j, t]]).exp() * rng.sample::<f64, _>(StandardNormal)
        });
        let mut y = subj.loadings.dot(&factors);
        for ((i, _), v) in y.indexed_iter_mut() {
            *v += sigma2[i].sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        blocks.push(ConditionState {
            factors,
            log_vol,
            sv,
            sigma2: sigma2.clone(),
            tuning: vec![SvTuning::default(); k],
        });
        series.push(y);
    }
    Ok(SubjectDraw {
        loadings: subj,
        blocks,
        series,
    })
}

/// Draw data and the full ground truth.
pub fn gen_dataset(scenario: &SimScenario) -> Result<(Dataset, SimTruth)> {
    gen_dataset_with(scenario, Execution::default())
}

pub fn gen_dataset_with(scenario: &SimScenario, exec: Execution) -> Result<(Dataset, SimTruth)> {
    scenario.validate()?;
    let draws: Vec<SubjectDraw> = map_indices(exec, scenario.subjects, |s| gen_subject(scenario, s))
        .into_iter()
        .collect::<Result<_>>()?;
    let g_count = scenario.time_lengths.len();
    let s_count = scenario.subjects;
    let mut series: Vec<Vec<Array2<f64>>> = vec![Vec::with_capacity(s_count); g_count];
    let mut blocks_by_g: Vec<Vec<ConditionState>> = vec![Vec::with_capacity(s_count); g_count];
    let mut subjects = Vec::with_capacity(s_count);
    for d in draws {
        subjects.push(d.loadings);
        for (g, (y, b)) in d.series.into_iter().zip(d.blocks).enumerate() {
            series[g].push(y);
            blocks_by_g[g].push(b);
        }
    }
    let (n, k) = (scenario.regions, scenario.factors);
    let group_prob = match &scenario.group {
        Some(g) => Array2::from_shape_fn((n, k), |(i, j)| clamp_open_unit(g.probabilities[i][j])),
        None => Array2::from_shape_fn((n, k), |(i, j)| {
            let hits = subjects.iter().filter(|s: &&SubjectState| s.inclusion[[i, j]]).count();
            clamp_open_unit(hits as f64 / s_count as f64)
        }),
    };
    let state = ChainState {
        subjects,
        blocks: blocks_by_g.into_iter().flatten().collect(),
        group_prob,
    };
    let dataset = Dataset::from_series(series, scenario.has_rest)?;
    Ok((
        dataset,
        SimTruth {
            scenario: scenario.clone(),
            state,
        },
    ))
}
