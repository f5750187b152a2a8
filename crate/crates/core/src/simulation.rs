//! Synthetic populations with known potential outcomes, and design-based
//! verification of the estimators.
//!
//! The population, potential outcomes, predictions and policy are held
//! fixed; only the historical assignment is redrawn, one location per case
//! from the design propensities. [`enumerate_design`] computes exact
//! moments over every assignment vector, [`monte_carlo`] estimates them by
//! replication.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{
    aipw_point, aipw_variance, aipwl_point, ipw_point, ipw_variance, model_based_point, EstimatorKind,
    LocalPropensityTable, Unit,
};
use crate::model::{
    CountingUnit, EvaluationDataset, Individual, LocationSet, PolicyAssignment, PotentialOutcomeTable,
    PredictionMatrix,
};
use crate::pooling::PoolingMap;
use crate::scalar::{Scalar, Z_95};

/// Largest assignment space [`enumerate_design`] will walk.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeSurface<T> {
    /// p_i(a) = logistic(α_a + β_a·x_i) with α_a ~ N(0, intercept_scale²)
    /// and β_a entries ~ N(0, slope_scale²).
    Logistic { intercept_scale: T, slope_scale: T },
    /// p_i(a) = c for everyone.
    Constant(T),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig<T> {
    pub n: usize,
    pub k: usize,
    /// Case sizes are uniform on 1..=max_case_size (the last case is
    /// truncated to hit `n` exactly).
    pub max_case_size: usize,
    pub covariate_dim: usize,
    pub surface: OutcomeSurface<T>,
    /// Design propensities π(a) used to draw the historical assignment.
    pub propensities: Vec<T>,
    /// Standard deviation of the additive noise on supplied predictions.
    pub prediction_noise: T,
    pub seed: u64,
}

impl<T: Scalar> SyntheticConfig<T> {
    pub fn new(n: usize, k: usize, seed: u64) -> Self {
        Self {
            n,
            k,
            max_case_size: 1,
            covariate_dim: 2,
            surface: OutcomeSurface::Logistic {
                intercept_scale: T::lit(0.5),
                slope_scale: T::lit(0.5),
            },
            propensities: vec![T::one() / T::from_count(k.max(1)); k],
            prediction_noise: T::zero(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n == 0 || self.k == 0 {
            return bad("N and K must be at least 1");
        }
        if self.max_case_size == 0 {
            return bad("max_case_size must be at least 1");
        }
        if self.propensities.len() != self.k {
            return bad("propensity vector length differs from K");
        }
        if self.propensities.iter().any(|p| p.is_nan() || *p < T::zero()) {
            return bad("negative propensity");
        }
        let sum: T = self.propensities.iter().copied().sum();
        if (sum - T::one()).abs() > T::lit(1e-9).max(T::epsilon() * T::lit(16.0)) {
            return bad("propensities must sum to 1");
        }
        if self.prediction_noise.is_nan() || self.prediction_noise < T::zero() {
            return bad("prediction noise must be nonnegative");
        }
        if let OutcomeSurface::Constant(c) = self.surface {
            if !(c >= T::zero() && c <= T::one()) {
                return bad("constant outcome probability outside [0, 1]");
            }
        }
        Ok(())
    }
}

/// A synthetic evaluation problem with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Population<T> {
    pub dataset: EvaluationDataset<T>,
    pub outcomes: PotentialOutcomeTable,
    /// True outcome probabilities p_i(a).
    pub truth: PredictionMatrix<T>,
    /// Noisy predictions μ_i(a) handed to the estimators.
    pub predictions: PredictionMatrix<T>,
}

fn logistic<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

fn normal<T: Scalar, R: Rng>(rng: &mut R) -> T {
    T::lit(rng.sample::<f64, _>(StandardNormal))
}

fn design_sampler<T: Scalar>(propensities: &[T]) -> Result<WeightedIndex<f64>> {
    let w: Vec<f64> = propensities.iter().map(|p| p.to_f64().unwrap_or(0.0)).collect();
    WeightedIndex::new(&w).map_err(|e| Error::InvalidArgument(format!("design propensities: {e}")))
}

pub fn generate_population<T: Scalar>(config: &SyntheticConfig<T>) -> Result<Population<T>> {
    config.validate()?;
    let (n, k, p) = (config.n, config.k, config.covariate_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (intercepts, slopes): (Vec<T>, Vec<T>) = match &config.surface {
        OutcomeSurface::Logistic {
            intercept_scale,
            slope_scale,
        } => (
            (0..k).map(|_| *intercept_scale * normal(&mut rng)).collect(),
            (0..k * p).map(|_| *slope_scale * normal(&mut rng)).collect(),
        ),
        OutcomeSurface::Constant(_) => (vec![T::zero(); k], vec![T::zero(); k * p]),
    };
    let sampler = design_sampler(&config.propensities)?;
    let mut individuals = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n * k);
    let mut table = Vec::with_capacity(n * k);
    let mut predictions = Vec::with_capacity(n * k);
    let mut case = 0usize;
    while individuals.len() < n {
        let size = rng.random_range(1..=config.max_case_size).min(n - individuals.len());
        let historical = sampler.sample(&mut rng);
        for _ in 0..size {
            let i = individuals.len();
            let x: Vec<T> = (0..p).map(|_| normal(&mut rng)).collect();
            for a in 0..k {
                let prob = match config.surface {
                    OutcomeSurface::Constant(c) => c,
                    OutcomeSurface::Logistic { .. } => {
                        let z = intercepts[a]
                            + x.iter().zip(&slopes[a * p..(a + 1) * p]).map(|(u, v)| *u * *v).sum::<T>();
                        logistic(z)
                    }
                };
                truth.push(prob);
                let u: f64 = rng.random();
                table.push(T::lit(u) < prob);
                let noise = config.prediction_noise * normal(&mut rng);
                predictions.push((prob + noise).max(T::zero()).min(T::one()));
            }
            individuals.push(Individual {
                id: format!("i{}", i + 1),
                case_id: format!("c{}", case + 1),
                historical,
                outcome: table[i * k + historical],
                covariates: x,
            });
        }
        case += 1;
    }
    let locations = LocationSet::from_ids((1..=k).map(|a| format!("L{a}")))?;
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    Ok(Population {
        dataset: EvaluationDataset::from_parts(locations, individuals, names)?,
        outcomes: PotentialOutcomeTable::new(n, k, table)?,
        truth: PredictionMatrix::new(n, k, truth)?,
        predictions: PredictionMatrix::new(n, k, predictions)?,
    })
}

/// V(g) = (1/N) Σ Y_i(g_i).
pub fn true_policy_value<T: Scalar>(table: &PotentialOutcomeTable, policy: &PolicyAssignment) -> Result<T> {
    let g = policy.individual_assignment();
    if g.len() != table.n() || g.iter().any(|&a| a >= table.k()) {
        return Err(Error::Dimension("policy does not fit the outcome table".into()));
    }
    let hits = g.iter().enumerate().filter(|(i, a)| table.get(*i, **a)).count();
    Ok(T::from_count(hits) / T::from_count(table.n()))
}

/// A fixed population, policy and prediction set under a randomized
/// historical assignment, possibly evaluated in a pooled location space.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignInstance<T> {
    outcomes: PotentialOutcomeTable,
    case_of: Vec<usize>,
    counted: Vec<bool>,
    n_cases: usize,
    design: Vec<T>,
    forward: Vec<usize>,
    eval_propensities: Vec<T>,
    eval_predictions: PredictionMatrix<T>,
    eval_policy: Vec<usize>,
    target_policy: Vec<usize>,
}

impl<T: Scalar> DesignInstance<T> {
    /// `design` are the homogeneous π(a) drawing each case's location.
    /// Local propensities count `local_unit`s.
    pub fn new(
        dataset: &EvaluationDataset<T>,
        outcomes: &PotentialOutcomeTable,
        predictions: &PredictionMatrix<T>,
        policy: &PolicyAssignment,
        design: Vec<T>,
        local_unit: CountingUnit,
    ) -> Result<Self> {
        let (n, k) = (dataset.n(), dataset.k());
        if outcomes.n() != n || outcomes.k() != k || design.len() != k {
            return Err(Error::Dimension("design instance inputs disagree on N or K".into()));
        }
        predictions.check_shape(n, k)?;
        let g = policy.individual_assignment().to_vec();
        if g.len() != n {
            return Err(Error::Dimension("policy length".into()));
        }
        let case_of: Vec<usize> = (0..n).map(|i| dataset.case_of(i)).collect();
        let counted = (0..n)
            .map(|i| match local_unit {
                CountingUnit::Individual => true,
                CountingUnit::Case => dataset.cases()[case_of[i]].members[0] == i,
            })
            .collect();
        Ok(Self {
            outcomes: outcomes.clone(),
            case_of,
            counted,
            n_cases: dataset.cases().len(),
            eval_propensities: design.clone(),
            design,
            forward: (0..k).collect(),
            eval_predictions: predictions.clone(),
            eval_policy: g.clone(),
            target_policy: g,
        })
    }

    /// Evaluates in the pooled space of `pooling`; the target remains the
    /// original policy's V(g). Pooled predictions are propensity-weighted
    /// member averages and the policy is mapped forward.
    pub fn pooled(&self, pooling: &PoolingMap<T>) -> Result<Self> {
        let k = self.outcomes.k();
        if pooling.original_k() != k {
            return Err(Error::Dimension("pooling map does not match instance".into()));
        }
        let pk = pooling.pooled_k();
        let mut props = vec![T::zero(); pk];
        for (a, &p) in self.design.iter().enumerate() {
            props[pooling.forward()[a]] = props[pooling.forward()[a]] + p;
        }
        let n = self.outcomes.n();
        let mut mu = vec![T::zero(); n * pk];
        for i in 0..n {
            for a in 0..k {
                let b = pooling.forward()[a];
                let w = match pooling.members().iter().position(|&m| m == a) {
                    Some(j) => pooling.member_weights()[j],
                    None => T::one(),
                };
                mu[i * pk + b] = mu[i * pk + b] + w * self.eval_predictions.get(i, a);
            }
        }
        for v in &mut mu {
            *v = v.min(T::one());
        }
        Ok(Self {
            eval_propensities: props,
            eval_predictions: PredictionMatrix::new(n, pk, mu)?,
            eval_policy: self.target_policy.iter().map(|&a| pooling.forward()[a]).collect(),
            forward: pooling.forward().to_vec(),
            ..self.clone()
        })
    }

    pub fn n(&self) -> usize {
        self.outcomes.n()
    }

    /// V(g) of the original policy.
    pub fn target_value(&self) -> T {
        let hits = self
            .target_policy
            .iter()
            .enumerate()
            .filter(|(i, a)| self.outcomes.get(*i, **a))
            .count();
        T::from_count(hits) / T::from_count(self.n())
    }

    /// Closed-form design variance of AIPW:
    /// (1/N²) Σ π(g_i)(1 − π(g_i)) ((Y_i(g_i) − μ_{g,i}) / π(g_i))².
    ///
    /// Assumes independent per-individual draws (singleton cases) and no
    /// pooling.
    pub fn aipw_design_variance(&self) -> T {
        let n = T::from_count(self.n());
        let total: T = self
            .target_policy
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                let pi = self.design[g];
                if pi <= T::zero() {
                    return T::zero();
                }
                let y = if self.outcomes.get(i, g) { T::one() } else { T::zero() };
                let r = (y - self.eval_predictions.get(i, g)) / pi;
                pi * (T::one() - pi) * r * r
            })
            .sum();
        total / (n * n)
    }

    fn units(&self, case_locations: &[usize]) -> Vec<Unit<T>> {
        (0..self.n())
            .map(|i| {
                let a = case_locations[self.case_of[i]];
                let b = self.forward[a];
                let g = self.eval_policy[i];
                Unit {
                    matched: b == g,
                    outcome: if self.outcomes.get(i, a) { T::one() } else { T::zero() },
                    propensity: self.eval_propensities[b],
                    mu_historical: self.eval_predictions.get(i, b),
                    mu_policy: self.eval_predictions.get(i, g),
                    policy_location: g,
                    counted: self.counted[i],
                }
            })
            .collect()
    }

    /// All estimators for one realized case-level assignment.
    pub fn estimate(&self, case_locations: &[usize]) -> Draw<T> {
        let units = self.units(case_locations);
        let table = LocalPropensityTable::from_units(&units, self.eval_propensities.len());
        let ipw = ipw_point(&units).map(|p| (p, ipw_variance(&units, p)));
        Draw {
            aipw: (aipw_point(&units), aipw_variance(&units)),
            aipwl: (aipwl_point(&units, &table), aipw_variance(&table.localize(&units))),
            ipw,
            model_based: model_based_point(&units),
        }
    }
}

/// Estimates from one realized assignment: (point, estimated variance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw<T> {
    pub aipw: (T, T),
    pub aipwl: (T, T),
    /// `None` when nobody is matched.
    pub ipw: Option<(T, T)>,
    pub model_based: T,
}

impl<T: Scalar> Draw<T> {
    pub fn get(&self, kind: EstimatorKind) -> Option<(T, Option<T>)> {
        match kind {
            EstimatorKind::Aipw => Some((self.aipw.0, Some(self.aipw.1))),
            EstimatorKind::AipwLocal => Some((self.aipwl.0, Some(self.aipwl.1))),
            EstimatorKind::Ipw => self.ipw.map(|(p, v)| (p, Some(v))),
            EstimatorKind::ModelBased => Some((self.model_based, None)),
        }
    }
}

/// Exact design moments of one estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactMoments<T> {
    pub estimator: EstimatorKind,
    /// E[V̂] (conditional on the estimator being defined).
    pub expectation: T,
    pub bias: T,
    /// Var[V̂] (conditional on being defined).
    pub variance: T,
    /// E[Var̂], absent for the model-based estimator.
    pub expected_estimated_variance: Option<T>,
    /// Probability mass of assignments where the estimator is undefined.
    pub undefined_weight: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMoments<T> {
    pub target: T,
    pub assignments: u128,
    pub moments: Vec<ExactMoments<T>>,
}

impl<T: Scalar> DesignMoments<T> {
    pub fn get(&self, kind: EstimatorKind) -> &ExactMoments<T> {
        self.moments.iter().find(|m| m.estimator == kind).expect("all estimators present")
    }
}

#[derive(Clone, Copy)]
struct Accumulator<T> {
    weight: T,
    sum: T,
    sum_sq: T,
    sum_var: T,
}

impl<T: Scalar> Accumulator<T> {
    fn new() -> Self {
        Self {
            weight: T::zero(),
            sum: T::zero(),
            sum_sq: T::zero(),
            sum_var: T::zero(),
        }
    }

    fn add(&mut self, w: T, point: T, var: Option<T>) {
        self.weight = self.weight + w;
        self.sum = self.sum + w * point;
        self.sum_sq = self.sum_sq + w * point * point;
        self.sum_var = self.sum_var + w * var.unwrap_or(T::zero());
    }
}

/// Walks every case-level assignment vector with weight Π π(A_c).
pub fn enumerate_design<T: Scalar>(instance: &DesignInstance<T>) -> Result<DesignMoments<T>> {
    let k = instance.design.len();
    let c = instance.n_cases;
    let total = (k as u128).checked_pow(c as u32).unwrap_or(u128::MAX);
    if total > ENUMERATION_LIMIT {
        return Err(Error::EnumerationGuard(total, ENUMERATION_LIMIT));
    }
    let mut acc = [Accumulator::new(); 4];
    let mut locations = vec![0usize; c];
    loop {
        let w = locations.iter().fold(T::one(), |w, &a| w * instance.design[a]);
        if w > T::zero() {
            let draw = instance.estimate(&locations);
            for (slot, kind) in acc.iter_mut().zip(EstimatorKind::ALL) {
                if let Some((p, v)) = draw.get(kind) {
                    slot.add(w, p, v);
                }
            }
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == c {
                let target = instance.target_value();
                let moments = acc
                    .iter()
                    .zip(EstimatorKind::ALL)
                    .map(|(a, kind)| {
                        let mean = a.sum / a.weight;
                        ExactMoments {
                            estimator: kind,
                            expectation: mean,
                            bias: mean - target,
                            variance: (a.sum_sq / a.weight - mean * mean).max(T::zero()),
                            expected_estimated_variance: (kind != EstimatorKind::ModelBased)
                                .then(|| a.sum_var / a.weight),
                            undefined_weight: (T::one() - a.weight).max(T::zero()),
                        }
                    })
                    .collect();
                return Ok(DesignMoments {
                    target,
                    assignments: total,
                    moments,
                });
            }
            locations[pos] += 1;
            if locations[pos] < k {
                break;
            }
            locations[pos] = 0;
            pos += 1;
        }
    }
}

/// Monte Carlo summary for one estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorStats<T> {
    pub estimator: EstimatorKind,
    /// Replications where the estimator was defined.
    pub defined: usize,
    pub mean_point: T,
    pub bias: T,
    /// Sample variance of the point estimates (divisor R − 1).
    pub empirical_variance: T,
    pub mean_estimated_variance: Option<T>,
    /// Share of 95% intervals containing V(g).
    pub coverage: Option<T>,
    /// Monte Carlo standard error of the mean point estimate.
    pub mc_se: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult<T> {
    pub replications: usize,
    pub target: T,
    pub stats: Vec<EstimatorStats<T>>,
}

impl<T: Scalar> MonteCarloResult<T> {
    pub fn get(&self, kind: EstimatorKind) -> &EstimatorStats<T> {
        self.stats.iter().find(|s| s.estimator == kind).expect("all estimators present")
    }
}

/// Seed of replication `r`, a SplitMix64 scramble of (seed, r).
pub fn replication_seed(seed: u64, r: u64) -> u64 {
    let mut z = seed ^ r.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Redraws the historical assignment `replications` times. Replications
/// run in parallel; each has its own seed so results do not depend on
/// scheduling.
pub fn monte_carlo<T: Scalar>(
    instance: &DesignInstance<T>,
    replications: usize,
    seed: u64,
) -> Result<MonteCarloResult<T>> {
    if replications < 2 {
        return Err(Error::InvalidArgument("Monte Carlo needs at least 2 replications".into()));
    }
    let sampler = design_sampler(&instance.design)?;
    let draws: Vec<Draw<T>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(seed, r as u64));
            let locations: Vec<usize> = (0..instance.n_cases).map(|_| sampler.sample(&mut rng)).collect();
            instance.estimate(&locations)
        })
        .collect();
    let target = instance.target_value();
    let z = T::lit(Z_95);
    let stats = EstimatorKind::ALL
        .into_iter()
        .map(|kind| {
            let values: Vec<(T, Option<T>)> = draws.iter().filter_map(|d| d.get(kind)).collect();
            let m = values.len();
            let mt = T::from_count(m.max(1));
            let mean = values.iter().map(|v| v.0).sum::<T>() / mt;
            let emp_var = if m > 1 {
                values.iter().map(|v| (v.0 - mean) * (v.0 - mean)).sum::<T>() / T::from_count(m - 1)
            } else {
                T::zero()
            };
            let has_var = kind != EstimatorKind::ModelBased;
            let mean_est_var = has_var.then(|| values.iter().map(|v| v.1.unwrap_or(T::zero())).sum::<T>() / mt);
            let coverage = has_var.then(|| {
                let hits = values
                    .iter()
                    .filter(|(p, v)| {
                        let half = z * v.unwrap_or(T::zero()).sqrt();
                        *p - half <= target && target <= *p + half
                    })
                    .count();
                T::from_count(hits) / mt
            });
            EstimatorStats {
                estimator: kind,
                defined: m,
                mean_point: mean,
                bias: mean - target,
                empirical_variance: emp_var,
                mean_estimated_variance: mean_est_var,
                coverage,
                mc_se: (emp_var / mt).sqrt(),
            }
        })
        .collect();
    Ok(MonteCarloResult {
        replications,
        target,
        stats,
    })
}
