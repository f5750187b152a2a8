//! Policy-value estimators with design-based variances.
//!
//! With matched set M = {i : A_i = g_i}:
//!
//! * IPW (ratio form): Σ_M Y_i/π_{A,i} / Σ_M 1/π_{A,i}
//! * AIPW: (1/N) Σ_i [μ_{g,i} + 1(i ∈ M)(Y_i − μ_{A,i})/π_{A,i}]
//! * AIPW-local: AIPW with π_{A,i} replaced by π_L(g_i), the matched share
//!   among units the policy sends to g_i
//! * model-based: (1/N) Σ_i μ_{g,i}
//!
//! Variances treat the population, predictions and policy as fixed and the
//! historical assignment as the only source of randomness:
//!
//! * AIPW: (1/N²) Σ_M (1 − π_{A,i}) ((Y_i − μ_{A,i})/π_{A,i})²
//! * IPW:  (1/N²) Σ_M (1 − π_{A,i}) ((Y_i − V̂_IPW)/π_{A,i})²
//!
//! Point estimates are never clipped to [0, 1]; out-of-range values are
//! flagged on the report instead.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{observed_baseline, CountingUnit, EvaluationDataset, PolicyAssignment, PredictionMatrix};
use crate::propensity::{positivity_check, PropensityKind, PropensityModel};
use crate::scalar::{Scalar, Z_95};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    Aipw,
    AipwLocal,
    Ipw,
    ModelBased,
}

impl EstimatorKind {
    /// Report column order.
    pub const ALL: [EstimatorKind; 4] = [Self::Aipw, Self::AipwLocal, Self::Ipw, Self::ModelBased];

    pub fn label(self) -> &'static str {
        match self {
            Self::Aipw => "AIPW",
            Self::AipwLocal => "AIPWl",
            Self::Ipw => "IPW",
            Self::ModelBased => "Model-Based",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.label() == s)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport<T> {
    pub estimator: EstimatorKind,
    pub point: T,
    pub gains: T,
    pub var_gains: Option<T>,
    pub ci95: Option<(T, T)>,
    pub n_matched: usize,
    /// Point estimate fell outside [0, 1].
    pub out_of_range: bool,
}

/// Gains over a fixed baseline and the symmetric normal 95% interval.
pub fn gains_and_ci<T: Scalar>(point: T, baseline: T, var: T) -> Result<(T, (T, T))> {
    if var.is_nan() || var < T::zero() {
        return Err(Error::InvalidArgument(format!("negative variance {var}")));
    }
    let gains = point - baseline;
    let half = T::lit(Z_95) * var.sqrt();
    Ok((gains, (gains - half, gains + half)))
}

impl<T: Scalar> EstimateReport<T> {
    fn new(estimator: EstimatorKind, point: T, baseline: T, var: Option<T>, n_matched: usize) -> Result<Self> {
        let (gains, ci95) = match var {
            Some(v) => {
                let (g, ci) = gains_and_ci(point, baseline, v)?;
                (g, Some(ci))
            }
            None => (point - baseline, None),
        };
        Ok(Self {
            estimator,
            point,
            gains,
            var_gains: var,
            ci95,
            n_matched,
            out_of_range: point < T::zero() || point > T::one(),
        })
    }
}

/// Per-individual inputs to the estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unit<T> {
    /// A_i = g_i.
    pub matched: bool,
    pub outcome: T,
    /// π_{A,i}.
    pub propensity: T,
    /// μ_i(A_i).
    pub mu_historical: T,
    /// μ_i(g_i).
    pub mu_policy: T,
    /// g_i.
    pub policy_location: usize,
    /// Whether this unit is counted in the local propensity table (all
    /// units for individual counting, one member per case otherwise).
    pub counted: bool,
}

/// Builds estimator units from a dataset. Missing predictions or
/// propensities leave the corresponding fields at zero.
pub fn build_units<T: Scalar>(
    dataset: &EvaluationDataset<T>,
    policy: &PolicyAssignment,
    propensities: Option<&PropensityModel<T>>,
    predictions: Option<&PredictionMatrix<T>>,
    local_unit: CountingUnit,
) -> Result<Vec<Unit<T>>> {
    let g = policy.individual_assignment();
    if g.len() != dataset.n() {
        return Err(Error::Dimension(format!("policy covers {} of {} individuals", g.len(), dataset.n())));
    }
    if let Some(&bad) = g.iter().find(|&&a| a >= dataset.k()) {
        return Err(Error::UnknownLocation(format!("index {bad}")));
    }
    if let Some(p) = propensities {
        p.check_dataset(dataset)?;
    }
    if let Some(m) = predictions {
        m.check_shape(dataset.n(), dataset.k())?;
    }
    Ok(dataset
        .individuals()
        .iter()
        .enumerate()
        .map(|(i, ind)| {
            let a = ind.historical;
            let counted = match local_unit {
                CountingUnit::Individual => true,
                CountingUnit::Case => dataset.cases()[dataset.case_of(i)].members[0] == i,
            };
            Unit {
                matched: a == g[i],
                outcome: ind.outcome_value(),
                propensity: propensities.map_or(T::zero(), |p| p.prob(i, a)),
                mu_historical: predictions.map_or(T::zero(), |m| m.get(i, a)),
                mu_policy: predictions.map_or(T::zero(), |m| m.get(i, g[i])),
                policy_location: g[i],
                counted,
            }
        })
        .collect())
}

pub fn n_matched<T>(units: &[Unit<T>]) -> usize {
    units.iter().filter(|u| u.matched).count()
}

/// Ratio-form IPW; `None` when no unit is matched.
pub fn ipw_point<T: Scalar>(units: &[Unit<T>]) -> Option<T> {
    let (num, den) = units
        .iter()
        .filter(|u| u.matched)
        .fold((T::zero(), T::zero()), |(n, d), u| {
            let w = T::one() / u.propensity;
            (n + w * u.outcome, d + w)
        });
    (den > T::zero()).then(|| num / den)
}

pub fn aipw_point<T: Scalar>(units: &[Unit<T>]) -> T {
    let total: T = units
        .iter()
        .map(|u| {
            let aug = if u.matched {
                (u.outcome - u.mu_historical) / u.propensity
            } else {
                T::zero()
            };
            u.mu_policy + aug
        })
        .sum();
    total / T::from_count(units.len())
}

pub fn model_based_point<T: Scalar>(units: &[Unit<T>]) -> T {
    units.iter().map(|u| u.mu_policy).sum::<T>() / T::from_count(units.len())
}

/// π_L(a) = #{A = g = a} / #{g = a}, defined where the policy uses a.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPropensityTable<T> {
    matched: Vec<usize>,
    assigned: Vec<usize>,
    values: Vec<Option<T>>,
}

impl<T: Scalar> LocalPropensityTable<T> {
    pub fn from_units(units: &[Unit<T>], k: usize) -> Self {
        let mut matched = vec![0usize; k];
        let mut assigned = vec![0usize; k];
        for u in units.iter().filter(|u| u.counted) {
            assigned[u.policy_location] += 1;
            if u.matched {
                matched[u.policy_location] += 1;
            }
        }
        let values = matched
            .iter()
            .zip(&assigned)
            .map(|(&m, &d)| (d > 0).then(|| T::from_count(m) / T::from_count(d)))
            .collect();
        Self {
            matched,
            assigned,
            values,
        }
    }

    pub fn get(&self, a: usize) -> Option<T> {
        self.values[a]
    }

    pub fn matched_count(&self, a: usize) -> usize {
        self.matched[a]
    }

    pub fn assigned_count(&self, a: usize) -> usize {
        self.assigned[a]
    }

    /// π_L for a matched unit; a match at a makes the table entry positive.
    fn for_match(&self, u: &Unit<T>) -> T {
        let p = self.values[u.policy_location].expect("matched location is assigned");
        debug_assert!(p > T::zero());
        p
    }

    /// Units with π_L substituted as their propensity.
    pub fn localize(&self, units: &[Unit<T>]) -> Vec<Unit<T>> {
        units
            .iter()
            .map(|u| Unit {
                propensity: if u.matched { self.for_match(u) } else { u.propensity },
                ..*u
            })
            .collect()
    }
}

pub fn aipwl_point<T: Scalar>(units: &[Unit<T>], table: &LocalPropensityTable<T>) -> T {
    let total: T = units
        .iter()
        .map(|u| {
            let aug = if u.matched {
                (u.outcome - u.mu_historical) / table.for_match(u)
            } else {
                T::zero()
            };
            u.mu_policy + aug
        })
        .sum();
    total / T::from_count(units.len())
}

/// (1/N²) Σ_M (1 − π)((Y − μ_A)/π)² using each unit's `propensity`.
pub fn aipw_variance<T: Scalar>(units: &[Unit<T>]) -> T {
    let n = T::from_count(units.len());
    units
        .iter()
        .filter(|u| u.matched)
        .map(|u| {
            let r = (u.outcome - u.mu_historical) / u.propensity;
            (T::one() - u.propensity) * r * r
        })
        .sum::<T>()
        / (n * n)
}

/// (1/N²) Σ_M (1 − π)((Y − V̂)/π)².
pub fn ipw_variance<T: Scalar>(units: &[Unit<T>], point: T) -> T {
    let n = T::from_count(units.len());
    units
        .iter()
        .filter(|u| u.matched)
        .map(|u| {
            let r = (u.outcome - point) / u.propensity;
            (T::one() - u.propensity) * r * r
        })
        .sum::<T>()
        / (n * n)
}

/// Which propensity the AIPW variance formula uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceMode {
    Marginal,
    Local,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions<T> {
    /// Positivity violation when π_{g_i,i} ≤ floor.
    pub positivity_floor: T,
    pub enforce_positivity: bool,
    /// Status-quo value; defaults to the observed mean outcome.
    pub baseline: Option<T>,
    /// Counting unit for the local propensity table.
    pub local_unit: CountingUnit,
}

impl<T: Scalar> Default for EvalOptions<T> {
    fn default() -> Self {
        Self {
            positivity_floor: T::zero(),
            enforce_positivity: true,
            baseline: None,
            local_unit: CountingUnit::Case,
        }
    }
}

impl<T: Scalar> EvalOptions<T> {
    fn baseline(&self, dataset: &EvaluationDataset<T>) -> T {
        self.baseline.unwrap_or_else(|| observed_baseline(dataset))
    }

    fn check_positivity(
        &self,
        dataset: &EvaluationDataset<T>,
        propensities: &PropensityModel<T>,
        policy: &PolicyAssignment,
    ) -> Result<()> {
        if !self.enforce_positivity {
            return Ok(());
        }
        let report = positivity_check(propensities, policy, self.positivity_floor);
        if report.is_pass() {
            Ok(())
        } else {
            Err(report.to_error(dataset))
        }
    }
}

pub fn ipw_estimate<T: Scalar>(
    dataset: &EvaluationDataset<T>,
    propensities: &PropensityModel<T>,
    policy: &PolicyAssignment,
    options: &EvalOptions<T>,
) -> Result<EstimateReport<T>> {
    let units = build_units(dataset, policy, Some(propensities), None, options.local_unit)?;
    options.check_positivity(dataset, propensities, policy)?;
    let point = ipw_point(&units).ok_or(Error::NoOverlap)?;
    let var = ipw_variance(&units, point);
    EstimateReport::new(EstimatorKind::Ipw, point, options.baseline(dataset), Some(var), n_matched(&units))
}

pub fn aipw_estimate<T: Scalar>(
    dataset: &EvaluationDataset<T>,
    propensities: &PropensityModel<T>,
    predictions: &PredictionMatrix<T>,
    policy: &PolicyAssignment,
    options: &EvalOptions<T>,
) -> Result<EstimateReport<T>> {
    let units = build_units(dataset, policy, Some(propensities), Some(predictions), options.local_unit)?;
    options.check_positivity(dataset, propensities, policy)?;
    let point = aipw_point(&units);
    let var = aipw_variance(&units);
    EstimateReport::new(EstimatorKind::Aipw, point, options.baseline(dataset), Some(var), n_matched(&units))
}

/// AIPW-local; needs no propensity model.
pub fn aipwl_estimate<T: Scalar>(
    dataset: &EvaluationDataset<T>,
    predictions: &PredictionMatrix<T>,
    policy: &PolicyAssignment,
    options: &EvalOptions<T>,
) -> Result<EstimateReport<T>> {
    let units = build_units(dataset, policy, None, Some(predictions), options.local_unit)?;
    let table = LocalPropensityTable::from_units(&units, dataset.k());
    let point = aipwl_point(&units, &table);
    let var = aipw_variance(&table.localize(&units));
    EstimateReport::new(
        EstimatorKind::AipwLocal,
        point,
        options.baseline(dataset),
        Some(var),
        n_matched(&units),
    )
}

pub fn model_based_estimate<T: Scalar>(
    dataset: &EvaluationDataset<T>,
    predictions: &PredictionMatrix<T>,
    policy: &PolicyAssignment,
    options: &EvalOptions<T>,
) -> Result<EstimateReport<T>> {
    let units = build_units(dataset, policy, None, Some(predictions), options.local_unit)?;
    EstimateReport::new(
        EstimatorKind::ModelBased,
        model_based_point(&units),
        options.baseline(dataset),
        None,
        n_matched(&units),
    )
}

pub fn var_aipw<T: Scalar>(
    dataset: &EvaluationDataset<T>,
    propensities: Option<&PropensityModel<T>>,
    predictions: &PredictionMatrix<T>,
    policy: &PolicyAssignment,
    mode: VarianceMode,
    local_unit: CountingUnit,
) -> Result<T> {
    match mode {
        VarianceMode::Marginal => {
            let p = propensities.ok_or_else(|| {
                Error::InvalidArgument("marginal variance needs propensities".into())
            })?;
            Ok(aipw_variance(&build_units(dataset, policy, Some(p), Some(predictions), local_unit)?))
        }
        VarianceMode::Local => {
            let units = build_units(dataset, policy, None, Some(predictions), local_unit)?;
            let table = LocalPropensityTable::from_units(&units, dataset.k());
            Ok(aipw_variance(&table.localize(&units)))
        }
    }
}

pub fn var_ipw<T: Scalar>(
    dataset: &EvaluationDataset<T>,
    propensities: &PropensityModel<T>,
    policy: &PolicyAssignment,
    point: T,
) -> Result<T> {
    let units = build_units(dataset, policy, Some(propensities), None, CountingUnit::Case)?;
    if n_matched(&units) == 0 {
        return Err(Error::NoOverlap);
    }
    Ok(ipw_variance(&units, point))
}

/// Notes attached to a set of reports.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReportFlags {
    /// Variances use estimated propensities plugged into the formulas
    /// derived for known propensities.
    pub plug_in_variance: bool,
    /// Outcome correlation within cases is ignored by the variances.
    pub within_case_correlation_ignored: bool,
}

/// All four estimators in report column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<T> {
    pub baseline: T,
    pub reports: Vec<EstimateReport<T>>,
    pub flags: ReportFlags,
}

pub fn evaluate_all<T: Scalar>(
    dataset: &EvaluationDataset<T>,
    propensities: &PropensityModel<T>,
    predictions: &PredictionMatrix<T>,
    policy: &PolicyAssignment,
    options: &EvalOptions<T>,
) -> Result<Evaluation<T>> {
    let reports = vec![
        aipw_estimate(dataset, propensities, predictions, policy, options)?,
        aipwl_estimate(dataset, predictions, policy, options)?,
        ipw_estimate(dataset, propensities, policy, options)?,
        model_based_estimate(dataset, predictions, policy, options)?,
    ];
    Ok(Evaluation {
        baseline: options.baseline(dataset),
        reports,
        flags: ReportFlags {
            plug_in_variance: propensities.kind() == PropensityKind::Estimated,
            within_case_correlation_ignored: dataset.cases().iter().any(|c| c.size() > 1),
        },
    })
}
