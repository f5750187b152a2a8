//! Historical assignment probabilities π_{a,i} and the positivity check.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::{CountingUnit, EvaluationDataset, PolicyAssignment};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropensityKind {
    /// Homogeneous π(a) from historical counts.
    Empirical,
    /// Covariate-conditional π(a | X_i).
    Estimated,
}

#[derive(Debug, Clone, PartialEq)]
enum Table<T> {
    Marginal(Vec<T>),
    Conditional(Vec<T>),
}

/// Assignment probabilities for every individual and location.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel<T> {
    unit: CountingUnit,
    n: usize,
    k: usize,
    table: Table<T>,
}

fn row_tolerance<T: Scalar>(k: usize) -> T {
    T::lit(1e-9).max(T::epsilon() * T::from_count(4 * k.max(1)))
}

fn check_row<T: Scalar>(row: &[T], what: &str) -> Result<()> {
    if row.iter().any(|p| !(*p >= T::zero() && *p <= T::one())) {
        return Err(Error::InvalidArgument(format!("{what}: probability outside [0, 1]")));
    }
    let sum: T = row.iter().copied().sum();
    if (sum - T::one()).abs() > row_tolerance::<T>(row.len()) {
        return Err(Error::InvalidArgument(format!("{what}: probabilities sum to {sum}")));
    }
    Ok(())
}

impl<T: Scalar> PropensityModel<T> {
    /// Homogeneous propensities shared by all `n` individuals.
    pub fn from_marginal(n: usize, marginal: Vec<T>, unit: CountingUnit) -> Result<Self> {
        if marginal.is_empty() {
            return Err(Error::InvalidArgument("no locations".into()));
        }
        check_row(&marginal, "marginal propensities")?;
        Ok(Self {
            unit,
            n,
            k: marginal.len(),
            table: Table::Marginal(marginal),
        })
    }

    /// Row-major N × K conditional propensities; each row must sum to one.
    pub fn from_conditional(n: usize, k: usize, values: Vec<T>, unit: CountingUnit) -> Result<Self> {
        if values.len() != n * k || k == 0 {
            return Err(Error::Dimension(format!(
                "conditional propensities need {n}x{k} entries, got {}",
                values.len()
            )));
        }
        for (i, row) in values.chunks(k).enumerate() {
            check_row(row, &format!("row {i}"))?;
        }
        Ok(Self {
            unit,
            n,
            k,
            table: Table::Conditional(values),
        })
    }

    /// Like [`Self::from_conditional`] but accepts rows summing to one within
    /// `tolerance` and rescales them exactly; used for imported tables.
    pub fn from_conditional_normalized(
        n: usize,
        k: usize,
        mut values: Vec<T>,
        unit: CountingUnit,
        tolerance: T,
    ) -> Result<Self> {
        if k == 0 || values.len() != n * k {
            return Err(Error::Dimension("conditional propensity table shape".into()));
        }
        for (i, row) in values.chunks_mut(k).enumerate() {
            let sum: T = row.iter().copied().sum();
            if (sum - T::one()).abs() > tolerance {
                return Err(Error::InvalidArgument(format!(
                    "propensity row {i} sums to {sum}"
                )));
            }
            row.iter_mut().for_each(|p| *p = *p / sum);
        }
        Self::from_conditional(n, k, values, unit)
    }

    pub fn kind(&self) -> PropensityKind {
        match self.table {
            Table::Marginal(_) => PropensityKind::Empirical,
            Table::Conditional(_) => PropensityKind::Estimated,
        }
    }

    pub fn unit(&self) -> CountingUnit {
        self.unit
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// π_{a,i}.
    pub fn prob(&self, i: usize, a: usize) -> T {
        match &self.table {
            Table::Marginal(m) => m[a],
            Table::Conditional(c) => c[i * self.k + a],
        }
    }

    /// π(a) for the empirical kind.
    pub fn marginal(&self) -> Option<&[T]> {
        match &self.table {
            Table::Marginal(m) => Some(m),
            Table::Conditional(_) => None,
        }
    }

    /// Probabilities of every individual's historical location, π_{A,i}.
    pub fn historical_probs(&self, dataset: &EvaluationDataset<T>) -> Vec<T> {
        dataset
            .individuals()
            .iter()
            .enumerate()
            .map(|(i, ind)| self.prob(i, ind.historical))
            .collect()
    }

    pub(crate) fn check_dataset(&self, dataset: &EvaluationDataset<T>) -> Result<()> {
        if self.n != dataset.n() || self.k != dataset.k() {
            return Err(Error::Dimension(format!(
                "propensities are {}x{}, dataset is {}x{}",
                self.n,
                self.k,
                dataset.n(),
                dataset.k()
            )));
        }
        Ok(())
    }
}

/// π(a) = (units historically at a) / (total units).
pub fn empirical_propensities<T: Scalar>(
    dataset: &EvaluationDataset<T>,
    unit: CountingUnit,
) -> PropensityModel<T> {
    let counts = dataset.historical_counts(unit);
    let total = T::from_count(counts.iter().sum());
    let marginal = counts.iter().map(|&c| T::from_count(c) / total).collect();
    PropensityModel::from_marginal(dataset.n(), marginal, unit)
        .expect("frequencies form a distribution")
}

/// A pluggable classifier producing class probabilities for each row.
pub trait ProbabilityModel<T: Scalar> {
    /// Fits on `features` with class `labels` in `0..k` and nonnegative
    /// observation `weights`, returning an N × K row-major table whose rows
    /// sum to one.
    fn fit_predict(
        &self,
        features: &[Vec<T>],
        labels: &[usize],
        weights: &[T],
        k: usize,
    ) -> Result<Vec<T>>;
}

/// L2-regularized multinomial logistic regression on standardized
/// covariates, with a probability floor.
#[derive(Debug, Clone, PartialEq)]
pub struct MultinomialLogit<T> {
    /// Ridge penalty on slopes (intercepts are unpenalized).
    pub l2: T,
    pub max_iter: usize,
    /// Stop when the gradient's max-norm drops below this.
    pub grad_tolerance: T,
    /// Minimum probability after fitting; rows are renormalized.
    pub floor: T,
}

impl<T: Scalar> Default for MultinomialLogit<T> {
    fn default() -> Self {
        Self {
            l2: T::lit(1e-2),
            max_iter: 500,
            grad_tolerance: T::lit(1e-7),
            floor: T::lit(1e-3),
        }
    }
}

/// Raises entries below `floor` to `floor` and rescales the rest so the row
/// still sums to one; the result has no entry below `floor`.
pub fn apply_floor<T: Scalar>(row: &mut [T], floor: T) {
    let k = row.len();
    let floor = floor.min(T::one() / T::from_count(k));
    if floor <= T::zero() {
        return;
    }
    let mut fixed = vec![false; k];
    loop {
        let n_fixed = fixed.iter().filter(|f| **f).count();
        let free_mass: T = row
            .iter()
            .zip(&fixed)
            .filter(|(_, f)| !**f)
            .map(|(p, _)| *p)
            .sum();
        let budget = T::one() - floor * T::from_count(n_fixed);
        let scale = if free_mass > T::zero() {
            budget / free_mass
        } else {
            T::zero()
        };
        let mut changed = false;
        for (p, f) in row.iter().zip(fixed.iter_mut()) {
            if !*f && *p * scale < floor {
                *f = true;
                changed = true;
            }
        }
        if !changed {
            for (p, f) in row.iter_mut().zip(&fixed) {
                *p = if *f { floor } else { *p * scale };
            }
            return;
        }
    }
}

fn softmax_into<T: Scalar>(logits: &[T], out: &mut [T]) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum = sum + *o;
    }
    out.iter_mut().for_each(|o| *o = *o / sum);
}

struct Standardized<T> {
    rows: Vec<Vec<T>>,
}

fn standardize<T: Scalar>(features: &[Vec<T>], weights: &[T]) -> Standardized<T> {
    let p = features.first().map_or(0, Vec::len);
    let wsum: T = weights.iter().copied().sum();
    let mut mean = vec![T::zero(); p];
    for (x, &w) in features.iter().zip(weights) {
        for j in 0..p {
            mean[j] = mean[j] + w * x[j];
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / wsum);
    let mut var = vec![T::zero(); p];
    for (x, &w) in features.iter().zip(weights) {
        for j in 0..p {
            let d = x[j] - mean[j];
            var[j] = var[j] + w * d * d;
        }
    }
    let sd: Vec<T> = var.iter().map(|v| (*v / wsum).sqrt()).collect();
    let rows = features
        .iter()
        .map(|x| {
            (0..p)
                .map(|j| {
                    // constant columns carry no signal
                    if sd[j] > T::epsilon() {
                        (x[j] - mean[j]) / sd[j]
                    } else {
                        T::zero()
                    }
                })
                .collect()
        })
        .collect();
    Standardized { rows }
}

impl<T: Scalar> MultinomialLogit<T> {
    fn objective(&self, x: &[Vec<T>], labels: &[usize], w: &[T], wsum: T, params: &[T], k: usize) -> T {
        let p1 = x.first().map_or(0, Vec::len) + 1;
        let mut logits = vec![T::zero(); k];
        let mut loss = T::zero();
        for ((xi, &y), &wi) in x.iter().zip(labels).zip(w) {
            for (a, l) in logits.iter_mut().enumerate() {
                let beta = &params[a * p1..(a + 1) * p1];
                *l = beta[0] + xi.iter().zip(&beta[1..]).map(|(u, v)| *u * *v).sum::<T>();
            }
            let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + logits.iter().map(|l| (*l - max).exp()).sum::<T>().ln();
            loss = loss + wi * (lse - logits[y]);
        }
        let penalty: T = (0..k)
            .flat_map(|a| params[a * p1 + 1..(a + 1) * p1].iter())
            .map(|b| *b * *b)
            .sum();
        loss / wsum + self.l2 * T::lit(0.5) * penalty
    }

    fn gradient(&self, x: &[Vec<T>], labels: &[usize], w: &[T], wsum: T, params: &[T], k: usize) -> Vec<T> {
        let p1 = x.first().map_or(0, Vec::len) + 1;
        let mut grad = vec![T::zero(); k * p1];
        let mut logits = vec![T::zero(); k];
        let mut probs = vec![T::zero(); k];
        for ((xi, &y), &wi) in x.iter().zip(labels).zip(w) {
            for (a, l) in logits.iter_mut().enumerate() {
                let beta = &params[a * p1..(a + 1) * p1];
                *l = beta[0] + xi.iter().zip(&beta[1..]).map(|(u, v)| *u * *v).sum::<T>();
            }
            softmax_into(&logits, &mut probs);
            for a in 0..k {
                let resid = wi * (probs[a] - if a == y { T::one() } else { T::zero() });
                let g = &mut grad[a * p1..(a + 1) * p1];
                g[0] = g[0] + resid;
                for (gj, xj) in g[1..].iter_mut().zip(xi) {
                    *gj = *gj + resid * *xj;
                }
            }
        }
        for a in 0..k {
            for j in 0..p1 {
                let idx = a * p1 + j;
                grad[idx] = grad[idx] / wsum;
                if j > 0 {
                    grad[idx] = grad[idx] + self.l2 * params[idx];
                }
            }
        }
        grad
    }
}

impl<T: Scalar> ProbabilityModel<T> for MultinomialLogit<T> {
    fn fit_predict(
        &self,
        features: &[Vec<T>],
        labels: &[usize],
        weights: &[T],
        k: usize,
    ) -> Result<Vec<T>> {
        let n = features.len();
        if labels.len() != n || weights.len() != n {
            return Err(Error::Dimension("features, labels and weights differ in length".into()));
        }
        if k == 1 {
            return Ok(vec![T::one(); n]);
        }
        let x = standardize(features, weights).rows;
        let p1 = x.first().map_or(0, Vec::len) + 1;
        let wsum: T = weights.iter().copied().sum();
        let mut class_weight = vec![T::zero(); k];
        for (&y, &w) in labels.iter().zip(weights) {
            class_weight[y] = class_weight[y] + w;
        }
        // warm start: intercepts at log class frequencies
        let mut params = vec![T::zero(); k * p1];
        for a in 0..k {
            params[a * p1] = (class_weight[a] / wsum).max(T::epsilon()).ln();
        }
        let mut step = T::one();
        let mut current = self.objective(&x, labels, weights, wsum, &params, k);
        for _ in 0..self.max_iter {
            let grad = self.gradient(&x, labels, weights, wsum, &params, k);
            let gmax = grad.iter().fold(T::zero(), |m, g| m.max(g.abs()));
            if gmax < self.grad_tolerance {
                break;
            }
            let gnorm2: T = grad.iter().map(|g| *g * *g).sum();
            // Armijo backtracking
            let mut accepted = false;
            for _ in 0..40 {
                let trial: Vec<T> = params.iter().zip(&grad).map(|(b, g)| *b - step * *g).collect();
                let value = self.objective(&x, labels, weights, wsum, &trial, k);
                if value <= current - T::lit(0.5) * step * gnorm2 {
                    params = trial;
                    current = value;
                    accepted = true;
                    step = (step * T::lit(2.0)).min(T::lit(64.0));
                    break;
                }
                step = step * T::lit(0.5);
            }
            if !accepted {
                break;
            }
        }
        let mut out = vec![T::zero(); n * k];
        let mut logits = vec![T::zero(); k];
        for (i, xi) in x.iter().enumerate() {
            for (a, l) in logits.iter_mut().enumerate() {
                let beta = &params[a * p1..(a + 1) * p1];
                *l = beta[0] + xi.iter().zip(&beta[1..]).map(|(u, v)| *u * *v).sum::<T>();
            }
            let row = &mut out[i * k..(i + 1) * k];
            softmax_into(&logits, row);
            apply_floor(row, self.floor);
        }
        Ok(out)
    }
}

/// Fits π(a | X_i) with `classifier`.
///
/// With `CountingUnit::Case` every case carries total weight one, split
/// evenly across its members.
pub fn estimate_propensities<T: Scalar, M: ProbabilityModel<T> + ?Sized>(
    dataset: &EvaluationDataset<T>,
    classifier: &M,
    unit: CountingUnit,
) -> Result<PropensityModel<T>> {
    let k = dataset.k();
    let counts = dataset.historical_counts(unit);
    if k > 1 {
        if let Some(a) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyClass(dataset.locations().id(a).to_string()));
        }
    }
    let features: Vec<Vec<T>> = dataset
        .individuals()
        .iter()
        .map(|i| i.covariates.clone())
        .collect();
    let labels = dataset.historical();
    let weights: Vec<T> = (0..dataset.n())
        .map(|i| match unit {
            CountingUnit::Individual => T::one(),
            CountingUnit::Case => {
                T::one() / T::from_count(dataset.cases()[dataset.case_of(i)].size())
            }
        })
        .collect();
    let table = classifier.fit_predict(&features, &labels, &weights, k)?;
    PropensityModel::from_conditional_normalized(
        dataset.n(),
        k,
        table,
        unit,
        T::lit(1e-6).max(row_tolerance::<T>(k)),
    )
}

/// Individuals whose policy location has π_{g_i,i} ≤ floor.
#[derive(Debug, Clone, PartialEq)]
pub struct PositivityReport<T> {
    pub floor: T,
    pub violations: Vec<usize>,
    /// Distinct offending location indices, ascending.
    pub locations: Vec<usize>,
}

impl<T: Scalar> PositivityReport<T> {
    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_error(&self, dataset: &EvaluationDataset<T>) -> Error {
        let locations = self
            .locations
            .iter()
            .map(|&a| dataset.locations().id(a).to_string())
            .collect::<Vec<_>>()
            .join(",");
        Error::Positivity {
            count: self.violations.len(),
            floor: self.floor.to_f64().unwrap_or(f64::NAN),
            locations,
        }
    }
}

pub fn positivity_check<T: Scalar>(
    propensities: &PropensityModel<T>,
    policy: &PolicyAssignment,
    floor: T,
) -> PositivityReport<T> {
    let mut violations = Vec::new();
    let mut locations = BTreeSet::new();
    for (i, &g) in policy.individual_assignment().iter().enumerate() {
        if propensities.prob(i, g) <= floor {
            violations.push(i);
            locations.insert(g);
        }
    }
    PositivityReport {
        floor,
        violations,
        locations: locations.into_iter().collect(),
    }
}
