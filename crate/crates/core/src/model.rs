//! Population, outcome, prediction and policy types shared across the engine.
//!
//! Locations, individuals and cases are addressed by dense indices once a
//! dataset is built; the original string identifiers are kept for I/O.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LocationId(pub String);

impl fmt::Display for LocationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LocationId {
    fn from(s: &str) -> Self {
        LocationId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub id: LocationId,
    /// Maximum number of individuals a counterfactual policy may place here.
    pub capacity: Option<u64>,
}

/// Ordered set of locations with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LocationSet {
    locations: Vec<Location>,
    index: HashMap<String, usize>,
}

impl LocationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = Self::new();
        for id in ids {
            set.insert(id.as_ref(), None)?;
        }
        Ok(set)
    }

    /// Adds a location; duplicate ids are rejected.
    pub fn insert(&mut self, id: &str, capacity: Option<u64>) -> Result<usize> {
        if self.index.contains_key(id) {
            return Err(Error::InvalidArgument(format!("duplicate location id {id}")));
        }
        let idx = self.locations.len();
        self.locations.push(Location {
            id: LocationId(id.to_string()),
            capacity,
        });
        self.index.insert(id.to_string(), idx);
        Ok(idx)
    }

    /// Returns the index of `id`, inserting it without capacity if absent.
    pub fn get_or_insert(&mut self, id: &str) -> usize {
        match self.index.get(id) {
            Some(&i) => i,
            None => self.insert(id, None).expect("absent id"),
        }
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Location {
        &self.locations[idx]
    }

    pub fn id(&self, idx: usize) -> &LocationId {
        &self.locations[idx].id
    }

    pub fn iter(&self) -> impl Iterator<Item = &Location> {
        self.locations.iter()
    }

    pub fn set_capacity(&mut self, idx: usize, capacity: Option<u64>) {
        self.locations[idx].capacity = capacity;
    }

    /// Capacities of every location, `None` where undeclared.
    pub fn capacities(&self) -> Vec<Option<u64>> {
        self.locations.iter().map(|l| l.capacity).collect()
    }

    pub fn has_capacities(&self) -> bool {
        self.locations.iter().any(|l| l.capacity.is_some())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual<T> {
    pub id: String,
    pub case_id: String,
    /// Index of the historical location in the dataset's [`LocationSet`].
    pub historical: usize,
    pub outcome: bool,
    pub covariates: Vec<T>,
}

impl<T: Scalar> Individual<T> {
    pub fn outcome_value(&self) -> T {
        if self.outcome {
            T::one()
        } else {
            T::zero()
        }
    }
}

/// A family placed as one unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Case {
    pub id: String,
    /// Indices into the dataset's individuals, in file order.
    pub members: Vec<usize>,
    /// Shared historical location of all members.
    pub historical: usize,
}

impl Case {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Immutable evaluation population.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationDataset<T> {
    locations: LocationSet,
    individuals: Vec<Individual<T>>,
    cases: Vec<Case>,
    case_of: Vec<usize>,
    covariate_names: Vec<String>,
    individual_index: HashMap<String, usize>,
    case_index: HashMap<String, usize>,
}

impl<T: Scalar> EvaluationDataset<T> {
    /// Builds a dataset, grouping individuals into cases by `case_id` in
    /// order of first appearance.
    ///
    /// Error rows are reported as file lines assuming a single header line.
    pub fn from_parts(
        locations: LocationSet,
        individuals: Vec<Individual<T>>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        Self::from_parts_named("<memory>", locations, individuals, covariate_names)
    }

    pub(crate) fn from_parts_named(
        source: &str,
        locations: LocationSet,
        individuals: Vec<Individual<T>>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        if individuals.is_empty() {
            return Err(Error::EmptyDataset {
                file: source.to_string(),
            });
        }
        let p = covariate_names.len();
        let mut individual_index = HashMap::with_capacity(individuals.len());
        let mut case_index: HashMap<String, usize> = HashMap::new();
        let mut cases: Vec<Case> = Vec::new();
        let mut case_of = Vec::with_capacity(individuals.len());
        for (i, ind) in individuals.iter().enumerate() {
            let row = i + 2;
            let parse_err = |message: String| Error::Parse {
                file: source.to_string(),
                row,
                message,
            };
            if ind.historical >= locations.len() {
                return Err(parse_err(format!(
                    "historical location index {} out of range",
                    ind.historical
                )));
            }
            if ind.covariates.len() != p {
                return Err(parse_err(format!(
                    "expected {p} covariates, found {}",
                    ind.covariates.len()
                )));
            }
            if individual_index.insert(ind.id.clone(), i).is_some() {
                return Err(parse_err(format!("duplicate individual id {}", ind.id)));
            }
            let c = match case_index.get(&ind.case_id) {
                Some(&c) => {
                    let case = &mut cases[c];
                    if case.historical != ind.historical {
                        return Err(Error::InconsistentCase {
                            file: source.to_string(),
                            row,
                            case_id: ind.case_id.clone(),
                            first: locations.id(case.historical).to_string(),
                            second: locations.id(ind.historical).to_string(),
                        });
                    }
                    case.members.push(i);
                    c
                }
                None => {
                    let c = cases.len();
                    cases.push(Case {
                        id: ind.case_id.clone(),
                        members: vec![i],
                        historical: ind.historical,
                    });
                    case_index.insert(ind.case_id.clone(), c);
                    c
                }
            };
            case_of.push(c);
        }
        Ok(Self {
            locations,
            individuals,
            cases,
            case_of,
            covariate_names,
            individual_index,
            case_index,
        })
    }

    pub fn locations(&self) -> &LocationSet {
        &self.locations
    }

    pub fn individuals(&self) -> &[Individual<T>] {
        &self.individuals
    }

    pub fn cases(&self) -> &[Case] {
        &self.cases
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Number of individuals, N.
    pub fn n(&self) -> usize {
        self.individuals.len()
    }

    /// Number of locations, K.
    pub fn k(&self) -> usize {
        self.locations.len()
    }

    pub fn case_of(&self, individual: usize) -> usize {
        self.case_of[individual]
    }

    pub fn individual_position(&self, id: &str) -> Option<usize> {
        self.individual_index.get(id).copied()
    }

    pub fn case_position(&self, id: &str) -> Option<usize> {
        self.case_index.get(id).copied()
    }

    pub fn historical(&self) -> Vec<usize> {
        self.individuals.iter().map(|i| i.historical).collect()
    }

    /// Historical arrivals per location, counted in `unit`s.
    pub fn historical_counts(&self, unit: CountingUnit) -> Vec<usize> {
        let mut counts = vec![0usize; self.k()];
        match unit {
            CountingUnit::Individual => {
                for ind in &self.individuals {
                    counts[ind.historical] += 1;
                }
            }
            CountingUnit::Case => {
                for case in &self.cases {
                    counts[case.historical] += 1;
                }
            }
        }
        counts
    }

    /// Same population with a replaced location set and remapped history.
    pub(crate) fn remap_locations(&self, locations: LocationSet, forward: &[usize]) -> Self {
        let mut out = self.clone();
        out.locations = locations;
        for ind in &mut out.individuals {
            ind.historical = forward[ind.historical];
        }
        for case in &mut out.cases {
            case.historical = forward[case.historical];
        }
        out
    }

    /// Same population with outcomes replaced (used by simulation).
    pub fn with_outcomes(&self, historical: &[usize], outcomes: &[bool]) -> Result<Self> {
        if historical.len() != self.n() || outcomes.len() != self.n() {
            return Err(Error::Dimension("outcome vectors must have length N".into()));
        }
        let individuals = self
            .individuals
            .iter()
            .zip(historical.iter().zip(outcomes))
            .map(|(ind, (&a, &y))| Individual {
                historical: a,
                outcome: y,
                ..ind.clone()
            })
            .collect();
        Self::from_parts(
            self.locations.clone(),
            individuals,
            self.covariate_names.clone(),
        )
    }
}

/// Unit in which historical arrivals are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CountingUnit {
    #[default]
    Case,
    Individual,
}

impl std::str::FromStr for CountingUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "case" => Ok(Self::Case),
            "individual" => Ok(Self::Individual),
            other => Err(Error::Config(format!("unknown counting unit {other}"))),
        }
    }
}

/// Mean observed outcome, the status-quo policy value.
pub fn observed_baseline<T: Scalar>(dataset: &EvaluationDataset<T>) -> T {
    let total: T = dataset.individuals().iter().map(|i| i.outcome_value()).sum();
    total / T::from_count(dataset.n())
}

/// N × K table of predicted outcome probabilities μ_i(a).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix<T> {
    n: usize,
    k: usize,
    values: Vec<T>,
}

impl<T: Scalar> PredictionMatrix<T> {
    /// Row-major values; every entry must lie in [0, 1].
    pub fn new(n: usize, k: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != n * k {
            return Err(Error::Dimension(format!(
                "prediction matrix needs {} entries, got {}",
                n * k,
                values.len()
            )));
        }
        if let Some(pos) = values
            .iter()
            .position(|v| !(*v >= T::zero() && *v <= T::one()))
        {
            return Err(Error::InvalidArgument(format!(
                "prediction ({}, {}) = {} outside [0, 1]",
                pos / k,
                pos % k,
                values[pos]
            )));
        }
        Ok(Self { n, k, values })
    }

    pub fn constant(n: usize, k: usize, value: T) -> Result<Self> {
        Self::new(n, k, vec![value; n * k])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, a: usize) -> T {
        self.values[i * self.k + a]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub(crate) fn check_shape(&self, n: usize, k: usize) -> Result<()> {
        if self.n != n || self.k != k {
            return Err(Error::Dimension(format!(
                "predictions are {}x{}, expected {n}x{k}",
                self.n, self.k
            )));
        }
        Ok(())
    }
}

/// Each member of a case inherits the case's location.
pub fn derive_individual_assignment(
    cases: &[Case],
    n_individuals: usize,
    case_assignment: &HashMap<String, usize>,
) -> Result<Vec<usize>> {
    let mut out = vec![usize::MAX; n_individuals];
    for case in cases {
        let loc = *case_assignment
            .get(&case.id)
            .ok_or_else(|| Error::UnassignedCase(case.id.clone()))?;
        for &m in &case.members {
            out[m] = loc;
        }
    }
    Ok(out)
}

/// Case-level counterfactual policy g with the derived individual view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyAssignment {
    case_assignment: Vec<usize>,
    individual_assignment: Vec<usize>,
}

impl PolicyAssignment {
    /// `case_assignment[c]` is the location index of case `c`.
    pub fn from_case_indices<T: Scalar>(
        dataset: &EvaluationDataset<T>,
        case_assignment: Vec<usize>,
    ) -> Result<Self> {
        if case_assignment.len() != dataset.cases().len() {
            return Err(Error::Dimension(format!(
                "{} case locations for {} cases",
                case_assignment.len(),
                dataset.cases().len()
            )));
        }
        if let Some(&bad) = case_assignment.iter().find(|&&a| a >= dataset.k()) {
            return Err(Error::UnknownLocation(format!("index {bad}")));
        }
        let mut individual_assignment = vec![0; dataset.n()];
        for (case, &loc) in dataset.cases().iter().zip(&case_assignment) {
            for &m in &case.members {
                individual_assignment[m] = loc;
            }
        }
        Ok(Self {
            case_assignment,
            individual_assignment,
        })
    }

    /// Builds from a map keyed by case id; every case must be present.
    pub fn from_case_map<T: Scalar>(
        dataset: &EvaluationDataset<T>,
        map: &HashMap<String, usize>,
    ) -> Result<Self> {
        let case_assignment = dataset
            .cases()
            .iter()
            .map(|c| {
                map.get(&c.id)
                    .copied()
                    .ok_or_else(|| Error::UnassignedCase(c.id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_case_indices(dataset, case_assignment)
    }

    /// The status-quo policy g = A.
    pub fn historical<T: Scalar>(dataset: &EvaluationDataset<T>) -> Self {
        let cases = dataset.cases().iter().map(|c| c.historical).collect();
        Self::from_case_indices(dataset, cases).expect("historical locations are valid")
    }

    pub fn case_assignment(&self) -> &[usize] {
        &self.case_assignment
    }

    /// g_i for every individual.
    pub fn individual_assignment(&self) -> &[usize] {
        &self.individual_assignment
    }

    /// Assigned individuals per location.
    pub fn load(&self, k: usize) -> Vec<u64> {
        let mut load = vec![0u64; k];
        for &a in &self.individual_assignment {
            load[a] += 1;
        }
        load
    }

    /// Checks declared capacities against the assigned load.
    pub fn check_capacities<T: Scalar>(&self, dataset: &EvaluationDataset<T>) -> Result<()> {
        let load = self.load(dataset.k());
        for (a, loc) in dataset.locations().iter().enumerate() {
            if let Some(cap) = loc.capacity {
                if load[a] > cap {
                    return Err(Error::Infeasible(format!(
                        "location {} receives {} individuals, capacity {}",
                        loc.id, load[a], cap
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Synthetic N × K table of binary potential outcomes Y_i(a).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PotentialOutcomeTable {
    n: usize,
    k: usize,
    values: Vec<bool>,
}

impl PotentialOutcomeTable {
    pub fn new(n: usize, k: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != n * k {
            return Err(Error::Dimension(format!(
                "outcome table needs {} entries, got {}",
                n * k,
                values.len()
            )));
        }
        Ok(Self { n, k, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, a: usize) -> bool {
        self.values[i * self.k + a]
    }

    /// Checks Y_i(A_i) against a dataset's observed outcomes.
    pub fn consistent_with<T: Scalar>(&self, dataset: &EvaluationDataset<T>) -> bool {
        self.n == dataset.n()
            && dataset
                .individuals()
                .iter()
                .enumerate()
                .all(|(i, ind)| self.get(i, ind.historical) == ind.outcome)
    }
}
