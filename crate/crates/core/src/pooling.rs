//! Merging of small locations into one pseudo-location.
//!
//! Locations with π(a) strictly below the threshold form the pool. Cases the
//! policy sends to the pool are resolved to a member location drawn with
//! probability π(a) / Σ_pool π, so the pooled arm is itself randomized in
//! proportion to the historical design. In pooled space the non-member
//! locations keep their relative order and the pool is the last location.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{EvaluationDataset, LocationId, LocationSet, PolicyAssignment, PredictionMatrix};
use crate::propensity::{PropensityKind, PropensityModel};
use crate::scalar::Scalar;

pub const DEFAULT_THRESHOLD: f64 = 0.01;
pub const POOLED_LOCATION_ID: &str = "POOL";

#[derive(Debug, Clone, PartialEq)]
pub struct PoolingMap<T> {
    threshold: T,
    pooled_location_id: LocationId,
    members: Vec<usize>,
    member_weights: Vec<T>,
    forward: Vec<usize>,
    pooled_propensity: T,
}

impl<T: Scalar> PoolingMap<T> {
    pub fn identity(k: usize, threshold: T) -> Self {
        Self {
            threshold,
            pooled_location_id: LocationId(POOLED_LOCATION_ID.into()),
            members: Vec::new(),
            member_weights: Vec::new(),
            forward: (0..k).collect(),
            pooled_propensity: T::zero(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.members.is_empty()
    }

    pub fn threshold(&self) -> T {
        self.threshold
    }

    pub fn pooled_location_id(&self) -> &LocationId {
        &self.pooled_location_id
    }

    /// Original indices of pooled locations, ascending.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// π(a) / pooled propensity for each member, aligned with [`Self::members`].
    pub fn member_weights(&self) -> &[T] {
        &self.member_weights
    }

    /// Original location index → pooled-space index.
    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn pooled_propensity(&self) -> T {
        self.pooled_propensity
    }

    pub fn original_k(&self) -> usize {
        self.forward.len()
    }

    pub fn pooled_k(&self) -> usize {
        if self.is_identity() {
            self.forward.len()
        } else {
            self.forward.len() - self.members.len() + 1
        }
    }

    /// Index of the pseudo-location in pooled space.
    pub fn pool_index(&self) -> Option<usize> {
        (!self.is_identity()).then(|| self.pooled_k() - 1)
    }

    /// Pooled-space index → original index, `None` for the pool itself.
    fn backward(&self) -> Vec<Option<usize>> {
        let mut back = vec![None; self.pooled_k()];
        for (orig, &pooled) in self.forward.iter().enumerate() {
            if Some(pooled) != self.pool_index() {
                back[pooled] = Some(orig);
            }
        }
        back
    }

    /// Maps an original-space policy into pooled space.
    pub fn pool_policy(
        &self,
        pooled_dataset: &EvaluationDataset<T>,
        policy: &PolicyAssignment,
    ) -> Result<PolicyAssignment> {
        let cases = policy
            .case_assignment()
            .iter()
            .map(|&a| self.forward[a])
            .collect();
        PolicyAssignment::from_case_indices(pooled_dataset, cases)
    }

    /// Writes `original_location,pooled_location,weight` rows.
    pub fn write<W: Write>(&self, locations: &LocationSet, out: W) -> Result<()> {
        if locations.len() != self.original_k() {
            return Err(Error::Dimension("pooling map and location set differ".into()));
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["original_location", "pooled_location", "weight"])?;
        for (a, loc) in locations.iter().enumerate() {
            let (pooled, weight) = match self.members.iter().position(|&m| m == a) {
                Some(j) => (self.pooled_location_id.0.clone(), self.member_weights[j]),
                None => (loc.id.0.clone(), T::one()),
            };
            w.write_record([loc.id.0.clone(), pooled, weight.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pools every location with π(a) < `threshold`, provided at least two
/// qualify; otherwise returns the identity map.
pub fn build_pooling<T: Scalar>(
    propensities: &PropensityModel<T>,
    threshold: T,
) -> Result<PoolingMap<T>> {
    if !(threshold > T::zero() && threshold < T::one()) {
        return Err(Error::InvalidArgument(format!(
            "pooling threshold {threshold} outside (0, 1)"
        )));
    }
    let marginal = match propensities.kind() {
        PropensityKind::Empirical => propensities.marginal().expect("empirical kind"),
        PropensityKind::Estimated => {
            return Err(Error::InvalidArgument(
                "pooling membership requires empirical propensities".into(),
            ))
        }
    };
    let k = marginal.len();
    let members: Vec<usize> = (0..k).filter(|&a| marginal[a] < threshold).collect();
    if members.len() < 2 {
        return Ok(PoolingMap::identity(k, threshold));
    }
    let pooled_propensity: T = members.iter().map(|&a| marginal[a]).sum();
    let member_weights = if pooled_propensity > T::zero() {
        members.iter().map(|&a| marginal[a] / pooled_propensity).collect()
    } else {
        // all members unobserved; resolve uniformly
        vec![T::one() / T::from_count(members.len()); members.len()]
    };
    let pooled_k = k - members.len() + 1;
    let mut forward = Vec::with_capacity(k);
    let mut next = 0;
    for a in 0..k {
        if members.contains(&a) {
            forward.push(pooled_k - 1);
        } else {
            forward.push(next);
            next += 1;
        }
    }
    Ok(PoolingMap {
        threshold,
        pooled_location_id: LocationId(POOLED_LOCATION_ID.into()),
        members,
        member_weights,
        forward,
        pooled_propensity,
    })
}

/// Dataset, predictions and propensities over the pooled location space.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledProblem<T> {
    pub dataset: EvaluationDataset<T>,
    pub predictions: PredictionMatrix<T>,
    pub propensities: PropensityModel<T>,
}

pub fn pool_problem<T: Scalar>(
    dataset: &EvaluationDataset<T>,
    predictions: &PredictionMatrix<T>,
    propensities: &PropensityModel<T>,
    pooling: &PoolingMap<T>,
) -> Result<PooledProblem<T>> {
    let k = dataset.k();
    if pooling.original_k() != k {
        return Err(Error::Dimension(format!(
            "pooling map covers {} locations, dataset has {k}",
            pooling.original_k()
        )));
    }
    predictions.check_shape(dataset.n(), k)?;
    propensities.check_dataset(dataset)?;
    if pooling.is_identity() {
        return Ok(PooledProblem {
            dataset: dataset.clone(),
            predictions: predictions.clone(),
            propensities: propensities.clone(),
        });
    }
    let pk = pooling.pooled_k();
    let pool = pk - 1;
    let backward = pooling.backward();

    let mut locations = LocationSet::new();
    for slot in backward.iter().take(pool) {
        let loc = dataset.locations().get(slot.expect("non-pool slot"));
        locations.insert(&loc.id.0, loc.capacity)?;
    }
    let member_caps: Option<u64> = pooling
        .members()
        .iter()
        .map(|&a| dataset.locations().get(a).capacity)
        .sum();
    if locations.position(&pooling.pooled_location_id().0).is_some() {
        return Err(Error::InvalidArgument(format!(
            "location id {} is reserved for the pool",
            pooling.pooled_location_id()
        )));
    }
    locations.insert(&pooling.pooled_location_id().0, member_caps)?;
    let pooled_dataset = dataset.remap_locations(locations, pooling.forward());

    let n = dataset.n();
    let mut mu = Vec::with_capacity(n * pk);
    for i in 0..n {
        for slot in &backward {
            let value = match slot {
                Some(a) => predictions.get(i, *a),
                None => pooling
                    .members()
                    .iter()
                    .zip(pooling.member_weights())
                    .map(|(&a, &w)| w * predictions.get(i, a))
                    .sum::<T>()
                    .min(T::one()),
            };
            mu.push(value);
        }
    }
    let pooled_predictions = PredictionMatrix::new(n, pk, mu)?;

    let pooled_propensities = match propensities.kind() {
        PropensityKind::Empirical => {
            let marginal = propensities.marginal().expect("empirical kind");
            let mut out = vec![T::zero(); pk];
            for (a, &p) in marginal.iter().enumerate() {
                let idx = pooling.forward()[a];
                out[idx] = out[idx] + p;
            }
            PropensityModel::from_marginal(n, out, propensities.unit())?
        }
        PropensityKind::Estimated => {
            let mut out = vec![T::zero(); n * pk];
            for i in 0..n {
                for a in 0..k {
                    let idx = i * pk + pooling.forward()[a];
                    out[idx] = out[idx] + propensities.prob(i, a);
                }
            }
            PropensityModel::from_conditional(n, pk, out, propensities.unit())?
        }
    };
    Ok(PooledProblem {
        dataset: pooled_dataset,
        predictions: pooled_predictions,
        propensities: pooled_propensities,
    })
}

/// Resolves a pooled-space policy back to original locations; each case
/// sent to the pool draws a member with probability proportional to π(a).
pub fn resolve_pooled_assignment<T: Scalar>(
    dataset: &EvaluationDataset<T>,
    policy: &PolicyAssignment,
    pooling: &PoolingMap<T>,
    seed: u64,
) -> Result<PolicyAssignment> {
    if pooling.original_k() != dataset.k() {
        return Err(Error::Dimension("pooling map does not match dataset".into()));
    }
    let backward = pooling.backward();
    let weights: Vec<f64> = pooling
        .member_weights()
        .iter()
        .map(|w| w.to_f64().unwrap_or(0.0))
        .collect();
    let sampler = if pooling.is_identity() {
        None
    } else {
        Some(
            WeightedIndex::new(&weights)
                .map_err(|e| Error::InvalidArgument(format!("pool weights: {e}")))?,
        )
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(policy.case_assignment().len());
    for &g in policy.case_assignment() {
        let slot = backward
            .get(g)
            .ok_or_else(|| Error::UnknownLocation(format!("pooled index {g}")))?;
        let resolved = match slot {
            Some(a) => *a,
            None => pooling.members()[sampler.as_ref().expect("pool exists").sample(&mut rng)],
        };
        cases.push(resolved);
    }
    PolicyAssignment::from_case_indices(dataset, cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CountingUnit, Individual};

    fn six_location_pi() -> PropensityModel<f64> {
        PropensityModel::from_marginal(
            1,
            vec![0.6, 0.3, 0.08, 0.012, 0.005, 0.003],
            CountingUnit::Case,
        )
        .unwrap()
    }

    fn dataset(k: usize, historical: &[usize]) -> EvaluationDataset<f64> {
        let ids: Vec<String> = (1..=k).map(|a| format!("L{a}")).collect();
        let individuals = historical
            .iter()
            .enumerate()
            .map(|(i, &a)| Individual {
                id: format!("i{i}"),
                case_id: format!("c{i}"),
                historical: a,
                outcome: false,
                covariates: vec![],
            })
            .collect();
        EvaluationDataset::from_parts(LocationSet::from_ids(ids).unwrap(), individuals, vec![])
            .unwrap()
    }

    #[test]
    fn strict_threshold_membership() {
        let map = build_pooling(&six_location_pi(), 0.01).unwrap();
        assert_eq!(map.members(), &[4, 5]);
        assert!((map.pooled_propensity() - 0.008).abs() < 1e-12);
        assert_eq!(map.forward(), &[0, 1, 2, 3, 4, 4]);
        assert_eq!(map.pooled_k(), 5);
    }

    #[test]
    fn degenerate_pools_are_identity() {
        let two = PropensityModel::from_marginal(1, vec![0.5, 0.5], CountingUnit::Case).unwrap();
        assert!(build_pooling(&two, 0.01).unwrap().is_identity());
        let one_small =
            PropensityModel::from_marginal(1, vec![0.995, 0.005], CountingUnit::Case).unwrap();
        assert!(build_pooling(&one_small, 0.01).unwrap().is_identity());
        assert!(build_pooling(&two, 0.0).is_err());
        assert!(build_pooling(&two, 1.0).is_err());
    }

    #[test]
    fn pooled_prediction_is_propensity_weighted() {
        let pi = six_location_pi();
        let ds = dataset(6, &[5]);
        let pi = PropensityModel::from_marginal(1, pi.marginal().unwrap().to_vec(), CountingUnit::Case)
            .unwrap();
        let mu = PredictionMatrix::new(1, 6, vec![0.1, 0.1, 0.1, 0.1, 0.4, 0.8]).unwrap();
        let map = build_pooling(&pi, 0.01).unwrap();
        let pooled = pool_problem(&ds, &mu, &pi, &map).unwrap();
        assert!((pooled.predictions.get(0, 4) - 0.55).abs() < 1e-12);
        // A_i = L6 lands in the pool
        assert_eq!(pooled.dataset.individuals()[0].historical, 4);
        assert_eq!(pooled.dataset.locations().id(4).0, POOLED_LOCATION_ID);
        let m = pooled.propensities.marginal().unwrap();
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((m[4] - 0.008).abs() < 1e-12);
    }

    #[test]
    fn identity_pooling_is_a_no_op() {
        let ds = dataset(2, &[0, 1]);
        let pi = PropensityModel::from_marginal(2, vec![0.5, 0.5], CountingUnit::Case).unwrap();
        let mu = PredictionMatrix::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let map = build_pooling(&pi, 0.01).unwrap();
        let pooled = pool_problem(&ds, &mu, &pi, &map).unwrap();
        assert_eq!(pooled.dataset, ds);
        assert_eq!(pooled.predictions, mu);
        assert_eq!(pooled.propensities, pi);
        let g = PolicyAssignment::from_case_indices(&ds, vec![1, 0]).unwrap();
        assert_eq!(resolve_pooled_assignment(&ds, &g, &map, 3).unwrap(), g);
    }

    #[test]
    fn conditional_propensities_sum_over_members() {
        let ds = dataset(3, &[0, 1]);
        let pi = PropensityModel::from_conditional(
            2,
            3,
            vec![0.990, 0.004, 0.006, 0.98, 0.01, 0.01],
            CountingUnit::Case,
        )
        .unwrap();
        let marginal =
            PropensityModel::from_marginal(2, vec![0.99, 0.005, 0.005], CountingUnit::Case).unwrap();
        let map = build_pooling(&marginal, 0.01).unwrap();
        assert!(build_pooling(&pi, 0.01).is_err());
        let mu = PredictionMatrix::constant(2, 3, 0.5).unwrap();
        let pooled = pool_problem(&ds, &mu, &pi, &map).unwrap();
        assert!((pooled.propensities.prob(0, 1) - 0.010).abs() < 1e-12);
        assert!((pooled.propensities.prob(1, 1) - 0.02).abs() < 1e-12);
    }

    #[test]
    fn resolution_splits_proportionally_and_replays() {
        let pi = six_location_pi();
        let map = build_pooling(&pi, 0.01).unwrap();
        let n = 10_000;
        let ds = dataset(6, &vec![0; n]);
        let pooled_policy = PolicyAssignment::from_case_indices(
            &pool_problem(
                &ds,
                &PredictionMatrix::constant(n, 6, 0.5).unwrap(),
                &PropensityModel::from_marginal(n, pi.marginal().unwrap().to_vec(), CountingUnit::Case)
                    .unwrap(),
                &map,
            )
            .unwrap()
            .dataset,
            vec![4; n],
        )
        .unwrap();
        let resolved = resolve_pooled_assignment(&ds, &pooled_policy, &map, 42).unwrap();
        let share_l5 =
            resolved.case_assignment().iter().filter(|&&a| a == 4).count() as f64 / n as f64;
        assert!((share_l5 - 0.625).abs() < 0.02, "{share_l5}");
        assert!(resolved.case_assignment().iter().all(|&a| a == 4 || a == 5));
        let again = resolve_pooled_assignment(&ds, &pooled_policy, &map, 42).unwrap();
        assert_eq!(resolved, again);
    }

    #[test]
    fn export_format() {
        let map = build_pooling(&six_location_pi(), 0.01).unwrap();
        let locs = LocationSet::from_ids(["L1", "L2", "L3", "L4", "L5", "L6"]).unwrap();
        let mut out = Vec::new();
        map.write(&locs, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("original_location,pooled_location,weight\nL1,L1,1\n"));
        assert!(text.contains("L5,POOL,0.625"));
    }
}
