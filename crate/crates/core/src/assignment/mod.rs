//! Counterfactual policy generation under per-location capacities.
//!
//! Cases are atomic: a family is never split across locations. The offline
//! solver maximizes total predicted outcome exactly by branch and bound over
//! a transportation relaxation in which each case ships `size` units of
//! flow; the online solver commits cases one at a time in arrival order.

mod flow;

use crate::error::{Error, Result};
use crate::model::{CountingUnit, EvaluationDataset, PredictionMatrix};
use crate::scalar::Scalar;

use flow::FlowNetwork;

/// Capacity value meaning "no limit".
pub const UNBOUNDED: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentProblem<T> {
    k: usize,
    case_rewards: Vec<T>,
    capacities: Vec<u64>,
    case_sizes: Vec<u64>,
    arrival_order: Option<Vec<usize>>,
}

impl<T: Scalar> AssignmentProblem<T> {
    /// `case_rewards` is row-major cases × K.
    pub fn new(case_rewards: Vec<T>, k: usize, capacities: Vec<u64>, case_sizes: Vec<u64>) -> Result<Self> {
        if k == 0 || capacities.len() != k {
            return Err(Error::Dimension(format!("{} capacities for {k} locations", capacities.len())));
        }
        if case_rewards.len() != case_sizes.len() * k {
            return Err(Error::Dimension(format!(
                "{} rewards for {} cases x {k} locations",
                case_rewards.len(),
                case_sizes.len()
            )));
        }
        if case_rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidArgument("case rewards must be finite".into()));
        }
        if case_sizes.contains(&0) {
            return Err(Error::InvalidArgument("cases must have at least one member".into()));
        }
        Ok(Self {
            k,
            case_rewards,
            capacities,
            case_sizes,
            arrival_order: None,
        })
    }

    /// Rewards Σ_{i ∈ case} μ_i(a). Capacities come from the dataset's
    /// declared values, falling back to historical individual counts.
    pub fn from_dataset(dataset: &EvaluationDataset<T>, predictions: &PredictionMatrix<T>) -> Result<Self> {
        predictions.check_shape(dataset.n(), dataset.k())?;
        let k = dataset.k();
        let mut rewards = Vec::with_capacity(dataset.cases().len() * k);
        for case in dataset.cases() {
            for a in 0..k {
                rewards.push(case.members.iter().map(|&i| predictions.get(i, a)).sum());
            }
        }
        let historical = dataset.historical_counts(CountingUnit::Individual);
        let capacities = dataset
            .locations()
            .iter()
            .zip(&historical)
            .map(|(loc, &h)| loc.capacity.unwrap_or(h as u64))
            .collect();
        let sizes = dataset.cases().iter().map(|c| c.size() as u64).collect();
        Self::new(rewards, k, capacities, sizes)
    }

    pub fn with_capacities(mut self, capacities: Vec<u64>) -> Result<Self> {
        if capacities.len() != self.k {
            return Err(Error::Dimension("capacity vector length".into()));
        }
        self.capacities = capacities;
        Ok(self)
    }

    /// Sets the online arrival sequence; must be a permutation of the cases.
    pub fn with_arrival_order(mut self, order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; self.n_cases()];
        for &c in &order {
            if c >= seen.len() || std::mem::replace(&mut seen[c], true) {
                return Err(Error::InvalidArgument("arrival order is not a permutation of cases".into()));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("arrival order misses cases".into()));
        }
        self.arrival_order = Some(order);
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_cases(&self) -> usize {
        self.case_sizes.len()
    }

    pub fn reward(&self, case: usize, location: usize) -> T {
        self.case_rewards[case * self.k + location]
    }

    pub fn rewards_of(&self, case: usize) -> &[T] {
        &self.case_rewards[case * self.k..(case + 1) * self.k]
    }

    pub fn capacities(&self) -> &[u64] {
        &self.capacities
    }

    pub fn case_sizes(&self) -> &[u64] {
        &self.case_sizes
    }

    pub fn arrival_order(&self) -> Option<&[usize]> {
        self.arrival_order.as_deref()
    }

    pub fn total_individuals(&self) -> u64 {
        self.case_sizes.iter().sum()
    }

    /// Σ_c reward(c, assignment[c]), summed in case order.
    pub fn total_reward(&self, assignment: &[usize]) -> T {
        assignment
            .iter()
            .enumerate()
            .map(|(c, &a)| self.reward(c, a))
            .sum()
    }

    pub fn is_feasible(&self, assignment: &[usize]) -> bool {
        if assignment.len() != self.n_cases() {
            return false;
        }
        let mut load = vec![0u64; self.k];
        for (c, &a) in assignment.iter().enumerate() {
            if a >= self.k {
                return false;
            }
            load[a] += self.case_sizes[c];
        }
        load.iter().zip(&self.capacities).all(|(l, c)| l <= c)
    }

    fn check_total_capacity(&self) -> Result<()> {
        let total = self.total_individuals();
        let cap = self
            .capacities
            .iter()
            .fold(0u64, |acc, &c| acc.saturating_add(c));
        if cap < total {
            return Err(Error::Infeasible(format!(
                "total capacity {cap} below {total} individuals"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OfflineSolver {
    /// Maximum branch-and-bound nodes before giving up.
    pub node_limit: usize,
}

impl Default for OfflineSolver {
    fn default() -> Self {
        Self { node_limit: 200_000 }
    }
}

struct Relaxation<T> {
    value: T,
    /// Location carrying the most flow of each free case.
    primary: Vec<usize>,
    /// Free cases whose flow is spread over several locations.
    split: Vec<usize>,
    /// Per split case, locations with positive flow, most flow first.
    split_locations: Vec<Vec<usize>>,
}

impl OfflineSolver {
    /// Exact capacity-constrained maximization of total case reward.
    pub fn solve<T: Scalar>(&self, problem: &AssignmentProblem<T>) -> Result<Vec<usize>> {
        problem.check_total_capacity()?;
        let n = problem.n_cases();
        if n == 0 {
            return Ok(Vec::new());
        }
        let tol = T::tolerance();
        let mut best: Option<(T, Vec<usize>)> = None;
        let mut nodes = 0usize;
        // depth-first stack of partial fixings
        let mut stack: Vec<Vec<Option<usize>>> = vec![vec![None; n]];
        while let Some(fixed) = stack.pop() {
            nodes += 1;
            if nodes > self.node_limit {
                return Err(Error::SearchLimit(self.node_limit));
            }
            let mut remaining = problem.capacities.to_vec();
            let mut fixed_value = T::zero();
            let mut ok = true;
            for (c, f) in fixed.iter().enumerate() {
                if let Some(a) = *f {
                    if remaining[a] < problem.case_sizes[c] {
                        ok = false;
                        break;
                    }
                    remaining[a] -= problem.case_sizes[c];
                    fixed_value = fixed_value + problem.reward(c, a);
                }
            }
            if !ok {
                continue;
            }
            let Some(relax) = relax(problem, &fixed, &remaining) else {
                continue;
            };
            let bound = fixed_value + relax.value;
            if let Some((incumbent, _)) = &best {
                if bound <= *incumbent + tol {
                    continue;
                }
            }
            if relax.split.is_empty() {
                let assignment: Vec<usize> = (0..n).map(|c| fixed[c].unwrap_or(relax.primary[c])).collect();
                let value = problem.total_reward(&assignment);
                if best.as_ref().is_none_or(|(v, _)| value > *v + tol) {
                    best = Some((value, assignment));
                }
                continue;
            }
            if let Some(assignment) = round(problem, &fixed, &relax) {
                let value = problem.total_reward(&assignment);
                if best.as_ref().is_none_or(|(v, _)| value > *v + tol) {
                    best = Some((value, assignment));
                }
            }
            // branch on the first split case; push so the heaviest location is explored first
            let c = relax.split[0];
            let mut order = relax.split_locations[0].clone();
            for a in 0..problem.k {
                if !order.contains(&a) {
                    order.push(a);
                }
            }
            for &a in order.iter().rev() {
                if remaining[a] >= problem.case_sizes[c] {
                    let mut child = fixed.clone();
                    child[c] = Some(a);
                    stack.push(child);
                }
            }
        }
        best.map(|(_, a)| a).ok_or_else(|| {
            Error::Infeasible("cases cannot be packed into the location capacities".into())
        })
    }
}

/// Solves the transportation relaxation over unfixed cases.
fn relax<T: Scalar>(
    problem: &AssignmentProblem<T>,
    fixed: &[Option<usize>],
    remaining: &[u64],
) -> Option<Relaxation<T>> {
    let k = problem.k;
    let free: Vec<usize> = (0..fixed.len()).filter(|&c| fixed[c].is_none()).collect();
    let supply: u64 = free.iter().map(|&c| problem.case_sizes[c]).sum();
    let cap_total = remaining.iter().fold(0u64, |acc, &c| acc.saturating_add(c));
    if cap_total < supply {
        return None;
    }
    if free.is_empty() {
        return Some(Relaxation {
            value: T::zero(),
            primary: vec![0; fixed.len()],
            split: Vec::new(),
            split_locations: Vec::new(),
        });
    }
    // nodes: source, free cases, locations, sink
    let source = 0;
    let loc_node = |a: usize| 1 + free.len() + a;
    let sink = 1 + free.len() + k;
    let mut net = FlowNetwork::new(sink + 1);
    let mut arcs = Vec::with_capacity(free.len() * k);
    let mut potential = vec![T::zero(); sink + 1];
    let mut loc_pot = vec![T::infinity(); k];
    for (j, &c) in free.iter().enumerate() {
        let size = problem.case_sizes[c];
        net.add_edge(source, 1 + j, size, T::zero());
        let size_t = T::from_u64(size).expect("case size fits scalar");
        for (a, pot) in loc_pot.iter_mut().enumerate() {
            let cost = -problem.reward(c, a) / size_t;
            arcs.push(net.add_edge(1 + j, loc_node(a), size, cost));
            *pot = pot.min(cost);
        }
    }
    let mut sink_pot = T::infinity();
    for a in 0..k {
        net.add_edge(loc_node(a), sink, remaining[a].min(supply), T::zero());
        potential[loc_node(a)] = loc_pot[a];
        sink_pot = sink_pot.min(loc_pot[a]);
    }
    potential[sink] = sink_pot;
    let shipped = net.min_cost_flow(source, sink, supply, potential);
    if shipped < supply {
        return None;
    }
    let mut value = T::zero();
    let mut primary = vec![0usize; fixed.len()];
    let mut split = Vec::new();
    let mut split_locations = Vec::new();
    for (j, &c) in free.iter().enumerate() {
        let size_t = T::from_u64(problem.case_sizes[c]).expect("case size fits scalar");
        let mut used: Vec<(usize, u64)> = Vec::new();
        for a in 0..k {
            let f = net.flow(arcs[j * k + a]);
            if f > 0 {
                used.push((a, f));
                value = value + problem.reward(c, a) * T::from_u64(f).expect("flow fits scalar") / size_t;
            }
        }
        used.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
        primary[c] = used[0].0;
        if used.len() > 1 {
            split.push(c);
            split_locations.push(used.iter().map(|u| u.0).collect());
        }
    }
    Some(Relaxation {
        value,
        primary,
        split,
        split_locations,
    })
}

/// Rounds a fractional relaxation: unsplit cases keep their location, split
/// cases go to their best location with room left.
fn round<T: Scalar>(
    problem: &AssignmentProblem<T>,
    fixed: &[Option<usize>],
    relax: &Relaxation<T>,
) -> Option<Vec<usize>> {
    let n = fixed.len();
    let mut remaining = problem.capacities.to_vec();
    let mut out = vec![usize::MAX; n];
    for c in 0..n {
        if let Some(a) = fixed[c] {
            out[c] = a;
        } else if !relax.split.contains(&c) {
            out[c] = relax.primary[c];
        }
        if out[c] != usize::MAX {
            if remaining[out[c]] < problem.case_sizes[c] {
                return None;
            }
            remaining[out[c]] -= problem.case_sizes[c];
        }
    }
    for &c in &relax.split {
        let a = best_feasible(problem.rewards_of(c), &remaining, problem.case_sizes[c])?;
        remaining[a] -= problem.case_sizes[c];
        out[c] = a;
    }
    Some(out)
}

/// Highest-reward location with room for `size`; ties go to the lowest index.
fn best_feasible<T: Scalar>(rewards: &[T], remaining: &[u64], size: u64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (a, r) in rewards.iter().enumerate() {
        if remaining[a] >= size && best.is_none_or(|b| *r > rewards[b]) {
            best = Some(a);
        }
    }
    best
}

/// Offline assignment with the default solver settings.
pub fn offline_assign<T: Scalar>(problem: &AssignmentProblem<T>) -> Result<Vec<usize>> {
    OfflineSolver::default().solve(problem)
}

/// Decision rule for online assignment.
pub trait OnlineStrategy<T: Scalar> {
    /// Picks a location for the case arriving at position `arrival_index`,
    /// given remaining capacities and the case's reward per location.
    fn choose(&mut self, remaining: &[u64], rewards: &[T], case_size: u64, arrival_index: usize) -> Option<usize>;
}

/// Assigns each arriving case to its best location with room left.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Greedy;

impl<T: Scalar> OnlineStrategy<T> for Greedy {
    fn choose(&mut self, remaining: &[u64], rewards: &[T], case_size: u64, _arrival_index: usize) -> Option<usize> {
        best_feasible(rewards, remaining, case_size)
    }
}

/// Processes cases in arrival order (case index order when none is set).
pub fn online_assign<T: Scalar, S: OnlineStrategy<T> + ?Sized>(
    problem: &AssignmentProblem<T>,
    strategy: &mut S,
) -> Result<Vec<usize>> {
    problem.check_total_capacity()?;
    let n = problem.n_cases();
    let default_order: Vec<usize>;
    let order = match problem.arrival_order() {
        Some(o) => o,
        None => {
            default_order = (0..n).collect();
            &default_order
        }
    };
    let mut remaining = problem.capacities.to_vec();
    let mut out = vec![usize::MAX; n];
    for (t, &c) in order.iter().enumerate() {
        let size = problem.case_sizes[c];
        let a = strategy
            .choose(&remaining, problem.rewards_of(c), size, t)
            .filter(|&a| a < problem.k && remaining[a] >= size)
            .ok_or_else(|| Error::Infeasible(format!("case at arrival {t} cannot fit in any remaining location")))?;
        remaining[a] -= size;
        out[c] = a;
    }
    Ok(out)
}
