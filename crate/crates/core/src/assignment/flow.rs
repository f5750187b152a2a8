//! Successive-shortest-path min-cost flow with integer capacities and
//! scalar costs.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::scalar::Scalar;

#[derive(Debug, Clone)]
struct Edge<T> {
    to: usize,
    cap: u64,
    cost: T,
}

#[derive(Debug, Clone)]
pub(crate) struct FlowNetwork<T> {
    edges: Vec<Edge<T>>,
    adj: Vec<Vec<usize>>,
}

struct HeapItem<T> {
    dist: T,
    node: usize,
}

impl<T: Scalar> PartialEq for HeapItem<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for HeapItem<T> {}

impl<T: Scalar> PartialOrd for HeapItem<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for HeapItem<T> {
    // min-heap on distance, lower node index first on ties
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl<T: Scalar> FlowNetwork<T> {
    pub(crate) fn new(nodes: usize) -> Self {
        Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    /// Adds a forward arc and its residual twin; returns the forward arc id.
    pub(crate) fn add_edge(&mut self, from: usize, to: usize, cap: u64, cost: T) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { to, cap, cost });
        self.edges.push(Edge {
            to: from,
            cap: 0,
            cost: -cost,
        });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
        id
    }

    /// Flow currently carried by forward arc `id`.
    pub(crate) fn flow(&self, id: usize) -> u64 {
        self.edges[id + 1].cap
    }

    /// Pushes up to `limit` units from `source` to `sink` at minimum cost.
    ///
    /// `potential` must be a feasible potential for the initial residual
    /// graph (reduced costs nonnegative). Returns the amount shipped.
    pub(crate) fn min_cost_flow(
        &mut self,
        source: usize,
        sink: usize,
        limit: u64,
        mut potential: Vec<T>,
    ) -> u64 {
        let n = self.adj.len();
        let mut shipped = 0u64;
        let mut dist = vec![T::infinity(); n];
        let mut prev_edge = vec![usize::MAX; n];
        while shipped < limit {
            dist.iter_mut().for_each(|d| *d = T::infinity());
            prev_edge.iter_mut().for_each(|p| *p = usize::MAX);
            dist[source] = T::zero();
            let mut heap = BinaryHeap::new();
            heap.push(HeapItem {
                dist: T::zero(),
                node: source,
            });
            while let Some(HeapItem { dist: d, node: u }) = heap.pop() {
                if d > dist[u] {
                    continue;
                }
                for &e in &self.adj[u] {
                    let edge = &self.edges[e];
                    if edge.cap == 0 {
                        continue;
                    }
                    let v = edge.to;
                    let reduced = (edge.cost + potential[u] - potential[v]).max(T::zero());
                    let nd = d + reduced;
                    if nd < dist[v] {
                        dist[v] = nd;
                        prev_edge[v] = e;
                        heap.push(HeapItem { dist: nd, node: v });
                    }
                }
            }
            if !dist[sink].is_finite() {
                break;
            }
            let reach_max = dist
                .iter()
                .copied()
                .filter(|d| d.is_finite())
                .fold(T::zero(), T::max);
            for (p, d) in potential.iter_mut().zip(&dist) {
                *p = *p + if d.is_finite() { *d } else { reach_max };
            }
            let mut push = limit - shipped;
            let mut v = sink;
            while v != source {
                let e = prev_edge[v];
                push = push.min(self.edges[e].cap);
                v = self.edges[e ^ 1].to;
            }
            let mut v = sink;
            while v != source {
                let e = prev_edge[v];
                self.edges[e].cap -= push;
                self.edges[e ^ 1].cap += push;
                v = self.edges[e ^ 1].to;
            }
            shipped += push;
        }
        shipped
    }
}
