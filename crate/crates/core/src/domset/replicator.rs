use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::Real;

use super::AffinityGraph;

/// Point on the simplex reached by replicator dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicatorState<T: Real> {
    pub x: DVector<T>,
    /// `xᵀ A x`.
    pub payoff: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Discrete replicator dynamics `x_i ← x_i (Ax)_i / xᵀAx`, renormalised to
/// the simplex after every step. Stops when the L1 change drops below `tol`
/// or after `max_iters` steps. A zero payoff returns `x0` unchanged.
pub fn replicator_dynamics<T: Real>(
    a: &DMatrix<T>,
    x0: &DVector<T>,
    tol: T,
    max_iters: usize,
) -> ReplicatorState<T> {
    replicator_dynamics_observed(a, x0, tol, max_iters, |_, _| {})
}

/// As [`replicator_dynamics`], calling `observe(x, payoff)` for the start
/// point and after every step.
pub fn replicator_dynamics_observed<T: Real>(
    a: &DMatrix<T>,
    x0: &DVector<T>,
    tol: T,
    max_iters: usize,
    mut observe: impl FnMut(&DVector<T>, T),
) -> ReplicatorState<T> {
    let mut x = x0.clone();
    let mut ax = a * &x;
    let mut payoff = x.dot(&ax);
    observe(&x, payoff);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        if payoff <= T::zero() {
            return ReplicatorState {
                x: x0.clone(),
                payoff: T::zero(),
                iterations,
                converged: true,
            };
        }
        iterations += 1;
        let mut next = x.component_mul(&ax) / payoff;
        let sum = next.sum();
        next /= sum;
        let change = (&next - &x).lp_norm(1);
        x = next;
        ax = a * &x;
        payoff = x.dot(&ax);
        observe(&x, payoff);
        if change < tol {
            converged = true;
            break;
        }
    }
    if payoff <= T::zero() {
        return ReplicatorState {
            x: x0.clone(),
            payoff: T::zero(),
            iterations,
            converged: true,
        };
    }
    ReplicatorState {
        x,
        payoff,
        iterations,
        converged,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomsetParams {
    /// `x_i` above this puts node `i` in the support.
    pub support_threshold: f64,
    /// Peeling stops once the best cohesiveness falls below this fraction of
    /// the largest edge weight.
    pub min_cohesiveness: f64,
    pub min_cluster_size: usize,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for DomsetParams {
    fn default() -> Self {
        Self {
            support_threshold: 1e-4,
            min_cohesiveness: 0.05,
            min_cluster_size: 2,
            tol: 1e-8,
            max_iters: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster<T: Real> {
    pub id: usize,
    /// Node ids, ascending.
    pub members: Vec<usize>,
    /// Characteristic vector restricted to `members` (same order).
    pub weights: Vec<T>,
    /// `x*ᵀ A x*`.
    pub cohesiveness: T,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominantSets<T: Real> {
    pub clusters: Vec<Cluster<T>>,
    /// Node ids left over, ascending.
    pub unassigned: Vec<usize>,
}

/// Connected components (positive weights) of the sub-graph on `nodes`.
fn components<T: Real>(a: &DMatrix<T>, nodes: &[usize]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; nodes.len()];
    let mut out = Vec::new();
    for start in 0..nodes.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut k = 0;
        while k < comp.len() {
            let u = comp[k];
            k += 1;
            for v in 0..nodes.len() {
                if !seen[v] && a[(nodes[u], nodes[v])] > T::zero() {
                    seen[v] = true;
                    comp.push(v);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp.into_iter().map(|i| nodes[i]).collect());
    }
    out
}

/// Peels dominant sets off the graph one at a time.
///
/// Each round runs replicator dynamics from the barycenter of every
/// connected component of the remaining nodes and keeps the component with
/// the highest payoff (on a connected graph this is the plain barycenter
/// start). Nodes with `x_i > support_threshold` form the candidate. Peeling
/// stops when fewer than `min_cluster_size` nodes remain or the payoff drops
/// below `min_cohesiveness` times the largest weight in the graph, so
/// scaling the graph by a constant leaves the output membership unchanged.
/// A candidate smaller than `min_cluster_size` is set aside as unassigned
/// and peeling continues.
pub fn extract_dominant_sets<T: Real>(graph: &AffinityGraph<T>, params: &DomsetParams) -> DominantSets<T> {
    let a = graph.weights();
    let ids = graph.node_ids();
    let mut remaining: Vec<usize> = (0..graph.len()).collect();
    let mut clusters = Vec::new();
    let mut unassigned = Vec::new();
    let delta = T::lit(params.support_threshold);
    let tol = T::lit(params.tol);
    let peak = a.iter().copied().fold(T::zero(), |m, w| if w > m { w } else { m });
    let floor = T::lit(params.min_cohesiveness) * peak;

    while remaining.len() >= params.min_cluster_size.max(1) {
        let mut best: Option<(Vec<usize>, ReplicatorState<T>)> = None;
        for comp in components(a, &remaining) {
            let m = comp.len();
            let sub = DMatrix::from_fn(m, m, |i, j| a[(comp[i], comp[j])]);
            let x0 = DVector::from_element(m, T::one() / T::lit(m as f64));
            let state = replicator_dynamics(&sub, &x0, tol, params.max_iters);
            if best.as_ref().is_none_or(|(_, b)| state.payoff > b.payoff) {
                best = Some((comp, state));
            }
        }
        let Some((comp, state)) = best else { break };
        if state.payoff < floor || state.payoff <= T::zero() {
            break;
        }
        let support: Vec<usize> = (0..comp.len()).filter(|&i| state.x[i] > delta).collect();
        let nodes: Vec<usize> = support.iter().map(|&i| comp[i]).collect();
        remaining.retain(|v| !nodes.contains(v));
        if nodes.len() < params.min_cluster_size {
            unassigned.extend(nodes.iter().map(|&v| ids[v]));
            continue;
        }
        let mut members: Vec<(usize, T)> = support.iter().map(|&i| (ids[comp[i]], state.x[i])).collect();
        members.sort_by_key(|m| m.0);
        clusters.push(Cluster {
            id: clusters.len(),
            members: members.iter().map(|m| m.0).collect(),
            weights: members.iter().map(|m| m.1).collect(),
            cohesiveness: state.payoff,
            converged: state.converged,
        });
    }
    unassigned.extend(remaining.iter().map(|&v| ids[v]));
    unassigned.sort_unstable();
    DominantSets {
        clusters,
        unassigned,
    }
}
