//! End-to-end gain estimation from BRTs and optimal beam routing.
//!
//! The estimate of a path `0 → a₁ → … → a_L → J+1` is
//!
//! ```text
//!   ∏ₗ Λ(a_{l−1}, a_l, a_{l+1})  /  ∏_{l<L} Q(a_l, a_{l+1})
//! ```
//!
//! Every consecutive pair of Λ terms shares one inter-IRS link, and the Q
//! in the denominator removes that double count. Routing maximizes the
//! estimate with a longest-path DP in the log domain. Because Λ depends on
//! the (previous, current, next) triple, the DP state is the directed edge
//! (previous, current) together with the hop count.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::channel::BeamAssignment;
use crate::error::{Error, Result};
use crate::scene::LoSGraph;
use crate::training::BrtSet;
use crate::NodeId;

/// Ordered IRS hops `a₁..a_L`; the BS and the user are implicit endpoints.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ReflectionPath {
    hops: Vec<NodeId>,
}

impl ReflectionPath {
    pub fn new(hops: Vec<NodeId>) -> Self {
        ReflectionPath { hops }
    }

    pub fn hops(&self) -> &[NodeId] {
        &self.hops
    }

    /// Hop count `L`.
    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    /// `[0, a₁, …, a_L, user]`.
    pub fn node_chain(&self, user: NodeId) -> Vec<NodeId> {
        let mut chain = Vec::with_capacity(self.hops.len() + 2);
        chain.push(0);
        chain.extend_from_slice(&self.hops);
        chain.push(user);
        chain
    }

    /// Whether every hop, including both endpoints, is a graph edge.
    pub fn is_feasible(&self, graph: &LoSGraph) -> bool {
        !self.hops.is_empty() && self.node_chain(graph.user()).windows(2).all(|p| graph.has_edge(p[0], p[1]))
    }
}

impl fmt::Display for ReflectionPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.hops.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("-"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteResult {
    pub path: ReflectionPath,
    /// Estimated end-to-end power gain, linear.
    pub estimated_gain: f64,
    /// Natural log of `estimated_gain`, kept to avoid underflow.
    pub log_gain: f64,
    pub beam_assignment: BeamAssignment,
}

impl RouteResult {
    /// Single-line text record: path, per-hop beams (1-based) and the
    /// estimated gain in dB.
    pub fn to_record(&self) -> String {
        let mut parts = vec![format!("path={}", self.path), format!("bs={}", self.beam_assignment.bs_beam_index + 1)];
        for a in self.path.hops() {
            if let Some((h, v)) = self.beam_assignment.irs_beams.get(a) {
                parts.push(format!("irs{a}={}/{}", h + 1, v + 1));
            }
        }
        parts.push(format!("est_db={:.4}", log_to_db(self.log_gain)));
        parts.join(";")
    }
}

pub fn log_to_db(log_gain: f64) -> f64 {
    10.0 * log_gain / std::f64::consts::LN_10
}

fn lambda_gain(brts: &BrtSet, prev: NodeId, cur: NodeId, next: NodeId) -> Result<f64> {
    brts.lambda(prev, cur, next)
        .map(|r| r.gain)
        .ok_or_else(|| Error::Data(format!("no BRT row for triple ({prev},{cur},{next})")))
}

fn q_gain(q_gains: &BTreeMap<(NodeId, NodeId), f64>, i: NodeId, j: NodeId) -> Result<f64> {
    q_gains.get(&(i, j)).copied().ok_or_else(|| Error::Data(format!("no Q gain for link {i} -> {j}")))
}

/// Log-domain DP weight of moving from IRS `cur` to `next` after arriving
/// from `prev`: `ln Λ(prev,cur,next)`, minus `ln Q(cur,next)` unless `next`
/// is the user. Summing these along a path gives the log of the estimate.
pub fn edge_weight(
    brts: &BrtSet,
    q_gains: &BTreeMap<(NodeId, NodeId), f64>,
    prev: NodeId,
    cur: NodeId,
    next: NodeId,
) -> Result<f64> {
    let lambda = lambda_gain(brts, prev, cur, next)?.ln();
    if next == brts.user {
        Ok(lambda)
    } else {
        Ok(lambda - q_gain(q_gains, cur, next)?.ln())
    }
}

/// Log of the estimated gain of `path`.
pub fn estimate_path_log_gain(
    brts: &BrtSet,
    q_gains: &BTreeMap<(NodeId, NodeId), f64>,
    path: &ReflectionPath,
) -> Result<f64> {
    if path.is_empty() {
        return Err(Error::Argument("reflection path must contain at least one IRS".into()));
    }
    let chain = path.node_chain(brts.user);
    let mut total = 0.0;
    for w in chain.windows(3) {
        total += edge_weight(brts, q_gains, w[0], w[1], w[2])?;
    }
    Ok(total)
}

/// Estimated end-to-end power gain of `path` from BRT entries and Q gains.
pub fn estimate_path_gain(
    brts: &BrtSet,
    q_gains: &BTreeMap<(NodeId, NodeId), f64>,
    path: &ReflectionPath,
) -> Result<f64> {
    Ok(estimate_path_log_gain(brts, q_gains, path)?.exp())
}

/// Beams taken from the BRTs along `path`.
pub fn assemble_beams(brts: &BrtSet, path: &ReflectionPath) -> Result<BeamAssignment> {
    let first = *path.hops().first().ok_or_else(|| Error::Argument("empty reflection path".into()))?;
    let bs = brts.bs.rows.get(&first).ok_or_else(|| Error::Data(format!("BS BRT has no row for IRS {first}")))?;
    let mut irs_beams = BTreeMap::new();
    for w in path.node_chain(brts.user).windows(3) {
        let row = brts
            .lambda(w[0], w[1], w[2])
            .ok_or_else(|| Error::Data(format!("no BRT row for triple ({},{},{})", w[0], w[1], w[2])))?;
        irs_beams.insert(w[1], (row.h_index, row.v_index));
    }
    Ok(BeamAssignment { bs_beam_index: bs.beam_index, irs_beams })
}

/// All BS-to-user paths with `1 ≤ L ≤ max_hops`, sorted lexicographically.
pub fn enumerate_paths(graph: &LoSGraph, max_hops: usize) -> Vec<ReflectionPath> {
    fn walk(graph: &LoSGraph, node: NodeId, max_hops: usize, stack: &mut Vec<NodeId>, out: &mut Vec<ReflectionPath>) {
        for &next in graph.successors(node) {
            if next == graph.user() {
                out.push(ReflectionPath::new(stack.clone()));
            } else if stack.len() < max_hops && !stack.contains(&next) {
                stack.push(next);
                walk(graph, next, max_hops, stack, out);
                stack.pop();
            }
        }
    }
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for &first in graph.bs_successors() {
        if first != graph.user() && max_hops >= 1 {
            stack.push(first);
            walk(graph, first, max_hops, &mut stack, &mut out);
            stack.pop();
        }
    }
    out.sort();
    out
}

/// Preference between two candidate paths: higher gain, then fewer hops,
/// then lexicographically smaller.
fn better(a: (f64, &[NodeId]), b: (f64, &[NodeId])) -> bool {
    match a.0.partial_cmp(&b.0) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Less) => false,
        _ => (a.1.len(), a.1) < (b.1.len(), b.1),
    }
}

/// Path maximizing the estimated gain, found by DP over the LoS DAG.
pub fn optimal_route(
    graph: &LoSGraph,
    brts: &BrtSet,
    q_gains: &BTreeMap<(NodeId, NodeId), f64>,
    max_hops: usize,
) -> Result<RouteResult> {
    if brts.user != graph.user() {
        return Err(Error::Argument(format!("BRTs refer to user {}, graph to {}", brts.user, graph.user())));
    }
    let order = graph.topological_order().ok_or_else(|| Error::Argument("LoS graph has a cycle".into()))?;
    let user = graph.user();
    // (prev, cur, hops) -> (log gain of the prefix, prefix hops)
    type State = (NodeId, NodeId, usize);
    let mut states: HashMap<State, (f64, Vec<NodeId>)> = HashMap::new();
    for &a1 in graph.bs_successors() {
        if a1 != user && max_hops >= 1 {
            states.insert((0, a1, 1), (0.0, vec![a1]));
        }
    }
    let mut best: Option<(f64, Vec<NodeId>)> = None;
    for &cur in &order {
        if cur == 0 || cur == user {
            continue;
        }
        let mut here: Vec<(State, (f64, Vec<NodeId>))> =
            states.iter().filter(|((_, c, _), _)| *c == cur).map(|(k, v)| (*k, v.clone())).collect();
        here.sort_by_key(|a| a.0);
        for ((prev, _, hops), (value, prefix)) in here {
            for &next in graph.successors(cur) {
                let w = edge_weight(brts, q_gains, prev, cur, next)?;
                let cand = value + w;
                if next == user {
                    if best.as_ref().is_none_or(|(bv, bp)| better((cand, &prefix), (*bv, bp))) {
                        best = Some((cand, prefix.clone()));
                    }
                } else if hops < max_hops {
                    let mut path = prefix.clone();
                    path.push(next);
                    let key = (cur, next, hops + 1);
                    let replace = states.get(&key).is_none_or(|(sv, sp)| better((cand, &path), (*sv, sp)));
                    if replace {
                        states.insert(key, (cand, path));
                    }
                }
            }
        }
    }
    let (log_gain, hops) = best.ok_or(Error::Infeasible)?;
    if log_gain == f64::NEG_INFINITY {
        return Err(Error::Infeasible);
    }
    let path = ReflectionPath::new(hops);
    let beam_assignment = assemble_beams(brts, &path)?;
    Ok(RouteResult { path, estimated_gain: log_gain.exp(), log_gain, beam_assignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{BsBrt, BsBrtRow, IrsBrt, IrsBrtRow};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Synthetic BRTs with the given Λ per triple (gain only) and Q per edge.
    fn brts_for(graph: &LoSGraph, lambda: impl Fn(NodeId, NodeId, NodeId) -> f64) -> BrtSet {
        let mut bs = BsBrt::default();
        for &j in graph.bs_successors() {
            bs.rows.insert(j, BsBrtRow { beam_index: j % 3, gain: 1e-6 });
        }
        let mut irs = BTreeMap::new();
        for j in 1..=graph.irs_count() {
            let mut t = IrsBrt { owner: j, rows: BTreeMap::new() };
            for &i in graph.predecessors(j) {
                for &r in graph.successors(j) {
                    t.rows.insert((i, r), IrsBrtRow { h_index: i, v_index: r, gain: lambda(i, j, r) });
                }
            }
            irs.insert(j, t);
        }
        BrtSet { bs, irs, user: graph.user() }
    }

    fn q_for(graph: &LoSGraph, q: f64) -> BTreeMap<(NodeId, NodeId), f64> {
        graph.edges().map(|e| (e, q)).collect()
    }

    #[test]
    fn single_hop_estimate_is_lambda() {
        let g = LoSGraph::from_edges(1, 0, [(0, 1), (1, 2)]).unwrap();
        let b = brts_for(&g, |_, _, _| 3.5e-9);
        let est = estimate_path_gain(&b, &BTreeMap::new(), &ReflectionPath::new(vec![1])).unwrap();
        assert!((est - 3.5e-9).abs() / 3.5e-9 < 1e-12);
    }

    #[test]
    fn two_hop_arithmetic() {
        let g = LoSGraph::from_edges(2, 0, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let b = brts_for(&g, |i, _, _| if i == 0 { 1e-6 } else { 2e-6 });
        let est = estimate_path_gain(&b, &q_for(&g, 1e-3), &ReflectionPath::new(vec![1, 2])).unwrap();
        assert!((est - 2e-9).abs() / 2e-9 < 1e-12);
        // Missing data is reported.
        assert!(matches!(
            estimate_path_gain(&b, &BTreeMap::new(), &ReflectionPath::new(vec![1, 2])),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            estimate_path_gain(&b, &q_for(&g, 1e-3), &ReflectionPath::new(vec![2, 1])),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn forced_and_dominant_choices() {
        let g = LoSGraph::from_edges(2, 0, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let b = brts_for(&g, |_, _, _| 1e-6);
        let r = optimal_route(&g, &b, &q_for(&g, 1e-3), 2).unwrap();
        assert_eq!(r.path.hops(), &[1, 2]);
        assert_eq!(r.beam_assignment.bs_beam_index, 1);
        assert_eq!(r.beam_assignment.irs_beams[&1], (0, 2));
        assert_eq!(r.beam_assignment.irs_beams[&2], (1, 3));

        let g = LoSGraph::from_edges(2, 0, [(0, 1), (0, 2), (1, 3), (2, 3)]).unwrap();
        let b = brts_for(&g, |_, j, _| if j == 1 { 1e-7 } else { 3e-7 });
        let r = optimal_route(&g, &b, &BTreeMap::new(), 2).unwrap();
        assert_eq!(r.path.hops(), &[2]);
        assert!((r.estimated_gain - 3e-7).abs() < 1e-20);
        assert!(r.to_record().starts_with("path=2;bs=3;irs2=1/4;est_db=-65.2"));
    }

    #[test]
    fn infeasible_is_explicit() {
        let g = LoSGraph::from_edges(2, 0, [(0, 1), (1, 2)]).unwrap();
        let b = brts_for(&g, |_, _, _| 1e-6);
        assert!(matches!(optimal_route(&g, &b, &q_for(&g, 1.0), 2), Err(Error::Infeasible)));
        let g = LoSGraph::from_edges(2, 0, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let b = brts_for(&g, |_, _, _| 1e-6);
        assert!(matches!(optimal_route(&g, &b, &q_for(&g, 1.0), 1), Err(Error::Infeasible)));
    }

    #[test]
    fn ties_prefer_shorter_then_lexicographic() {
        // Path [1] and [2] and [1,2] all estimate to 1.
        let g = LoSGraph::from_edges(2, 0, [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]).unwrap();
        let b = brts_for(&g, |_, _, _| 1.0);
        let r = optimal_route(&g, &b, &q_for(&g, 1.0), 2).unwrap();
        assert_eq!(r.path.hops(), &[1]);
    }

    #[test]
    fn enumerate_small_cases() {
        let g = LoSGraph::from_edges(3, 0, []).unwrap();
        assert!(enumerate_paths(&g, 3).is_empty());

        // Complete DAG over 3 IRSs with BS and user connected to everyone.
        let mut edges = vec![];
        for j in 1..=3 {
            edges.push((0, j));
            edges.push((j, 4));
            for k in (j + 1)..=3 {
                edges.push((j, k));
            }
        }
        let g = LoSGraph::from_edges(3, 0, edges).unwrap();
        let paths = enumerate_paths(&g, 3);
        // Independent count: every nonempty increasing subsequence of {1,2,3}.
        assert_eq!(paths.len(), 7);
        let mut sorted = paths.clone();
        sorted.sort();
        assert_eq!(paths, sorted);
        let one_hop: Vec<_> = enumerate_paths(&g, 1).into_iter().map(|p| p.hops().to_vec()).collect();
        assert_eq!(one_hop, vec![vec![1], vec![2], vec![3]]);
    }

    /// Random DAG over `j` IRSs where only edges i -> k with i < k exist.
    fn random_dag(rng: &mut ChaCha8Rng, j: usize) -> LoSGraph {
        let user = j + 1;
        let mut edges = vec![];
        for a in 0..=j {
            for b in (a + 1)..=user {
                if (a, b) != (0, user) && rng.random_bool(0.55) {
                    edges.push((a, b));
                }
            }
        }
        LoSGraph::from_edges(j, 0, edges).unwrap()
    }

    type Tables = (HashMap<(NodeId, NodeId, NodeId), f64>, BTreeMap<(NodeId, NodeId), f64>);

    fn random_tables(seed: u64, g: &LoSGraph) -> Tables {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = g.vertex_count();
        let table = (0..n)
            .flat_map(|a| (0..n).flat_map(move |b| (0..n).map(move |c| (a, b, c))))
            .map(|k| (k, 10f64.powf(-rng.random_range(4.0..9.0))))
            .collect();
        let q = g.edges().map(|e| (e, 10f64.powf(-rng.random_range(3.0..6.0)))).collect();
        (table, q)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(96))]

        #[test]
        fn dp_matches_enumeration_and_telescopes(seed in any::<u64>(), j in 1usize..=6, cap in 1usize..=6) {
            let g = random_dag(&mut ChaCha8Rng::seed_from_u64(seed), j);
            let (table, q) = random_tables(seed ^ 0x5eed, &g);
            let b = brts_for(&g, |a, m, c| table[&(a, m, c)]);
            let paths = enumerate_paths(&g, cap);
            for p in &paths {
                prop_assert!(p.len() <= cap);
                let direct = estimate_path_log_gain(&b, &q, p).unwrap();
                let chain = p.node_chain(g.user());
                let summed: f64 = chain.windows(3).map(|w| edge_weight(&b, &q, w[0], w[1], w[2]).unwrap()).sum();
                prop_assert!((direct - summed).abs() < 1e-9);
            }
            match optimal_route(&g, &b, &q, cap) {
                Ok(r) => {
                    let oracle = paths
                        .iter()
                        .map(|p| (estimate_path_log_gain(&b, &q, p).unwrap(), p))
                        .fold(None::<(f64, &ReflectionPath)>, |acc, (v, p)| match acc {
                            Some((bv, _)) if bv >= v => acc,
                            _ => Some((v, p)),
                        })
                        .unwrap();
                    prop_assert_eq!(&r.path, oracle.1);
                    prop_assert!((r.log_gain - oracle.0).abs() < 1e-9);
                }
                Err(Error::Infeasible) => prop_assert!(paths.is_empty()),
                Err(e) => panic!("{e}"),
            }
        }

        #[test]
        fn raising_a_lambda_on_the_optimum_never_hurts(seed in any::<u64>(), pos in 0usize..6, factor in 1.0f64..10.0) {
            let g = random_dag(&mut ChaCha8Rng::seed_from_u64(seed), 4);
            let (table, q) = random_tables(seed.wrapping_add(1), &g);
            let b = brts_for(&g, |a, m, c| table[&(a, m, c)]);
            if let Ok(r) = optimal_route(&g, &b, &q, 4) {
                let chain = r.path.node_chain(g.user());
                let k = pos % (chain.len() - 2);
                let boosted_triple = (chain[k], chain[k + 1], chain[k + 2]);
                let boosted = brts_for(&g, |a, m, c| {
                    table[&(a, m, c)] * if (a, m, c) == boosted_triple { factor } else { 1.0 }
                });
                let r2 = optimal_route(&g, &boosted, &q, 4).unwrap();
                prop_assert!(r2.log_gain >= r.log_gain - 1e-12);
            }
        }
    }
}
