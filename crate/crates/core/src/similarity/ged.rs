//! Graph edit distance over node assignments.
//!
//! An edit path is induced by a partial injective map from the nodes of `a`
//! to the nodes of `b`: unmapped `a` nodes are deleted, unmapped `b` nodes are
//! inserted, mapped pairs pay a substitution cost, and edges (identified by
//! `(src, dst, kind)`) are deleted or inserted wherever the map does not carry
//! them across.

use super::{EditCosts, PreparedGraph};
use crate::embedding::cosine;
use crate::graph::ReasoningNode;

#[derive(Clone, Debug, PartialEq)]
pub struct GedResult {
    pub cost: f64,
    /// True when the value came from the greedy matching (an upper bound).
    pub approximate: bool,
    /// For each node of the first graph (by position), its image in the second.
    pub mapping: Vec<Option<usize>>,
}

/// Substitution cost of mapping `u` onto `v`: free for identical kind and
/// label, the full relabel price across kinds, otherwise scaled by feature
/// dissimilarity.
pub fn substitution_cost(u: &ReasoningNode, v: &ReasoningNode, costs: &EditCosts) -> f64 {
    if u.kind != v.kind {
        return costs.node_relabel;
    }
    if u.label == v.label {
        return 0.0;
    }
    costs.node_relabel * (1.0 - cosine(&u.feature, &v.feature)).clamp(0.0, 1.0)
}

fn diff(from: u8, to: u8, costs: &EditCosts) -> f64 {
    f64::from((from & !to).count_ones()) * costs.edge_delete + f64::from((to & !from).count_ones()) * costs.edge_insert
}

struct Problem<'a> {
    a: &'a PreparedGraph,
    b: &'a PreparedGraph,
    costs: EditCosts,
    sub: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(a: &'a PreparedGraph, b: &'a PreparedGraph, costs: &EditCosts) -> Self {
        let (na, nb) = (a.len(), b.len());
        let mut sub = Vec::with_capacity(na * nb);
        for u in a.graph().nodes() {
            for v in b.graph().nodes() {
                sub.push(substitution_cost(u, v, costs));
            }
        }
        Problem {
            a,
            b,
            costs: *costs,
            sub,
        }
    }

    fn sub(&self, i: usize, j: usize) -> f64 {
        self.sub[i * self.b.len() + j]
    }

    /// Cost of the edit path induced by `mapping`, summed in a fixed order.
    fn mapping_cost(&self, mapping: &[Option<usize>]) -> f64 {
        let (na, nb) = (self.a.len(), self.b.len());
        let mut inverse = vec![None; nb];
        let mut total = 0.0;
        for (i, m) in mapping.iter().enumerate() {
            match m {
                Some(j) => {
                    total += self.sub(i, *j);
                    inverse[*j] = Some(i);
                }
                None => total += self.costs.node_delete,
            }
        }
        for inv in &inverse {
            if inv.is_none() {
                total += self.costs.node_insert;
            }
        }
        for i in 0..na {
            for k in 0..na {
                if i == k {
                    continue;
                }
                let m1 = self.a.mask(i, k);
                let m2 = match (mapping[i], mapping[k]) {
                    (Some(x), Some(y)) => self.b.mask(x, y),
                    _ => 0,
                };
                if m1 | m2 != 0 {
                    total += diff(m1, m2, &self.costs);
                }
            }
        }
        for x in 0..nb {
            for y in 0..nb {
                if x != y && (inverse[x].is_none() || inverse[y].is_none()) {
                    total += f64::from(self.b.mask(x, y).count_ones()) * self.costs.edge_insert;
                }
            }
        }
        total
    }

    /// Greedy minimum-cost matching: repeatedly take the cheapest remaining
    /// substitution that beats delete+insert.
    fn greedy_mapping(&self, forced: Option<(usize, usize)>) -> Vec<Option<usize>> {
        let (na, nb) = (self.a.len(), self.b.len());
        let mut mapping = vec![None; na];
        let mut used = vec![false; nb];
        if let Some((i, j)) = forced {
            mapping[i] = Some(j);
            used[j] = true;
        }
        let limit = self.costs.node_delete + self.costs.node_insert;
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for i in 0..na {
            for j in 0..nb {
                let c = self.sub(i, j);
                if c < limit {
                    pairs.push((c, i, j));
                }
            }
        }
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        for (_, i, j) in pairs {
            if mapping[i].is_none() && !used[j] {
                mapping[i] = Some(j);
                used[j] = true;
            }
        }
        mapping
    }

    fn exact(&self, forced: Option<(usize, usize)>) -> Vec<Option<usize>> {
        let na = self.a.len();
        let mut order: Vec<usize> = (0..na).filter(|&i| Some(i) != forced.map(|f| f.0)).collect();
        order.sort_by_key(|&i| (std::cmp::Reverse(self.a.degree(i)), i));
        if let Some((i, _)) = forced {
            order.insert(0, i);
        }
        let start = self.greedy_mapping(forced);
        let best_cost = self.mapping_cost(&start);
        let mut search = Search {
            p: self,
            order,
            forced,
            assign: vec![None; na],
            best: start,
            best_cost,
        };
        search.descend(0, 0, 0.0);
        search.best
    }
}

struct Search<'p, 'a> {
    p: &'p Problem<'a>,
    order: Vec<usize>,
    forced: Option<(usize, usize)>,
    assign: Vec<Option<usize>>,
    best: Vec<Option<usize>>,
    best_cost: f64,
}

impl Search<'_, '_> {
    fn lower_bound(&self, depth: usize, used: u64) -> f64 {
        let p = self.p;
        let nb = p.b.len();
        let remaining = self.order.len() - depth;
        let free = nb - used.count_ones() as usize;
        let mut lb = 0.0;
        for &i in &self.order[depth..] {
            let mut m = p.costs.node_delete;
            for j in 0..nb {
                if used & (1 << j) == 0 {
                    m = m.min(p.sub(i, j));
                }
            }
            lb += m;
        }
        lb + free.saturating_sub(remaining) as f64 * p.costs.node_insert
    }

    fn edge_increment(&self, depth: usize, i: usize, target: Option<usize>) -> f64 {
        let p = self.p;
        let mut c = 0.0;
        for &k in &self.order[..depth] {
            let (m_ik, m_ki) = (p.a.mask(i, k), p.a.mask(k, i));
            match (target, self.assign[k]) {
                (Some(t), Some(s)) => {
                    c += diff(m_ik, p.b.mask(t, s), &p.costs) + diff(m_ki, p.b.mask(s, t), &p.costs);
                }
                _ => c += f64::from(m_ik.count_ones() + m_ki.count_ones()) * p.costs.edge_delete,
            }
        }
        c
    }

    fn descend(&mut self, depth: usize, used: u64, partial: f64) {
        if depth == self.order.len() {
            let cost = self.p.mapping_cost(&self.assign);
            if cost < self.best_cost {
                self.best_cost = cost;
                self.best = self.assign.clone();
            }
            return;
        }
        if partial + self.lower_bound(depth, used) >= self.best_cost {
            return;
        }
        let i = self.order[depth];
        let nb = self.p.b.len();
        let mut options: Vec<(f64, Option<usize>)> = match self.forced {
            Some((fi, fj)) if fi == i => vec![(self.p.sub(i, fj), Some(fj))],
            _ => {
                let mut o: Vec<(f64, Option<usize>)> = (0..nb)
                    .filter(|j| used & (1 << j) == 0)
                    .map(|j| (self.p.sub(i, j), Some(j)))
                    .collect();
                o.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
                o.push((self.p.costs.node_delete, None));
                o
            }
        };
        for (node_cost, target) in options.drain(..) {
            let step = node_cost + self.edge_increment(depth, i, target);
            self.assign[i] = target;
            let next_used = target.map_or(used, |t| used | (1 << t));
            self.descend(depth + 1, next_used, partial + step);
        }
        self.assign[i] = None;
    }
}

fn swapped(costs: &EditCosts) -> EditCosts {
    EditCosts {
        node_insert: costs.node_delete,
        node_delete: costs.node_insert,
        node_relabel: costs.node_relabel,
        edge_insert: costs.edge_delete,
        edge_delete: costs.edge_insert,
    }
}

fn invert(mapping: &[Option<usize>], n: usize) -> Vec<Option<usize>> {
    let mut inv = vec![None; n];
    for (i, m) in mapping.iter().enumerate() {
        if let Some(j) = m {
            inv[*j] = Some(i);
        }
    }
    inv
}

/// Edit distance from `a` to `b`. Exact (branch and bound) when both graphs
/// have at most `max_exact` nodes, otherwise the better of the greedy
/// matchings computed in both directions. `forced` pins one node pair.
pub fn ged_prepared(
    a: &PreparedGraph,
    b: &PreparedGraph,
    costs: &EditCosts,
    max_exact: usize,
    forced: Option<(usize, usize)>,
) -> GedResult {
    let forward = Problem::new(a, b, costs);
    if a.len().max(b.len()) <= max_exact.min(63) {
        let mapping = forward.exact(forced);
        return GedResult {
            cost: forward.mapping_cost(&mapping),
            approximate: false,
            mapping,
        };
    }
    let fwd_map = forward.greedy_mapping(forced);
    let fwd_cost = forward.mapping_cost(&fwd_map);
    let back_costs = swapped(costs);
    let backward = Problem::new(b, a, &back_costs);
    let back_map = backward.greedy_mapping(forced.map(|(i, j)| (j, i)));
    let back_cost = backward.mapping_cost(&back_map);
    if back_cost < fwd_cost {
        GedResult {
            cost: back_cost,
            approximate: true,
            mapping: invert(&back_map, a.len()),
        }
    } else {
        GedResult {
            cost: fwd_cost,
            approximate: true,
            mapping: fwd_map,
        }
    }
}

/// Cost of the edit path induced by an explicit mapping.
pub fn mapping_cost(a: &PreparedGraph, b: &PreparedGraph, costs: &EditCosts, mapping: &[Option<usize>]) -> f64 {
    Problem::new(a, b, costs).mapping_cost(mapping)
}
