//! Global identification: a layered graph with one column per detected
//! vertebra and one row per label, solved as a shortest path.
//!
//! Regular edges step one label down the column (`j → j+1`). Three special
//! edges model transitional anatomy: T12→T12 (an extra thoracic vertebra),
//! T11→L1 (a missing T12) and L5→L5 (an extra lumbar vertebra). Each costs a
//! configurable weight so the graph prefers the regular sequence unless the
//! local evidence insists otherwise.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AnatomicGroup, LocalPrediction, TransitionEvent, TransitionKind, VertebraLabel, GRAPH_LABELS,
};

const T11: usize = 17;
const T12: usize = 18;
const L1: usize = 19;
const L5: usize = 23;

/// Costs below this are treated as equal when breaking ties.
const TIE_EPS: f64 = 1e-12;

/// Averages the predictions made on the spine-mask crop and on the
/// union-mask crop. A missing crop contributes a uniform distribution.
pub fn fuse_predictions(
    spine_crop: Option<&LocalPrediction>,
    union_crop: Option<&LocalPrediction>,
) -> Result<LocalPrediction> {
    match (spine_crop, union_crop) {
        (None, None) => Err(Error::InvalidInput("no prediction to fuse".into())),
        (Some(a), Some(b)) => Ok(LocalPrediction::mean(a, b)),
        (Some(a), None) | (None, Some(a)) => Ok(LocalPrediction::mean(a, &LocalPrediction::uniform())),
    }
}

/// Per-vertebra evidence for the unary costs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeEvidence {
    /// Probability of each graph label.
    pub pv: [f64; GRAPH_LABELS],
    /// Probability of each anatomic group.
    pub group: [f64; 3],
}

impl From<&LocalPrediction> for NodeEvidence {
    fn from(p: &LocalPrediction) -> Self {
        NodeEvidence {
            pv: *p.fused(),
            group: p.group_probs(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphWeights {
    /// Scale of the group-disagreement term of the unary cost.
    pub group: f64,
    pub t13: f64,
    pub no_t12: f64,
    pub l6: f64,
    /// Cost of a regular `j → j+1` edge.
    pub regular: f64,
}

impl Default for GraphWeights {
    fn default() -> Self {
        GraphWeights {
            group: 1.0,
            t13: 0.5,
            no_t12: 0.5,
            l6: 0.5,
            regular: 0.0,
        }
    }
}

impl GraphWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("group", self.group),
            ("t13", self.t13),
            ("no_t12", self.no_t12),
            ("l6", self.l6),
            ("regular", self.regular),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidInput(format!("graph weight {name} = {w} must be finite and ≥ 0")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentGraph {
    unary: Vec<[f64; GRAPH_LABELS]>,
    weights: GraphWeights,
}

pub fn build_graph(evidence: &[NodeEvidence], weights: GraphWeights) -> Result<IdentGraph> {
    if evidence.is_empty() {
        return Err(Error::InvalidInput("identification needs at least one vertebra".into()));
    }
    weights.validate()?;
    let mut unary = Vec::with_capacity(evidence.len());
    for (i, e) in evidence.iter().enumerate() {
        if let Some(p) = e.pv.iter().chain(&e.group).find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Probability(format!("vertebra {i}: probability {p} outside [0, 1]")));
        }
        unary.push(std::array::from_fn(|j| {
            let g = VertebraLabel::from_graph_index(j).expect("row").group();
            (1.0 - e.pv[j]) + weights.group * (1.0 - e.group[g.index()])
        }));
    }
    Ok(IdentGraph { unary, weights })
}

impl IdentGraph {
    /// Graph over explicit unary costs (tests, argmin-invariance checks).
    pub fn from_unary(unary: Vec<[f64; GRAPH_LABELS]>, weights: GraphWeights) -> Result<Self> {
        if unary.is_empty() {
            return Err(Error::InvalidInput("identification needs at least one vertebra".into()));
        }
        weights.validate()?;
        if unary.iter().flatten().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(Error::InvalidInput("unary costs must be finite and ≥ 0".into()));
        }
        Ok(IdentGraph { unary, weights })
    }

    pub fn len(&self) -> usize {
        self.unary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unary.is_empty()
    }

    pub fn unary(&self, i: usize, j: usize) -> f64 {
        self.unary[i][j]
    }

    pub fn weights(&self) -> &GraphWeights {
        &self.weights
    }

    /// Label nodes plus the two endpoints.
    pub fn node_count(&self) -> usize {
        self.len() * GRAPH_LABELS + 2
    }

    pub fn edge_count(&self) -> usize {
        2 * GRAPH_LABELS + (self.len() - 1) * (GRAPH_LABELS - 1 + 3)
    }

    /// Rows reachable from row `j` in the next column, with edge cost and the
    /// transition they represent, in ascending row order.
    pub fn successors(&self, j: usize) -> impl Iterator<Item = (usize, f64, Option<TransitionKind>)> {
        let w = self.weights;
        let special = match j {
            T11 => Some((L1, w.no_t12, TransitionKind::AbsentT12)),
            T12 => Some((T12, w.t13, TransitionKind::ExtraT13)),
            L5 => Some((L5, w.l6, TransitionKind::ExtraL6)),
            _ => None,
        };
        let regular = (j + 1 < GRAPH_LABELS).then_some((j + 1, w.regular, None));
        let mut out: Vec<(usize, f64, Option<TransitionKind>)> = regular.into_iter().collect();
        if let Some((to, c, k)) = special {
            out.push((to, c, Some(k)));
        }
        out.sort_by_key(|e| e.0);
        out.into_iter()
    }

    fn edge(&self, from: usize, to: usize) -> Option<(f64, Option<TransitionKind>)> {
        self.successors(from).find(|e| e.0 == to).map(|e| (e.1, e.2))
    }

    /// Total cost of a row sequence, summed left to right; `None` if some
    /// step is not an edge.
    pub fn path_cost(&self, rows: &[usize]) -> Option<f64> {
        if rows.len() != self.len() {
            return None;
        }
        let mut total = 0.0 + self.unary[0][rows[0]];
        for i in 1..rows.len() {
            let (c, _) = self.edge(rows[i - 1], rows[i])?;
            total = total + c + self.unary[i][rows[i]];
        }
        Some(total)
    }

    fn label_path(&self, rows: Vec<usize>) -> LabelPath {
        let total_cost = self.path_cost(&rows).expect("solver produced a connected path");
        let used_special = (1..rows.len())
            .filter_map(|i| self.edge(rows[i - 1], rows[i]).and_then(|(_, k)| k).map(|k| (i, k)))
            .collect();
        LabelPath {
            labels: rows
                .into_iter()
                .map(|r| VertebraLabel::from_graph_index(r).expect("row"))
                .collect(),
            total_cost,
            used_special,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelPath {
    /// Graph-space labels (codes 1..=24), cranial to caudal.
    pub labels: Vec<VertebraLabel>,
    pub total_cost: f64,
    /// Position of the second node of each special edge taken.
    pub used_special: Vec<(usize, TransitionKind)>,
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum-cost labelling via Dijkstra. The search runs backwards from the
/// sink so that every node knows its optimal cost-to-go; the path is then
/// read forwards, taking the lowest optimal row at each step, which yields
/// the lexicographically smallest optimal label sequence.
pub fn shortest_path(g: &IdentGraph) -> LabelPath {
    let n = g.len();
    let id = |i: usize, j: usize| i * GRAPH_LABELS + j;
    // Reverse adjacency over label nodes; edge weight = edge cost + unary of
    // the head node. The sink enters via zero-cost edges from the last column.
    let mut preds: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n * GRAPH_LABELS];
    for i in 0..n.saturating_sub(1) {
        for j in 0..GRAPH_LABELS {
            for (to, c, _) in g.successors(j) {
                preds[id(i + 1, to)].push((id(i, j), c + g.unary[i + 1][to]));
            }
        }
    }
    let mut togo = vec![f64::INFINITY; n * GRAPH_LABELS];
    let mut heap = BinaryHeap::new();
    for j in 0..GRAPH_LABELS {
        togo[id(n - 1, j)] = 0.0;
        heap.push(HeapItem(0.0, id(n - 1, j)));
    }
    while let Some(HeapItem(d, v)) = heap.pop() {
        if d > togo[v] {
            continue;
        }
        for &(u, w) in &preds[v] {
            let nd = d + w;
            if nd < togo[u] {
                togo[u] = nd;
                heap.push(HeapItem(nd, u));
            }
        }
    }

    let first = |j: usize| g.unary[0][j] + togo[id(0, j)];
    let best = (0..GRAPH_LABELS).map(first).fold(f64::INFINITY, f64::min);
    let mut row = (0..GRAPH_LABELS)
        .find(|&j| first(j) <= best + TIE_EPS)
        .expect("some start row is optimal");
    let mut rows = vec![row];
    for i in 1..n {
        let here = togo[id(i - 1, row)];
        let step = |to: usize, c: f64| c + g.unary[i][to] + togo[id(i, to)];
        let next = g
            .successors(row)
            .filter(|&(to, c, _)| step(to, c) <= here + TIE_EPS)
            .map(|e| e.0)
            .next()
            .expect("an optimal successor exists");
        rows.push(next);
        row = next;
    }
    g.label_path(rows)
}

/// Forward dynamic program over the columns, keeping for every node the
/// cheapest prefix (lexicographically smallest on ties). Used to verify
/// [`shortest_path`].
pub fn dp_oracle(g: &IdentGraph) -> LabelPath {
    let n = g.len();
    let better = |c: f64, p: &[usize], bc: f64, bp: &[usize]| c < bc - TIE_EPS || (c <= bc + TIE_EPS && p < bp);
    let mut col: Vec<Option<(f64, Vec<usize>)>> = (0..GRAPH_LABELS).map(|j| Some((g.unary[0][j], vec![j]))).collect();
    for i in 1..n {
        let mut nxt: Vec<Option<(f64, Vec<usize>)>> = vec![None; GRAPH_LABELS];
        for j in 0..GRAPH_LABELS {
            let Some((c, prefix)) = &col[j] else { continue };
            for (to, e, _) in g.successors(j) {
                let cost = c + e + g.unary[i][to];
                let mut p = prefix.clone();
                p.push(to);
                let replace = match &nxt[to] {
                    None => true,
                    Some((bc, bp)) => better(cost, &p, *bc, bp),
                };
                if replace {
                    nxt[to] = Some((cost, p));
                }
            }
        }
        col = nxt;
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for (c, p) in col.into_iter().flatten() {
        let replace = match &best {
            None => true,
            Some((bc, bp)) => better(c, &p, *bc, bp),
        };
        if replace {
            best = Some((c, p));
        }
    }
    g.label_path(best.expect("first column is never empty").1)
}

/// Final labels after transitional post-processing.
#[derive(Clone, Debug, PartialEq)]
pub struct Identification {
    /// Codes 1..=26.
    pub labels: Vec<VertebraLabel>,
    pub transitions: Vec<TransitionEvent>,
    /// Positions whose label repeats illegally; these keep their graph label.
    pub repeats: Vec<usize>,
}

/// Turns the second of two consecutive T12 into T13 and the second of two
/// consecutive L5 into L6, and records a T11→L1 step. Each configuration is
/// accepted once per spine; any further occurrence is flagged instead.
pub fn postprocess_transitional(path: &LabelPath) -> Identification {
    let mut labels = path.labels.clone();
    let mut transitions: Vec<TransitionEvent> = Vec::new();
    let mut repeats = Vec::new();
    let seen = |t: &[TransitionEvent], k: TransitionKind| t.iter().any(|e| e.kind == k);
    for i in 1..path.labels.len() {
        let (a, b) = (path.labels[i - 1], path.labels[i]);
        let kind = if a == b && a == VertebraLabel::T12 {
            Some(TransitionKind::ExtraT13)
        } else if a == b && a == VertebraLabel::L5 {
            Some(TransitionKind::ExtraL6)
        } else if a == VertebraLabel::T11 && b == VertebraLabel::L1 {
            Some(TransitionKind::AbsentT12)
        } else if a >= b {
            // not producible by the graph, but a hand-made path may contain it
            repeats.push(i);
            None
        } else {
            None
        };
        let Some(kind) = kind else { continue };
        if seen(&transitions, kind) {
            repeats.push(i);
            continue;
        }
        transitions.push(TransitionEvent { position: i, kind });
        match kind {
            TransitionKind::ExtraT13 => labels[i] = VertebraLabel::T13,
            TransitionKind::ExtraL6 => labels[i] = VertebraLabel::L6,
            TransitionKind::AbsentT12 => {}
        }
    }
    Identification {
        labels,
        transitions,
        repeats,
    }
}

/// Group of every label of a path, for ordering checks.
pub fn path_groups(labels: &[VertebraLabel]) -> Vec<AnatomicGroup> {
    labels.iter().map(|l| l.group()).collect()
}
