//! The codetection factor graph and its MAP solvers.
//!
//! Vertices are sentential object instances whose labels index the proposals
//! of their video. Class edges (C) carry proposal similarity between
//! instances of the same class, predicate edges (P) carry binary predicate
//! scores. The objective is the unweighted sum of every table entry selected
//! by an assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Proposal;
use crate::predicates::{self, FlowTerm, PredicateContext, PredicateError};
use crate::semparse::PredicateConjunction;
use crate::similarity::SimilarityMatrix;

/// Largest label space the exhaustive solver will enumerate per component.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("label space of {0:.3e} assignments exceeds the exhaustive limit")]
    TooLarge(f64),
    #[error("every assignment has score -inf")]
    Infeasible,
    #[error("missing score: {0}")]
    MissingScore(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Predicate(#[from] PredicateError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Serializes `-inf` as `null`, the only non-finite score a table may hold.
mod neg_inf {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|x| if *x == f64::NEG_INFINITY { None } else { Some(*x) })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?
            .into_iter()
            .map(|x| x.unwrap_or(f64::NEG_INFINITY))
            .collect())
    }

    pub mod scalar {
        use super::*;

        pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
            (if *v == f64::NEG_INFINITY { None } else { Some(*v) }).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub instance_id: String,
    pub video_id: String,
    pub class_noun: String,
    /// `h_v`, one score per proposal.
    #[serde(with = "neg_inf")]
    pub unary: Vec<f64>,
}

impl Vertex {
    pub fn labels(&self) -> usize {
        self.unary.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    #[serde(rename = "C")]
    Class,
    #[serde(rename = "P")]
    Predicate,
}

/// A pairwise table between vertices `u < v`, indexed `[label of u][label of v]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub kind: EdgeKind,
    pub u: usize,
    pub v: usize,
    /// Atoms summed into a predicate edge, empty for class edges.
    #[serde(default)]
    pub atoms: Vec<String>,
    pub rows: usize,
    pub cols: usize,
    #[serde(with = "neg_inf")]
    pub table: Vec<f64>,
}

impl Edge {
    #[inline]
    pub fn at(&self, lu: usize, lv: usize) -> f64 {
        self.table[lu * self.cols + lv]
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CodetectionGraph {
    pub set_id: String,
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
}

impl CodetectionGraph {
    pub fn new(set_id: impl Into<String>) -> Self {
        Self {
            set_id: set_id.into(),
            ..Self::default()
        }
    }

    pub fn add_vertex(&mut self, v: Vertex) -> usize {
        self.vertices.push(v);
        self.vertices.len() - 1
    }

    /// Adds a table between `a` and `b`, indexed `[label of a][label of b]`.
    /// A second edge of the same kind between the same pair is summed into
    /// the first.
    pub fn add_edge(
        &mut self,
        kind: EdgeKind,
        a: usize,
        b: usize,
        atom: Option<String>,
        table: Vec<Vec<f64>>,
    ) -> Result<(), InferenceError> {
        let n = self.vertices.len();
        if a >= n || b >= n || a == b {
            return Err(InferenceError::InvalidGraph(format!("bad endpoints ({a}, {b})")));
        }
        let (ka, kb) = (self.vertices[a].labels(), self.vertices[b].labels());
        if table.len() != ka || table.iter().any(|r| r.len() != kb) {
            return Err(InferenceError::InvalidGraph(format!("edge ({a}, {b}) table is not {ka}x{kb}")));
        }
        let (u, v, flat) = if a < b {
            (a, b, table.into_iter().flatten().collect::<Vec<_>>())
        } else {
            let mut t = vec![0.0; ka * kb];
            for (i, row) in table.iter().enumerate() {
                for (j, x) in row.iter().enumerate() {
                    t[j * ka + i] = *x;
                }
            }
            (b, a, t)
        };
        if let Some(e) = self.edges.iter_mut().find(|e| e.kind == kind && e.u == u && e.v == v) {
            e.table.iter_mut().zip(&flat).for_each(|(x, y)| *x += y);
            e.atoms.extend(atom);
            return Ok(());
        }
        let (rows, cols) = (self.vertices[u].labels(), self.vertices[v].labels());
        self.edges.push(Edge {
            kind,
            u,
            v,
            atoms: atom.into_iter().collect(),
            rows,
            cols,
            table: flat,
        });
        Ok(())
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |m: String| Err(InferenceError::InvalidGraph(m));
        for (i, v) in self.vertices.iter().enumerate() {
            if v.unary.is_empty() {
                return bad(format!("vertex {i} has no labels"));
            }
            if v.unary.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
                return bad(format!("vertex {i} has a NaN or +inf score"));
            }
        }
        let mut seen = BTreeSet::new();
        for (i, e) in self.edges.iter().enumerate() {
            if e.u >= e.v || e.v >= self.vertices.len() {
                return bad(format!("edge {i} endpoints ({}, {}) not ordered in range", e.u, e.v));
            }
            if e.rows != self.vertices[e.u].labels() || e.cols != self.vertices[e.v].labels() || e.table.len() != e.rows * e.cols {
                return bad(format!("edge {i} table shape mismatch"));
            }
            if e.table.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
                return bad(format!("edge {i} has a NaN or +inf score"));
            }
            if e.kind == EdgeKind::Class && self.vertices[e.u].class_noun != self.vertices[e.v].class_noun {
                return bad(format!("class edge {i} joins different classes"));
            }
            if !seen.insert((e.kind, e.u, e.v)) {
                return bad(format!("duplicate edge {i}"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, InferenceError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, InferenceError> {
        let g: Self = serde_json::from_str(s)?;
        g.validate()?;
        Ok(g)
    }

    pub fn count(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    /// Sum of the unary and pairwise entries selected by `labels`.
    pub fn objective(&self, labels: &[usize]) -> f64 {
        let unary: f64 = self.vertices.iter().zip(labels).map(|(v, l)| v.unary[*l]).sum();
        let pair: f64 = self.edges.iter().map(|e| e.at(labels[e.u], labels[e.v])).sum();
        unary + pair
    }

    /// Connected components as sorted vertex lists, ordered by first vertex.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.vertices.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut y = x;
            while p[y] != r {
                let next = p[y];
                p[y] = r;
                y = next;
            }
            r
        }
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.u), find(&mut parent, e.v));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for v in 0..n {
            let r = find(&mut parent, v);
            groups.entry(r).or_default().push(v);
        }
        groups.into_values().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub labels: Vec<usize>,
    #[serde(with = "neg_inf::scalar")]
    pub objective: f64,
}

/// Exhaustive MAP per connected component. Ties go to the lexicographically
/// smallest label vector.
pub fn brute_force_map(graph: &CodetectionGraph) -> Result<Assignment, InferenceError> {
    graph.validate()?;
    let mut labels = vec![0usize; graph.vertices.len()];
    for comp in graph.components() {
        let size: f64 = comp.iter().map(|v| graph.vertices[*v].labels() as f64).product();
        if size > BRUTE_FORCE_LIMIT {
            return Err(InferenceError::TooLarge(size));
        }
        let in_comp: BTreeSet<usize> = comp.iter().copied().collect();
        let edges: Vec<&Edge> = graph.edges.iter().filter(|e| in_comp.contains(&e.u)).collect();
        let score = |labels: &[usize]| -> f64 {
            comp.iter().map(|v| graph.vertices[*v].unary[labels[*v]]).sum::<f64>()
                + edges.iter().map(|e| e.at(labels[e.u], labels[e.v])).sum::<f64>()
        };
        let mut cur = labels.clone();
        let mut best: Option<(f64, Vec<usize>)> = None;
        // odometer with the last vertex fastest, so visits are in lexicographic order
        'enumerate: loop {
            let s = score(&cur);
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, comp.iter().map(|v| cur[*v]).collect()));
            }
            for &v in comp.iter().rev() {
                cur[v] += 1;
                if cur[v] < graph.vertices[v].labels() {
                    continue 'enumerate;
                }
                cur[v] = 0;
            }
            break;
        }
        let (s, best) = best.expect("at least one assignment");
        if s == f64::NEG_INFINITY {
            return Err(InferenceError::Infeasible);
        }
        for (v, l) in comp.iter().zip(best) {
            labels[*v] = l;
        }
    }
    let objective = graph.objective(&labels);
    Ok(Assignment { labels, objective })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpConfig {
    pub max_iters: usize,
    /// Weight of the previous message in the damped update.
    pub damping: f64,
    /// Stop once the largest message change falls below this.
    pub tol: f64,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            damping: 0.5,
            tol: 1e-6,
        }
    }
}

impl BpConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(InferenceError::InvalidConfig(format!("damping {} not in [0, 1)", self.damping)));
        }
        if !(self.tol > 0.0) {
            return Err(InferenceError::InvalidConfig(format!("tol {} must be positive", self.tol)));
        }
        Ok(())
    }
}

/// One factor after parallel edges are merged, indexed `[u label][v label]`.
struct Factor {
    u: usize,
    v: usize,
    cols: usize,
    table: Vec<f64>,
}

fn merged_factors(graph: &CodetectionGraph) -> Vec<Factor> {
    let mut by_pair: BTreeMap<(usize, usize), Factor> = BTreeMap::new();
    for e in &graph.edges {
        by_pair
            .entry((e.u, e.v))
            .and_modify(|f| f.table.iter_mut().zip(&e.table).for_each(|(x, y)| *x += y))
            .or_insert_with(|| Factor {
                u: e.u,
                v: e.v,
                cols: e.cols,
                table: e.table.clone(),
            });
    }
    by_pair.into_values().collect()
}

/// Subtracts the largest finite entry; an all `-inf` message stays as is.
fn normalize(m: &mut [f64]) {
    let max = m.iter().copied().filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if max.is_finite() {
        m.iter_mut().for_each(|x| *x -= max);
    }
}

fn damp(old: f64, new: f64, lambda: f64) -> f64 {
    if old == f64::NEG_INFINITY || new == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        lambda * old + (1.0 - lambda) * new
    }
}

fn change(old: f64, new: f64) -> f64 {
    match (old == f64::NEG_INFINITY, new == f64::NEG_INFINITY) {
        (true, true) => 0.0,
        (false, false) => (old - new).abs(),
        _ => f64::INFINITY,
    }
}

/// First index of the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Result of loopy belief propagation with its iteration count.
#[derive(Debug, Clone, PartialEq)]
pub struct BpOutcome {
    pub assignment: Assignment,
    pub iterations: usize,
    pub converged: bool,
}

/// Synchronous damped max-sum belief propagation, decoded per vertex by
/// argmax of the beliefs (smallest label on ties). If the decoded labels
/// score `-inf`, the best single-vertex change is tried before reporting
/// the graph infeasible.
pub fn max_sum_bp(graph: &CodetectionGraph, config: &BpConfig) -> Result<Assignment, InferenceError> {
    max_sum_bp_detailed(graph, config).map(|o| o.assignment)
}

pub fn max_sum_bp_detailed(graph: &CodetectionGraph, config: &BpConfig) -> Result<BpOutcome, InferenceError> {
    graph.validate()?;
    config.validate()?;
    let factors = merged_factors(graph);
    let n = graph.vertices.len();
    let k = |v: usize| graph.vertices[v].labels();
    // to_v[f] = message from u to v over factor f, to_u[f] = message from v to u
    let mut to_v: Vec<Vec<f64>> = factors.iter().map(|f| vec![0.0; k(f.v)]).collect();
    let mut to_u: Vec<Vec<f64>> = factors.iter().map(|f| vec![0.0; k(f.u)]).collect();
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, f) in factors.iter().enumerate() {
        incident[f.u].push(i);
        incident[f.v].push(i);
    }
    // product of unary and incoming messages except the one over `skip`
    let cavity = |v: usize, skip: usize, to_v: &[Vec<f64>], to_u: &[Vec<f64>]| -> Vec<f64> {
        let mut out = graph.vertices[v].unary.clone();
        for &f in &incident[v] {
            if f == skip {
                continue;
            }
            let m = if factors[f].v == v { &to_v[f] } else { &to_u[f] };
            out.iter_mut().zip(m).for_each(|(x, y)| *x += y);
        }
        out
    };

    let mut iterations = 0;
    let mut converged = factors.is_empty();
    while !converged && iterations < config.max_iters {
        iterations += 1;
        let mut next_v = Vec::with_capacity(factors.len());
        let mut next_u = Vec::with_capacity(factors.len());
        for (i, f) in factors.iter().enumerate() {
            let pre_u = cavity(f.u, i, &to_v, &to_u);
            let mut mv = vec![f64::NEG_INFINITY; k(f.v)];
            for (a, pa) in pre_u.iter().enumerate() {
                if *pa == f64::NEG_INFINITY {
                    continue;
                }
                for (b, m) in mv.iter_mut().enumerate() {
                    *m = m.max(pa + f.table[a * f.cols + b]);
                }
            }
            normalize(&mut mv);
            let pre_v = cavity(f.v, i, &to_v, &to_u);
            let mut mu = vec![f64::NEG_INFINITY; k(f.u)];
            for (a, m) in mu.iter_mut().enumerate() {
                for (b, pb) in pre_v.iter().enumerate() {
                    *m = m.max(pb + f.table[a * f.cols + b]);
                }
            }
            normalize(&mut mu);
            next_v.push(mv);
            next_u.push(mu);
        }
        let mut delta: f64 = 0.0;
        for (old, new) in to_v.iter_mut().zip(next_v).chain(to_u.iter_mut().zip(next_u)) {
            for (o, n) in old.iter_mut().zip(new) {
                let d = damp(*o, n, config.damping);
                delta = delta.max(change(*o, d));
                *o = d;
            }
        }
        converged = delta < config.tol;
    }

    let labels: Vec<usize> = (0..n).map(|v| argmax(&cavity(v, usize::MAX, &to_v, &to_u))).collect();
    let assignment = repair(graph, labels)?;
    Ok(BpOutcome {
        assignment,
        iterations,
        converged,
    })
}

fn repair(graph: &CodetectionGraph, labels: Vec<usize>) -> Result<Assignment, InferenceError> {
    let objective = graph.objective(&labels);
    if objective > f64::NEG_INFINITY {
        return Ok(Assignment { labels, objective });
    }
    let mut best: Option<Assignment> = None;
    for v in 0..labels.len() {
        for l in 0..graph.vertices[v].labels() {
            let mut cand = labels.clone();
            cand[v] = l;
            let s = graph.objective(&cand);
            if s > best.as_ref().map_or(f64::NEG_INFINITY, |b| b.objective) {
                best = Some(Assignment { labels: cand, objective: s });
            }
        }
    }
    best.ok_or(InferenceError::Infeasible)
}

/// Which scores enter the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Sim,
    Flow,
    Sent,
    SimFlow,
    SimSent,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Sim, Variant::Flow, Variant::Sent, Variant::SimFlow, Variant::SimSent];

    pub fn uses_similarity(self) -> bool {
        matches!(self, Variant::Sim | Variant::SimFlow | Variant::SimSent)
    }

    pub fn uses_flow_only(self) -> bool {
        matches!(self, Variant::Flow | Variant::SimFlow)
    }

    pub fn uses_sentence(self) -> bool {
        matches!(self, Variant::Sent | Variant::SimSent)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sim => "sim",
            Variant::Flow => "flow",
            Variant::Sent => "sent",
            Variant::SimFlow => "sim-flow",
            Variant::SimSent => "sim-sent",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s) || v.name().replace('-', "+").eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

/// Everything the graph needs from one video of a codetection set.
pub struct VideoInput<'a> {
    pub conjunction: &'a PredicateConjunction,
    pub proposals: &'a [Proposal],
    pub ctx: PredicateContext<'a>,
}

impl VideoInput<'_> {
    pub fn video_id(&self) -> &str {
        &self.ctx.video.id
    }
}

/// Video pairs whose similarity tables a class-edge graph needs: every pair
/// of same-class instances, within or across videos.
pub fn similarity_pairs(videos: &[VideoInput]) -> Vec<(String, String)> {
    let mut by_class: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for v in videos {
        for inst in &v.conjunction.instances {
            by_class.entry(inst.class.as_str()).or_default().push(v.video_id());
        }
    }
    let mut pairs = BTreeSet::new();
    for vids in by_class.values() {
        for i in 0..vids.len() {
            for j in i + 1..vids.len() {
                let (a, b) = (vids[i].min(vids[j]), vids[i].max(vids[j]));
                pairs.insert((a.to_string(), b.to_string()));
            }
        }
    }
    pairs.into_iter().collect()
}

fn flow_term(term: FlowTerm, p: &Proposal, ctx: &PredicateContext) -> f64 {
    match term {
        FlowTerm::Move => predicates::med_flow_mag(p, ctx).0,
        FlowTerm::TempCoher => predicates::temp_coher(p, ctx).0,
    }
}

/// Builds the graph of one codetection set for a variant. Similarity is
/// required only for variants with class edges.
pub fn build_graph(
    set_id: &str,
    videos: &[VideoInput],
    similarity: Option<&SimilarityMatrix>,
    variant: Variant,
) -> Result<CodetectionGraph, InferenceError> {
    let mut g = build_terms(set_id, videos, variant)?;
    if variant.uses_similarity() {
        add_class_edges(&mut g, similarity)?;
    }
    g.validate()?;
    Ok(g)
}

/// Vertices with the variant's unary and predicate terms, no class edges.
fn build_terms(set_id: &str, videos: &[VideoInput], variant: Variant) -> Result<CodetectionGraph, InferenceError> {
    let mut g = CodetectionGraph::new(set_id);
    // (video index, instance id) -> vertex
    let mut index: BTreeMap<(usize, &str), usize> = BTreeMap::new();
    for (vi, input) in videos.iter().enumerate() {
        let props = input.proposals;
        if props.is_empty() {
            return Err(InferenceError::MissingScore(format!("video `{}` has no proposals", input.video_id())));
        }
        for inst in &input.conjunction.instances {
            let id = g.add_vertex(Vertex {
                instance_id: inst.id.clone(),
                video_id: input.video_id().to_string(),
                class_noun: inst.class.clone(),
                unary: vec![0.0; props.len()],
            });
            index.insert((vi, inst.id.as_str()), id);
        }
        for atom in &input.conjunction.atoms {
            let vertex_of = |name: &str| {
                index
                    .get(&(vi, name))
                    .copied()
                    .ok_or_else(|| InferenceError::MissingScore(format!("atom {atom} names unknown instance `{name}`")))
            };
            let args = atom.args.iter().map(|a| vertex_of(a)).collect::<Result<Vec<_>, _>>()?;
            if variant.uses_flow_only() {
                for &(arg, term) in atom.predicate.flow_terms() {
                    if let Some(&v) = args.get(arg) {
                        for (k, p) in props.iter().enumerate() {
                            g.vertices[v].unary[k] += flow_term(term, p, &input.ctx);
                        }
                    }
                }
                continue;
            }
            if !variant.uses_sentence() {
                continue;
            }
            match args.as_slice() {
                [v] => {
                    for (k, p) in props.iter().enumerate() {
                        g.vertices[*v].unary[k] += predicates::eval(atom.predicate, &[p], &input.ctx)?.0;
                    }
                }
                [a, b] if a == b => {
                    for (k, p) in props.iter().enumerate() {
                        g.vertices[*a].unary[k] += predicates::eval(atom.predicate, &[p, p], &input.ctx)?.0;
                    }
                }
                [a, b] => {
                    let table = props
                        .iter()
                        .map(|p| {
                            props
                                .iter()
                                .map(|q| predicates::eval(atom.predicate, &[p, q], &input.ctx).map(|s| s.0))
                                .collect::<Result<Vec<_>, _>>()
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    g.add_edge(EdgeKind::Predicate, *a, *b, Some(atom.to_string()), table)?;
                }
                _ => return Err(InferenceError::InvalidGraph(format!("atom {atom} has unsupported arity"))),
            }
        }
    }
    Ok(g)
}

/// Adds a class edge between every two same-class vertices, with the
/// similarity table of their videos.
pub fn add_class_edges(g: &mut CodetectionGraph, similarity: Option<&SimilarityMatrix>) -> Result<(), InferenceError> {
    let n = g.vertices.len();
    for a in 0..n {
        for b in a + 1..n {
            let (va, vb) = (&g.vertices[a], &g.vertices[b]);
            if va.class_noun != vb.class_noun {
                continue;
            }
            let sim = similarity.ok_or_else(|| InferenceError::MissingScore("similarity matrix".into()))?;
            let t = sim.table(&va.video_id, &vb.video_id).ok_or_else(|| {
                InferenceError::MissingScore(format!("similarity {} x {}", va.video_id, vb.video_id))
            })?;
            if t.dim() != (va.labels(), vb.labels()) {
                return Err(InferenceError::MissingScore(format!(
                    "similarity {} x {} is {:?}, expected {}x{}",
                    va.video_id,
                    vb.video_id,
                    t.dim(),
                    va.labels(),
                    vb.labels()
                )));
            }
            let table = t.rows().into_iter().map(|r| r.to_vec()).collect();
            g.add_edge(EdgeKind::Class, a, b, None, table)?;
        }
    }
    Ok(())
}

/// Builds the variant's graph and solves it by belief propagation.
pub fn run_variant(
    set_id: &str,
    videos: &[VideoInput],
    similarity: Option<&SimilarityMatrix>,
    variant: Variant,
    config: &BpConfig,
) -> Result<(CodetectionGraph, Assignment), InferenceError> {
    let g = build_graph(set_id, videos, similarity, variant)?;
    let a = max_sum_bp(&g, config)?;
    Ok((g, a))
}

/// Runs several variants on one set. Variants that differ only by class
/// edges share one evaluation of their unary and predicate terms.
pub fn run_variants(
    set_id: &str,
    videos: &[VideoInput],
    similarity: Option<&SimilarityMatrix>,
    variants: &[Variant],
    config: &BpConfig,
) -> Result<Vec<(Variant, CodetectionGraph, Assignment)>, InferenceError> {
    let base_of = |v: Variant| match v {
        Variant::Sim => Variant::Sim,
        Variant::Flow | Variant::SimFlow => Variant::Flow,
        Variant::Sent | Variant::SimSent => Variant::Sent,
    };
    let mut bases: BTreeMap<&'static str, CodetectionGraph> = BTreeMap::new();
    let mut out = Vec::with_capacity(variants.len());
    for &variant in variants {
        let base = base_of(variant);
        let key = base.name();
        if !bases.contains_key(key) {
            bases.insert(key, build_terms(set_id, videos, base)?);
        }
        let mut g = bases[key].clone();
        if variant.uses_similarity() {
            add_class_edges(&mut g, similarity)?;
        }
        g.validate()?;
        let a = max_sum_bp(&g, config)?;
        out.push((variant, g, a));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vertex(id: &str, class: &str, unary: Vec<f64>) -> Vertex {
        Vertex {
            instance_id: id.into(),
            video_id: "v".into(),
            class_noun: class.into(),
            unary,
        }
    }

    fn worked_example() -> CodetectionGraph {
        let mut g = CodetectionGraph::new("s");
        g.add_vertex(vertex("a", "cup", vec![0.0, -1.0]));
        g.add_vertex(vertex("b", "cup", vec![-2.0, 0.0]));
        g.add_edge(EdgeKind::Class, 0, 1, None, vec![vec![0.0, -3.0], vec![-3.0, 0.0]]).unwrap();
        g
    }

    #[test]
    fn worked_objective_values() {
        let g = worked_example();
        assert_eq!(g.objective(&[0, 0]), -2.0);
        assert_eq!(g.objective(&[0, 1]), -3.0);
        assert_eq!(g.objective(&[1, 0]), -6.0);
        assert_eq!(g.objective(&[1, 1]), -1.0);
    }

    #[test]
    fn worked_example_solvers() {
        let g = worked_example();
        let exact = brute_force_map(&g).unwrap();
        assert_eq!(exact.labels, [1, 1]);
        assert_eq!(exact.objective, -1.0);
        let bp = max_sum_bp(&g, &BpConfig::default()).unwrap();
        assert_eq!(bp, exact);
    }

    #[test]
    fn reversed_edges_are_transposed_and_merged() {
        let mut g = CodetectionGraph::new("s");
        g.add_vertex(vertex("a", "x", vec![0.0; 2]));
        g.add_vertex(vertex("b", "y", vec![0.0; 3]));
        g.add_edge(EdgeKind::Predicate, 1, 0, Some("p".into()), vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]])
            .unwrap();
        g.add_edge(EdgeKind::Predicate, 0, 1, Some("q".into()), vec![vec![1.0; 3], vec![1.0; 3]]).unwrap();
        assert_eq!(g.edges.len(), 1);
        let e = &g.edges[0];
        assert_eq!((e.u, e.v, e.rows, e.cols), (0, 1, 2, 3));
        assert_eq!(e.at(1, 2), 7.0);
        assert_eq!(e.atoms, ["p", "q"]);
    }

    #[test]
    fn unary_only_graph_is_separable() {
        let mut g = CodetectionGraph::new("s");
        g.add_vertex(vertex("a", "x", vec![-3.0, -1.0, -1.0]));
        g.add_vertex(vertex("b", "y", vec![0.0, -0.5]));
        let bp = max_sum_bp_detailed(&g, &BpConfig::default()).unwrap();
        assert_eq!(bp.assignment.labels, [1, 0]);
        assert!(bp.iterations <= 1);
        assert_eq!(brute_force_map(&g).unwrap().labels, [1, 0]);
    }

    #[test]
    fn infeasible_graphs_are_reported() {
        let mut g = CodetectionGraph::new("s");
        g.add_vertex(vertex("a", "x", vec![f64::NEG_INFINITY; 2]));
        assert!(matches!(brute_force_map(&g), Err(InferenceError::Infeasible)));
        assert!(matches!(max_sum_bp(&g, &BpConfig::default()), Err(InferenceError::Infeasible)));
    }

    #[test]
    fn neg_inf_entries_survive_json() {
        let mut g = worked_example();
        g.edges[0].table[1] = f64::NEG_INFINITY;
        let back = CodetectionGraph::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn class_edges_require_same_class() {
        let mut g = CodetectionGraph::new("s");
        g.add_vertex(vertex("a", "x", vec![0.0]));
        g.add_vertex(vertex("b", "y", vec![0.0]));
        g.add_edge(EdgeKind::Class, 0, 1, None, vec![vec![0.0]]).unwrap();
        assert!(g.validate().is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("SIM+SENT".parse::<Variant>().unwrap(), Variant::SimSent);
        assert!("both".parse::<Variant>().is_err());
    }
}
