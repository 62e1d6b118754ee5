//! Random graph fixtures and an independent enumeration oracle.

use codetect::inference::{CodetectionGraph, EdgeKind, Vertex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every assignment with its objective, in lexicographic label order.
pub fn enumerate(g: &CodetectionGraph) -> Vec<(Vec<usize>, f64)> {
    let sizes: Vec<usize> = g.vertices.iter().map(|v| v.unary.len()).collect();
    let total: usize = sizes.iter().product();
    (0..total)
        .map(|mut code| {
            let mut labels = vec![0; sizes.len()];
            for i in (0..sizes.len()).rev() {
                labels[i] = code % sizes[i];
                code /= sizes[i];
            }
            let mut s: f64 = g.vertices.iter().zip(&labels).map(|(v, l)| v.unary[*l]).sum();
            for e in &g.edges {
                s += e.table[labels[e.u] * e.cols + labels[e.v]];
            }
            (labels, s)
        })
        .collect()
}

/// Best assignment (first in lexicographic order on ties) and the gap to
/// the runner-up objective.
pub fn optimum(g: &CodetectionGraph) -> (Vec<usize>, f64, f64) {
    let all = enumerate(g);
    let mut best = 0;
    for i in 1..all.len() {
        if all[i].1 > all[best].1 {
            best = i;
        }
    }
    let runner_up = all
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .map(|(_, a)| a.1)
        .fold(f64::NEG_INFINITY, f64::max);
    (all[best].0.clone(), all[best].1, all[best].1 - runner_up)
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, max_labels: usize, edges: &[(usize, usize)]) -> CodetectionGraph {
    let mut g = CodetectionGraph::new("fixture");
    for i in 0..n {
        let k = rng.random_range(2..=max_labels);
        g.add_vertex(Vertex {
            instance_id: format!("x{i}"),
            video_id: format!("v{i}"),
            class_noun: "thing".into(),
            unary: (0..k).map(|_| -rng.random::<f64>() * 2.0).collect(),
        });
    }
    for &(a, b) in edges {
        let (ka, kb) = (g.vertices[a].unary.len(), g.vertices[b].unary.len());
        let table = (0..ka).map(|_| (0..kb).map(|_| -rng.random::<f64>() * 4.0).collect()).collect();
        g.add_edge(EdgeKind::Class, a, b, None, table).unwrap();
    }
    g
}

/// A random tree on up to 6 vertices with up to 8 labels, re-perturbed
/// until its optimum beats the runner-up by a clear margin.
pub fn random_tree(seed: u64) -> CodetectionGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=6);
    let edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
    let mut g = random_graph(&mut rng, n, 8, &edges);
    while optimum(&g).2 < 1e-3 {
        for v in &mut g.vertices {
            v.unary.iter_mut().for_each(|x| *x -= rng.random::<f64>() * 0.01);
        }
    }
    g
}

/// A random graph on 3 or 4 vertices with at least one cycle and up to 6
/// labels per vertex.
pub fn random_loopy(seed: u64) -> CodetectionGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=4);
    let mut edges = vec![];
    for a in 0..n {
        for b in a + 1..n {
            edges.push((a, b));
        }
    }
    if n == 4 && rng.random_bool(0.5) {
        // drop one chord of K4, leaving a cycle
        edges.remove(rng.random_range(0..edges.len()));
    }
    random_graph(&mut rng, n, 6, &edges)
}
