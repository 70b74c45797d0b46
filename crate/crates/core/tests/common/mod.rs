//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavecopy::pwe::{compare_routes, Edge, Node, NodeKind, PweGraph};
use wavecopy::Vec3;

pub type Path = (f64, Vec<String>);

/// Random graph on `n` nodes: the first `users` are endpoints, the rest
/// tiles. Endpoints are never adjacent to each other so routes must relay.
/// Half the seeds use Euclidean weights, half arbitrary ones.
pub fn random_graph(seed: u64, n: usize, users: usize) -> PweGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let euclid = seed % 2 == 0;
    let p = rng.random_range(0.3..0.7);
    let nodes: Vec<Node> = (0..n)
        .map(|i| Node {
            id: format!("n{i}"),
            kind: if i < users { NodeKind::User } else { NodeKind::Tile },
            position: Vec3::new(rng.random(), rng.random(), rng.random()),
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if j < users || !rng.random_bool(p) {
                continue;
            }
            let weight = if euclid {
                nodes[i].position.distance(nodes[j].position) + 1e-3
            } else {
                rng.random_range(0.1..1.0)
            };
            edges.push(Edge { a: nodes[i].id.clone(), b: nodes[j].id.clone(), weight });
        }
    }
    PweGraph::from_parts(nodes, edges).unwrap()
}

/// Every simple path from `s` to `d` with at most `max_hops` edges whose
/// intermediate nodes are tiles.
pub fn all_paths(g: &PweGraph, s: &str, d: &str, max_hops: usize) -> Vec<Path> {
    fn walk(g: &PweGraph, path: &mut Vec<String>, len: f64, d: &str, max_hops: usize, out: &mut Vec<Path>) {
        let u = path.last().unwrap().clone();
        for n in &g.nodes {
            if path.contains(&n.id) {
                continue;
            }
            let Some(w) = g.weight(&u, &n.id) else { continue };
            if n.id == d {
                let mut p = path.clone();
                p.push(n.id.clone());
                out.push((len + w, p));
            } else if n.kind == NodeKind::Tile && path.len() < max_hops {
                path.push(n.id.clone());
                walk(g, path, len + w, d, max_hops, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(g, &mut vec![s.to_string()], 0.0, d, max_hops, &mut out);
    out
}

fn ids(p: &Path) -> Vec<&str> {
    p.1.iter().map(String::as_str).collect()
}

pub fn best_path(g: &PweGraph, s: &str, d: &str, max_hops: usize) -> Option<Path> {
    let mut paths = all_paths(g, s, d, max_hops);
    paths.sort_by(|a, b| compare_routes(a.0, &ids(a), b.0, &ids(b)));
    paths.into_iter().next()
}

fn inner(p: &Path) -> &[String] {
    &p.1[1..p.1.len() - 1]
}

/// Minimum total length over all combinations of paths whose intermediate
/// nodes are pairwise disjoint.
pub fn best_disjoint(g: &PweGraph, pairs: &[(String, String)], max_hops: usize) -> Option<f64> {
    let cands: Vec<Vec<Path>> = pairs.iter().map(|(s, d)| all_paths(g, s, d, max_hops)).collect();
    fn rec(cands: &[Vec<Path>], i: usize, used: &mut Vec<String>, acc: f64, best: &mut Option<f64>) {
        if best.is_some_and(|b| acc >= b) {
            return;
        }
        if i == cands.len() {
            *best = Some(acc);
            return;
        }
        for p in &cands[i] {
            if inner(p).iter().any(|x| used.contains(x)) {
                continue;
            }
            let n = used.len();
            used.extend(inner(p).iter().cloned());
            rec(cands, i + 1, used, acc + p.0, best);
            used.truncate(n);
        }
    }
    let mut best = None;
    rec(&cands, 0, &mut Vec::new(), 0.0, &mut best);
    best
}
