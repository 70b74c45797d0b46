//! The environment controller.
//!
//! The room is abstracted as a line-of-sight graph whose nodes are tiles and
//! endpoints (sources, objects, arrays, user locations). Copy commands are
//! routed as hop-bounded shortest paths through tiles, compiled into FOCUS
//! callbacks hop by hop, deployed through the tile codebooks, and checked by
//! simulation. [`protocol`] exposes the same operations as a line-delimited
//! JSON service.

pub mod protocol;

use crate::em::{self, EmError, PatchSource, PropagationConfig};
use crate::geometry::Vec3;
use crate::scene::RoomScene;
use crate::sdm::{codebook_lookup, continuous_config, Callback, SdmError, TileConfig};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use thiserror::Error;

/// Default bound on the number of edges in a route.
pub const DEFAULT_MAX_HOPS: usize = 4;

/// Route lengths closer than this (meters) are ties, broken by node ids.
pub const LENGTH_TIE: f64 = 1e-9;

/// Congruence tolerance for sensing replication, meters.
pub const LAYOUT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PweError {
    #[error("no route from `{0}` to `{1}` within the hop bound")]
    NoRoute(String, String),
    #[error("cannot serve all commands with disjoint routes")]
    Infeasible,
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown tile `{0}`")]
    UnknownTile(String),
    #[error("tile `{0}` is assigned more than one callback")]
    TileConflict(String),
    #[error("invalid route: {0}")]
    InvalidRoute(String),
    #[error("tile layouts are not congruent: {0}")]
    LayoutMismatch(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error(transparent)]
    Em(#[from] EmError),
    #[error(transparent)]
    Sdm(#[from] SdmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Tile,
    Source,
    Object,
    Array,
    User,
}

/// A graph node and its reference point (tile center, source position,
/// object pivot, array centroid or user location).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub position: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: String,
    pub b: String,
    /// Euclidean length, meters.
    pub weight: f64,
}

/// Line-of-sight connectivity. Nodes are kept sorted by id and edges by
/// `(a, b)` with `a < b`, so equal graphs serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PweGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl PweGraph {
    /// Canonicalizes and checks a hand-built graph.
    pub fn from_parts(mut nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self, PweError> {
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = nodes.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(PweError::InvalidGraph(format!("duplicate node `{}`", w[0].id)));
        }
        let mut g = PweGraph { nodes, edges: Vec::with_capacity(edges.len()) };
        let mut seen = BTreeSet::new();
        for e in edges {
            g.index(&e.a)?;
            g.index(&e.b)?;
            if e.a == e.b || !(e.weight > 0.0) || !e.weight.is_finite() {
                return Err(PweError::InvalidGraph(format!("bad edge {}-{}", e.a, e.b)));
            }
            let (a, b) = if e.a < e.b { (e.a, e.b) } else { (e.b, e.a) };
            if !seen.insert((a.clone(), b.clone())) {
                return Err(PweError::InvalidGraph(format!("duplicate edge {a}-{b}")));
            }
            g.edges.push(Edge { a, b, weight: e.weight });
        }
        g.edges.sort_by(|x, y| (&x.a, &x.b).cmp(&(&y.a, &y.b)));
        Ok(g)
    }

    pub fn index(&self, id: &str) -> Result<usize, PweError> {
        self.nodes
            .binary_search_by(|n| n.id.as_str().cmp(id))
            .map_err(|_| PweError::UnknownNode(id.to_string()))
    }

    pub fn node(&self, id: &str) -> Result<&Node, PweError> {
        self.index(id).map(|i| &self.nodes[i])
    }

    pub fn weight(&self, a: &str, b: &str) -> Option<f64> {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        self.edges.iter().find(|e| e.a == a && e.b == b).map(|e| e.weight)
    }

    pub fn degree(&self, id: &str) -> usize {
        self.edges.iter().filter(|e| e.a == id || e.b == id).count()
    }

    /// Copy of the graph without `id` and its incident edges.
    pub fn without(&self, id: &str) -> PweGraph {
        PweGraph {
            nodes: self.nodes.iter().filter(|n| n.id != id).cloned().collect(),
            edges: self.edges.iter().filter(|e| e.a != id && e.b != id).cloned().collect(),
        }
    }

    fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            let (a, b) = (self.index(&e.a).expect("edge node"), self.index(&e.b).expect("edge node"));
            adj[a].push((b, e.weight));
            adj[b].push((a, e.weight));
        }
        for l in &mut adj {
            l.sort_by_key(|&(v, _)| v);
        }
        adj
    }

    fn transit(&self) -> Vec<bool> {
        self.nodes.iter().map(|n| n.kind == NodeKind::Tile).collect()
    }
}

fn scene_nodes(scene: &RoomScene) -> Vec<Node> {
    let mut nodes = Vec::new();
    nodes.extend(scene.tiles.iter().map(|t| Node { id: t.id.clone(), kind: NodeKind::Tile, position: t.center() }));
    nodes.extend(scene.sources.iter().map(|s| Node { id: s.id.clone(), kind: NodeKind::Source, position: s.position }));
    nodes.extend(scene.objects.iter().map(|o| Node { id: o.id.clone(), kind: NodeKind::Object, position: o.pivot }));
    nodes.extend(scene.arrays.iter().map(|a| Node { id: a.id.clone(), kind: NodeKind::Array, position: a.centroid() }));
    nodes.extend(scene.endpoints.iter().map(|e| Node { id: e.id.clone(), kind: NodeKind::User, position: e.position }));
    nodes
}

fn los_edge(a: &Node, b: &Node, occ: &crate::scene::Occluders) -> Option<Edge> {
    let d = a.position.distance(b.position);
    (d > 0.0 && occ.visible(a.position, b.position, &[&a.id, &b.id])).then(|| Edge {
        a: a.id.clone(),
        b: b.id.clone(),
        weight: d,
    })
}

/// Graph of a scene: every tile and endpoint, with an edge wherever the
/// two reference points see each other (ignoring the two nodes' own
/// geometry).
pub fn build_graph(scene: &RoomScene) -> PweGraph {
    let occ = scene.occluders();
    let mut nodes = scene_nodes(scene);
    nodes.sort_by(|a, b| a.id.cmp(&b.id));
    let mut edges = Vec::new();
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            edges.extend(los_edge(&nodes[i], &nodes[j], &occ));
        }
    }
    PweGraph { nodes, edges }
}

/// Ordered node path realizing one copy command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveRoute {
    pub nodes: Vec<String>,
    /// Total length, meters.
    pub length: f64,
}

impl WaveRoute {
    pub fn hops(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }

    pub fn intermediates(&self) -> &[String] {
        if self.nodes.len() < 2 {
            &[]
        } else {
            &self.nodes[1..self.nodes.len() - 1]
        }
    }

    pub fn src(&self) -> &str {
        &self.nodes[0]
    }

    pub fn dst(&self) -> &str {
        self.nodes.last().expect("non-empty route")
    }
}

/// Request to copy the wavefront at `src` to `dst`. `group` is a free-form
/// label reported back to the caller; every command in a batch is routed
/// disjointly regardless of group, since a tile holds one configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopyCommand {
    pub src: String,
    pub dst: String,
    #[serde(default)]
    pub group: Option<String>,
}

impl CopyCommand {
    pub fn new(src: impl Into<String>, dst: impl Into<String>) -> Self {
        CopyCommand { src: src.into(), dst: dst.into(), group: None }
    }
}

/// `(length, node ids)` ordering used for every routing decision.
pub fn compare_routes(a_len: f64, a: &[&str], b_len: f64, b: &[&str]) -> Ordering {
    if a_len < b_len - LENGTH_TIE {
        Ordering::Less
    } else if a_len > b_len + LENGTH_TIE {
        Ordering::Greater
    } else {
        a.cmp(b)
    }
}

struct Search<'a> {
    adj: &'a [Vec<(usize, f64)>],
    ids: Vec<&'a str>,
    transit: &'a [bool],
    blocked: &'a [bool],
    dst: usize,
    max_hops: usize,
    visited: Vec<bool>,
    path: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
}

impl Search<'_> {
    fn better(&self, len: f64, path: &[usize]) -> bool {
        match &self.best {
            None => true,
            Some((bl, bp)) => {
                let a: Vec<&str> = path.iter().map(|&i| self.ids[i]).collect();
                let b: Vec<&str> = bp.iter().map(|&i| self.ids[i]).collect();
                compare_routes(len, &a, *bl, &b) == Ordering::Less
            }
        }
    }

    fn bound(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |b| b.0 + LENGTH_TIE)
    }

    fn dfs(&mut self, u: usize, len: f64) {
        let hops = self.path.len() - 1;
        for &(v, w) in &self.adj[u] {
            if self.visited[v] {
                continue;
            }
            let nl = len + w;
            if nl > self.bound() {
                continue;
            }
            if v == self.dst {
                self.path.push(v);
                if self.better(nl, &self.path) {
                    self.best = Some((nl, self.path.clone()));
                }
                self.path.pop();
            } else if hops + 2 <= self.max_hops && self.transit[v] && !self.blocked[v] {
                self.visited[v] = true;
                self.path.push(v);
                self.dfs(v, nl);
                self.path.pop();
                self.visited[v] = false;
            }
        }
    }
}

fn shortest(
    graph: &PweGraph,
    adj: &[Vec<(usize, f64)>],
    transit: &[bool],
    blocked: &[bool],
    src: usize,
    dst: usize,
    max_hops: usize,
) -> Option<WaveRoute> {
    let mut s = Search {
        adj,
        ids: graph.nodes.iter().map(|n| n.id.as_str()).collect(),
        transit,
        blocked,
        dst,
        max_hops,
        visited: vec![false; graph.nodes.len()],
        path: vec![src],
        best: None,
    };
    s.visited[src] = true;
    s.dfs(src, 0.0);
    s.best.map(|(length, p)| WaveRoute { nodes: p.into_iter().map(|i| graph.nodes[i].id.clone()).collect(), length })
}

fn endpoints(graph: &PweGraph, src: &str, dst: &str) -> Result<(usize, usize), PweError> {
    let (s, d) = (graph.index(src)?, graph.index(dst)?);
    if s == d {
        return Err(PweError::InvalidRoute(format!("source and destination are both `{src}`")));
    }
    Ok((s, d))
}

/// Minimum-length route from `src` to `dst` using at most `max_hops` edges
/// and only tiles as intermediate nodes. Exact: the search enumerates every
/// admissible simple path, pruned by the best length found so far.
pub fn route(graph: &PweGraph, src: &str, dst: &str, max_hops: usize) -> Result<WaveRoute, PweError> {
    let (s, d) = endpoints(graph, src, dst)?;
    let blocked = vec![false; graph.nodes.len()];
    shortest(graph, &graph.adjacency(), &graph.transit(), &blocked, s, d, max_hops)
        .ok_or_else(|| PweError::NoRoute(src.into(), dst.into()))
}

/// Up to `k` best admissible paths in [`compare_routes`] order.
fn k_shortest(
    graph: &PweGraph,
    adj: &[Vec<(usize, f64)>],
    transit: &[bool],
    blocked: &[bool],
    src: usize,
    dst: usize,
    max_hops: usize,
    k: usize,
) -> Vec<WaveRoute> {
    if k == 1 {
        return shortest(graph, adj, transit, blocked, src, dst, max_hops).into_iter().collect();
    }
    struct Enum<'a> {
        adj: &'a [Vec<(usize, f64)>],
        ids: Vec<&'a str>,
        transit: &'a [bool],
        blocked: &'a [bool],
        dst: usize,
        max_hops: usize,
        k: usize,
        visited: Vec<bool>,
        path: Vec<usize>,
        found: Vec<(f64, Vec<usize>)>,
    }
    impl Enum<'_> {
        fn cmp(&self, a: &(f64, Vec<usize>), b: &(f64, Vec<usize>)) -> Ordering {
            let x: Vec<&str> = a.1.iter().map(|&i| self.ids[i]).collect();
            let y: Vec<&str> = b.1.iter().map(|&i| self.ids[i]).collect();
            compare_routes(a.0, &x, b.0, &y)
        }

        fn bound(&self) -> f64 {
            if self.found.len() < self.k {
                f64::INFINITY
            } else {
                self.found[self.k - 1].0 + LENGTH_TIE
            }
        }

        fn dfs(&mut self, u: usize, len: f64) {
            let hops = self.path.len() - 1;
            for &(v, w) in &self.adj[u] {
                let nl = len + w;
                if self.visited[v] || nl > self.bound() {
                    continue;
                }
                if v == self.dst {
                    let mut p = self.path.clone();
                    p.push(v);
                    let item = (nl, p);
                    let at = self.found.partition_point(|f| self.cmp(f, &item) == Ordering::Less);
                    self.found.insert(at, item);
                    self.found.truncate(self.k);
                } else if hops + 2 <= self.max_hops && self.transit[v] && !self.blocked[v] {
                    self.visited[v] = true;
                    self.path.push(v);
                    self.dfs(v, nl);
                    self.path.pop();
                    self.visited[v] = false;
                }
            }
        }
    }
    let mut e = Enum {
        adj,
        ids: graph.nodes.iter().map(|n| n.id.as_str()).collect(),
        transit,
        blocked,
        dst,
        max_hops,
        k,
        visited: vec![false; graph.nodes.len()],
        path: vec![src],
        found: Vec::new(),
    };
    e.visited[src] = true;
    e.dfs(src, 0.0);
    e.found
        .into_iter()
        .map(|(length, p)| WaveRoute { nodes: p.into_iter().map(|i| graph.nodes[i].id.clone()).collect(), length })
        .collect()
}

/// Candidate paths explored per command, by position in the routing order.
/// Later commands are routed greedily.
const BRANCHING: [usize; 2] = [16, 4];

struct Disjoint<'a> {
    graph: &'a PweGraph,
    adj: Vec<Vec<(usize, f64)>>,
    transit: Vec<bool>,
    ends: Vec<(usize, usize)>,
    max_hops: usize,
    best: Option<(f64, Vec<WaveRoute>)>,
}

impl Disjoint<'_> {
    fn search(&mut self, order: &[usize], depth: usize, blocked: &mut Vec<bool>, acc: &mut Vec<(usize, WaveRoute)>, len: f64) {
        if self.best.as_ref().is_some_and(|b| len >= b.0 - LENGTH_TIE) {
            return;
        }
        let Some(&c) = order.get(depth) else {
            let mut rs = acc.clone();
            rs.sort_by_key(|(i, _)| *i);
            self.best = Some((len, rs.into_iter().map(|(_, r)| r).collect()));
            return;
        };
        let (s, d) = self.ends[c];
        let k = BRANCHING.get(depth).copied().unwrap_or(1);
        for r in k_shortest(self.graph, &self.adj, &self.transit, blocked, s, d, self.max_hops, k) {
            let idx: Vec<usize> = r.intermediates().iter().map(|id| self.graph.index(id).expect("route node")).collect();
            for &i in &idx {
                blocked[i] = true;
            }
            let l = r.length;
            acc.push((c, r));
            self.search(order, depth + 1, blocked, acc, len + l);
            acc.pop();
            for &i in &idx {
                blocked[i] = false;
            }
        }
    }
}

/// Routes that share no intermediate tile.
///
/// Commands are routed one at a time, each removing its tiles from the
/// graph, first in the given order and then in reverse; the shorter
/// feasible outcome wins. In each order the leading commands try several of
/// their shortest paths (see `BRANCHING`) rather than only the best one,
/// which repairs most greedy conflicts at little cost.
pub fn route_disjoint(graph: &PweGraph, commands: &[CopyCommand], max_hops: usize) -> Result<Vec<WaveRoute>, PweError> {
    if commands.is_empty() {
        return Err(PweError::InvalidRoute("no commands".into()));
    }
    let ends = commands
        .iter()
        .map(|c| endpoints(graph, &c.src, &c.dst))
        .collect::<Result<Vec<_>, _>>()?;
    let mut dj = Disjoint { graph, adj: graph.adjacency(), transit: graph.transit(), ends, max_hops, best: None };
    let forward: Vec<usize> = (0..commands.len()).collect();
    let reverse: Vec<usize> = forward.iter().rev().copied().collect();
    for order in [forward, reverse] {
        let mut blocked = vec![false; graph.nodes.len()];
        dj.search(&order, 0, &mut blocked, &mut Vec::new(), 0.0);
    }
    dj.best.map(|(_, rs)| rs).ok_or(PweError::Infeasible)
}

/// A callback addressed to one tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileCommand {
    pub tile: String,
    pub callback: Callback,
}

/// FOCUS per intermediate tile, from the previous hop's reference point
/// onto the next hop's.
pub fn compile_route(graph: &PweGraph, route: &WaveRoute) -> Result<Vec<TileCommand>, PweError> {
    if route.nodes.len() < 2 {
        return Err(PweError::InvalidRoute("a route needs two endpoints".into()));
    }
    let nodes = route.nodes.iter().map(|id| graph.node(id)).collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    for w in nodes.windows(3) {
        if w[1].kind != NodeKind::Tile {
            return Err(PweError::InvalidRoute(format!("`{}` is not a tile", w[1].id)));
        }
        out.push(TileCommand {
            tile: w[1].id.clone(),
            callback: Callback::Focus { source: w[0].position, focal: w[2].position },
        });
    }
    Ok(out)
}

/// Route validity against the graph: consecutive nodes adjacent, no
/// repeats, tiles in the middle.
pub fn check_route(graph: &PweGraph, route: &WaveRoute) -> Result<(), PweError> {
    let mut seen = BTreeSet::new();
    for id in &route.nodes {
        graph.index(id)?;
        if !seen.insert(id.as_str()) {
            return Err(PweError::InvalidRoute(format!("node `{id}` repeats")));
        }
    }
    for w in route.nodes.windows(2) {
        if graph.weight(&w[0], &w[1]).is_none() {
            return Err(PweError::InvalidRoute(format!("no edge {}-{}", w[0], w[1])));
        }
    }
    for id in route.intermediates() {
        if graph.node(id)?.kind != NodeKind::Tile {
            return Err(PweError::InvalidRoute(format!("`{id}` is not a tile")));
        }
    }
    Ok(())
}

/// How callbacks become cell configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DeployMode {
    /// Through the tile's codebook (hardware-realizable).
    #[default]
    Quantized,
    /// Ideal unquantized phases at the codebook's phase magnitude.
    Continuous,
}

/// Applies callbacks to named tiles; every other tile absorbs.
pub fn deploy_with(scene: &RoomScene, commands: &[TileCommand], k: f64, mode: DeployMode) -> Result<RoomScene, PweError> {
    let mut by_tile: HashMap<&str, &Callback> = HashMap::new();
    for c in commands {
        if scene.tile(&c.tile).is_none() {
            return Err(PweError::UnknownTile(c.tile.clone()));
        }
        if by_tile.insert(&c.tile, &c.callback).is_some() {
            return Err(PweError::TileConflict(c.tile.clone()));
        }
    }
    let mut out = scene.clone();
    for tile in &mut out.tiles {
        let cb = scene
            .codebook(&tile.codebook)
            .ok_or_else(|| PweError::Em(EmError::UnknownCodebook(tile.id.clone(), tile.codebook.clone())))?;
        let callback = by_tile.get(tile.id.as_str()).copied().unwrap_or(&Callback::Absorb);
        let config = match mode {
            DeployMode::Quantized => TileConfig::States(codebook_lookup(callback, tile, cb, k)?),
            DeployMode::Continuous => continuous_config(callback, tile, cb, k)?,
        };
        tile.config = Some(config);
    }
    Ok(out)
}

/// Codebook deployment (see [`deploy_with`]).
pub fn deploy(scene: &RoomScene, commands: &[TileCommand], k: f64) -> Result<RoomScene, PweError> {
    deploy_with(scene, commands, k, DeployMode::Quantized)
}

pub fn deploy_continuous(scene: &RoomScene, commands: &[TileCommand], k: f64) -> Result<RoomScene, PweError> {
    deploy_with(scene, commands, k, DeployMode::Continuous)
}

/// Simulated outcome of a set of callbacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPrediction {
    /// RMS field magnitude over the probes under the requested deployment.
    pub focal_magnitude: f64,
    /// Same quantity with ideal continuous phases.
    pub continuous_magnitude: f64,
    /// `focal_magnitude / continuous_magnitude`, clamped to `[0, 1]`.
    pub fidelity: f64,
    pub hop_count: usize,
    /// Source to focal length along the FOCUS chain, meters (0 without
    /// callbacks).
    pub path_length: f64,
}

fn rms(v: &[Complex64]) -> f64 {
    (v.iter().map(|z| z.norm_sqr()).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

/// Hop count and length implied by a chained FOCUS callback list.
pub fn chain_geometry(scene: &RoomScene, commands: &[TileCommand]) -> (usize, f64) {
    let mut length = 0.0;
    let mut last = None;
    for c in commands {
        if let (Callback::Focus { source, focal }, Some(t)) = (&c.callback, scene.tile(&c.tile)) {
            length += source.distance(t.center());
            last = Some(t.center().distance(*focal));
        }
    }
    let hops = commands.iter().filter(|c| matches!(c.callback, Callback::Focus { .. })).count() + 1;
    (hops, length + last.unwrap_or(0.0))
}

/// Runs the field solver at `probes` under the requested deployment and
/// under ideal phases, and reports their magnitude ratio.
pub fn predict_channel(
    scene: &RoomScene,
    commands: &[TileCommand],
    probes: &[Vec3],
    cfg: &PropagationConfig,
    mode: DeployMode,
) -> Result<ChannelPrediction, PweError> {
    let deployed = deploy_with(scene, commands, cfg.k, mode)?;
    let focal = rms(&em::compute_field(&deployed, cfg, probes)?);
    let ideal = match mode {
        DeployMode::Continuous => focal,
        DeployMode::Quantized => rms(&em::compute_field(&deploy_continuous(scene, commands, cfg.k)?, cfg, probes)?),
    };
    let fidelity = if ideal > 0.0 { (focal / ideal).clamp(0.0, 1.0) } else if focal > 0.0 { 1.0 } else { 0.0 };
    let (hop_count, path_length) = chain_geometry(scene, commands);
    Ok(ChannelPrediction { focal_magnitude: focal, continuous_magnitude: ideal, fidelity, hop_count, path_length })
}

/// Moves an endpoint, refreshes only its edges, and re-serves the routes
/// touching it. Other routes are kept when the new ones stay disjoint from
/// them; otherwise every command is routed again from scratch.
pub fn reroute(
    graph: &PweGraph,
    scene: &RoomScene,
    routes: &[WaveRoute],
    endpoint: &str,
    position: Vec3,
    max_hops: usize,
) -> Result<(PweGraph, Vec<WaveRoute>), PweError> {
    let idx = graph.index(endpoint)?;
    let mut g = graph.without(endpoint);
    let mut moved = graph.nodes[idx].clone();
    moved.position = position;
    let occ = scene.occluders();
    let fresh: Vec<Edge> = g.nodes.iter().filter_map(|n| los_edge(&moved, n, &occ)).collect();
    g.nodes.push(moved);
    let mut edges = g.edges;
    edges.extend(fresh);
    let g = PweGraph::from_parts(g.nodes, edges)?;

    let touches = |r: &WaveRoute| r.src() == endpoint || r.dst() == endpoint;
    let (adj, transit) = (g.adjacency(), g.transit());
    let mut blocked = vec![false; g.nodes.len()];
    for r in routes.iter().filter(|r| !touches(r)) {
        for id in r.intermediates() {
            blocked[g.index(id)?] = true;
        }
    }
    let mut out = Vec::with_capacity(routes.len());
    let mut ok = true;
    for r in routes {
        if !touches(r) {
            out.push(r.clone());
            continue;
        }
        let (s, d) = endpoints(&g, r.src(), r.dst())?;
        match shortest(&g, &adj, &transit, &blocked, s, d, max_hops) {
            Some(nr) => {
                for id in nr.intermediates() {
                    blocked[g.index(id)?] = true;
                }
                out.push(nr);
            }
            None => {
                ok = false;
                break;
            }
        }
    }
    if ok {
        return Ok((g, out));
    }
    let commands: Vec<CopyCommand> = routes.iter().map(|r| CopyCommand::new(r.src(), r.dst())).collect();
    let out = route_disjoint(&g, &commands, max_hops).map_err(|e| match e {
        PweError::NoRoute(..) => PweError::Infeasible,
        other => other,
    })?;
    Ok((g, out))
}

/// Departing secondary sources recorded on one sensed tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensedTile {
    pub tile: String,
    pub patches: Vec<PatchSource>,
}

/// Departing wavefront of every tile, `Γ · E_inc` per cell, summed over all
/// bounce orders. Absorbing tiles report zero amplitudes.
pub fn sense_departing(scene: &RoomScene, cfg: &PropagationConfig) -> Result<Vec<SensedTile>, PweError> {
    let (scat, fields) = em::surface_fields(scene, cfg)?;
    let mut out = Vec::with_capacity(scene.tiles.len());
    for t in &scene.tiles {
        let mut patches: Vec<PatchSource> = t
            .cell_positions()
            .into_iter()
            .map(|position| PatchSource { position, normal: t.normal(), area: t.cell_area(), amplitude: Complex64::default() })
            .collect();
        if let Some(i) = scat.iter().position(|s| s.owner == t.id) {
            for ((p, g), e) in patches.iter_mut().zip(&scat[i].gamma).zip(&fields[i].front) {
                p.amplitude = g * e;
            }
        }
        out.push(SensedTile { tile: t.id.clone(), patches });
    }
    Ok(out)
}

/// Secondary sources to inject into the second scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SensedDeployment {
    pub tiles: Vec<SensedTile>,
}

impl SensedDeployment {
    /// Field of the injected sources at `points`, with line of sight in
    /// `scene` (each tile ignores its own placement).
    pub fn field(&self, scene: &RoomScene, points: &[Vec3], k: f64) -> Result<Vec<Complex64>, PweError> {
        let owners: Vec<&str> = self.tiles.iter().flat_map(|t| t.patches.iter().map(|_| t.tile.as_str())).collect();
        let patches: Vec<PatchSource> = self.tiles.iter().flat_map(|t| t.patches.iter().copied()).collect();
        Ok(em::radiate_in_scene(scene, &owners, &patches, points, k)?)
    }
}

struct Frame {
    origin: Vec3,
    axes: [Vec3; 3],
}

impl Frame {
    fn of(t: &crate::sdm::SdmTile) -> Frame {
        Frame { origin: t.center(), axes: [t.placement.u, t.placement.v, t.placement.normal] }
    }

    fn to_local(&self, p: Vec3) -> Vec3 {
        let d = p - self.origin;
        Vec3::new(d.dot(self.axes[0]), d.dot(self.axes[1]), d.dot(self.axes[2]))
    }

    fn dir_to_local(&self, d: Vec3) -> Vec3 {
        Vec3::new(d.dot(self.axes[0]), d.dot(self.axes[1]), d.dot(self.axes[2]))
    }

    fn from_local(&self, l: Vec3) -> Vec3 {
        self.origin + self.dir_from_local(l)
    }

    fn dir_from_local(&self, l: Vec3) -> Vec3 {
        self.axes[0] * l.x + self.axes[1] * l.y + self.axes[2] * l.z
    }
}

/// Senses the departing wavefront of the mapped tiles in `scene1` and
/// re-emits it from their counterparts in `scene2`. The mapping must be a
/// rigid motion: the first pair fixes the transform and every other pair
/// must agree with it to within [`LAYOUT_TOL`].
pub fn replicate_by_sensing(
    scene1: &RoomScene,
    scene2: &RoomScene,
    mapping: &[(String, String)],
    cfg: &PropagationConfig,
) -> Result<SensedDeployment, PweError> {
    let pairs = mapping
        .iter()
        .map(|(a, b)| {
            let ta = scene1.tile(a).ok_or_else(|| PweError::UnknownTile(a.clone()))?;
            let tb = scene2.tile(b).ok_or_else(|| PweError::UnknownTile(b.clone()))?;
            Ok((ta, tb))
        })
        .collect::<Result<Vec<_>, PweError>>()?;
    if let Some((a0, b0)) = pairs.first() {
        let (fa, fb) = (Frame::of(a0), Frame::of(b0));
        for (ta, tb) in &pairs {
            if ta.rows != tb.rows || ta.cols != tb.cols || (ta.pitch - tb.pitch).abs() > LAYOUT_TOL {
                return Err(PweError::LayoutMismatch(format!("{} and {} differ in cell grid", ta.id, tb.id)));
            }
            let center = fb.from_local(fa.to_local(ta.center()));
            let axes_a = [ta.placement.u, ta.placement.v, ta.placement.normal];
            let axes_b = [tb.placement.u, tb.placement.v, tb.placement.normal];
            let axes_ok = axes_a
                .iter()
                .zip(&axes_b)
                .all(|(&x, &y)| fb.dir_from_local(fa.dir_to_local(x)).distance(y) <= LAYOUT_TOL);
            if center.distance(tb.center()) > LAYOUT_TOL || !axes_ok {
                return Err(PweError::LayoutMismatch(format!("{} does not map rigidly onto {}", ta.id, tb.id)));
            }
        }
    }
    let sensed = sense_departing(scene1, cfg)?;
    let mut tiles = Vec::with_capacity(pairs.len());
    for (ta, tb) in pairs {
        let src = sensed.iter().find(|s| s.tile == ta.id).expect("sensed every tile");
        let patches = tb
            .cell_positions()
            .into_iter()
            .zip(&src.patches)
            .map(|(position, p)| PatchSource { position, normal: tb.normal(), area: tb.cell_area(), amplitude: p.amplitude })
            .collect();
        tiles.push(SensedTile { tile: tb.id.clone(), patches });
    }
    Ok(SensedDeployment { tiles })
}
