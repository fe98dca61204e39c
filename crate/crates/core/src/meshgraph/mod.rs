//! GNN input graph: distance edges plus structured surface-to-tumor shortcut edges.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::io::Write;

use crate::loadcase::farthest_point_sample;
use crate::meshgen::{Mesh, NodeTags, Region};
use crate::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("distance threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error("distance edges exceed the cap of {cap}; raise the edge cap or lower the threshold")]
    TooManyEdges { cap: usize },
    #[error("{requested} structured edges requested but the mesh has only {available} top-surface nodes")]
    NotEnoughSurfaceNodes { requested: usize, available: usize },
    #[error("mesh has no cancer-surface nodes")]
    NoCancerSurface,
    #[error("feature field has {found} nodes, graph has {expected}")]
    FeatureLength { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    Distance,
    Structured,
}

impl EdgeKind {
    pub fn label(self) -> &'static str {
        match self {
            EdgeKind::Distance => "distance",
            EdgeKind::Structured => "structured",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphConfig {
    /// Meters.
    pub threshold: f64,
    pub n_structured: usize,
    pub max_edges: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { threshold: 0.003, n_structured: 100, max_edges: 5_000_000 }
    }
}

/// Undirected pairs `(a, b)` with `a < b` and `‖x_a − x_b‖ < threshold`, sorted.
pub fn build_distance_edges(mesh: &Mesh, threshold: f64, max_edges: usize) -> Result<Vec<(usize, usize)>, GraphError> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(GraphError::InvalidThreshold(threshold));
    }
    let cell_of = |p: &Vec3| p.map(|x| (x / threshold).floor() as i64);
    let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in mesh.nodes.iter().enumerate() {
        let c = cell_of(p);
        cells.entry([c.x, c.y, c.z]).or_default().push(i);
    }
    let mut edges = Vec::new();
    for (a, p) in mesh.nodes.iter().enumerate() {
        let c = cell_of(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = cells.get(&[c.x + dx, c.y + dy, c.z + dz]) else { continue };
                    for &b in bucket {
                        if b > a && (mesh.nodes[b] - p).norm() < threshold {
                            edges.push((a, b));
                            if edges.len() > max_edges {
                                return Err(GraphError::TooManyEdges { cap: max_edges });
                            }
                        }
                    }
                }
            }
        }
    }
    edges.sort_unstable();
    Ok(edges)
}

/// `k` farthest-point-sampled top-surface nodes, each paired with its nearest cancer-surface node.
///
/// Sampling starts from the top-surface node nearest the tumor centroid, so the result depends only on the mesh.
pub fn augment_structured_edges(mesh: &Mesh, k: usize) -> Result<Vec<(usize, usize)>, GraphError> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let top = mesh.nodes_with(NodeTags::TOP_SURFACE);
    if k > top.len() {
        return Err(GraphError::NotEnoughSurfaceNodes { requested: k, available: top.len() });
    }
    let cancer = mesh.nodes_with(NodeTags::CANCER_SURFACE);
    if cancer.is_empty() {
        return Err(GraphError::NoCancerSurface);
    }
    let tumor = mesh.region_centroid(Region::Cancer).unwrap_or_else(|| mesh.nodes[cancer[0]]);
    let nearest_in = |set: &[usize], p: Vec3| {
        *set.iter()
            .min_by(|&&a, &&b| (mesh.nodes[a] - p).norm().total_cmp(&(mesh.nodes[b] - p).norm()).then(a.cmp(&b)))
            .expect("non-empty set")
    };
    let start = nearest_in(&top, tumor);
    let mut chosen = vec![start];
    chosen.extend(farthest_point_sample(mesh, &top, &[start], k - 1));
    Ok(chosen
        .into_iter()
        .map(|t| {
            let c = nearest_in(&cancer, mesh.nodes[t]);
            (t.min(c), t.max(c))
        })
        .collect())
}

/// CSR adjacency over mesh nodes with per-node 3-component features.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationGraph {
    pub n_nodes: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    /// Kind of each stored (directed) CSR entry.
    pub edge_kind: Vec<EdgeKind>,
    pub node_features: Vec<Vec3>,
}

impl DeformationGraph {
    /// Union of the two edge sets; a pair present in both is kept once, as structured.
    pub fn from_edges(n_nodes: usize, distance: &[(usize, usize)], structured: &[(usize, usize)]) -> Self {
        let mut merged: HashMap<(usize, usize), EdgeKind> = HashMap::new();
        for &(a, b) in distance {
            merged.insert((a.min(b), a.max(b)), EdgeKind::Distance);
        }
        for &(a, b) in structured {
            merged.insert((a.min(b), a.max(b)), EdgeKind::Structured);
        }
        let mut directed: Vec<(usize, usize, EdgeKind)> = Vec::with_capacity(2 * merged.len());
        for (&(a, b), &kind) in &merged {
            if a != b {
                directed.push((a, b, kind));
                directed.push((b, a, kind));
            }
        }
        directed.sort_unstable();
        let mut row_ptr = vec![0; n_nodes + 1];
        for &(a, _, _) in &directed {
            row_ptr[a + 1] += 1;
        }
        for i in 0..n_nodes {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n_nodes,
            row_ptr,
            col_idx: directed.iter().map(|e| e.1).collect(),
            edge_kind: directed.iter().map(|e| e.2).collect(),
            node_features: vec![Vec3::zeros(); n_nodes],
        }
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[v]..self.row_ptr[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.row_ptr[v + 1] - self.row_ptr[v]
    }

    /// Undirected edge count.
    pub fn n_edges(&self) -> usize {
        self.col_idx.len() / 2
    }

    pub fn count_kind(&self, kind: EdgeKind) -> usize {
        self.edge_kind.iter().filter(|k| **k == kind).count() / 2
    }

    /// Undirected edges `(a, b, kind)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize, EdgeKind)> {
        (0..self.n_nodes)
            .flat_map(|a| {
                (self.row_ptr[a]..self.row_ptr[a + 1])
                    .filter(move |&p| self.col_idx[p] > a)
                    .map(move |p| (a, self.col_idx[p], self.edge_kind[p]))
            })
            .collect()
    }

    pub fn set_features(&mut self, features: &[Vec3]) -> Result<(), GraphError> {
        if features.len() != self.n_nodes {
            return Err(GraphError::FeatureLength { expected: self.n_nodes, found: features.len() });
        }
        self.node_features.copy_from_slice(features);
        Ok(())
    }

    /// Same topology with nodes relabelled so that old node `v` becomes `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let edges: Vec<_> = self.edges();
        let distance: Vec<_> =
            edges.iter().filter(|e| e.2 == EdgeKind::Distance).map(|&(a, b, _)| (perm[a], perm[b])).collect();
        let structured: Vec<_> =
            edges.iter().filter(|e| e.2 == EdgeKind::Structured).map(|&(a, b, _)| (perm[a], perm[b])).collect();
        let mut g = Self::from_edges(self.n_nodes, &distance, &structured);
        for (v, f) in self.node_features.iter().enumerate() {
            g.node_features[perm[v]] = *f;
        }
        g
    }

    /// Breadth-first hop distances from a set of source nodes (`usize::MAX` when unreachable).
    pub fn hop_distances(&self, sources: &[usize]) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n_nodes];
        let mut queue = VecDeque::new();
        for &s in sources {
            dist[s] = 0;
            queue.push_back(s);
        }
        while let Some(v) = queue.pop_front() {
            for &w in self.neighbors(v) {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }
}

/// Topology for `mesh` under `config`, with zero features.
pub fn build_graph(mesh: &Mesh, config: &GraphConfig) -> Result<DeformationGraph, GraphError> {
    let distance = build_distance_edges(mesh, config.threshold, config.max_edges)?;
    let structured = augment_structured_edges(mesh, config.n_structured)?;
    Ok(DeformationGraph::from_edges(mesh.n_nodes(), &distance, &structured))
}

/// Topology for `mesh` with the observed surface displacements as node features.
pub fn assemble_graph(mesh: &Mesh, surface: &[Vec3], config: &GraphConfig) -> Result<DeformationGraph, GraphError> {
    let mut g = build_graph(mesh, config)?;
    g.set_features(surface)?;
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    pub n_nodes: usize,
    pub n_distance: usize,
    pub n_structured: usize,
    pub min_degree: usize,
    pub mean_degree: f64,
    pub max_degree: usize,
    pub isolated: usize,
    pub components: usize,
    /// Fewest hops from any top-surface node to any cancer-surface node.
    pub surface_to_cancer_hops: Option<usize>,
}

impl GraphStats {
    pub fn of(graph: &DeformationGraph, mesh: &Mesh) -> Self {
        let degrees: Vec<usize> = (0..graph.n_nodes).map(|v| graph.degree(v)).collect();
        let mut components = 0;
        let mut seen = vec![false; graph.n_nodes];
        for v in 0..graph.n_nodes {
            if !seen[v] {
                components += 1;
                for (w, d) in graph.hop_distances(&[v]).into_iter().enumerate() {
                    if d != usize::MAX {
                        seen[w] = true;
                    }
                }
            }
        }
        let top = mesh.nodes_with(NodeTags::TOP_SURFACE);
        let hops = graph.hop_distances(&top);
        let surface_to_cancer_hops =
            mesh.nodes_with(NodeTags::CANCER_SURFACE).iter().map(|&c| hops[c]).filter(|&d| d != usize::MAX).min();
        Self {
            n_nodes: graph.n_nodes,
            n_distance: graph.count_kind(EdgeKind::Distance),
            n_structured: graph.count_kind(EdgeKind::Structured),
            min_degree: degrees.iter().copied().min().unwrap_or(0),
            mean_degree: degrees.iter().sum::<usize>() as f64 / graph.n_nodes.max(1) as f64,
            max_degree: degrees.iter().copied().max().unwrap_or(0),
            isolated: degrees.iter().filter(|d| **d == 0).count(),
            components,
            surface_to_cancer_hops,
        }
    }
}

impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "nodes                   {}", self.n_nodes)?;
        writeln!(f, "distance edges          {}", self.n_distance)?;
        writeln!(f, "structured edges        {}", self.n_structured)?;
        writeln!(f, "degree min/mean/max     {} / {:.2} / {}", self.min_degree, self.mean_degree, self.max_degree)?;
        writeln!(f, "isolated nodes          {}", self.isolated)?;
        writeln!(f, "connected components    {}", self.components)?;
        match self.surface_to_cancer_hops {
            Some(h) => writeln!(f, "surface-to-cancer hops  {h}"),
            None => writeln!(f, "surface-to-cancer hops  unreachable"),
        }
    }
}

/// Diagnostic dump: `EDGES n` then `a b kind` lines, `NODES n` then `node tagbits` lines.
pub fn write_edge_list(graph: &DeformationGraph, mesh: &Mesh, mut out: impl Write) -> Result<(), GraphError> {
    let edges = graph.edges();
    writeln!(out, "EDGES {}", edges.len())?;
    for (a, b, kind) in edges {
        writeln!(out, "{a} {b} {}", kind.label())?;
    }
    writeln!(out, "NODES {}", mesh.n_nodes())?;
    for (i, tags) in mesh.node_tags.iter().enumerate() {
        writeln!(out, "{i} {}", tags.bits())?;
    }
    Ok(())
}
