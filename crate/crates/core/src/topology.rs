//! Communication graphs, switching libraries, cluster partitions and the
//! component structure of Laplacian differences.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::error::{Error, Result};
use crate::numerics::{ensure_finite, Matrix, Vector};

/// Entries of a Laplacian difference below this magnitude are treated as absent links.
pub const EDGE_TOL: f64 = 1e-12;

/// Undirected weighted graph on nodes `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    adjacency: Matrix,
}

impl WeightedGraph {
    pub fn new(adjacency: Matrix) -> Result<Self> {
        if !adjacency.is_square() {
            return Err(Error::invalid("adjacency must be square"));
        }
        ensure_finite(&adjacency, "adjacency")?;
        let n = adjacency.nrows();
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::invalid(format!("self-loop at node {}", i + 1)));
            }
            for j in 0..n {
                let w = adjacency[(i, j)];
                if w < 0.0 {
                    return Err(Error::invalid(format!("negative weight on ({}, {})", i + 1, j + 1)));
                }
                if w != adjacency[(j, i)] {
                    return Err(Error::invalid(format!("asymmetric weight on ({}, {})", i + 1, j + 1)));
                }
            }
        }
        Ok(WeightedGraph { adjacency })
    }

    pub fn empty(n: usize) -> Self {
        WeightedGraph {
            adjacency: Matrix::zeros(n, n),
        }
    }

    /// Builds a graph from 0-based `(i, j, weight)` triples.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut a = Matrix::zeros(n, n);
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::invalid(format!("edge ({}, {}) outside 1..={n}", i + 1, j + 1)));
            }
            if i == j {
                return Err(Error::invalid(format!("self-loop at node {}", i + 1)));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("edge ({}, {}) has weight {w}", i + 1, j + 1)));
            }
            if a[(i, j)] != 0.0 {
                return Err(Error::invalid(format!("duplicate edge ({}, {})", i + 1, j + 1)));
            }
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
        Ok(WeightedGraph { adjacency: a })
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[(i, j)]
    }

    /// Edges `(i, j, w)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let w = self.adjacency[(i, j)];
                if w > 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n()).filter(|&j| self.adjacency[(i, j)] > 0.0).collect()
    }

    /// Copy with edge `{i, j}` removed if present, or added with weight `w` otherwise.
    pub fn toggled(&self, i: usize, j: usize, w: f64) -> Result<Self> {
        let mut a = self.adjacency.clone();
        let new = if a[(i, j)] > 0.0 { 0.0 } else { w };
        a[(i, j)] = new;
        a[(j, i)] = new;
        WeightedGraph::new(a)
    }
}

/// `l_ii = sum_j a_ij`, `l_ij = -a_ij`.
pub fn laplacian(g: &WeightedGraph) -> Matrix {
    let a = g.adjacency();
    let n = g.n();
    let mut l = -a.clone();
    for i in 0..n {
        l[(i, i)] = a.row(i).sum();
    }
    l
}

pub fn is_connected(g: &WeightedGraph) -> bool {
    let n = g.n();
    if n == 0 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for v in g.neighbors(u) {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Number of neighbours of node `i`.
pub fn node_degree(g: &WeightedGraph, i: usize) -> Result<usize> {
    if i >= g.n() {
        return Err(Error::invalid(format!("node {} outside 1..={}", i + 1, g.n())));
    }
    Ok(g.neighbors(i).len())
}

/// Ordered switching modes on a common node set; mode 0 is the normal mode.
#[derive(Debug, Clone)]
pub struct TopologyLibrary {
    modes: Vec<WeightedGraph>,
    laplacians: Vec<Matrix>,
}

impl TopologyLibrary {
    pub fn new(modes: Vec<WeightedGraph>) -> Result<Self> {
        let lib = Self::without_connectivity_check(modes)?;
        for (q, g) in lib.modes.iter().enumerate() {
            if !is_connected(g) {
                return Err(Error::invalid(format!("mode {} is not connected", q + 1)));
            }
        }
        Ok(lib)
    }

    /// Skips the connectivity requirement; meant for degenerate test fixtures.
    pub fn without_connectivity_check(modes: Vec<WeightedGraph>) -> Result<Self> {
        let Some(first) = modes.first() else {
            return Err(Error::invalid("topology library needs at least one mode"));
        };
        let n = first.n();
        if modes.iter().any(|g| g.n() != n) {
            return Err(Error::invalid("all modes must share the node count"));
        }
        let laplacians = modes.iter().map(laplacian).collect();
        Ok(TopologyLibrary { modes, laplacians })
    }

    pub fn n(&self) -> usize {
        self.modes[0].n()
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn mode(&self, q: usize) -> Result<&WeightedGraph> {
        self.modes
            .get(q)
            .ok_or_else(|| Error::invalid(format!("mode {} outside 1..={}", q + 1, self.len())))
    }

    pub fn modes(&self) -> &[WeightedGraph] {
        &self.modes
    }

    pub fn laplacian(&self, q: usize) -> Result<&Matrix> {
        self.laplacians
            .get(q)
            .ok_or_else(|| Error::invalid(format!("mode {} outside 1..={}", q + 1, self.len())))
    }
}

/// `L_q - L_0` for a non-normal mode `q`.
pub fn delta_laplacian(lib: &TopologyLibrary, q: usize) -> Result<Matrix> {
    if q == 0 {
        return Err(Error::invalid("delta Laplacian needs a non-normal mode"));
    }
    Ok(lib.laplacian(q)? - lib.laplacian(0)?)
}

/// Right-continuous piecewise-constant mode schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSignal {
    breakpoints: Vec<f64>,
    modes: Vec<usize>,
}

impl SwitchingSignal {
    pub fn constant(mode: usize) -> Self {
        SwitchingSignal {
            breakpoints: vec![0.0],
            modes: vec![mode],
        }
    }

    /// `modes[k]` is active on `[breakpoints[k], breakpoints[k + 1])`.
    pub fn new(breakpoints: Vec<f64>, modes: Vec<usize>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != modes.len() {
            return Err(Error::invalid("switching signal needs one mode per breakpoint"));
        }
        if breakpoints.iter().any(|t| !t.is_finite()) || breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("breakpoints must be finite and strictly increasing"));
        }
        Ok(SwitchingSignal { breakpoints, modes })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn mode_at(&self, t: f64) -> usize {
        let k = self.breakpoints.partition_point(|&b| b <= t);
        self.modes[k.saturating_sub(1)]
    }

    /// `(start, stop, mode)` pieces covering `[breakpoints[0], t_end]`.
    pub fn segments(&self, t_end: f64) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::new();
        for k in 0..self.breakpoints.len() {
            let start = self.breakpoints[k];
            if start >= t_end {
                break;
            }
            let stop = self.breakpoints.get(k + 1).copied().unwrap_or(t_end).min(t_end);
            out.push((start, stop, self.modes[k]));
        }
        out
    }

    /// Copy with every breakpoint rounded to the nearest multiple of `dt`.
    pub fn snapped(&self, dt: f64) -> Result<Self> {
        let bp: Vec<f64> = self
            .breakpoints
            .iter()
            .map(|&t| (t / dt).round() * dt)
            .collect();
        SwitchingSignal::new(bp, self.modes.clone())
    }
}

/// Disjoint clusters covering all nodes, with their local control centres.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPartition {
    pub clusters: Vec<Vec<usize>>,
    pub local_control_centers: Vec<usize>,
    /// Inter-cluster edges `(i, j)` with `i < j`, ascending.
    pub edge_cuts: Vec<(usize, usize)>,
}

impl ClusterPartition {
    pub fn new(g: &WeightedGraph, clusters: Vec<Vec<usize>>, local_control_centers: Vec<usize>) -> Result<Self> {
        let n = g.n();
        let mut owner = vec![usize::MAX; n];
        for (c, nodes) in clusters.iter().enumerate() {
            if nodes.is_empty() {
                return Err(Error::invalid(format!("cluster {} is empty", c + 1)));
            }
            for &v in nodes {
                if v >= n {
                    return Err(Error::invalid(format!("cluster {} names node {} outside 1..={n}", c + 1, v + 1)));
                }
                if owner[v] != usize::MAX {
                    return Err(Error::invalid(format!("node {} belongs to two clusters", v + 1)));
                }
                owner[v] = c;
            }
        }
        if let Some(v) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::invalid(format!("node {} belongs to no cluster", v + 1)));
        }
        if local_control_centers.len() != clusters.len() {
            return Err(Error::invalid("need one local control centre per cluster"));
        }
        for (c, &center) in local_control_centers.iter().enumerate() {
            if center >= n || owner[center] != c {
                return Err(Error::invalid(format!(
                    "local control centre {} is not in cluster {}",
                    center + 1,
                    c + 1
                )));
            }
        }
        let clusters = clusters
            .into_iter()
            .map(|mut v| {
                v.sort_unstable();
                v
            })
            .collect();
        let edge_cuts = g
            .edges()
            .into_iter()
            .filter(|&(i, j, _)| owner[i] != owner[j])
            .map(|(i, j, _)| (i, j))
            .collect();
        Ok(ClusterPartition {
            clusters,
            local_control_centers,
            edge_cuts,
        })
    }

    pub fn cluster_of(&self, node: usize) -> Option<usize> {
        self.clusters.iter().position(|c| c.binary_search(&node).is_ok())
    }

    /// Edge cuts with one end in cluster `c`.
    pub fn cuts_of(&self, c: usize) -> Vec<(usize, usize)> {
        let nodes = &self.clusters[c];
        self.edge_cuts
            .iter()
            .copied()
            .filter(|(i, j)| nodes.binary_search(i).is_ok() || nodes.binary_search(j).is_ok())
            .collect()
    }
}

/// Per-cluster view of a switching library.
#[derive(Debug, Clone)]
pub struct ClusterBlock {
    pub index: usize,
    pub nodes: Vec<usize>,
    /// Cluster nodes with at least one inter-cluster edge, ascending.
    pub boundary: Vec<usize>,
    /// Intra-cluster Laplacian block `L^i` for every mode.
    pub intra_laplacian: Vec<Matrix>,
    /// Coupling blocks `L^{ij}` (normal mode), keyed by neighbouring cluster.
    pub coupling: BTreeMap<usize, Matrix>,
    /// `2 N_i x |boundary|`; column k is the velocity row of `boundary[k]`.
    pub e: Matrix,
}

impl ClusterBlock {
    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    /// Local position of a global node index, if it belongs to this cluster.
    pub fn local_index(&self, node: usize) -> Option<usize> {
        self.nodes.binary_search(&node).ok()
    }

    /// Cluster state `col(x_i, v_i)` extracted from a full state `col(x, v)`.
    pub fn restrict_state(&self, full: &Vector) -> Vector {
        let n = full.len() / 2;
        let k = self.size();
        let mut out = Vector::zeros(2 * k);
        for (a, &v) in self.nodes.iter().enumerate() {
            out[a] = full[v];
            out[k + a] = full[n + v];
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PartitionedModel {
    pub n: usize,
    pub partition: ClusterPartition,
    pub blocks: Vec<ClusterBlock>,
}

/// Splits every mode of `lib` along `clusters` and builds the coupling matrices `E^i`.
///
/// Inter-cluster links must be identical in every mode.
pub fn partition(lib: &TopologyLibrary, clusters: &ClusterPartition) -> Result<PartitionedModel> {
    let n = lib.n();
    let normal = lib.mode(0)?;
    let check = ClusterPartition::new(normal, clusters.clusters.clone(), clusters.local_control_centers.clone())?;
    if check.edge_cuts != clusters.edge_cuts {
        return Err(Error::invalid("partition edge cuts do not match the normal-mode graph"));
    }
    let owner: Vec<usize> = (0..n).map(|v| clusters.cluster_of(v).unwrap_or(usize::MAX)).collect();
    for q in 1..lib.len() {
        let g = lib.mode(q)?;
        for i in 0..n {
            for j in i + 1..n {
                if owner[i] != owner[j] && g.weight(i, j) != normal.weight(i, j) {
                    return Err(Error::invalid(format!(
                        "mode {} changes inter-cluster link ({}, {})",
                        q + 1,
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
    }
    let l0 = lib.laplacian(0)?;
    let mut blocks = Vec::with_capacity(clusters.clusters.len());
    for (c, nodes) in clusters.clusters.iter().enumerate() {
        let k = nodes.len();
        let intra_laplacian = (0..lib.len())
            .map(|q| {
                let l = &lib.laplacians[q];
                Matrix::from_fn(k, k, |a, b| l[(nodes[a], nodes[b])])
            })
            .collect();
        let mut coupling = BTreeMap::new();
        for (d, other) in clusters.clusters.iter().enumerate() {
            if d == c {
                continue;
            }
            let blk = Matrix::from_fn(k, other.len(), |a, b| l0[(nodes[a], other[b])]);
            if blk.iter().any(|&v| v != 0.0) {
                coupling.insert(d, blk);
            }
        }
        let boundary: Vec<usize> = nodes
            .iter()
            .copied()
            .filter(|&v| normal.neighbors(v).iter().any(|&u| owner[u] != c))
            .collect();
        let mut e = Matrix::zeros(2 * k, boundary.len());
        for (col, &b) in boundary.iter().enumerate() {
            let local = nodes.binary_search(&b).expect("boundary node in cluster");
            e[(k + local, col)] = 1.0;
        }
        blocks.push(ClusterBlock {
            index: c,
            nodes: nodes.clone(),
            boundary,
            intra_laplacian,
            coupling,
            e,
        });
    }
    Ok(PartitionedModel {
        n,
        partition: clusters.clone(),
        blocks,
    })
}

impl PartitionedModel {
    /// `x^d_i`: for each boundary node k, `alpha * sum_l a_kl x_l` over neighbours outside the cluster.
    pub fn coupling_input(&self, lib: &TopologyLibrary, i: usize, full: &Vector, alpha: f64) -> Vector {
        let blk = &self.blocks[i];
        let g = &lib.modes()[0];
        let mut out = Vector::zeros(blk.boundary.len());
        for (col, &k) in blk.boundary.iter().enumerate() {
            let mut acc = 0.0;
            for l in g.neighbors(k) {
                if blk.local_index(l).is_none() {
                    acc += g.weight(k, l) * full[l];
                }
            }
            out[col] = alpha * acc;
        }
        out
    }

    /// `sum_j A^{ij} x_j` evaluated directly from the coupling blocks.
    pub fn coupling_term(&self, i: usize, full: &Vector, alpha: f64) -> Vector {
        let blk = &self.blocks[i];
        let k = blk.size();
        let mut out = Vector::zeros(2 * k);
        for (&d, lij) in &blk.coupling {
            let other = &self.partition.clusters[d];
            let xj = Vector::from_iterator(other.len(), other.iter().map(|&v| full[v]));
            let contrib = lij * xj * (-alpha);
            let mut rows = out.rows_mut(k, k);
            rows += &contrib;
        }
        out
    }
}

/// Connected components of the link pattern of a Laplacian difference.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaDecomposition {
    pub delta_l: Matrix,
    /// Components with at least two nodes, each ascending, ordered by first node.
    pub components: Vec<Vec<usize>>,
    pub singletons: Vec<usize>,
    /// `permutation[k]` is the node placed at position k of the block-diagonal form.
    pub permutation: Vec<usize>,
    pub blocks: Vec<Matrix>,
}

impl DeltaDecomposition {
    /// Permutation matrix `P` with `P * delta_l * P^T` block diagonal.
    pub fn permutation_matrix(&self) -> Matrix {
        let n = self.permutation.len();
        let mut p = Matrix::zeros(n, n);
        for (k, &v) in self.permutation.iter().enumerate() {
            p[(k, v)] = 1.0;
        }
        p
    }

    /// `P^T blockdiag(blocks, 0) P`, which should reproduce `delta_l`.
    pub fn reassemble(&self) -> Matrix {
        let n = self.permutation.len();
        let mut bd = Matrix::zeros(n, n);
        let mut offset = 0;
        for b in &self.blocks {
            let k = b.nrows();
            bd.view_mut((offset, offset), (k, k)).copy_from(b);
            offset += k;
        }
        let p = self.permutation_matrix();
        p.transpose() * bd * p
    }

    /// Nodes incident to a switched link.
    pub fn switched_nodes(&self) -> BTreeSet<usize> {
        self.components.iter().flatten().copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

pub fn components_of_delta(delta_l: &Matrix) -> Result<DeltaDecomposition> {
    if !delta_l.is_square() {
        return Err(Error::invalid("delta Laplacian must be square"));
    }
    ensure_finite(delta_l, "delta Laplacian")?;
    let n = delta_l.nrows();
    let scale = delta_l.amax().max(1.0);
    if (delta_l - delta_l.transpose()).amax() > 1e-10 * scale {
        return Err(Error::invalid("delta Laplacian must be symmetric"));
    }
    for i in 0..n {
        if delta_l.row(i).sum().abs() > 1e-9 * scale {
            return Err(Error::invalid(format!("row {} of delta Laplacian does not sum to zero", i + 1)));
        }
    }
    let linked = |i: usize, j: usize| i != j && delta_l[(i, j)].abs() > EDGE_TOL;
    let mut comp = vec![usize::MAX; n];
    let mut components = Vec::new();
    let mut singletons = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut members = vec![start];
        comp[start] = id;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if comp[v] == usize::MAX && linked(u, v) {
                    comp[v] = id;
                    members.push(v);
                    queue.push_back(v);
                }
            }
        }
        if members.len() == 1 {
            comp[start] = usize::MAX - 1;
            singletons.push(start);
        } else {
            members.sort_unstable();
            components.push(members);
        }
    }
    let mut permutation: Vec<usize> = components.iter().flatten().copied().collect();
    permutation.extend(singletons.iter().copied());
    let blocks = components
        .iter()
        .map(|c| Matrix::from_fn(c.len(), c.len(), |a, b| delta_l[(c[a], c[b])]))
        .collect();
    Ok(DeltaDecomposition {
        delta_l: delta_l.clone(),
        components,
        singletons,
        permutation,
        blocks,
    })
}
