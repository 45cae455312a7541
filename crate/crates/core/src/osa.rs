//! Orthogonal subspace alignment: makes per-point normal-space bases
//! globally consistent by choosing a sign for each basis and an SO(l)
//! rotation along a spanning tree of the data.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::lin_geom::{expm_skew, knn_all, skew_from_params, LocalFrame};
use crate::{Configuration, Error, Result};

const MODULE: &str = "osa";

/// Undirected graph with edges stored once as `(i, j, w)`, `i < j`, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl WeightedGraph {
    pub fn new(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut e: Vec<(usize, usize, f64)> = edges
            .into_iter()
            .filter(|(a, b, _)| a != b)
            .map(|(a, b, w)| (a.min(b), a.max(b), w))
            .collect();
        e.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)).then(x.2.total_cmp(&y.2)));
        e.dedup_by(|x, y| x.0 == y.0 && x.1 == y.1);
        WeightedGraph {
            num_nodes,
            edges: e,
        }
    }

    pub fn is_connected(&self) -> bool {
        let mut uf = UnionFind::new(self.num_nodes);
        let mut components = self.num_nodes;
        for &(a, b, _) in &self.edges {
            if uf.union(a, b) {
                components -= 1;
            }
        }
        components <= 1
    }

    pub fn total_weight(edges: &[(usize, usize, f64)]) -> f64 {
        edges.iter().map(|e| e.2).sum()
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Union of `H`-nearest-neighbor edges weighted by distance. `H` is doubled
/// (capped at `N - 1`) until the graph is connected. Returns the graph and
/// the `H` actually used.
pub fn build_neighbor_graph(points: &[Configuration], h: usize) -> Result<(WeightedGraph, usize)> {
    let n = points.len();
    if n < 2 {
        return Err(Error::param(MODULE, "neighbor graph needs at least 2 points"));
    }
    if h == 0 {
        return Err(Error::param(MODULE, "H must be at least 1"));
    }
    let mut h = h.min(n - 1);
    loop {
        let nn = knn_all(points, h)?;
        let graph = WeightedGraph::new(
            n,
            nn.iter().enumerate().flat_map(|(i, nb)| {
                nb.iter()
                    .map(move |&j| (i, j, (&points[i] - &points[j]).norm()))
            }),
        );
        if graph.is_connected() || h == n - 1 {
            return Ok((graph, h));
        }
        h = (2 * h).min(n - 1);
    }
}

/// Kruskal's algorithm; equal weights are resolved by the lexicographic
/// order of `(i, j)`.
pub fn minimum_spanning_tree(graph: &WeightedGraph) -> Result<Vec<(usize, usize, f64)>> {
    let mut order: Vec<&(usize, usize, f64)> = graph.edges.iter().collect();
    order.sort_by(|a, b| a.2.total_cmp(&b.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let mut uf = UnionFind::new(graph.num_nodes);
    let mut tree = Vec::with_capacity(graph.num_nodes.saturating_sub(1));
    for &&(a, b, w) in &order {
        if uf.union(a, b) {
            tree.push((a, b, w));
        }
    }
    if graph.num_nodes > 0 && tree.len() + 1 != graph.num_nodes {
        return Err(Error::param(MODULE, "graph is disconnected, no spanning tree"));
    }
    Ok(tree)
}

/// Breadth-first orientation of a spanning tree away from `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentGraph {
    pub root: usize,
    /// Nodes in visiting order, starting with the root.
    pub order: Vec<usize>,
    pub parent: Vec<Option<usize>>,
    /// `(child, parent)` pairs in visiting order.
    pub edges: Vec<(usize, usize)>,
}

impl AlignmentGraph {
    pub fn from_tree(num_nodes: usize, tree: &[(usize, usize, f64)], root: usize) -> Result<Self> {
        if root >= num_nodes {
            return Err(Error::param(MODULE, "root out of range"));
        }
        let mut adj = vec![Vec::new(); num_nodes];
        for &(a, b, _) in tree {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj.iter_mut().for_each(|v| v.sort_unstable());
        let mut parent = vec![None; num_nodes];
        let mut seen = vec![false; num_nodes];
        let mut order = Vec::with_capacity(num_nodes);
        let mut edges = Vec::with_capacity(num_nodes.saturating_sub(1));
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some(u);
                    edges.push((v, u));
                    queue.push_back(v);
                }
            }
        }
        if order.len() != num_nodes {
            return Err(Error::param(MODULE, "tree does not reach every node"));
        }
        Ok(AlignmentGraph {
            root,
            order,
            parent,
            edges,
        })
    }
}

/// Sign pattern of one edge: `→` keeps a basis, `←` negates its first column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    KeepKeep = 0,
    KeepFlip = 1,
    FlipKeep = 2,
    FlipFlip = 3,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [
        Orientation::KeepKeep,
        Orientation::KeepFlip,
        Orientation::FlipKeep,
        Orientation::FlipFlip,
    ];

    pub fn new(flip_a: bool, flip_c: bool) -> Self {
        Self::ALL[(flip_a as usize) * 2 + flip_c as usize]
    }

    pub fn flip_a(self) -> bool {
        matches!(self, Orientation::FlipKeep | Orientation::FlipFlip)
    }

    pub fn flip_c(self) -> bool {
        matches!(self, Orientation::KeepFlip | Orientation::FlipFlip)
    }

    pub fn label(self) -> &'static str {
        ["->a->c", "->a<-c", "<-a->c", "<-a<-c"][self as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalAlignment {
    pub edge: (usize, usize),
    /// Indexed by `Orientation as usize`.
    pub rotations: [DMatrix<f64>; 4],
    pub losses: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OsaParams {
    /// Initial neighbor count of the sparse graph.
    pub h: usize,
    pub iters: usize,
    pub lr: f64,
}

impl Default for OsaParams {
    fn default() -> Self {
        OsaParams {
            h: 1,
            iters: 200,
            lr: 0.1,
        }
    }
}

/// `‖I - (V_a R)ᵀ V_c‖²_F`.
pub fn osa_loss(va: &DMatrix<f64>, r: &DMatrix<f64>, vc: &DMatrix<f64>) -> f64 {
    let l = va.ncols();
    (DMatrix::identity(l, l) - (va * r).transpose() * vc).norm_squared()
}

/// `(‖V Vᵀ E‖², ‖E Eᵀ V‖²)` for two orthonormal bases.
pub fn projector_losses(v: &DMatrix<f64>, e: &DMatrix<f64>) -> (f64, f64) {
    (
        (v * v.transpose() * e).norm_squared(),
        (e * e.transpose() * v).norm_squared(),
    )
}

pub fn flip_first_column(v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = v.clone();
    out.column_mut(0).neg_mut();
    out
}

fn check_orthonormal(v: &DMatrix<f64>, what: &str) -> Result<()> {
    let l = v.ncols();
    if l == 0 {
        return Err(Error::param(MODULE, format!("{what} has no columns")));
    }
    if (v.transpose() * v - DMatrix::identity(l, l)).norm() > 1e-6 {
        return Err(Error::param(MODULE, format!("{what} is not column-orthonormal")));
    }
    Ok(())
}

/// Fits, for each of the four sign patterns, a rotation `R = exp(L)` that
/// minimizes [`osa_loss`] by finite-difference gradient descent started
/// near the identity. For `l = 1` the only rotation is `1`.
pub fn align_local_pair(
    va: &DMatrix<f64>,
    vc: &DMatrix<f64>,
    iters: usize,
    lr: f64,
) -> Result<LocalAlignment> {
    check_orthonormal(va, "V_a")?;
    check_orthonormal(vc, "V_c")?;
    if va.shape() != vc.shape() {
        return Err(Error::param(MODULE, "bases have different shapes"));
    }
    let l = va.ncols();
    let np = l * (l - 1) / 2;
    let flipped_a = flip_first_column(va);
    let flipped_c = flip_first_column(vc);
    let mut rotations: [DMatrix<f64>; 4] = std::array::from_fn(|_| DMatrix::identity(l, l));
    let mut losses = [0.0; 4];
    for o in Orientation::ALL {
        let a = if o.flip_a() { &flipped_a } else { va };
        let c = if o.flip_c() { &flipped_c } else { vc };
        let loss_at = |p: &[f64]| -> Result<(f64, DMatrix<f64>)> {
            let r = expm_skew(&skew_from_params(l, p))?;
            Ok((osa_loss(a, &r, c), r))
        };
        let mut theta: Vec<f64> = (0..np)
            .map(|k| if k % 2 == 0 { 1e-4 } else { -1e-4 })
            .collect();
        if np > 0 {
            let fd = 1e-6;
            let mut grad = vec![0.0; np];
            for _ in 0..iters {
                for k in 0..np {
                    let mut p = theta.clone();
                    p[k] += fd;
                    let fp = loss_at(&p)?.0;
                    p[k] -= 2.0 * fd;
                    let fm = loss_at(&p)?.0;
                    grad[k] = (fp - fm) / (2.0 * fd);
                }
                for (t, g) in theta.iter_mut().zip(&grad) {
                    *t -= lr * g;
                }
            }
        }
        let (loss, r) = loss_at(&theta)?;
        if !loss.is_finite() {
            return Err(Error::Numerical("non-finite alignment loss".into()));
        }
        rotations[o as usize] = r;
        losses[o as usize] = loss;
    }
    Ok(LocalAlignment {
        edge: (0, 0),
        rotations,
        losses,
    })
}

#[derive(Debug, Clone)]
pub struct OsaResult {
    pub aligned: Vec<DMatrix<f64>>,
    pub graph: AlignmentGraph,
    /// One per entry of `graph.edges`.
    pub alignments: Vec<LocalAlignment>,
    /// Whether each node's basis had its first column negated.
    pub flipped: Vec<bool>,
    /// Orientation chosen for each entry of `graph.edges`.
    pub chosen: Vec<Orientation>,
    pub h_used: usize,
}

impl OsaResult {
    /// Post-alignment `L_osa(V_a, I, V_c)` for every tree edge.
    pub fn edge_losses(&self) -> Vec<f64> {
        self.graph
            .edges
            .iter()
            .map(|&(a, c)| {
                let l = self.aligned[a].ncols();
                osa_loss(&self.aligned[a], &DMatrix::identity(l, l), &self.aligned[c])
            })
            .collect()
    }

    /// `edge_a,edge_c,chosen_orientation,loss` with the local loss of the
    /// chosen orientation.
    pub fn edges_csv(&self) -> String {
        let mut s = String::from("edge_a,edge_c,chosen_orientation,loss\n");
        for ((&(a, c), al), o) in self.graph.edges.iter().zip(&self.alignments).zip(&self.chosen) {
            let _ = writeln!(s, "{a},{c},{},{:?}", o.label(), al.losses[*o as usize]);
        }
        s
    }
}

/// Full alignment pass rooted at point 0.
pub fn osa_align(
    points: &[Configuration],
    frames: &[LocalFrame],
    params: &OsaParams,
) -> Result<OsaResult> {
    if points.len() != frames.len() {
        return Err(Error::param(MODULE, "one frame per point required"));
    }
    let bases: Vec<DMatrix<f64>> = frames.iter().map(|f| f.normal_basis()).collect();
    if let Some(f) = frames.first() {
        if frames.iter().any(|g| g.codim != f.codim) {
            return Err(Error::param(MODULE, "frames must share one codimension"));
        }
    }
    osa_align_bases(points, &bases, params)
}

/// [`osa_align`] on explicit `d x l` bases.
pub fn osa_align_bases(
    points: &[Configuration],
    bases: &[DMatrix<f64>],
    params: &OsaParams,
) -> Result<OsaResult> {
    let n = points.len();
    let (graph, h_used) = build_neighbor_graph(points, params.h)?;
    let tree = minimum_spanning_tree(&graph)?;
    let dag = AlignmentGraph::from_tree(n, &tree, 0)?;

    let mut alignments = Vec::with_capacity(dag.edges.len());
    for &(child, parent) in &dag.edges {
        let mut al = align_local_pair(&bases[child], &bases[parent], params.iters, params.lr)?;
        al.edge = (child, parent);
        alignments.push(al);
    }

    let l = bases[0].ncols();
    let mut flipped = vec![false; n];
    let mut global: Vec<DMatrix<f64>> = vec![DMatrix::identity(l, l); n];
    let mut aligned = bases.to_vec();
    let mut chosen = Vec::with_capacity(dag.edges.len());
    // BFS order guarantees the parent is committed before its children.
    for (&(child, parent), al) in dag.edges.iter().zip(&alignments) {
        let keep = Orientation::new(false, flipped[parent]);
        let flip = Orientation::new(true, flipped[parent]);
        let o = if al.losses[keep as usize] <= al.losses[flip as usize] {
            keep
        } else {
            flip
        };
        flipped[child] = o.flip_a();
        global[child] = &al.rotations[o as usize] * &global[parent];
        let base = if flipped[child] {
            flip_first_column(&bases[child])
        } else {
            bases[child].clone()
        };
        aligned[child] = base * &global[child];
        chosen.push(o);
    }
    Ok(OsaResult {
        aligned,
        graph: dag,
        alignments,
        flipped,
        chosen,
        h_used,
    })
}
