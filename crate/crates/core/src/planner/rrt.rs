//! RRT* on one constraint manifold at a time, chained across a sequence of
//! manifolds.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifold::{ImplicitManifold, Intersection, ParaboloidConstraint, SphereConstraint};
use crate::dataset::format_row;
use crate::ecomann::{project, ProjectionParams};
use crate::eval::SampleBox;
use crate::{Configuration, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RrtParams {
    /// Maximum extension length `δ`.
    pub step: f64,
    pub rewire_radius: f64,
    pub max_nodes: usize,
    /// Probability of extending toward the intersection with the next manifold.
    pub goal_bias: f64,
}

impl Default for RrtParams {
    fn default() -> Self {
        RrtParams {
            step: 0.2,
            rewire_radius: 0.5,
            max_nodes: 5000,
            goal_bias: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanningProblem {
    /// `M₁ … M_{m+1}`; stage `i` moves on `M_i` until it reaches `M_{i+1}`.
    pub manifolds: Vec<Arc<dyn ImplicitManifold>>,
    pub q_start: Configuration,
    /// One box per stage, or a single box shared by all stages.
    pub sample_boxes: Vec<SampleBox>,
    pub on_manifold_tol: f64,
    pub reach_tol: f64,
    pub rrt: RrtParams,
    pub seed: u64,
}

impl PlanningProblem {
    pub fn stages(&self) -> usize {
        self.manifolds.len().saturating_sub(1)
    }

    fn sample_box(&self, stage: usize) -> &SampleBox {
        &self.sample_boxes[stage.min(self.sample_boxes.len() - 1)]
    }

    fn projection(&self) -> ProjectionParams {
        ProjectionParams {
            tol: 0.1 * self.on_manifold_tol.min(self.reach_tol),
            ..ProjectionParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.manifolds.len() < 2 {
            return Err(Error::Planning("need at least two manifolds".into()));
        }
        if !(self.on_manifold_tol > 0.0) || !(self.reach_tol > 0.0) {
            return Err(Error::Planning("tolerances must be positive".into()));
        }
        if self.sample_boxes.is_empty() {
            return Err(Error::Planning("no sampling box".into()));
        }
        let d = self.q_start.len();
        if self.manifolds.iter().any(|m| m.ambient_dim() != d)
            || self.sample_boxes.iter().any(|b| b.dim() != d)
        {
            return Err(Error::Planning("dimension mismatch between start, manifolds and boxes".into()));
        }
        let r = self.manifolds[0].residual(&self.q_start);
        if r > self.on_manifold_tol {
            return Err(Error::Planning(format!(
                "start is off the first manifold (residual {r})"
            )));
        }
        let p = &self.rrt;
        if !(p.step > 0.0) || !(p.rewire_radius > 0.0) || p.max_nodes == 0 {
            return Err(Error::Planning("invalid RRT parameters".into()));
        }
        if !(0.0..=1.0).contains(&p.goal_bias) {
            return Err(Error::Planning("goal bias must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub q: Configuration,
    pub parent: Option<usize>,
    /// Path length from the root.
    pub cost: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    children: Vec<Vec<usize>>,
}

impl Tree {
    fn with_root(q: Configuration) -> Self {
        Tree {
            nodes: vec![TreeNode {
                q,
                parent: None,
                cost: 0.0,
            }],
            children: vec![Vec::new()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, q: Configuration, parent: usize, cost: f64) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            q,
            parent: Some(parent),
            cost,
        });
        self.children.push(Vec::new());
        self.children[parent].push(id);
        id
    }

    fn reparent(&mut self, node: usize, new_parent: usize, new_cost: f64) {
        if let Some(old) = self.nodes[node].parent {
            self.children[old].retain(|&c| c != node);
        }
        self.nodes[node].parent = Some(new_parent);
        self.children[new_parent].push(node);
        let delta = new_cost - self.nodes[node].cost;
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            self.nodes[n].cost += delta;
            stack.extend(self.children[n].iter().copied());
        }
    }

    /// Waypoints from the root to `node`.
    pub fn path_to(&self, node: usize) -> Vec<Configuration> {
        let mut out = Vec::new();
        let mut cur = Some(node);
        while let Some(n) = cur {
            out.push(self.nodes[n].q.clone());
            cur = self.nodes[n].parent;
        }
        out.reverse();
        out
    }

    /// Largest gap between each recorded cost and the summed segment
    /// lengths along its parent chain.
    pub fn cost_audit(&self) -> f64 {
        (0..self.nodes.len())
            .map(|i| {
                let path = self.path_to(i);
                let len: f64 = path.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum();
                (len - self.nodes[i].cost).abs()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub tree: Tree,
    pub reached: usize,
}

/// Edge validity: both ends are assumed on-manifold; the straight-line
/// midpoint must stay within twice the tolerance.
fn edge_valid(m: &dyn ImplicitManifold, a: &Configuration, b: &Configuration, tol: f64) -> bool {
    let mid = (a + b) * 0.5;
    m.residual(&mid) <= 2.0 * tol
}

fn nearest(tree: &Tree, q: &Configuration) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, n) in tree.nodes.iter().enumerate() {
        let d = (&n.q - q).norm_squared();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Grows an RRT* tree on `current` from `q_start` until some node lies
/// within `reach_tol` of `next`.
pub fn rrt_star_stage(
    current: &dyn ImplicitManifold,
    next: &dyn ImplicitManifold,
    q_start: &Configuration,
    problem: &PlanningProblem,
    stage: usize,
) -> Result<StageResult> {
    let (tree, reached) = grow_tree(current, next, q_start, problem, stage)?;
    match reached {
        Some(reached) => Ok(StageResult { tree, reached }),
        None => Err(Error::StageFailed {
            stage,
            nodes: tree.len(),
        }),
    }
}

fn grow_tree(
    current: &dyn ImplicitManifold,
    next: &dyn ImplicitManifold,
    q_start: &Configuration,
    problem: &PlanningProblem,
    stage: usize,
) -> Result<(Tree, Option<usize>)> {
    let tol = problem.on_manifold_tol;
    let p = &problem.rrt;
    if current.residual(q_start) > tol {
        return Err(Error::Planning(format!("stage {stage}: start is off the current manifold")));
    }
    let mut tree = Tree::with_root(q_start.clone());
    if next.residual(q_start) <= problem.reach_tol {
        return Ok((tree, Some(0)));
    }
    let proj = problem.projection();
    let both = Intersection {
        first: current,
        second: next,
    };
    let bx = problem.sample_box(stage);
    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed.wrapping_add(stage as u64 * 0x9e37));
    let mut next_res: Vec<f64> = vec![next.residual(q_start)];

    while tree.len() < p.max_nodes {
        let q_rand = if rng.random::<f64>() < p.goal_bias {
            let closest = next_res
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            match project(&both, &tree.nodes[closest].q, &proj) {
                Ok(r) if r.converged => r.q,
                _ => bx.sample(&mut rng),
            }
        } else {
            bx.sample(&mut rng)
        };
        let near = nearest(&tree, &q_rand);
        let q_near = &tree.nodes[near].q;
        let dir = &q_rand - q_near;
        let dist = dir.norm();
        if dist < 1e-12 {
            continue;
        }
        let q_steer = if dist > p.step {
            q_near + dir * (p.step / dist)
        } else {
            q_rand.clone()
        };
        let q_new = match project(current, &q_steer, &proj) {
            Ok(r) if r.converged => r.q,
            _ => continue,
        };
        if current.residual(&q_new) > tol || (&q_new - q_near).norm() > 2.0 * p.step {
            continue;
        }

        // choose the cheapest valid parent nearby
        let r2 = p.rewire_radius * p.rewire_radius;
        let neighbors: Vec<usize> = tree
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| (&n.q - &q_new).norm_squared() <= r2)
            .map(|(i, _)| i)
            .collect();
        let mut parent = None;
        let mut best = f64::INFINITY;
        for &i in neighbors.iter().chain(std::iter::once(&near)) {
            let c = tree.nodes[i].cost + (&tree.nodes[i].q - &q_new).norm();
            if c < best && edge_valid(current, &tree.nodes[i].q, &q_new, tol) {
                best = c;
                parent = Some(i);
            }
        }
        let Some(parent) = parent else { continue };
        let id = tree.push(q_new.clone(), parent, best);
        let r_next = next.residual(&q_new);
        next_res.push(r_next);

        for &i in &neighbors {
            if i == parent {
                continue;
            }
            let c = best + (&tree.nodes[i].q - &q_new).norm();
            if c + 1e-12 < tree.nodes[i].cost && edge_valid(current, &q_new, &tree.nodes[i].q, tol) {
                tree.reparent(i, id, c);
            }
        }
        if r_next <= problem.reach_tol {
            return Ok((tree, Some(id)));
        }
    }
    Ok((tree, None))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPath {
    pub stages: Vec<Vec<Configuration>>,
    pub total_cost: f64,
    pub nodes_explored: usize,
}

impl PlannedPath {
    pub fn num_waypoints(&self) -> usize {
        self.stages.iter().map(|s| s.len()).sum()
    }

    /// `stage,index,q1,…,qd` per waypoint; stages are 1-based.
    pub fn to_csv(&self) -> String {
        let d = self
            .stages
            .iter()
            .flat_map(|s| s.first())
            .map(|q| q.len())
            .next()
            .unwrap_or(0);
        let mut s = String::from("stage,index");
        for i in 1..=d {
            let _ = write!(s, ",q{i}");
        }
        s.push('\n');
        for (k, stage) in self.stages.iter().enumerate() {
            for (i, q) in stage.iter().enumerate() {
                let _ = writeln!(s, "{},{i},{}", k + 1, format_row(q.as_slice()));
            }
        }
        s
    }
}

fn path_length(points: &[Configuration]) -> f64 {
    points.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum()
}

/// Plans every stage in turn; each stage ends at its reached node followed
/// by that node projected onto the intersection with the next manifold,
/// which is also where the next stage starts.
pub fn sequential_plan(problem: &PlanningProblem) -> Result<PlannedPath> {
    problem.validate()?;
    let proj = problem.projection();
    let mut start = problem.q_start.clone();
    let mut stages = Vec::with_capacity(problem.stages());
    let mut nodes = 0;
    for s in 0..problem.stages() {
        let cur = problem.manifolds[s].as_ref();
        let nxt = problem.manifolds[s + 1].as_ref();
        let res = rrt_star_stage(cur, nxt, &start, problem, s + 1)?;
        nodes += res.tree.len();
        let mut waypoints = res.tree.path_to(res.reached);
        let last = waypoints.last().unwrap().clone();
        let both = Intersection {
            first: cur,
            second: nxt,
        };
        let boundary = match project(&both, &last, &proj) {
            Ok(r) if r.converged => r.q,
            _ => last.clone(),
        };
        if cur.residual(&boundary) > problem.on_manifold_tol
            || nxt.residual(&boundary) > problem.on_manifold_tol
        {
            return Err(Error::Planning(format!(
                "stage {}: could not place a point on both manifolds",
                s + 1
            )));
        }
        if (&boundary - &last).norm() > 1e-12 {
            waypoints.push(boundary.clone());
        }
        stages.push(waypoints);
        start = boundary;
    }
    let total_cost = stages.iter().map(|s| path_length(s)).sum();
    Ok(PlannedPath {
        stages,
        total_cost,
        nodes_explored: nodes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathReport {
    pub max_residual_per_stage: Vec<f64>,
    /// `(stage, index, residual)` of waypoints above the tolerance; 1-based stage.
    pub violations: Vec<(usize, usize, f64)>,
    /// Stages whose first waypoint differs from the previous stage's last.
    pub discontinuities: Vec<usize>,
}

impl PathReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty() && self.discontinuities.is_empty()
    }
}

pub fn validate_path(path: &PlannedPath, problem: &PlanningProblem) -> Result<PathReport> {
    if path.stages.is_empty() || path.stages.iter().any(|s| s.is_empty()) {
        return Err(Error::Planning("path has no waypoints".into()));
    }
    if path.stages.len() > problem.stages().max(1) {
        return Err(Error::Planning("path has more stages than the problem".into()));
    }
    let mut report = PathReport {
        max_residual_per_stage: Vec::new(),
        violations: Vec::new(),
        discontinuities: Vec::new(),
    };
    for (k, stage) in path.stages.iter().enumerate() {
        let m = &problem.manifolds[k];
        let mut worst: f64 = 0.0;
        for (i, q) in stage.iter().enumerate() {
            let r = m.residual(q);
            worst = worst.max(r);
            if !(r <= problem.on_manifold_tol) {
                report.violations.push((k + 1, i, r));
            }
        }
        report.max_residual_per_stage.push(worst);
        if k > 0 {
            let prev = path.stages[k - 1].last().unwrap();
            if (prev - &stage[0]).norm() > 1e-12 {
                report.discontinuities.push(k + 1);
            }
        }
    }
    Ok(report)
}

/// Upper paraboloid `z = x² + y² + 0.5`, lower `z = -(x² + y²) - 0.5`.
pub fn hourglass_paraboloids() -> (ParaboloidConstraint, ParaboloidConstraint) {
    (
        ParaboloidConstraint {
            opening: 1.0,
            apex: 0.5,
        },
        ParaboloidConstraint {
            opening: -1.0,
            apex: -0.5,
        },
    )
}

/// Upper paraboloid → sphere → lower paraboloid, starting at `(1, 0, 1.5)`.
/// The paraboloids meet the unit sphere in circles at `z = ±(√7 - 1)/2`.
/// `sphere` defaults to the analytic unit sphere.
pub fn hourglass_problem(sphere: Option<Arc<dyn ImplicitManifold>>, seed: u64) -> PlanningProblem {
    let (upper, lower) = hourglass_paraboloids();
    let sphere = sphere.unwrap_or_else(|| Arc::new(SphereConstraint::unit(3)));
    PlanningProblem {
        manifolds: vec![Arc::new(upper), sphere, Arc::new(lower)],
        q_start: DVector::from_vec(vec![1.0, 0.0, 1.5]),
        sample_boxes: vec![SampleBox::cube(3, 2.0)],
        on_manifold_tol: 0.05,
        reach_tol: 0.02,
        rrt: RrtParams::default(),
        seed,
    }
}
