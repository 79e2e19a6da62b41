//! Joint robust registration of N scans over a view graph.
//!
//! All absolute motions are updated simultaneously from one block-sparse
//! weighted system per IRLS round. Scan 0 defines the global frame: its
//! motion is pinned to the identity and its six unknowns are removed from
//! the system.

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use nalgebra::{Matrix3x6, Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::liegroup::{MotionAccumulator, RigidMotion, Twist, Vec3};
use crate::linalg::{solve_spd_with_ratio, PIVOT_RATIO};
use crate::pairwise::{
    update_from_twist, ConvergenceTrace, CorrespondenceSet, IrlsRound, IterationRecord, LinearTerm,
    SolverConfig,
};
use crate::robust_loss::{loss_value, residual_floor, weight, LossKind};

/// Correspondences between scans `i` and `j`: each pair holds `p` in scan
/// `i`'s frame and `q` in scan `j`'s frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewEdge {
    pub i: usize,
    pub j: usize,
    pub corrs: CorrespondenceSet,
}

/// Absolute scan-to-global motions plus the edges tying scans together.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewGraph {
    pub motions: Vec<RigidMotion>,
    pub edges: Vec<ViewEdge>,
}

impl ViewGraph {
    pub fn new(motions: Vec<RigidMotion>, edges: Vec<ViewEdge>) -> Result<Self> {
        let n = motions.len();
        if n == 0 {
            return Err(Error::InvalidInput("view graph has no scans".into()));
        }
        for (k, e) in edges.iter().enumerate() {
            if e.i >= n || e.j >= n || e.i == e.j {
                return Err(Error::InvalidInput(format!(
                    "edge {k} ({}, {}) is invalid for {n} scans",
                    e.i, e.j
                )));
            }
        }
        Ok(ViewGraph { motions, edges })
    }

    pub fn n(&self) -> usize {
        self.motions.len()
    }

    pub fn check_connected(&self) -> Result<()> {
        check_connected(self.n(), self.edges.iter().map(|e| (e.i, e.j)))
    }

    /// `Σ_edges Σ_s ρ(‖M_i p^s − M_j q^s‖)`
    pub fn cost(&self, loss: LossKind) -> f64 {
        self.edges
            .iter()
            .flat_map(|e| {
                let (mi, mj) = (&self.motions[e.i], &self.motions[e.j]);
                e.corrs
                    .iter()
                    .map(move |c| loss_value(loss, (mi.apply(&c.p) - mj.apply(&c.q)).norm()))
            })
            .sum()
    }

    /// Relative motion `M_i⁻¹ M_j`, which maps scan `j` points into scan `i`.
    pub fn relative(&self, i: usize, j: usize) -> RigidMotion {
        self.motions[i].inverse().compose(&self.motions[j])
    }

    fn extent(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| e.corrs.extent())
            .fold(0.0, f64::max)
    }
}

/// Breadth-first connectivity check over `n` nodes.
pub fn check_connected(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<()> {
    let mut adj = vec![Vec::new(); n];
    for (i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(k) = queue.pop_front() {
        for &m in &adj[k] {
            if !seen[m] {
                seen[m] = true;
                queue.push_back(m);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(k) => Err(Error::DisconnectedGraph(format!(
            "scan {k} is not reachable from scan 0"
        ))),
        None => Ok(()),
    }
}

/// One linearized residual on edge `(i, j)`: `a_i 𝔳_i + a_j 𝔳_j − b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiviewTerm {
    pub i: usize,
    pub j: usize,
    pub a_i: Matrix3x6<f64>,
    pub a_j: Matrix3x6<f64>,
    pub b: Vec3,
}

impl MultiviewTerm {
    /// Residual for per-scan twists `v` (scan 0's entry is ignored).
    pub fn residual(&self, v: &[Vector6<f64>]) -> Vec3 {
        let mut r = -self.b;
        if self.i != 0 {
            r += self.a_i * v[self.i];
        }
        if self.j != 0 {
            r += self.a_j * v[self.j];
        }
        r
    }
}

/// `a_i = [−[M_i p]× | I₃]`, `a_j = −[−[M_j q]× | I₃]`, `b = M_j q − M_i p`.
pub fn build_multiview_terms(g: &ViewGraph) -> Result<Vec<MultiviewTerm>> {
    g.check_connected()?;
    let mut terms = Vec::with_capacity(g.edges.iter().map(|e| e.corrs.len()).sum());
    for e in &g.edges {
        let (mi, mj) = (&g.motions[e.i], &g.motions[e.j]);
        for c in e.corrs.iter() {
            let xi = mi.apply(&c.p);
            let xj = mj.apply(&c.q);
            let ti = LinearTerm::at(&xi, &xj);
            let tj = LinearTerm::at(&xj, &xi);
            terms.push(MultiviewTerm {
                i: e.i,
                j: e.j,
                a_i: ti.a,
                a_j: -tj.a,
                b: ti.b,
            });
        }
    }
    Ok(terms)
}

/// Normal equations `𝔸ᵀ𝕎𝔸 𝕧 = 𝔸ᵀ𝕎𝕓` stored as 6×6 blocks over the free
/// scans `1..N`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockNormalEquations {
    n_free: usize,
    blocks: BTreeMap<(usize, usize), Matrix6<f64>>,
    rhs: Vec<Vector6<f64>>,
}

impl BlockNormalEquations {
    pub fn assemble(n: usize, terms: &[MultiviewTerm], weights: &[f64]) -> Self {
        let n_free = n.saturating_sub(1);
        let mut blocks: BTreeMap<(usize, usize), Matrix6<f64>> = BTreeMap::new();
        let mut rhs = vec![Vector6::zeros(); n_free];
        for (t, &w) in terms.iter().zip(weights) {
            let parts = [(t.i, &t.a_i), (t.j, &t.a_j)];
            for &(r, ar) in &parts {
                if r == 0 {
                    continue;
                }
                rhs[r - 1] += ar.transpose() * t.b * w;
                for &(c, ac) in &parts {
                    if c == 0 {
                        continue;
                    }
                    *blocks.entry((r - 1, c - 1)).or_insert_with(Matrix6::zeros) +=
                        ar.transpose() * ac * w;
                }
            }
        }
        BlockNormalEquations { n_free, blocks, rhs }
    }

    /// Scan-index pairs `(r, c)` (scan 0 excluded) holding a nonzero block.
    pub fn nonzero_blocks(&self) -> Vec<(usize, usize)> {
        self.blocks.keys().map(|&(r, c)| (r + 1, c + 1)).collect()
    }

    /// Per-scan twists with scan 0 set to zero, using the default relative
    /// pivot threshold.
    pub fn solve(&self) -> Result<Vec<Vector6<f64>>> {
        self.solve_with_ratio(PIVOT_RATIO)
    }

    pub fn solve_with_ratio(&self, ratio: f64) -> Result<Vec<Vector6<f64>>> {
        let dim = 6 * self.n_free;
        let mut dense = vec![0.0; dim * dim];
        for (&(r, c), block) in &self.blocks {
            for a in 0..6 {
                for b in 0..6 {
                    dense[(6 * r + a) * dim + 6 * c + b] = block[(a, b)];
                }
            }
        }
        let rhs: Vec<f64> = self.rhs.iter().flat_map(|v| v.iter().copied()).collect();
        let x = solve_spd_with_ratio(&dense, dim, &rhs, ratio).map_err(|f| {
            Error::DegenerateGeometry(format!("{dim}x{dim} multiview normal equations: {f}"))
        })?;
        let mut out = vec![Vector6::zeros(); self.n_free + 1];
        for (k, v) in out.iter_mut().skip(1).enumerate() {
            *v = Vector6::from_column_slice(&x[6 * k..6 * k + 6]);
        }
        Ok(out)
    }
}

fn weighted_objective(terms: &[MultiviewTerm], weights: &[f64], v: &[Vector6<f64>]) -> f64 {
    terms
        .iter()
        .zip(weights)
        .map(|(t, w)| w * t.residual(v).norm_squared())
        .sum()
}

/// `k_irls` rounds of reweighting and solving the stacked system from
/// `𝕧 = 0`.
pub fn irls_solve_multiview(
    n: usize,
    terms: &[MultiviewTerm],
    loss: LossKind,
    k_irls: usize,
    floor: f64,
) -> Result<(Vec<Vector6<f64>>, Vec<IrlsRound>)> {
    // rank test on the unweighted geometry, as in the pairwise solver
    BlockNormalEquations::assemble(n, terms, &vec![1.0; terms.len()]).solve()?;
    let mut v = vec![Vector6::zeros(); n];
    let mut weights = vec![0.0; terms.len()];
    let mut rounds = Vec::with_capacity(k_irls);
    for _ in 0..k_irls {
        for (w, t) in weights.iter_mut().zip(terms) {
            *w = weight(loss, t.residual(&v).norm(), floor);
        }
        let before = weighted_objective(terms, &weights, &v);
        let next = BlockNormalEquations::assemble(n, terms, &weights).solve_with_ratio(0.0)?;
        let after = weighted_objective(terms, &weights, &next);
        let linearized_cost = terms
            .iter()
            .map(|t| loss_value(loss, t.residual(&next).norm()))
            .sum();
        rounds.push(IrlsRound {
            objective_before: before,
            objective_after: after,
            linearized_cost,
        });
        v = next;
    }
    Ok((v, rounds))
}

/// Left-composes every motion with `motions[0]⁻¹` so scan 0 sits at the
/// identity. Relative motions are unchanged.
pub fn fix_gauge(g: &ViewGraph) -> ViewGraph {
    let mut out = g.clone();
    let inv0 = g.motions[0].inverse();
    for m in out.motions.iter_mut().skip(1) {
        *m = inv0.compose(m);
    }
    out.motions[0] = RigidMotion::identity();
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiviewResult {
    pub graph: ViewGraph,
    pub trace: ConvergenceTrace,
    pub converged: bool,
}

/// Joint IRLS over all scans, starting from `g.motions` (gauge-fixed first).
/// Stops when `‖𝕧‖ ≤ N ε` or after `max_outer` iterations.
pub fn estimate_multiview(g: &ViewGraph, config: &SolverConfig) -> Result<MultiviewResult> {
    config.validate()?;
    g.check_connected()?;
    let n = g.n();
    let mut graph = fix_gauge(g);
    let mut loss = config.initial_loss();
    let mut trace = ConvergenceTrace {
        initial_cost: graph.cost(loss),
        iterations: Vec::new(),
    };
    if n == 1 {
        return Ok(MultiviewResult {
            graph,
            trace,
            converged: true,
        });
    }
    let floor = config
        .residual_floor
        .unwrap_or_else(|| residual_floor(Some(graph.extent())));
    let mut accs: Vec<MotionAccumulator> =
        graph.motions.iter().map(|m| MotionAccumulator::new(*m)).collect();
    let start = Instant::now();
    let mut converged = false;

    for k in 0..config.max_outer {
        loss = config.annealed_loss(loss, k);
        let terms = build_multiview_terms(&graph)?;
        let (v, rounds) = irls_solve_multiview(n, &terms, loss, config.k_irls, floor)?;
        for (acc, vi) in accs.iter_mut().zip(&v).skip(1) {
            acc.left_multiply(&update_from_twist(&Twist::from_vector(vi), config.parametrization));
        }
        for (m, acc) in graph.motions.iter_mut().zip(&accs) {
            *m = *acc.motion();
        }
        let update_norm = v.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt();
        trace.iterations.push(IterationRecord {
            cost: graph.cost(loss),
            update_norm,
            elapsed: start.elapsed(),
            irls: rounds,
        });
        if update_norm <= n as f64 * config.epsilon {
            converged = true;
            break;
        }
    }
    Ok(MultiviewResult {
        graph,
        trace,
        converged,
    })
}
