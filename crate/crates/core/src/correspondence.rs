//! Correspondence generation and the robust ICP pipeline: nearest-neighbor
//! matching, robust pairwise ICP, spanning-tree initialization, robust
//! motion averaging, and multiview ICP built from them.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::Vector6;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::{exp_se3, log_se3, RigidMotion, Twist};
use crate::linalg::solve_spd_with_ratio;
use crate::multiview::check_connected;
use crate::pairwise::{
    estimate_pairwise_from, ConvergenceTrace, Correspondence, CorrespondenceSet, IrlsRound,
    IterationRecord, RegistrationResult, SolverConfig,
};
use crate::pointcloud::PointCloud;
use crate::robust_loss::{loss_value, weight, DEFAULT_RESIDUAL_FLOOR};
use crate::spatial::SpatialIndex;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcpConfig {
    /// Motion step inside each ICP round (L½ by default).
    pub solver: SolverConfig,
    /// Robust averaging of the pairwise motions.
    pub averaging: SolverConfig,
    pub max_icp_rounds: usize,
    /// Pairs farther apart than this multiple of the median distance are
    /// dropped.
    pub prune_multiplier: f64,
    /// Full `{pairwise ICP, averaging}` passes in multiview ICP.
    pub outer_pipeline_rounds: usize,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            solver: SolverConfig::pairwise(),
            averaging: SolverConfig::multiview(),
            max_icp_rounds: 50,
            prune_multiplier: 2.5,
            outer_pipeline_rounds: 3,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.averaging.validate()?;
        if self.max_icp_rounds == 0 || self.outer_pipeline_rounds == 0 {
            return Err(Error::InvalidInput(
                "ICP round counts must be at least 1".into(),
            ));
        }
        if !(self.prune_multiplier > 0.0) {
            return Err(Error::InvalidInput(format!(
                "prune multiplier must be positive, got {}",
                self.prune_multiplier
            )));
        }
        Ok(())
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Pairs every source point `q` with the destination point nearest to
/// `m q`, then drops pairs farther than `prune_multiplier` × the median
/// distance. `p` is the destination point.
pub fn nn_correspondences(
    src: &PointCloud,
    dst: &PointCloud,
    m: &RigidMotion,
    prune_multiplier: f64,
) -> Result<CorrespondenceSet> {
    dst.validate()?;
    nn_correspondences_indexed(&SpatialIndex::build(&dst.points), src, m, prune_multiplier)
}

/// [`nn_correspondences`] against a prebuilt index of the destination.
pub fn nn_correspondences_indexed(
    dst: &SpatialIndex,
    src: &PointCloud,
    m: &RigidMotion,
    prune_multiplier: f64,
) -> Result<CorrespondenceSet> {
    src.validate()?;
    if dst.is_empty() {
        return Err(Error::InvalidInput("destination cloud is empty".into()));
    }
    let matches: Vec<(usize, f64)> = src
        .points
        .iter()
        .map(|q| dst.nearest(&m.apply(q)).expect("index is nonempty"))
        .collect();
    let mut dists: Vec<f64> = matches.iter().map(|&(_, d)| d).collect();
    let cutoff = prune_multiplier * median(&mut dists);
    let pairs: Vec<Correspondence> = matches
        .iter()
        .zip(&src.points)
        .filter(|((_, d), _)| *d <= cutoff)
        .map(|(&(k, _), q)| Correspondence {
            p: dst.points()[k],
            q: *q,
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyAfterPrune);
    }
    Ok(pairs.into_iter().collect())
}

/// Diagnostics of one ICP round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcpRound {
    pub pairs: usize,
    /// RMSE of the retained pairs at the motion the round started from.
    pub inlier_rmse: f64,
    /// `‖log(M_new M_old⁻¹)‖`
    pub motion_change: f64,
}

/// Robust ICP: alternate nearest-neighbor matching and warm-started robust
/// motion estimation until the motion change drops to `solver.epsilon`.
pub fn robust_icp_pair(
    src: &PointCloud,
    dst: &PointCloud,
    m0: &RigidMotion,
    cfg: &IcpConfig,
) -> Result<RegistrationResult> {
    robust_icp_pair_traced(src, dst, m0, cfg).map(|(r, _)| r)
}

pub fn robust_icp_pair_traced(
    src: &PointCloud,
    dst: &PointCloud,
    m0: &RigidMotion,
    cfg: &IcpConfig,
) -> Result<(RegistrationResult, Vec<IcpRound>)> {
    dst.validate()?;
    icp_with_index(&SpatialIndex::build(&dst.points), src, m0, cfg)
}

fn icp_with_index(
    dst: &SpatialIndex,
    src: &PointCloud,
    m0: &RigidMotion,
    cfg: &IcpConfig,
) -> Result<(RegistrationResult, Vec<IcpRound>)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut motion = *m0;
    let mut rounds = Vec::new();
    let mut trace = ConvergenceTrace::default();
    let mut converged = false;
    for round in 0..cfg.max_icp_rounds {
        let corrs = nn_correspondences_indexed(dst, src, &motion, cfg.prune_multiplier)?;
        if round == 0 {
            trace.initial_cost = corrs.robust_cost(cfg.solver.loss, &motion);
        }
        let rmse = (corrs.residuals(&motion).iter().map(|e| e * e).sum::<f64>()
            / corrs.len() as f64)
            .sqrt();
        let step = estimate_pairwise_from(&corrs, &cfg.solver, &motion)?;
        let change = log_se3(&step.motion.compose(&motion.inverse())).norm();
        motion = step.motion;
        rounds.push(IcpRound {
            pairs: corrs.len(),
            inlier_rmse: rmse,
            motion_change: change,
        });
        trace.iterations.push(IterationRecord {
            cost: corrs.robust_cost(cfg.solver.loss, &motion),
            update_norm: change,
            elapsed: start.elapsed(),
            irls: step.trace.iterations.into_iter().flat_map(|r| r.irls).collect(),
        });
        if change <= cfg.solver.epsilon {
            converged = true;
            break;
        }
    }
    Ok((
        RegistrationResult {
            motion,
            trace,
            converged,
        },
        rounds,
    ))
}

/// Measured motion between scans `i` and `j`: `M_j = M_i · motion`, i.e.
/// it maps scan `j` coordinates into scan `i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativeMotion {
    pub i: usize,
    pub j: usize,
    pub motion: RigidMotion,
    /// Reliability used to pick the spanning tree (correspondence count).
    pub weight: f64,
}

fn validate_relatives(n: usize, relatives: &[RelativeMotion]) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidInput("no scans".into()));
    }
    for r in relatives {
        if r.i >= n || r.j >= n || r.i == r.j {
            return Err(Error::InvalidInput(format!(
                "relative motion ({}, {}) is invalid for {n} scans",
                r.i, r.j
            )));
        }
    }
    check_connected(n, relatives.iter().map(|r| (r.i, r.j)))
}

/// Absolute motions composed outward from scan 0 along a maximum-weight
/// spanning tree.
pub fn spanning_tree_init(n: usize, relatives: &[RelativeMotion]) -> Result<Vec<RigidMotion>> {
    validate_relatives(n, relatives)?;
    let mut order: Vec<usize> = (0..relatives.len()).collect();
    order.sort_by(|&a, &b| relatives[b].weight.total_cmp(&relatives[a].weight));

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut adj: Vec<Vec<(usize, RigidMotion)>> = vec![Vec::new(); n];
    for k in order {
        let r = &relatives[k];
        let (a, b) = (find(&mut parent, r.i), find(&mut parent, r.j));
        if a != b {
            parent[a] = b;
            adj[r.i].push((r.j, r.motion));
            adj[r.j].push((r.i, r.motion.inverse()));
        }
    }

    let mut out: Vec<Option<RigidMotion>> = vec![None; n];
    out[0] = Some(RigidMotion::identity());
    let mut queue = VecDeque::from([0]);
    while let Some(i) = queue.pop_front() {
        let mi = out[i].expect("visited");
        for &(j, rel) in &adj[i] {
            if out[j].is_none() {
                out[j] = Some(mi.compose(&rel));
                queue.push_back(j);
            }
        }
    }
    Ok(out.into_iter().map(|m| m.expect("tree spans graph")).collect())
}

/// Robust averaging of relative motions on SE(3).
///
/// Each edge residual is `r_ij = log(M_i M_ij M_j⁻¹)`; the linearized
/// update solves `Σ w_ij ‖𝔳_j − 𝔳_i − r_ij‖²` by IRLS with scan 0 pinned and
/// applies `M_i ← exp(𝔳_i) M_i`, until `‖𝕧‖ ≤ N ε`.
pub fn motion_average(
    relatives: &[RelativeMotion],
    init: &[RigidMotion],
    cfg: &SolverConfig,
) -> Result<Vec<RigidMotion>> {
    motion_average_traced(relatives, init, cfg).map(|(m, _)| m)
}

pub fn motion_average_traced(
    relatives: &[RelativeMotion],
    init: &[RigidMotion],
    cfg: &SolverConfig,
) -> Result<(Vec<RigidMotion>, ConvergenceTrace)> {
    cfg.validate()?;
    let n = init.len();
    validate_relatives(n, relatives)?;
    let inv0 = init[0].inverse();
    let mut motions: Vec<RigidMotion> = init.iter().map(|m| inv0.compose(m)).collect();
    motions[0] = RigidMotion::identity();
    let mut trace = ConvergenceTrace::default();
    if n == 1 {
        return Ok((motions, trace));
    }
    let floor = cfg.residual_floor.unwrap_or(DEFAULT_RESIDUAL_FLOOR);
    let loss = cfg.initial_loss();
    let residuals = |motions: &[RigidMotion]| -> Vec<Vector6<f64>> {
        relatives
            .iter()
            .map(|r| {
                let e = motions[r.i].compose(&r.motion).compose(&motions[r.j].inverse());
                log_se3(&e).to_vector()
            })
            .collect()
    };
    let cost = |res: &[Vector6<f64>]| res.iter().map(|r| loss_value(loss, r.norm())).sum::<f64>();
    trace.initial_cost = cost(&residuals(&motions));
    let start = Instant::now();

    for _ in 0..cfg.max_outer {
        let r = residuals(&motions);
        let edge_residual = |v: &[Vector6<f64>], k: usize| {
            let e = &relatives[k];
            v[e.j] - v[e.i] - r[k]
        };
        let mut v = vec![Vector6::zeros(); n];
        let mut rounds = Vec::with_capacity(cfg.k_irls);
        for _ in 0..cfg.k_irls {
            let w: Vec<f64> = (0..relatives.len())
                .map(|k| weight(loss, edge_residual(&v, k).norm(), floor))
                .collect();
            let objective = |v: &[Vector6<f64>]| -> f64 {
                (0..relatives.len())
                    .map(|k| w[k] * edge_residual(v, k).norm_squared())
                    .sum()
            };
            let before = objective(&v);
            let next = solve_laplacian(n, relatives, &w, &r)?;
            rounds.push(IrlsRound {
                objective_before: before,
                objective_after: objective(&next),
                linearized_cost: (0..relatives.len())
                    .map(|k| loss_value(loss, edge_residual(&next, k).norm()))
                    .sum(),
            });
            v = next;
        }
        for (m, vi) in motions.iter_mut().zip(&v).skip(1) {
            *m = exp_se3(&Twist::from_vector(vi)).compose(m);
        }
        let update_norm = v.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt();
        trace.iterations.push(IterationRecord {
            cost: cost(&residuals(&motions)),
            update_norm,
            elapsed: start.elapsed(),
            irls: rounds,
        });
        if update_norm <= n as f64 * cfg.epsilon {
            break;
        }
    }
    Ok((motions, trace))
}

/// Solves the weighted graph-Laplacian system for `𝔳_j − 𝔳_i ≈ r_ij` with
/// `𝔳_0 = 0`. The six twist components decouple, so one (N−1)×(N−1)
/// matrix serves all of them.
fn solve_laplacian(
    n: usize,
    relatives: &[RelativeMotion],
    w: &[f64],
    r: &[Vector6<f64>],
) -> Result<Vec<Vector6<f64>>> {
    let m = n - 1;
    let mut lap = vec![0.0; m * m];
    let mut rhs = vec![Vector6::<f64>::zeros(); m];
    for ((e, &wk), rk) in relatives.iter().zip(w).zip(r) {
        let (a, b) = (e.i.checked_sub(1), e.j.checked_sub(1));
        if let Some(a) = a {
            lap[a * m + a] += wk;
            rhs[a] -= rk * wk;
        }
        if let Some(b) = b {
            lap[b * m + b] += wk;
            rhs[b] += rk * wk;
        }
        if let (Some(a), Some(b)) = (a, b) {
            lap[a * m + b] -= wk;
            lap[b * m + a] -= wk;
        }
    }
    let mut out = vec![Vector6::zeros(); n];
    for c in 0..6 {
        let col: Vec<f64> = rhs.iter().map(|x| x[c]).collect();
        // connectivity was checked up front; weights may span many decades
        let x = solve_spd_with_ratio(&lap, m, &col, 0.0).map_err(|f| {
            Error::DegenerateGeometry(format!("motion averaging system: {f}"))
        })?;
        for (k, xk) in x.into_iter().enumerate() {
            out[k + 1][c] = xk;
        }
    }
    Ok(out)
}

/// Multiview ICP: `outer_pipeline_rounds` passes of robust ICP on every edge
/// followed by robust motion averaging. Scans are assumed roughly
/// pre-aligned; the result is gauge-fixed to scan 0.
pub fn multiview_icp(
    scans: &[PointCloud],
    edges: &[(usize, usize)],
    cfg: &IcpConfig,
) -> Result<Vec<RigidMotion>> {
    cfg.validate()?;
    let n = scans.len();
    if n == 0 {
        return Err(Error::InvalidInput("no scans".into()));
    }
    if n == 1 {
        return Ok(vec![RigidMotion::identity()]);
    }
    for &(i, j) in edges {
        if i >= n || j >= n || i == j {
            return Err(Error::InvalidInput(format!(
                "edge ({i}, {j}) is invalid for {n} scans"
            )));
        }
    }
    check_connected(n, edges.iter().copied())?;
    for s in scans {
        s.validate()?;
    }
    let indexes: Vec<SpatialIndex> = scans.iter().map(|s| SpatialIndex::build(&s.points)).collect();

    let mut absolutes = vec![RigidMotion::identity(); n];
    for round in 0..cfg.outer_pipeline_rounds {
        let relatives: Vec<RelativeMotion> = edges
            .par_iter()
            .map(|&(i, j)| {
                let m0 = absolutes[i].inverse().compose(&absolutes[j]);
                let (res, rounds) = icp_with_index(&indexes[i], &scans[j], &m0, cfg)?;
                Ok(RelativeMotion {
                    i,
                    j,
                    motion: res.motion,
                    weight: rounds.last().map_or(0, |r| r.pairs) as f64,
                })
            })
            .collect::<Result<_>>()?;
        let init = if round == 0 {
            spanning_tree_init(n, &relatives)?
        } else {
            absolutes
        };
        absolutes = motion_average(&relatives, &init, &cfg.averaging)?;
    }
    Ok(absolutes)
}
