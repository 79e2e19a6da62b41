//! Robust pairwise motion estimation by IRLS on SE(3).
//!
//! Each outer iteration linearizes the residuals `p − (I + Δ𝔪) M q` around
//! the current motion, solves the weighted normal equations with a fixed
//! number of IRLS rounds and applies the update through the exponential
//! map, `M ← exp(𝔳̂) M`. The extrinsic mode applies the same 6-vector as
//! `(exp_so3(ω), t)` instead, which is how a line-process solver updates.

use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Matrix3x6, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::{exp_se3, exp_so3, hat3, MotionAccumulator, RigidMotion, Rotation, Twist, Vec3};
use crate::linalg::{solve_spd_with_ratio, PIVOT_RATIO};
use crate::robust_loss::{anneal, loss_value, residual_floor, weight, AnnealSchedule, LossKind};

/// Minimum number of correspondences for estimation.
pub const MIN_CORRESPONDENCES: usize = 3;

/// A point `p` in the target frame paired with `q` in the source frame;
/// the estimated motion maps `q` onto `p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub p: Vec3,
    pub q: Vec3,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorrespondenceSet {
    pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<Correspondence>) -> Result<Self> {
        if let Some(k) = pairs
            .iter()
            .position(|c| !c.p.iter().chain(c.q.iter()).all(|x| x.is_finite()))
        {
            return Err(Error::InvalidInput(format!(
                "correspondence {k} has a non-finite coordinate"
            )));
        }
        Ok(CorrespondenceSet { pairs })
    }

    pub fn from_points(p: &[Vec3], q: &[Vec3]) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::InvalidInput(format!(
                "point lists differ in length ({} vs {})",
                p.len(),
                q.len()
            )));
        }
        Self::new(p.iter().zip(q).map(|(&p, &q)| Correspondence { p, q }).collect())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[Correspondence] {
        &self.pairs
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Correspondence> {
        self.pairs.iter()
    }

    /// `e^s = ‖p^s − M q^s‖`
    pub fn residuals(&self, m: &RigidMotion) -> Vec<f64> {
        self.pairs.iter().map(|c| (c.p - m.apply(&c.q)).norm()).collect()
    }

    /// `Σ ρ(e^s)`
    pub fn robust_cost(&self, loss: LossKind, m: &RigidMotion) -> f64 {
        self.pairs
            .iter()
            .map(|c| loss_value(loss, (c.p - m.apply(&c.q)).norm()))
            .sum()
    }

    /// Bounding-box diagonal over all points of both sides, used to scale
    /// the residual floor.
    pub fn extent(&self) -> f64 {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for c in &self.pairs {
            for x in [&c.p, &c.q] {
                lo = lo.inf(x);
                hi = hi.sup(x);
            }
        }
        if self.pairs.is_empty() {
            0.0
        } else {
            (hi - lo).norm()
        }
    }
}

impl FromIterator<Correspondence> for CorrespondenceSet {
    fn from_iter<I: IntoIterator<Item = Correspondence>>(iter: I) -> Self {
        CorrespondenceSet {
            pairs: iter.into_iter().collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Parametrization {
    /// Update with `exp(𝔳̂)`, translation `P u`.
    #[default]
    Intrinsic,
    /// Update with `(exp_so3(ω), u)`, ignoring the coupling matrix.
    Extrinsic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub loss: LossKind,
    /// Geman-McClure annealing; ignored for other losses.
    pub anneal: Option<AnnealSchedule>,
    pub k_irls: usize,
    /// Stop once the update norm `‖𝔳‖` (pairwise) or `‖𝕧‖/N` (multiview)
    /// drops to this value.
    pub epsilon: f64,
    pub max_outer: usize,
    pub parametrization: Parametrization,
    /// Residual clamp for the weights. `None` derives it from the data
    /// extent.
    pub residual_floor: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::pairwise()
    }
}

impl SolverConfig {
    /// L½ loss, two IRLS rounds, `ε = 1e-5`.
    pub fn pairwise() -> Self {
        SolverConfig {
            loss: LossKind::LHalf,
            anneal: None,
            k_irls: 2,
            epsilon: 1e-5,
            max_outer: 100,
            parametrization: Parametrization::Intrinsic,
            residual_floor: None,
        }
    }

    /// L½ loss, three IRLS rounds, `ε = 1e-7`.
    pub fn multiview() -> Self {
        SolverConfig {
            k_irls: 3,
            epsilon: 1e-7,
            ..Self::pairwise()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if let (Some(s), LossKind::GemanMcClure { .. }) = (&self.anneal, &self.loss) {
            s.validate()?;
        }
        if self.k_irls == 0 {
            return Err(Error::InvalidInput("k_irls must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidInput("max_outer must be at least 1".into()));
        }
        if let Some(f) = self.residual_floor {
            if !(f > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "residual floor must be positive, got {f}"
                )));
            }
        }
        Ok(())
    }

    /// Loss with the annealing start scale applied.
    pub(crate) fn initial_loss(&self) -> LossKind {
        match (self.loss, &self.anneal) {
            (LossKind::GemanMcClure { .. }, Some(s)) => LossKind::GemanMcClure { mu: s.mu0 },
            (loss, _) => loss,
        }
    }

    /// Loss to use at outer iteration `k` given the loss of iteration `k−1`.
    pub(crate) fn annealed_loss(&self, loss: LossKind, k: usize) -> LossKind {
        match (loss, &self.anneal) {
            (LossKind::GemanMcClure { mu }, Some(s)) => LossKind::GemanMcClure {
                mu: anneal(s, mu, k),
            },
            (loss, _) => loss,
        }
    }
}

/// One linearized residual `a 𝔳 − b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearTerm {
    pub a: Matrix3x6<f64>,
    pub b: Vec3,
}

impl LinearTerm {
    /// Term for a point whose current image is `x` and whose target is `p`.
    pub fn at(x: &Vec3, p: &Vec3) -> Self {
        let mut a = Matrix3x6::zeros();
        a.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-hat3(x)));
        a.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        LinearTerm { a, b: p - x }
    }

    pub fn residual(&self, v: &Vector6<f64>) -> Vec3 {
        self.a * v - self.b
    }
}

/// Per-round record of the weighted objective `Σ w^s(𝔳_prev)‖a^s𝔳 − b^s‖²`
/// before and after the solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IrlsRound {
    pub objective_before: f64,
    pub objective_after: f64,
    /// `Σ ρ(‖a^s𝔳 − b^s‖)` at the round's solution.
    pub linearized_cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IrlsOutcome {
    pub twist: Twist,
    pub rounds: Vec<IrlsRound>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    /// Robust cost `Σ ρ(e^s)` after this iteration's update.
    pub cost: f64,
    pub update_norm: f64,
    /// Time since the start of the run.
    pub elapsed: Duration,
    pub irls: Vec<IrlsRound>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceTrace {
    /// Cost at the initial motion.
    pub initial_cost: f64,
    pub iterations: Vec<IterationRecord>,
}

impl ConvergenceTrace {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn costs(&self) -> impl Iterator<Item = f64> + '_ {
        self.iterations.iter().map(|r| r.cost)
    }

    /// First iteration count (1-based) whose update norm is at most `eps`.
    pub fn iterations_to_reach(&self, eps: f64) -> Option<usize> {
        self.iterations
            .iter()
            .position(|r| r.update_norm <= eps)
            .map(|k| k + 1)
    }

    /// True when no IRLS round increased its weighted objective by more
    /// than `rel_tol` (relative).
    pub fn inner_descent_holds(&self, rel_tol: f64) -> bool {
        self.iterations.iter().flat_map(|r| &r.irls).all(|round| {
            round.objective_after <= round.objective_before + rel_tol * round.objective_before.abs()
        })
    }

    /// True when the cost never rises by more than `rel_tol` (relative)
    /// from iteration `from` (1-based) onwards.
    pub fn cost_nonincreasing_after(&self, from: usize, rel_tol: f64) -> bool {
        let costs: Vec<f64> = self.costs().collect();
        costs
            .windows(2)
            .enumerate()
            .filter(|(k, _)| k + 1 >= from)
            .all(|(_, w)| w[1] <= w[0] + rel_tol * w[0].abs())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationResult {
    pub motion: RigidMotion,
    pub trace: ConvergenceTrace,
    pub converged: bool,
}

/// Linearizes every correspondence around `m_prev`:
/// `a = [−[M q]× | I₃]`, `b = p − M q`.
pub fn build_linear_terms(corrs: &CorrespondenceSet, m_prev: &RigidMotion) -> Vec<LinearTerm> {
    corrs
        .iter()
        .map(|c| LinearTerm::at(&m_prev.apply(&c.q), &c.p))
        .collect()
}

fn weighted_objective(terms: &[LinearTerm], weights: &[f64], v: &Vector6<f64>) -> f64 {
    terms
        .iter()
        .zip(weights)
        .map(|(t, w)| w * t.residual(v).norm_squared())
        .sum()
}

fn solve_weighted(terms: &[LinearTerm], weights: &[f64], ratio: f64) -> Result<Vector6<f64>> {
    let mut h = Matrix6::<f64>::zeros();
    let mut g = Vector6::<f64>::zeros();
    for (t, &w) in terms.iter().zip(weights) {
        let at = t.a.transpose();
        h += at * t.a * w;
        g += at * t.b * w;
    }
    let x = solve_spd_with_ratio(h.as_slice(), 6, g.as_slice(), ratio)
        .map_err(|f| Error::DegenerateGeometry(format!("6x6 normal equations: {f}")))?;
    Ok(Vector6::from_column_slice(&x))
}

/// Runs exactly `k_irls` rounds of reweighting and solving, starting from
/// `𝔳 = 0`.
pub fn irls_solve(terms: &[LinearTerm], loss: LossKind, k_irls: usize, floor: f64) -> Result<Twist> {
    irls_solve_traced(terms, loss, k_irls, floor).map(|o| o.twist)
}

pub fn irls_solve_traced(
    terms: &[LinearTerm],
    loss: LossKind,
    k_irls: usize,
    floor: f64,
) -> Result<IrlsOutcome> {
    if terms.is_empty() {
        return Err(Error::TooFewCorrespondences {
            required: MIN_CORRESPONDENCES,
            got: 0,
        });
    }
    // Rank is a property of the geometry: test it on the unweighted system,
    // since robust weights near the residual floor can differ from the rest
    // by far more than the pivot ratio.
    solve_weighted(terms, &vec![1.0; terms.len()], PIVOT_RATIO)?;
    let mut v = Vector6::zeros();
    let mut rounds = Vec::with_capacity(k_irls);
    let mut weights = vec![0.0; terms.len()];
    for _ in 0..k_irls {
        for (w, t) in weights.iter_mut().zip(terms) {
            *w = weight(loss, t.residual(&v).norm(), floor);
        }
        let before = weighted_objective(terms, &weights, &v);
        let next = solve_weighted(terms, &weights, 0.0)?;
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
    Ok(IrlsOutcome {
        twist: Twist::from_vector(&v),
        rounds,
    })
}

/// Motion increment for a solved 6-vector under the given parametrization.
pub fn update_from_twist(v: &Twist, parametrization: Parametrization) -> RigidMotion {
    match parametrization {
        Parametrization::Intrinsic => exp_se3(v),
        Parametrization::Extrinsic => RigidMotion::new(exp_so3(&v.omega), v.u),
    }
}

/// Estimates the motion mapping `q^s` onto `p^s`, starting from the
/// identity.
pub fn estimate_pairwise(corrs: &CorrespondenceSet, config: &SolverConfig) -> Result<RegistrationResult> {
    estimate_pairwise_from(corrs, config, &RigidMotion::identity())
}

/// Same as [`estimate_pairwise`] with the extrinsic update regardless of
/// `config.parametrization`.
pub fn estimate_pairwise_extrinsic(
    corrs: &CorrespondenceSet,
    config: &SolverConfig,
) -> Result<RegistrationResult> {
    let config = SolverConfig {
        parametrization: Parametrization::Extrinsic,
        ..*config
    };
    estimate_pairwise_from(corrs, &config, &RigidMotion::identity())
}

/// Warm-started estimation.
pub fn estimate_pairwise_from(
    corrs: &CorrespondenceSet,
    config: &SolverConfig,
    init: &RigidMotion,
) -> Result<RegistrationResult> {
    config.validate()?;
    if corrs.len() < MIN_CORRESPONDENCES {
        return Err(Error::TooFewCorrespondences {
            required: MIN_CORRESPONDENCES,
            got: corrs.len(),
        });
    }
    let floor = config
        .residual_floor
        .unwrap_or_else(|| residual_floor(Some(corrs.extent())));
    let start = Instant::now();
    let mut loss = config.initial_loss();
    let mut acc = MotionAccumulator::new(*init);
    let mut trace = ConvergenceTrace {
        initial_cost: corrs.robust_cost(loss, init),
        iterations: Vec::new(),
    };
    let mut converged = false;

    for k in 0..config.max_outer {
        loss = config.annealed_loss(loss, k);
        let terms = build_linear_terms(corrs, acc.motion());
        let outcome = irls_solve_traced(&terms, loss, config.k_irls, floor)?;
        let v = outcome.twist;
        acc.left_multiply(&update_from_twist(&v, config.parametrization));
        let update_norm = v.norm();
        trace.iterations.push(IterationRecord {
            cost: corrs.robust_cost(loss, acc.motion()),
            update_norm,
            elapsed: start.elapsed(),
            irls: outcome.rounds,
        });
        if update_norm <= config.epsilon {
            converged = true;
            break;
        }
    }

    Ok(RegistrationResult {
        motion: *acc.motion(),
        trace,
        converged,
    })
}

/// Closed-form least-squares motion (SVD of the cross-covariance with
/// reflection correction).
pub fn umeyama_closed_form(corrs: &CorrespondenceSet) -> Result<RigidMotion> {
    let n = corrs.len();
    if n < MIN_CORRESPONDENCES {
        return Err(Error::TooFewCorrespondences {
            required: MIN_CORRESPONDENCES,
            got: n,
        });
    }
    let inv_n = 1.0 / n as f64;
    let p_mean = corrs.iter().fold(Vec3::zeros(), |acc, c| acc + c.p) * inv_n;
    let q_mean = corrs.iter().fold(Vec3::zeros(), |acc, c| acc + c.q) * inv_n;
    let cov = corrs.iter().fold(Matrix3::zeros(), |acc, c| {
        acc + (c.p - p_mean) * (c.q - q_mean).transpose()
    });

    let svd = cov.svd(true, true);
    let s = svd.singular_values;
    let (smax, smid) = (s.max(), {
        let mut sorted = [s[0], s[1], s[2]];
        sorted.sort_by(|a, b| b.total_cmp(a));
        sorted[1]
    });
    if !(smax > 0.0) || smid <= 1e-12 * smax {
        return Err(Error::DegenerateGeometry(format!(
            "cross-covariance has rank < 2 (singular values {:.3e}, {:.3e}, {:.3e})",
            s[0], s[1], s[2]
        )));
    }
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateGeometry("SVD did not converge".into())),
    };
    let d = (u * v_t).determinant().signum();
    // flip the direction of the smallest singular value
    let k_min = (0..3).min_by(|&i, &j| s[i].total_cmp(&s[j])).unwrap_or(2);
    let mut diag = Vec3::repeat(1.0);
    diag[k_min] = d;
    let r = u * Matrix3::from_diagonal(&diag) * v_t;
    let rotation = Rotation::from_matrix_unchecked(r);
    Ok(RigidMotion::new(rotation, p_mean - rotation.rotate(&q_mean)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::{exp_se3, rotation_angle_error, translation_norm_error};
    use approx::assert_relative_eq;

    fn cloud() -> Vec<Vec3> {
        (0..40)
            .map(|k| {
                let t = k as f64;
                Vec3::new((t * 0.7).sin(), (t * 1.3).cos() * 0.8, (t * 0.37).sin() * (t * 0.11).cos())
            })
            .collect()
    }

    #[test]
    fn aligned_pair_gives_zero_terms() {
        let corrs = CorrespondenceSet::from_points(&cloud(), &cloud()).unwrap();
        let terms = build_linear_terms(&corrs, &RigidMotion::identity());
        assert!(terms.iter().all(|t| t.b == Vec3::zeros()));
        let v = irls_solve(&terms, LossKind::LHalf, 2, 1e-12).unwrap();
        assert_eq!(v.norm(), 0.0);
    }

    #[test]
    fn single_term_by_substitution() {
        let corrs = CorrespondenceSet::new(vec![Correspondence {
            p: Vec3::new(1.0, 0.0, 1.0),
            q: Vec3::new(1.0, 0.0, 0.0),
        }])
        .unwrap();
        let t = build_linear_terms(&corrs, &RigidMotion::identity())[0];
        let mut a = Matrix3x6::zeros();
        a.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-hat3(&Vec3::new(1.0, 0.0, 0.0))));
        a.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        assert_eq!(t.a, a);
        assert_eq!(t.b, Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn aligned_pair_converges_in_one_iteration() {
        let corrs = CorrespondenceSet::from_points(&cloud(), &cloud()).unwrap();
        let r = estimate_pairwise(&corrs, &SolverConfig::default()).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert!(r.converged);
        assert_relative_eq!(r.motion.to_matrix(), RigidMotion::identity().to_matrix());
    }

    #[test]
    fn noiseless_recovery_all_losses() {
        let gt = exp_se3(&Twist::new(Vec3::new(0.4, -0.3, 0.6), Vec3::new(0.5, 1.0, -0.2)));
        let q = cloud();
        let p: Vec<Vec3> = q.iter().map(|x| gt.apply(x)).collect();
        let corrs = CorrespondenceSet::from_points(&p, &q).unwrap();
        for loss in [LossKind::LHalf, LossKind::L1, LossKind::GemanMcClure { mu: 10.0 }] {
            let cfg = SolverConfig {
                loss,
                ..SolverConfig::default()
            };
            let r = estimate_pairwise(&corrs, &cfg).unwrap();
            assert!(r.converged, "{loss:?}");
            assert!(rotation_angle_error(&r.motion.rotation, &gt.rotation) < 1e-8, "{loss:?}");
            assert!(translation_norm_error(&r.motion, &gt) < 1e-8, "{loss:?}");
        }
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let q: Vec<Vec3> = (0..10).map(|k| Vec3::new(k as f64, 0.0, 0.0)).collect();
        let p: Vec<Vec3> = q.iter().map(|x| x + Vec3::new(0.0, 1.0, 0.0)).collect();
        let corrs = CorrespondenceSet::from_points(&p, &q).unwrap();
        assert!(matches!(
            estimate_pairwise(&corrs, &SolverConfig::default()),
            Err(Error::DegenerateGeometry(_))
        ));
        assert!(matches!(umeyama_closed_form(&corrs), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn too_few_correspondences() {
        let corrs = CorrespondenceSet::from_points(&cloud()[..2], &cloud()[..2]).unwrap();
        assert!(matches!(
            estimate_pairwise(&corrs, &SolverConfig::default()),
            Err(Error::TooFewCorrespondences { required: 3, got: 2 })
        ));
    }

    #[test]
    fn umeyama_exact_on_noiseless_and_planar() {
        let gt = exp_se3(&Twist::new(Vec3::new(-1.0, 0.5, 2.0), Vec3::new(3.0, -1.0, 0.25)));
        let q = cloud();
        let p: Vec<Vec3> = q.iter().map(|x| gt.apply(x)).collect();
        let m = umeyama_closed_form(&CorrespondenceSet::from_points(&p, &q).unwrap()).unwrap();
        assert_relative_eq!(m.to_matrix(), gt.to_matrix(), epsilon = 1e-10);

        let planar: Vec<Vec3> = q.iter().map(|x| Vec3::new(x.x, x.y, 0.0)).collect();
        let p: Vec<Vec3> = planar.iter().map(|x| gt.apply(x)).collect();
        let m = umeyama_closed_form(&CorrespondenceSet::from_points(&p, &planar).unwrap()).unwrap();
        assert_relative_eq!(m.to_matrix(), gt.to_matrix(), epsilon = 1e-10);
    }

    #[test]
    fn config_validation() {
        let mut c = SolverConfig::default();
        assert!(c.validate().is_ok());
        c.k_irls = 0;
        assert!(c.validate().is_err());
        let c = SolverConfig {
            epsilon: 0.0,
            ..SolverConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn annealing_ticks_every_period() {
        let cfg = SolverConfig {
            loss: LossKind::GemanMcClure { mu: 1.0 },
            anneal: Some(AnnealSchedule {
                mu0: 16.0,
                divisor: 2.0,
                period: 2,
                mu_floor: 1.0,
            }),
            ..SolverConfig::default()
        };
        let mut loss = cfg.initial_loss();
        let mut mus = Vec::new();
        for k in 0..12 {
            loss = cfg.annealed_loss(loss, k);
            if let LossKind::GemanMcClure { mu } = loss {
                mus.push(mu);
            }
        }
        assert_eq!(mus, [16.0, 16.0, 8.0, 8.0, 4.0, 4.0, 2.0, 2.0, 1.0, 1.0, 1.0, 1.0]);
    }
}
