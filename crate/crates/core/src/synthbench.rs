//! Synthetic experiment harness.
//!
//! Built-in models (sphere, cube, an asymmetric blob composite) are scaled
//! to unit diameter so that noise levels, translation errors and RMSE are
//! all read in diameter units. Every generator is deterministic given its
//! seed.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::{exp_se3, exp_so3, rotation_angle_error, translation_norm_error, RigidMotion, Twist, Vec3};
use crate::multiview::{ViewEdge, ViewGraph};
use crate::pairwise::{
    estimate_pairwise, Correspondence, CorrespondenceSet, ConvergenceTrace, Parametrization,
    RegistrationResult, SolverConfig,
};
use crate::pointcloud::PointCloud;
use crate::robust_loss::{AnnealSchedule, LossKind};

/// Above this many points the diameter falls back to the bounding-box
/// diagonal, an upper bound on the true extent.
pub const EXACT_DIAMETER_LIMIT: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sphere,
    Cube,
    Blobs,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ModelKind::Sphere),
            "cube" => Ok(ModelKind::Cube),
            "blobs" => Ok(ModelKind::Blobs),
            other => Err(Error::InvalidInput(format!(
                "unknown model '{other}' (expected sphere, cube or blobs)"
            ))),
        }
    }
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Sphere => "sphere",
            ModelKind::Cube => "cube",
            ModelKind::Blobs => "blobs",
        }
    }
}

/// Maximum pairwise distance (exact up to [`EXACT_DIAMETER_LIMIT`] points).
pub fn surface_diameter(cloud: &PointCloud) -> f64 {
    let pts = &cloud.points;
    if pts.len() < 2 {
        return 0.0;
    }
    if pts.len() > EXACT_DIAMETER_LIMIT {
        return cloud.bounds().map_or(0.0, |(lo, hi)| (hi - lo).norm());
    }
    let mut best = 0.0f64;
    for (k, a) in pts.iter().enumerate() {
        for b in &pts[k + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    best.sqrt()
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Surface samples of a built-in model, centered at the origin with unit
/// diameter.
pub fn generate_model(kind: ModelKind, n_points: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts: Vec<Vec3> = match kind {
        ModelKind::Sphere => (0..n_points).map(|_| unit_vector(&mut rng)).collect(),
        ModelKind::Cube => (0..n_points)
            .map(|_| {
                let face = rng.random_range(0..6usize);
                let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let s = if face % 2 == 0 { 1.0 } else { -1.0 };
                match face / 2 {
                    0 => Vec3::new(s, a, b),
                    1 => Vec3::new(a, s, b),
                    _ => Vec3::new(a, b, s),
                }
            })
            .collect(),
        ModelKind::Blobs => {
            // (center, radii, share of the points): body, head, two ears, tail
            let parts = [
                (Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.55, 0.38, 0.42), 0.5),
                (Vec3::new(0.52, 0.22, 0.08), Vec3::new(0.24, 0.22, 0.2), 0.2),
                (Vec3::new(0.58, 0.52, 0.16), Vec3::new(0.06, 0.2, 0.05), 0.1),
                (Vec3::new(0.46, 0.5, -0.05), Vec3::new(0.05, 0.18, 0.06), 0.1),
                (Vec3::new(-0.6, 0.05, -0.1), Vec3::new(0.1, 0.09, 0.11), 0.1),
            ];
            let mut out = Vec::with_capacity(n_points);
            for k in 0..n_points {
                let u = (k as f64 + 0.5) / n_points as f64;
                let mut acc = 0.0;
                let part = parts
                    .iter()
                    .find(|(_, _, share)| {
                        acc += share;
                        u < acc
                    })
                    .unwrap_or(&parts[0]);
                let d = unit_vector(&mut rng);
                out.push(part.0 + part.1.component_mul(&d));
            }
            out
        }
    };
    let centroid = pts.iter().sum::<Vec3>() / pts.len().max(1) as f64;
    for p in &mut pts {
        *p -= centroid;
    }
    let cloud = PointCloud::new(pts);
    let d = surface_diameter(&cloud);
    if d > 0.0 {
        PointCloud::new(cloud.points.iter().map(|p| p / d).collect())
    } else {
        cloud
    }
}

/// Random rotation about a uniform axis with angle uniform in
/// `[angle_min, angle_max]`, plus a translation of uniform direction and
/// length uniform in `[0, translation_max]`.
pub fn random_motion(
    rng: &mut ChaCha8Rng,
    angle_min: f64,
    angle_max: f64,
    translation_max: f64,
) -> RigidMotion {
    let angle = if angle_max > angle_min {
        rng.random_range(angle_min..=angle_max)
    } else {
        angle_min
    };
    let axis = unit_vector(rng);
    let t = if translation_max > 0.0 {
        unit_vector(rng) * rng.random_range(0.0..=translation_max)
    } else {
        Vec3::zeros()
    };
    RigidMotion::new(exp_so3(&(axis * angle)), t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairParams {
    /// Radians.
    pub angle_min: f64,
    pub angle_max: f64,
    /// Diameter units.
    pub translation_max: f64,
    /// Noise standard deviation in diameter units.
    pub sigma_rel: f64,
    pub outlier_fraction: f64,
    pub seed: u64,
}

impl PairParams {
    /// Rotation angle uniform in `[0, angle_max]`, translation up to half a
    /// diameter.
    pub fn new(angle_max: f64, sigma_rel: f64, outlier_fraction: f64, seed: u64) -> Self {
        PairParams {
            angle_min: 0.0,
            angle_max,
            translation_max: 0.5,
            sigma_rel,
            outlier_fraction,
            seed,
        }
    }

    /// Exactly `angle` radians of rotation.
    pub fn fixed_angle(angle: f64, sigma_rel: f64, outlier_fraction: f64, seed: u64) -> Self {
        PairParams {
            angle_min: angle,
            angle_max: angle,
            ..Self::new(angle, sigma_rel, outlier_fraction, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.angle_min >= 0.0
            && self.angle_max >= self.angle_min
            && self.angle_max <= PI
            && self.translation_max >= 0.0
            && self.sigma_rel >= 0.0
            && (0.0..=1.0).contains(&self.outlier_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid pair parameters {self:?}")))
        }
    }
}

/// A source model, its moved and corrupted copy, and the correspondences
/// between them (`p` from `dst`, `q` from `src`).
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPair {
    pub src: PointCloud,
    pub dst: PointCloud,
    pub corrs: CorrespondenceSet,
    /// False where the correspondence was replaced by an outlier.
    pub inlier: Vec<bool>,
    pub gt: RigidMotion,
    pub diameter: f64,
    pub sigma: f64,
    pub outlier_fraction: f64,
    pub seed: u64,
}

/// Moves the model by a random rotation about its centroid followed by a
/// random translation, adds noise, and re-points a fraction of the
/// correspondences to uniform samples in the bounding box of `dst`.
pub fn generate_pair(model: &PointCloud, params: &PairParams) -> Result<SyntheticPair> {
    params.validate()?;
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let diameter = surface_diameter(model);
    // rotate about the model centroid, then translate
    let c = model.centroid().expect("nonempty");
    let local = random_motion(
        &mut rng,
        params.angle_min,
        params.angle_max,
        params.translation_max * diameter,
    );
    let gt = RigidMotion::new(local.rotation, local.translation + c - local.rotation.rotate(&c));
    let sigma = params.sigma_rel * diameter;
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let dst: Vec<Vec3> = model
        .points
        .iter()
        .map(|q| {
            gt.apply(q) + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
        })
        .collect();
    let dst = PointCloud::new(dst);
    let (lo, hi) = dst.bounds().expect("nonempty");

    let n = model.len();
    let n_out = (params.outlier_fraction * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut inlier = vec![true; n];
    for &k in &idx[..n_out] {
        inlier[k] = false;
    }
    let pairs: Vec<Correspondence> = (0..n)
        .map(|k| {
            let p = if inlier[k] {
                dst.points[k]
            } else {
                Vec3::new(
                    rng.random_range(lo.x..=hi.x),
                    rng.random_range(lo.y..=hi.y),
                    rng.random_range(lo.z..=hi.z),
                )
            };
            Correspondence {
                p,
                q: model.points[k],
            }
        })
        .collect();
    Ok(SyntheticPair {
        src: model.clone(),
        dst,
        corrs: CorrespondenceSet::new(pairs)?,
        inlier,
        gt,
        diameter,
        sigma,
        outlier_fraction: params.outlier_fraction,
        seed: params.seed,
    })
}

/// Scene placement used for convergence comparisons: the model sits about
/// two diameters in front of the origin, as a scan does in a depth-camera
/// frame, and moves by a rotation about its own centroid plus a small
/// translation. Away from the origin the two update parametrizations
/// differ, which is the regime the comparison is about.
pub const CAMERA_FRAME_OFFSET: [f64; 3] = [0.4, -0.2, 2.0];

/// Translation bound (diameter units) for convergence-comparison pairs.
pub const CAMERA_FRAME_TRANSLATION: f64 = 0.1;

/// A pair in the camera-frame placement with exactly `angle` radians of
/// rotation.
pub fn generate_camera_frame_pair(
    model: &PointCloud,
    angle: f64,
    sigma_rel: f64,
    outlier_fraction: f64,
    seed: u64,
) -> Result<SyntheticPair> {
    let d = surface_diameter(model);
    let c = model.centroid().unwrap_or_else(Vec3::zeros);
    let shift = Vec3::from(CAMERA_FRAME_OFFSET) * d - c;
    let placed = model.transformed(&RigidMotion::from_translation(shift));
    let params = PairParams {
        translation_max: CAMERA_FRAME_TRANSLATION,
        ..PairParams::fixed_angle(angle, sigma_rel, outlier_fraction, seed)
    };
    generate_pair(&placed, &params)
}

/// Error statistics of one estimate against ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub rae_deg: f64,
    /// Scene units.
    pub tne: f64,
    /// Diameter units.
    pub rmse: f64,
}

/// RAE in degrees, TNE, and the RMSE of `‖M_gt q − M_est q‖` over the
/// uncorrupted correspondences, in diameter units.
pub fn evaluate(estimate: &RigidMotion, pair: &SyntheticPair) -> Evaluation {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (c, &ok) in pair.corrs.iter().zip(&pair.inlier) {
        if ok {
            sum += (pair.gt.apply(&c.q) - estimate.apply(&c.q)).norm_squared();
            count += 1;
        }
    }
    let rmse = if count > 0 { (sum / count as f64).sqrt() } else { 0.0 };
    Evaluation {
        rae_deg: rotation_angle_error(&estimate.rotation, &pair.gt.rotation).to_degrees(),
        tne: translation_norm_error(estimate, &pair.gt),
        rmse: if pair.diameter > 0.0 { rmse / pair.diameter } else { rmse },
    }
}

/// One solver variant in the convergence comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Method {
    pub parametrization: Parametrization,
    pub k_irls: usize,
}

impl Method {
    /// Line-process emulation (extrinsic, one IRLS round) followed by the
    /// intrinsic solver with 1, 2 and 3 rounds.
    pub const COMPARISON: [Method; 4] = [
        Method { parametrization: Parametrization::Extrinsic, k_irls: 1 },
        Method { parametrization: Parametrization::Intrinsic, k_irls: 1 },
        Method { parametrization: Parametrization::Intrinsic, k_irls: 2 },
        Method { parametrization: Parametrization::Intrinsic, k_irls: 3 },
    ];

    pub fn label(&self) -> String {
        match self.parametrization {
            Parametrization::Extrinsic => format!("extrinsic_k{}", self.k_irls),
            Parametrization::Intrinsic => format!("intrinsic_k{}", self.k_irls),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodRun {
    pub method: Method,
    /// Outer iterations needed for each requested ε (`max_outer` when not
    /// reached).
    pub k_outer: Vec<usize>,
    pub trace: ConvergenceTrace,
    pub result: RegistrationResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceComparison {
    pub eps_list: Vec<f64>,
    pub runs: Vec<MethodRun>,
}

/// Runs the four comparison methods with the L½ loss down to the smallest
/// ε and reads off the iteration count for each ε from the update norms.
pub fn convergence_compare(
    pair: &SyntheticPair,
    eps_list: &[f64],
    max_outer: usize,
) -> Result<ConvergenceComparison> {
    if eps_list.is_empty() || eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidInput("eps list must be nonempty and positive".into()));
    }
    let eps_min = eps_list.iter().copied().fold(f64::INFINITY, f64::min);
    let runs = Method::COMPARISON
        .iter()
        .map(|&method| {
            let cfg = SolverConfig {
                loss: LossKind::LHalf,
                anneal: None,
                k_irls: method.k_irls,
                epsilon: eps_min,
                max_outer,
                parametrization: method.parametrization,
                residual_floor: None,
            };
            let result = estimate_pairwise(&pair.corrs, &cfg)?;
            let k_outer = eps_list
                .iter()
                .map(|&eps| result.trace.iterations_to_reach(eps).unwrap_or(max_outer))
                .collect();
            Ok(MethodRun {
                method,
                k_outer,
                trace: result.trace.clone(),
                result,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceComparison {
        eps_list: eps_list.to_vec(),
        runs,
    })
}

impl ConvergenceComparison {
    /// `eps,<method labels...>` rows of outer-iteration counts.
    pub fn write_k_outer_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let labels: Vec<String> = self.runs.iter().map(|r| r.method.label()).collect();
        writeln!(w, "eps,{}", labels.join(","))?;
        for (e, eps) in self.eps_list.iter().enumerate() {
            let ks: Vec<String> = self.runs.iter().map(|r| r.k_outer[e].to_string()).collect();
            writeln!(w, "{eps:e},{}", ks.join(","))?;
        }
        Ok(())
    }

    /// `method,iteration,cost,update_norm`; iteration 0 is the initial cost.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "method,iteration,cost,update_norm")?;
        for run in &self.runs {
            let label = run.method.label();
            writeln!(w, "{label},0,{:.17e},", run.trace.initial_cost)?;
            for (k, it) in run.trace.iterations.iter().enumerate() {
                writeln!(w, "{label},{},{:.17e},{:.17e}", k + 1, it.cost, it.update_norm)?;
            }
        }
        Ok(())
    }
}

/// Settings for a batch of pairwise trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub model: ModelKind,
    pub points: usize,
    pub sigma_rel: f64,
    pub outlier_fraction: f64,
    pub trials: usize,
    pub seed: u64,
    /// Radians.
    pub angle_max: f64,
    pub solver: SolverConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            model: ModelKind::Blobs,
            points: 1000,
            sigma_rel: 0.0025,
            outlier_fraction: 0.4,
            trials: 100,
            seed: 0,
            angle_max: 60f64.to_radians(),
            solver: SolverConfig::pairwise(),
        }
    }
}

/// Seed of trial `t` in a batch seeded with `seed`.
pub fn trial_seed(seed: u64, t: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(t as u64 + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub loss: String,
    pub k_irls: usize,
    pub sigma: f64,
    pub outliers: f64,
    pub seed: u64,
    pub rae_deg: f64,
    pub tne: f64,
    pub rmse: f64,
    pub k_outer: usize,
    pub ms: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub trials: usize,
    pub median_rae_deg: f64,
    pub median_tne: f64,
    pub mean_rmse: f64,
    pub max_rmse: f64,
    pub mean_ms: f64,
    pub mean_k_outer: f64,
    pub converged_fraction: f64,
}

pub const BENCH_CSV_HEADER: &str = "method,loss,k_irls,sigma,outliers,seed,rae_deg,tne,rmse,k_outer,ms";

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs `trials` independent pairs. Trials are distributed over the current
/// rayon pool; results are returned in trial order and do not depend on the
/// thread count apart from the timing column.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    cfg.solver.validate()?;
    if cfg.points < 3 {
        return Err(Error::InvalidInput("need at least 3 model points".into()));
    }
    let model = generate_model(cfg.model, cfg.points, cfg.seed);
    let diameter = surface_diameter(&model);
    let mut solver = cfg.solver;
    if let (LossKind::GemanMcClure { .. }, None) = (solver.loss, solver.anneal) {
        solver.anneal = Some(AnnealSchedule::for_diameter(diameter));
    }
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(cfg.seed, t);
            let pair = generate_pair(
                &model,
                &PairParams::new(cfg.angle_max, cfg.sigma_rel, cfg.outlier_fraction, seed),
            )?;
            let start = Instant::now();
            let result = estimate_pairwise(&pair.corrs, &solver)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            let ev = evaluate(&result.motion, &pair);
            Ok(BenchRow {
                method: match solver.parametrization {
                    Parametrization::Intrinsic => "intrinsic".into(),
                    Parametrization::Extrinsic => "extrinsic".into(),
                },
                loss: solver.loss.name().into(),
                k_irls: solver.k_irls,
                sigma: cfg.sigma_rel,
                outliers: cfg.outlier_fraction,
                seed,
                rae_deg: ev.rae_deg,
                tne: ev.tne,
                rmse: ev.rmse,
                k_outer: result.trace.len(),
                ms,
                converged: result.converged,
            })
        })
        .collect()
}

pub fn summarize(rows: &[BenchRow]) -> BenchSummary {
    let n = rows.len().max(1) as f64;
    let col = |f: fn(&BenchRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    BenchSummary {
        trials: rows.len(),
        median_rae_deg: median(&col(|r| r.rae_deg)),
        median_tne: median(&col(|r| r.tne)),
        mean_rmse: rows.iter().map(|r| r.rmse).sum::<f64>() / n,
        max_rmse: rows.iter().map(|r| r.rmse).fold(0.0, f64::max),
        mean_ms: rows.iter().map(|r| r.ms).sum::<f64>() / n,
        mean_k_outer: rows.iter().map(|r| r.k_outer as f64).sum::<f64>() / n,
        converged_fraction: rows.iter().filter(|r| r.converged).count() as f64 / n,
    }
}

/// Writes the fixed-header CSV. With `timing = false` the `ms` column is
/// written as zero so that repeated runs are byte-identical.
pub fn write_bench_csv<W: Write>(rows: &[BenchRow], mut w: W, timing: bool) -> std::io::Result<()> {
    writeln!(w, "{BENCH_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{:.17e},{:.17e},{:.17e},{},{:.3}",
            r.method,
            r.loss,
            r.k_irls,
            r.sigma,
            r.outliers,
            r.seed,
            r.rae_deg,
            r.tne,
            r.rmse,
            r.k_outer,
            if timing { r.ms } else { 0.0 }
        )?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiviewParams {
    pub n_views: usize,
    /// Correspondences per edge.
    pub pairs_per_edge: usize,
    pub sigma_rel: f64,
    pub outlier_fraction: f64,
    /// Norm of the random twist applied to each ground-truth motion to form
    /// the initial guess.
    pub init_perturbation: f64,
    /// Radians; ground-truth view rotations are uniform up to this angle.
    pub view_angle_max: f64,
    pub seed: u64,
}

impl Default for MultiviewParams {
    fn default() -> Self {
        MultiviewParams {
            n_views: 6,
            pairs_per_edge: 300,
            sigma_rel: 0.0,
            outlier_fraction: 0.0,
            init_perturbation: 0.1,
            view_angle_max: 45f64.to_radians(),
            seed: 0,
        }
    }
}

/// Views of one model with known absolute motions and a complete view
/// graph of (possibly noisy, possibly corrupted) correspondences.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticMultiview {
    /// Motions hold the perturbed initial guess.
    pub graph: ViewGraph,
    /// Scan-to-global ground truth, gauge-fixed to view 0.
    pub gt: Vec<RigidMotion>,
    /// Noise-free counterparts of the inlier correspondences, per edge.
    pub clean: Vec<CorrespondenceSet>,
    pub diameter: f64,
}

impl SyntheticMultiview {
    /// RMSE of `‖M_i p − M_j q‖` over the noise-free inlier
    /// correspondences, in diameter units.
    pub fn gt_rmse(&self, motions: &[RigidMotion]) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (e, clean) in self.graph.edges.iter().zip(&self.clean) {
            for c in clean.iter() {
                sum += (motions[e.i].apply(&c.p) - motions[e.j].apply(&c.q)).norm_squared();
                count += 1;
            }
        }
        (sum / count.max(1) as f64).sqrt() / self.diameter
    }

    /// Largest rotation error over views after gauge-fixing `motions`.
    pub fn rotation_errors(&self, motions: &[RigidMotion]) -> Vec<f64> {
        let inv0 = motions[0].inverse();
        motions
            .iter()
            .zip(&self.gt)
            .map(|(m, g)| rotation_angle_error(&inv0.compose(m).rotation, &g.rotation))
            .collect()
    }
}

pub fn generate_multiview(model: &PointCloud, params: &MultiviewParams) -> Result<SyntheticMultiview> {
    model.validate()?;
    if params.n_views < 2 || params.pairs_per_edge < 3 || params.pairs_per_edge > model.len() {
        return Err(Error::InvalidInput(format!("invalid multiview parameters {params:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let diameter = surface_diameter(model);
    let n = params.n_views;
    let mut gt: Vec<RigidMotion> = (0..n)
        .map(|_| random_motion(&mut rng, 0.0, params.view_angle_max, 0.3 * diameter))
        .collect();
    let inv0 = gt[0].inverse();
    for g in gt.iter_mut() {
        *g = inv0.compose(g);
    }
    gt[0] = RigidMotion::identity();

    let noise = Normal::new(0.0, params.sigma_rel * diameter)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let jitter = |rng: &mut ChaCha8Rng| {
        Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
    };
    // every view observes every model point with its own noise
    let clean_views: Vec<Vec<Vec3>> = gt
        .iter()
        .map(|g| {
            let inv = g.inverse();
            model.points.iter().map(|x| inv.apply(x)).collect()
        })
        .collect();
    let noisy_views: Vec<Vec<Vec3>> = clean_views
        .iter()
        .map(|v| v.iter().map(|x| x + jitter(&mut rng)).collect())
        .collect();

    let mut edges = Vec::new();
    let mut clean = Vec::new();
    let mut ids: Vec<usize> = (0..model.len()).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            ids.shuffle(&mut rng);
            let chosen = &ids[..params.pairs_per_edge];
            let n_out = (params.outlier_fraction * chosen.len() as f64).round() as usize;
            let bounds = PointCloud::new(noisy_views[j].clone()).bounds().expect("nonempty");
            let mut pairs = Vec::with_capacity(chosen.len());
            let mut clean_pairs = Vec::new();
            for (s, &k) in chosen.iter().enumerate() {
                let p = noisy_views[i][k];
                if s < n_out {
                    let (lo, hi) = bounds;
                    let q = Vec3::new(
                        rng.random_range(lo.x..=hi.x),
                        rng.random_range(lo.y..=hi.y),
                        rng.random_range(lo.z..=hi.z),
                    );
                    pairs.push(Correspondence { p, q });
                } else {
                    pairs.push(Correspondence { p, q: noisy_views[j][k] });
                    clean_pairs.push(Correspondence {
                        p: clean_views[i][k],
                        q: clean_views[j][k],
                    });
                }
            }
            edges.push(ViewEdge {
                i,
                j,
                corrs: CorrespondenceSet::new(pairs)?,
            });
            clean.push(clean_pairs.into_iter().collect());
        }
    }

    let init: Vec<RigidMotion> = gt
        .iter()
        .enumerate()
        .map(|(k, g)| {
            if k == 0 {
                *g
            } else {
                let omega = unit_vector(&mut rng);
                let u = unit_vector(&mut rng);
                let v = Twist::new(omega, u * diameter);
                let scale = params.init_perturbation / v.norm();
                exp_se3(&Twist::new(v.omega * scale, v.u * scale)).compose(g)
            }
        })
        .collect();

    Ok(SyntheticMultiview {
        graph: ViewGraph::new(init, edges)?,
        gt,
        clean,
        diameter,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropParams {
    pub n_views: usize,
    /// Fraction of a scan shared with its neighbor in the sweep.
    pub overlap: f64,
    pub sigma_rel: f64,
    /// Radians; ground-truth view rotations are uniform up to this angle.
    pub view_angle_max: f64,
    /// Diameter units.
    pub view_translation_max: f64,
    pub seed: u64,
}

impl Default for CropParams {
    fn default() -> Self {
        CropParams {
            n_views: 4,
            overlap: 0.7,
            sigma_rel: 0.0025,
            view_angle_max: 4f64.to_radians(),
            view_translation_max: 0.03,
            seed: 0,
        }
    }
}

/// Overlapping partial scans cut from one model, each expressed in its own
/// frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScans {
    pub scans: Vec<PointCloud>,
    /// Model index of every scan point.
    pub point_ids: Vec<Vec<usize>>,
    /// Scan-to-global ground truth, gauge-fixed to scan 0.
    pub gt: Vec<RigidMotion>,
    pub diameter: f64,
    pub sigma: f64,
}

impl SyntheticScans {
    /// RMSE of `‖M_i x_i − M_j x_j‖` over every pair of observations of the
    /// same model point, in scene units.
    pub fn overlap_rmse(&self, motions: &[RigidMotion]) -> f64 {
        let n_model = self
            .point_ids
            .iter()
            .flat_map(|ids| ids.iter().copied())
            .max()
            .map_or(0, |m| m + 1);
        let mut seen: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_model];
        for (s, ids) in self.point_ids.iter().enumerate() {
            for (k, &id) in ids.iter().enumerate() {
                seen[id].push((s, k));
            }
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for obs in &seen {
            for (a, &(si, ki)) in obs.iter().enumerate() {
                for &(sj, kj) in &obs[a + 1..] {
                    let xi = motions[si].apply(&self.scans[si].points[ki]);
                    let xj = motions[sj].apply(&self.scans[sj].points[kj]);
                    sum += (xi - xj).norm_squared();
                    count += 1;
                }
            }
        }
        (sum / count.max(1) as f64).sqrt()
    }

    /// Scan pairs sharing at least `min_shared` of the smaller scan.
    pub fn overlapping_pairs(&self, min_shared: f64) -> Vec<(usize, usize)> {
        let n = self.scans.len();
        let sets: Vec<std::collections::HashSet<usize>> = self
            .point_ids
            .iter()
            .map(|ids| ids.iter().copied().collect())
            .collect();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let shared = sets[i].intersection(&sets[j]).count() as f64;
                let smaller = sets[i].len().min(sets[j].len()).max(1) as f64;
                if shared / smaller >= min_shared {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Cuts `n_views` slabs from the model along a random sweep direction so
/// that neighboring scans share `overlap` of their points, then moves each
/// scan into its own frame and adds noise.
pub fn generate_crops(model: &PointCloud, params: &CropParams) -> Result<SyntheticScans> {
    model.validate()?;
    if params.n_views == 0 || !(params.overlap > 0.0 && params.overlap < 1.0) {
        return Err(Error::InvalidInput(format!("invalid crop parameters {params:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let diameter = surface_diameter(model);
    let sigma = params.sigma_rel * diameter;
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;

    let dir = unit_vector(&mut rng);
    let mut order: Vec<usize> = (0..model.len()).collect();
    order.sort_by(|&a, &b| model.points[a].dot(&dir).total_cmp(&model.points[b].dot(&dir)));
    let n = model.len() as f64;
    let step_frac = 1.0 - params.overlap;
    let width = n / (1.0 + step_frac * (params.n_views as f64 - 1.0));

    let mut gt: Vec<RigidMotion> = (0..params.n_views)
        .map(|_| {
            random_motion(
                &mut rng,
                0.0,
                params.view_angle_max,
                params.view_translation_max * diameter,
            )
        })
        .collect();
    let inv0 = gt[0].inverse();
    for g in gt.iter_mut() {
        *g = inv0.compose(g);
    }
    gt[0] = RigidMotion::identity();

    let mut scans = Vec::with_capacity(params.n_views);
    let mut point_ids = Vec::with_capacity(params.n_views);
    for (v, g) in gt.iter().enumerate() {
        let start = (v as f64 * step_frac * width).round() as usize;
        let end = ((start as f64 + width).round() as usize).min(order.len());
        let ids: Vec<usize> = order[start..end].to_vec();
        let inv = g.inverse();
        let pts: Vec<Vec3> = ids
            .iter()
            .map(|&k| {
                inv.apply(&model.points[k])
                    + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
            })
            .collect();
        scans.push(PointCloud::new(pts));
        point_ids.push(ids);
    }
    Ok(SyntheticScans {
        scans,
        point_ids,
        gt,
        diameter,
        sigma,
    })
}
