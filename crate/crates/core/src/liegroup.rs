//! Closed-form SO(3) and SE(3) machinery.
//!
//! Twists use the unnormalized convention throughout: `[ω]×` is built from
//! the raw rotation vector and `θ = ‖ω‖` only enters through the scalar
//! coefficients `sinθ/θ`, `(1−cosθ)/θ²` and `(θ−sinθ)/θ³`. With this
//! convention `exp_se3` is exactly the matrix exponential of the 4×4
//! algebra element.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};

pub type Vec3 = Vector3<f64>;

/// Below this angle every θ-dependent coefficient is evaluated by its
/// fourth-order Taylor expansion.
pub const SMALL_ANGLE: f64 = 1e-6;

/// `log_so3` switches to the axis-from-diagonal branch when
/// `trace(R) ≤ −1 + NEAR_PI_TRACE`.
pub const NEAR_PI_TRACE: f64 = 1e-6;

/// Number of successive compositions after which [`MotionAccumulator`]
/// projects the rotation back onto SO(3).
pub const RENORMALIZE_PERIOD: usize = 100;

/// A 3×3 rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix without checking it. Use [`Rotation::try_from_matrix`]
    /// for untrusted input.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Accepts `m` if it is orthonormal with determinant +1 to within `tol`.
    pub fn try_from_matrix(m: Matrix3<f64>, tol: f64) -> Option<Self> {
        let r = Rotation(m);
        let det = m.determinant();
        (r.orthonormality_error() <= tol && (det - 1.0).abs() <= tol).then_some(r)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(self.0 * other.0)
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// `‖mᵀm − I‖_F`
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).norm()
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    /// Nearest rotation in the Frobenius sense (orthogonal polar factor).
    pub fn renormalized(&self) -> Self {
        let svd = self.0.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return *self,
        };
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            let col = -u.column(2);
            u.set_column(2, &col);
            r = u * v_t;
        }
        Rotation(r)
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        log_so3(self).norm()
    }
}

/// A rigid motion `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidMotion {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Default for RigidMotion {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidMotion {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        RigidMotion {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        RigidMotion::new(Rotation::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        RigidMotion::new(Rotation::identity(), t)
    }

    pub fn from_rotation(r: Rotation) -> Self {
        RigidMotion::new(r, Vec3::zeros())
    }

    /// Homogeneous 4×4 form; the bottom row is exactly `(0, 0, 0, 1)`.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Parses a homogeneous matrix. The bottom row must be `(0, 0, 0, 1)`
    /// exactly and the rotation block orthonormal to within `tol`.
    pub fn try_from_matrix(m: &Matrix4<f64>, tol: f64) -> Option<Self> {
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return None;
        }
        let r = Rotation::try_from_matrix(m.fixed_view::<3, 3>(0, 0).into_owned(), tol)?;
        Some(RigidMotion::new(r, m.fixed_view::<3, 1>(0, 3).into_owned()))
    }

    /// Top three rows, row-major.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let m = self.to_matrix();
        std::array::from_fn(|k| m[(k / 4, k % 4)])
    }

    pub fn to_row_major_4x4(&self) -> [f64; 16] {
        let m = self.to_matrix();
        std::array::from_fn(|k| m[(k / 4, k % 4)])
    }

    pub fn from_row_major(values: &[f64], tol: f64) -> Option<Self> {
        let mut m = Matrix4::identity();
        match values.len() {
            12 | 16 => {
                for (k, &v) in values.iter().enumerate() {
                    m[(k / 4, k % 4)] = v;
                }
            }
            _ => return None,
        }
        Self::try_from_matrix(&m, tol)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidMotion) -> RigidMotion {
        RigidMotion::new(
            self.rotation.compose(&other.rotation),
            self.rotation.rotate(&other.translation) + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidMotion {
        let r_inv = self.rotation.inverse();
        RigidMotion::new(r_inv, -(r_inv.rotate(&self.translation)))
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    pub fn renormalized(&self) -> RigidMotion {
        RigidMotion::new(self.rotation.renormalized(), self.translation)
    }
}

/// An element of se(3): rotational part `omega` and translational part `u`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Twist {
    pub omega: Vec3,
    pub u: Vec3,
}

impl Twist {
    pub fn new(omega: Vec3, u: Vec3) -> Self {
        Twist { omega, u }
    }

    pub fn zero() -> Self {
        Twist::default()
    }

    /// Stacked as `[ω; u]`.
    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Twist::new(
            Vec3::new(v[0], v[1], v[2]),
            Vec3::new(v[3], v[4], v[5]),
        )
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.omega.x,
            self.omega.y,
            self.omega.z,
            self.u.x,
            self.u.y,
            self.u.z,
        )
    }

    pub fn norm(&self) -> f64 {
        (self.omega.norm_squared() + self.u.norm_squared()).sqrt()
    }

    /// The 4×4 algebra matrix `[[ω]× u; 0 0]`.
    pub fn hat(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat3(&self.omega));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.u);
        m
    }

    pub fn is_finite(&self) -> bool {
        self.omega.iter().chain(self.u.iter()).all(|x| x.is_finite())
    }
}

/// Skew-symmetric matrix with `hat3(ω) v = ω × v`.
pub fn hat3(omega: &Vec3) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -omega.z, omega.y, //
        omega.z, 0.0, -omega.x, //
        -omega.y, omega.x, 0.0,
    )
}

/// Inverse of [`hat3`] on the antisymmetric part of `m`.
pub fn vee3(m: &Matrix3<f64>) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// `sinθ/θ`
fn coeff_a(theta: f64) -> f64 {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 - t2 / 6.0 + t2 * t2 / 120.0
    } else {
        theta.sin() / theta
    }
}

/// `(1−cosθ)/θ²`, via `2 sin²(θ/2)` to avoid cancellation.
fn coeff_b(theta: f64) -> f64 {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        0.5 - t2 / 24.0 + t2 * t2 / 720.0
    } else {
        let s = (0.5 * theta).sin() / theta;
        2.0 * s * s
    }
}

/// `(θ−sinθ)/θ³`
fn coeff_c(theta: f64) -> f64 {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    } else {
        (theta - theta.sin()) / (theta * theta * theta)
    }
}

/// `(1 − (θ/2)·cot(θ/2)) / θ²`, the `[ω]×²` coefficient of `P⁻¹`.
fn coeff_d(theta: f64) -> f64 {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    }
}

pub fn exp_so3(omega: &Vec3) -> Rotation {
    let theta = omega.norm();
    let k = hat3(omega);
    Rotation(Matrix3::identity() + k * coeff_a(theta) + k * k * coeff_b(theta))
}

/// Rotation vector of `r`, with `‖ω‖ ∈ [0, π]`.
pub fn log_so3(r: &Rotation) -> Vec3 {
    let m = r.matrix();
    let trace = m.trace();
    let cos_theta = ((trace - 1.0) * 0.5).clamp(-1.0, 1.0);
    // w = sinθ · axis
    let w = vee3(m);
    let sin_theta = w.norm();
    let theta = sin_theta.atan2(cos_theta);

    if trace <= -1.0 + NEAR_PI_TRACE {
        // aaᵀ = (sym(R) − cosθ I) / (1 − cosθ); take the column with the
        // largest diagonal entry.
        let sym = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos_theta;
        let sym = sym / (1.0 - cos_theta);
        let k = (0..3)
            .max_by(|&i, &j| sym[(i, i)].total_cmp(&sym[(j, j)]))
            .unwrap_or(0);
        let mut axis: Vec3 = sym.column(k).into_owned() / sym[(k, k)].max(0.0).sqrt();
        axis /= axis.norm();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    w / coeff_a(theta)
}

/// The coupling matrix `P` with `t = P u`.
pub fn se3_left_jacobian(omega: &Vec3) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = hat3(omega);
    Matrix3::identity() + k * coeff_b(theta) + k * k * coeff_c(theta)
}

/// `P⁻¹` in closed form.
pub fn se3_left_jacobian_inverse(omega: &Vec3) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = hat3(omega);
    Matrix3::identity() - k * 0.5 + k * k * coeff_d(theta)
}

pub fn exp_se3(v: &Twist) -> RigidMotion {
    RigidMotion::new(exp_so3(&v.omega), se3_left_jacobian(&v.omega) * v.u)
}

pub fn log_se3(m: &RigidMotion) -> Twist {
    let omega = log_so3(&m.rotation);
    Twist::new(omega, se3_left_jacobian_inverse(&omega) * m.translation)
}

/// `‖log(a bᵀ)‖` in radians.
pub fn rotation_angle_error(a: &Rotation, b: &Rotation) -> f64 {
    a.compose(&b.inverse()).angle()
}

pub fn translation_norm_error(a: &RigidMotion, b: &RigidMotion) -> f64 {
    (a.translation - b.translation).norm()
}

/// A motion built by repeated left-multiplication, re-projected onto SO(3)
/// every [`RENORMALIZE_PERIOD`] compositions.
#[derive(Clone, Copy, Debug)]
pub struct MotionAccumulator {
    motion: RigidMotion,
    since_renormalize: usize,
}

impl MotionAccumulator {
    pub fn new(motion: RigidMotion) -> Self {
        MotionAccumulator {
            motion,
            since_renormalize: 0,
        }
    }

    pub fn motion(&self) -> &RigidMotion {
        &self.motion
    }

    /// `M ← delta · M`
    pub fn left_multiply(&mut self, delta: &RigidMotion) {
        self.motion = delta.compose(&self.motion);
        self.bump();
    }

    /// `M ← M · delta`
    pub fn right_multiply(&mut self, delta: &RigidMotion) {
        self.motion = self.motion.compose(delta);
        self.bump();
    }

    fn bump(&mut self) {
        self.since_renormalize += 1;
        if self.since_renormalize >= RENORMALIZE_PERIOD {
            self.motion = self.motion.renormalized();
            self.since_renormalize = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn hat3_matches_definition() {
        let m = hat3(&Vec3::new(1.0, 2.0, 3.0));
        let expected = Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0);
        assert_eq!(m, expected);
        assert_eq!(hat3(&Vec3::zeros()), Matrix3::zeros());
        let w = Vec3::new(0.3, -1.2, 2.0);
        assert_eq!(hat3(&w) * w, Vec3::zeros());
        assert_eq!(vee3(&hat3(&w)), w);
    }

    #[test]
    fn exp_so3_quarter_turn_about_x() {
        let r = exp_so3(&Vec3::new(FRAC_PI_2, 0.0, 0.0));
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert_relative_eq!(*r.matrix(), expected, epsilon = 1e-15);
        assert_eq!(exp_so3(&Vec3::zeros()), Rotation::identity());
    }

    #[test]
    fn log_so3_inverts_quarter_turn() {
        let r = Rotation::from_matrix_unchecked(Matrix3::new(
            1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0,
        ));
        assert_relative_eq!(log_so3(&r), Vec3::new(FRAC_PI_2, 0.0, 0.0), epsilon = 1e-15);
        assert_eq!(log_so3(&Rotation::identity()), Vec3::zeros());
    }

    #[test]
    fn log_so3_half_turn_about_z() {
        let r = Rotation::from_matrix_unchecked(Matrix3::new(
            -1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0,
        ));
        let w = log_so3(&r);
        assert_relative_eq!(w.norm(), PI, epsilon = 1e-15);
        assert_relative_eq!(w.x, 0.0);
        assert_relative_eq!(w.y, 0.0);
        assert_relative_eq!(w.z.abs(), PI, epsilon = 1e-15);
    }

    #[test]
    fn near_pi_branch_roundtrips() {
        for &delta in &[0.0, 1e-9, 1e-7, 1e-5, 1e-3] {
            let axis = Vec3::new(0.2, -0.5, 0.8).normalize();
            let omega = axis * (PI - delta);
            let r = exp_so3(&omega);
            let back = exp_so3(&log_so3(&r));
            assert!((back.matrix() - r.matrix()).norm() < 1e-9, "delta {delta}");
            if delta > 0.0 {
                assert_relative_eq!(log_so3(&r), omega, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn small_angle_branch_is_continuous() {
        let axis = Vec3::new(1.0, 2.0, -0.5).normalize();
        let below = axis * (SMALL_ANGLE * 0.999);
        let above = axis * (SMALL_ANGLE * 1.001);
        let u = Vec3::new(0.3, 0.1, -0.2);
        let mb = exp_se3(&Twist::new(below, u));
        let ma = exp_se3(&Twist::new(above, u));
        assert!((mb.to_matrix() - ma.to_matrix()).norm() < 1e-8);
        assert_relative_eq!(log_se3(&mb).omega, below, epsilon = 1e-18);
        assert_relative_eq!(log_se3(&ma).u, u, epsilon = 1e-15);
    }

    #[test]
    fn exp_se3_special_cases() {
        let u = Vec3::new(1.0, -2.0, 0.5);
        let m = exp_se3(&Twist::new(Vec3::zeros(), u));
        assert_eq!(m, RigidMotion::from_translation(u));
        let w = Vec3::new(0.1, 0.4, -0.3);
        let m = exp_se3(&Twist::new(w, Vec3::zeros()));
        assert_eq!(m.rotation, exp_so3(&w));
        assert_eq!(m.translation, Vec3::zeros());
    }

    #[test]
    fn log_se3_special_cases() {
        assert_eq!(log_se3(&RigidMotion::identity()), Twist::zero());
        let t = Vec3::new(0.5, 0.25, -3.0);
        assert_eq!(log_se3(&RigidMotion::from_translation(t)), Twist::new(Vec3::zeros(), t));
    }

    #[test]
    fn jacobian_inverse_matches_inverse() {
        let w = Vec3::new(1.1, -0.7, 2.0);
        let p = se3_left_jacobian(&w);
        let p_inv = se3_left_jacobian_inverse(&w);
        assert_relative_eq!(p * p_inv, Matrix3::identity(), epsilon = 1e-13);
    }

    #[test]
    fn group_operations() {
        let m = exp_se3(&Twist::new(Vec3::new(0.3, 0.2, -0.9), Vec3::new(1.0, 2.0, 3.0)));
        assert_eq!(RigidMotion::identity().compose(&m), m);
        let p = Vec3::new(0.1, 0.2, 0.3);
        let t = Vec3::new(-1.0, 0.0, 4.0);
        assert_eq!(RigidMotion::from_translation(t).apply(&p), p + t);
        let back = m.inverse().inverse();
        assert_relative_eq!(back.to_matrix(), m.to_matrix(), epsilon = 1e-15);
        let id = m.compose(&m.inverse());
        assert_relative_eq!(id.to_matrix(), Matrix4::identity(), epsilon = 1e-12);
    }

    #[test]
    fn error_metrics() {
        let r = exp_so3(&Vec3::new(0.2, 0.3, 0.4));
        assert_eq!(rotation_angle_error(&r, &r), 0.0);
        let q = exp_so3(&Vec3::new(0.0, 0.0, FRAC_PI_2));
        assert_relative_eq!(rotation_angle_error(&Rotation::identity(), &q), FRAC_PI_2, epsilon = 1e-15);
        let a = RigidMotion::from_translation(Vec3::new(1.0, 2.0, 2.0));
        assert_eq!(translation_norm_error(&a, &RigidMotion::identity()), 3.0);
    }

    #[test]
    fn matrix_parsing_rejects_bad_bottom_row() {
        let mut m = Matrix4::identity();
        assert!(RigidMotion::try_from_matrix(&m, 1e-9).is_some());
        m[(3, 0)] = 1e-300;
        assert!(RigidMotion::try_from_matrix(&m, 1e-9).is_none());
        let mut m = Matrix4::identity();
        m[(0, 0)] = 1.1;
        assert!(RigidMotion::try_from_matrix(&m, 1e-9).is_none());
    }

    #[test]
    fn renormalize_projects_to_rotation() {
        let r = exp_so3(&Vec3::new(0.4, -0.2, 1.0));
        let noisy = Rotation::from_matrix_unchecked(r.matrix() + Matrix3::from_element(1e-6));
        let fixed = noisy.renormalized();
        assert!(fixed.orthonormality_error() < 1e-14);
        assert_relative_eq!(fixed.determinant(), 1.0, epsilon = 1e-14);
        assert!((fixed.matrix() - r.matrix()).norm() < 1e-5);
    }
}
