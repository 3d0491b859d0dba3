//! Two-view geometry for the dimension-reduced pose search.
//!
//! A relative pose `(R, t)` maps a point `p` expressed in the second camera
//! frame to `R p + t` in the first. Placing camera one at the origin and
//! camera two at `e3`, the pose is written as
//!
//! ```text
//! R1(phi, v1) = Exp(phi e3) Exp(v1),   R2(v2) = Exp(v2),
//! R = R1^T R2,                          t = R1^T e3,
//! ```
//!
//! with `v1`, `v2` rotation vectors in the x-y plane of norm at most pi. For
//! fixed `(v1, v2)` the polar angle of `R1 x` does not depend on `phi`, so the
//! inlier condition of each association reduces to an arc of admissible
//! `phi` values.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::association::Bearing;

const SMALL_ANGLE: f64 = 1e-6;
/// Offset added to the upper end of the residual bisection bracket.
pub const BISECTION_MARGIN: f64 = 1e-8;
/// Default bisection tolerance for [`angular_residual`], radians.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativePose {
    pub rotation: Matrix3<f64>,
    /// Unit translation direction.
    pub translation: Vector3<f64>,
}

impl RelativePose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RelativePose { rotation, translation: translation.normalize() }
    }

    pub fn identity() -> Self {
        RelativePose { rotation: Matrix3::identity(), translation: Vector3::z() }
    }
}

/// `(phi, v1, v2)` search coordinates of a relative pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    /// Rotation about the baseline, in `[0, 2pi)`.
    pub phi: f64,
    pub v1: Vector2<f64>,
    pub v2: Vector2<f64>,
}

/// Result of inverting the parametrization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parametrized {
    pub params: PoseParams,
    /// Set when the pose sits on the measure-zero boundary (`t = -e3` or a
    /// rotation of angle pi for `R2`) where the inverse is not unique.
    pub boundary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarCoords {
    /// Angle from the +z axis, `[0, pi]`.
    pub theta: f64,
    /// Azimuth in `[0, 2pi)`; zero on the poles.
    pub azimuth: f64,
}

impl PolarCoords {
    pub fn of(v: &Vector3<f64>) -> Self {
        let rho = v.x.hypot(v.y);
        let theta = rho.atan2(v.z);
        let azimuth = if rho == 0.0 { 0.0 } else { wrap_tau(v.y.atan2(v.x)) };
        PolarCoords { theta, azimuth }
    }

    pub fn to_unit(&self) -> Vector3<f64> {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.azimuth.sin_cos();
        Vector3::new(st * cp, st * sp, ct)
    }
}

/// Wraps an angle into `[0, 2pi)`.
pub fn wrap_tau(a: f64) -> f64 {
    // Same arithmetic as `rem_euclid` on the common range, without fmod.
    if (0.0..TAU).contains(&a) {
        return a;
    }
    let w = if (-TAU..0.0).contains(&a) { a + TAU } else { a.rem_euclid(TAU) };
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Distance between two azimuths on the circle, in `[0, pi]`.
pub fn azimuth_gap(a: f64, b: f64) -> f64 {
    let d = wrap_tau(a - b);
    d.min(TAU - d)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee_antisym(r: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)])
}

/// Rodrigues' formula.
pub fn exp_so3(v: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(v);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation angle of `r` in `[0, pi]`, accurate near both ends.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = vee_antisym(r).norm() * 0.5;
    let c = (r.trace() - 1.0) * 0.5;
    s.atan2(c)
}

/// Matrix logarithm of a rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SO3Log {
    pub v: Vector3<f64>,
    /// Angle numerically at pi: the sign of `v` is arbitrary.
    pub boundary: bool,
}

pub fn log_so3(r: &Matrix3<f64>) -> SO3Log {
    let w = vee_antisym(r);
    let angle = rotation_angle(r);
    if angle < SMALL_ANGLE {
        return SO3Log { v: w * (0.5 * (1.0 + angle * angle / 6.0)), boundary: false };
    }
    if angle < PI - 1e-3 {
        return SO3Log { v: w * (angle / (2.0 * angle.sin())), boundary: false };
    }
    // Near pi: recover the axis from the symmetric part, the sign from `w`.
    let cos = angle.cos();
    let sym = (r + r.transpose()) * 0.5;
    let outer = (sym - Matrix3::identity() * cos) / (1.0 - cos);
    let col = (0..3)
        .max_by(|&a, &b| outer[(a, a)].total_cmp(&outer[(b, b)]))
        .unwrap();
    let mut axis: Vector3<f64> = outer.column(col).into();
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    SO3Log { v: axis * angle, boundary: PI - angle < 1e-9 }
}

fn lift(v: &Vector2<f64>) -> Vector3<f64> {
    Vector3::new(v.x, v.y, 0.0)
}

pub fn rot_z(phi: f64) -> Matrix3<f64> {
    let (s, c) = phi.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `R1 = Exp(phi e3) Exp(v1)`.
pub fn camera1_rotation(phi: f64, v1: &Vector2<f64>) -> Matrix3<f64> {
    rot_z(phi) * exp_so3(&lift(v1))
}

/// `R2 = Exp(v2)`.
pub fn camera2_rotation(v2: &Vector2<f64>) -> Matrix3<f64> {
    exp_so3(&lift(v2))
}

pub fn params_to_pose(p: &PoseParams) -> RelativePose {
    let r1 = camera1_rotation(p.phi, &p.v1);
    let r2 = camera2_rotation(&p.v2);
    let r1t = r1.transpose();
    RelativePose { rotation: r1t * r2, translation: r1t * Vector3::z() }
}

/// In-plane rotation vector `v1` with `Exp(v1) t = e3`.
fn align_translation(t: &Vector3<f64>) -> (Vector2<f64>, bool) {
    let t = t.normalize();
    // t x e3 = (t_y, -t_x, 0)
    let axis = Vector2::new(t.y, -t.x);
    let s = axis.norm();
    let angle = s.atan2(t.z);
    if s < 1e-15 {
        return if t.z > 0.0 {
            (Vector2::zeros(), false)
        } else {
            (Vector2::new(PI, 0.0), true)
        };
    }
    (axis * (angle / s), false)
}

/// A rotation `R1` (with zero `phi`) taking the translation direction to `e3`.
pub fn baseline_frame(t: &Vector3<f64>) -> Matrix3<f64> {
    exp_so3(&lift(&align_translation(t).0))
}

pub fn pose_to_params(pose: &RelativePose) -> Parametrized {
    let (v1, t_boundary) = align_translation(&pose.translation);
    let m = exp_so3(&lift(&v1)) * pose.rotation;
    // Rz(phi) * m has an in-plane log iff c (m01 - m10) - s (m00 + m11) = 0.
    // Of the two roots, this one maximizes the trace and keeps |v2| < pi.
    let phi = wrap_tau((m[(0, 1)] - m[(1, 0)]).atan2(m[(0, 0)] + m[(1, 1)]));
    let r2 = rot_z(phi) * m;
    let log = log_so3(&r2);
    let v2 = Vector2::new(log.v.x, log.v.y);
    Parametrized { params: PoseParams { phi, v1, v2 }, boundary: t_boundary || log.boundary }
}

/// Polar coordinates of `R1 x` and `R2 y`.
pub fn polar_coords(
    r1: &Matrix3<f64>,
    r2: &Matrix3<f64>,
    x: &Bearing,
    y: &Bearing,
) -> (PolarCoords, PolarCoords) {
    (PolarCoords::of(&(r1 * x.dir())), PolarCoords::of(&(r2 * y.dir())))
}

/// Azimuthal half-width `arcsin(sin eps / sin theta)` of an `eps`-cone around a
/// ray at polar angle `theta`, seen from the z axis. `None` when undefined.
#[inline]
pub fn cone_half_width(sin_eps: f64, theta: f64) -> Option<f64> {
    let s = theta.sin();
    if s <= 0.0 {
        return None;
    }
    let arg = sin_eps / s;
    if arg > 1.0 {
        None
    } else {
        Some(arg.asin())
    }
}

/// Half-width of the admissible azimuth gap for an association to be an
/// inlier at threshold `eps`. Returns pi wherever the closed forms are
/// undefined.
pub fn omega(eps: f64, theta1: f64, theta2: f64) -> f64 {
    if theta1 < theta2 {
        let se = eps.sin();
        match (cone_half_width(se, theta1), cone_half_width(se, theta2)) {
            (Some(a), Some(b)) => (a + b).min(PI),
            _ => PI,
        }
    } else {
        arccos_branch(eps, theta1, theta2)
    }
}

#[inline]
fn arccos_branch(eps: f64, theta1: f64, theta2: f64) -> f64 {
    omega_arccos((2.0 * eps).cos(), theta1.sin_cos(), theta2.sin_cos())
}

/// The `theta1 >= theta2` branch of [`omega`] from `cos(2 eps)` and the
/// `(sin, cos)` of both polar angles.
#[inline]
pub fn omega_arccos(cos_two_eps: f64, (s1, c1): (f64, f64), (s2, c2): (f64, f64)) -> f64 {
    let den = s1 * s2;
    if den <= 0.0 {
        return PI;
    }
    let arg = (cos_two_eps - c1 * c2) / den;
    if (-1.0..=1.0).contains(&arg) {
        arg.acos()
    } else {
        PI
    }
}

/// Necessary and sufficient condition for residual `<= eps`, stated on the
/// polar coordinates of the rotated bearings.
pub fn satisfies_inlier_condition(eps: f64, p1: &PolarCoords, p2: &PolarCoords) -> bool {
    p1.theta - p2.theta <= 2.0 * eps
        && azimuth_gap(p1.azimuth, p2.azimuth) <= omega(eps, p1.theta, p2.theta)
}

/// Residual from polar coordinates in the baseline-aligned frame.
pub fn residual_from_polar(p1: &PolarCoords, p2: &PolarCoords, tol: f64) -> f64 {
    let gap = azimuth_gap(p1.azimuth, p2.azimuth);
    if p1.theta >= p2.theta {
        // cos(2 eps) = cos t1 cos t2 + sin t1 sin t2 cos(gap): half the angle
        // between the two rays.
        let a = p1.to_unit();
        let b = p2.to_unit();
        return 0.5 * a.cross(&b).norm().atan2(a.dot(&b));
    }
    // omega grows with eps on [0, theta1] and is pi beyond it.
    let feasible = |e: f64| gap <= omega(e, p1.theta, p2.theta);
    if feasible(0.0) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, p1.theta + BISECTION_MARGIN);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// `min_p max(angle(x, p), angle(R y, p - t))`, radians.
pub fn angular_residual(pose: &RelativePose, x: &Bearing, y: &Bearing, tol: f64) -> f64 {
    let r1 = baseline_frame(&pose.translation);
    let r2 = r1 * pose.rotation;
    let (p1, p2) = polar_coords(&r1, &r2, x, y);
    residual_from_polar(&p1, &p2, tol)
}

/// Closed arc `[lo, hi]` of `phi` values, `0 <= lo <= hi <= 2pi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub lo: f64,
    pub hi: f64,
}

impl Arc {
    pub const FULL: Arc = Arc { lo: 0.0, hi: TAU };

    pub fn contains(&self, phi: f64) -> bool {
        self.lo <= phi && phi <= self.hi
    }
}

/// Up to two arcs; a wrapping arc is split at 0 / 2pi.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhiArcs {
    arcs: [Option<Arc>; 2],
}

impl PhiArcs {
    pub fn empty() -> Self {
        PhiArcs::default()
    }

    pub fn is_empty(&self) -> bool {
        self.arcs[0].is_none()
    }

    pub fn iter(&self) -> impl Iterator<Item = Arc> + '_ {
        self.arcs.iter().flatten().copied()
    }

    pub fn contains(&self, phi: f64) -> bool {
        self.iter().any(|a| a.contains(phi))
    }

    /// A single arc `[lo, hi]` with `0 <= lo <= hi <= 2pi`.
    pub fn from_arc(lo: f64, hi: f64) -> Self {
        debug_assert!(0.0 <= lo && lo <= hi && hi <= TAU);
        PhiArcs { arcs: [Some(Arc { lo, hi }), None] }
    }

    /// The arc `[center - half_width, center + half_width]` on the circle.
    pub fn around(center: f64, half_width: f64) -> Self {
        if half_width >= PI {
            return PhiArcs { arcs: [Some(Arc::FULL), None] };
        }
        let lo = wrap_tau(center - half_width);
        let hi = lo + 2.0 * half_width;
        if hi <= TAU {
            PhiArcs { arcs: [Some(Arc { lo, hi }), None] }
        } else {
            PhiArcs { arcs: [Some(Arc { lo: 0.0, hi: hi - TAU }), Some(Arc { lo, hi: TAU })] }
        }
    }
}

/// Feasible `phi` arcs given polar coordinates of `Exp(v1) x` (phi = 0) and `R2 y`.
#[inline]
pub fn arcs_from_polar(eps: f64, base1: &PolarCoords, p2: &PolarCoords) -> PhiArcs {
    if base1.theta - p2.theta > 2.0 * eps {
        return PhiArcs::empty();
    }
    let w = omega(eps, base1.theta, p2.theta);
    // Exp(phi e3) shifts the azimuth of R1 x by phi.
    PhiArcs::around(p2.azimuth - base1.azimuth, w)
}

/// Values of `phi` for which `(x, y)` is an inlier at `(v1, v2)`.
pub fn feasible_phi_interval(
    v1: &Vector2<f64>,
    v2: &Vector2<f64>,
    x: &Bearing,
    y: &Bearing,
    eps: f64,
) -> PhiArcs {
    let (base1, p2) =
        polar_coords(&camera1_rotation(0.0, v1), &camera2_rotation(v2), x, y);
    arcs_from_polar(eps, &base1, &p2)
}

/// Angle between two directions, `[0, pi]`.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::assert_close;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b): (f64, f64) = ($a, $b);
                assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
            }};
        }
        pub(crate) use assert_close;
    }

    fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v / n;
            }
        }
    }

    fn random_pose(rng: &mut impl Rng) -> RelativePose {
        let axis = random_unit(rng);
        let angle = rng.random_range(0.0..PI);
        RelativePose::new(exp_so3(&(axis * angle)), random_unit(rng))
    }

    #[test]
    fn exp_identity_and_quarter_turn() {
        assert_eq!(exp_so3(&Vector3::zeros()), Matrix3::identity());
        let r = exp_so3(&(Vector3::z() * (PI / 2.0)));
        assert!((r * Vector3::x() - Vector3::y()).norm() < 1e-12);
    }

    #[test]
    fn log_exp_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let v = random_unit(&mut rng) * rng.random_range(0.0..PI - 1e-6);
            let back = log_so3(&exp_so3(&v));
            assert!((back.v - v).norm() < 1e-9, "{v:?} -> {:?}", back.v);
        }
        let tiny = Vector3::new(1e-9, -2e-9, 3e-10);
        assert!((log_so3(&exp_so3(&tiny)).v - tiny).norm() < 1e-18);
    }

    #[test]
    fn log_at_pi_is_flagged() {
        let l = log_so3(&exp_so3(&(Vector3::x() * PI)));
        assert!(l.boundary);
        assert_close!(l.v.norm(), PI, 1e-12);
    }

    #[test]
    fn identity_params() {
        let p = PoseParams { phi: 0.0, v1: Vector2::zeros(), v2: Vector2::zeros() };
        let pose = params_to_pose(&p);
        assert!((pose.rotation - Matrix3::identity()).norm() < 1e-15);
        assert!((pose.translation - Vector3::z()).norm() < 1e-15);
        for phi in [0.3, 1.7, 4.0] {
            let p = PoseParams { phi, ..p };
            assert!((params_to_pose(&p).translation - Vector3::z()).norm() < 1e-15);
        }
    }

    #[test]
    fn params_translation_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = PoseParams {
                phi: rng.random_range(0.0..TAU),
                v1: Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
                v2: Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            };
            let pose = params_to_pose(&p);
            // R1 built independently via nalgebra's own axis-angle.
            let r1 = nalgebra::Rotation3::from_scaled_axis(Vector3::z() * p.phi)
                * nalgebra::Rotation3::from_scaled_axis(Vector3::new(p.v1.x, p.v1.y, 0.0));
            let t = r1.matrix().transpose() * Vector3::z();
            assert!((pose.translation - t).norm() < 1e-12);
        }
    }

    #[test]
    fn degenerate_translations() {
        let p = pose_to_params(&RelativePose::identity());
        assert!(!p.boundary);
        assert_eq!(p.params.v1, Vector2::zeros());
        assert_close!(p.params.phi, 0.0, 1e-15);
        assert!(p.params.v2.norm() < 1e-15);

        let down = RelativePose::new(Matrix3::identity(), -Vector3::z());
        let p = pose_to_params(&down);
        assert!(p.boundary);
        assert_eq!(p.params.v1, Vector2::new(PI, 0.0));
        assert!((params_to_pose(&p.params).translation + Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn pose_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let pose = random_pose(&mut rng);
            let p = pose_to_params(&pose);
            assert!(!p.boundary);
            assert!(p.params.v1.norm() <= PI && p.params.v2.norm() < PI);
            let back = params_to_pose(&p.params);
            assert!(rotation_angle(&(back.rotation.transpose() * pose.rotation)) < 1e-9);
            assert!(angle_between(&back.translation, &pose.translation) < 1e-9);
        }
    }

    #[test]
    fn z_rotation_of_both_cameras_is_invisible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let r1 = exp_so3(&(random_unit(&mut rng) * rng.random_range(0.0..PI)));
            let r2 = exp_so3(&(random_unit(&mut rng) * rng.random_range(0.0..PI)));
            let a = rot_z(rng.random_range(0.0..TAU));
            let (ra1, ra2) = (a * r1, a * r2);
            assert!((r1.transpose() * r2 - ra1.transpose() * ra2).norm() < 1e-12);
            let t = r1.transpose() * Vector3::z();
            assert!((t - ra1.transpose() * Vector3::z()).norm() < 1e-12);
        }
    }

    #[test]
    fn polar_examples() {
        let b = Bearing::from_unit(Vector3::z());
        let (p, _) = polar_coords(&Matrix3::identity(), &Matrix3::identity(), &b, &b);
        assert_eq!(p.theta, 0.0);
        let e1 = Bearing::from_unit(Vector3::x());
        let (p, _) = polar_coords(&Matrix3::identity(), &Matrix3::identity(), &e1, &e1);
        assert_close!(p.theta, PI / 2.0, 1e-15);
        assert_eq!(p.azimuth, 0.0);
    }

    #[test]
    fn polar_recomposition_and_phi_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let x = Bearing::from_unit(random_unit(&mut rng));
            let v1 = Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let r1 = camera1_rotation(0.0, &v1);
            let (p, _) = polar_coords(&r1, &r1, &x, &x);
            assert!((p.to_unit() - r1 * x.dir()).norm() < 1e-12);
            let phi = rng.random_range(0.0..TAU);
            let (q, _) = polar_coords(&camera1_rotation(phi, &v1), &r1, &x, &x);
            assert_close!(q.theta, p.theta, 1e-12);
            assert_close!(azimuth_gap(q.azimuth, p.azimuth + phi), 0.0, 1e-12);
        }
    }

    #[test]
    fn omega_examples() {
        assert_close!(omega(0.0, PI / 4.0, PI / 4.0), 0.0, 1e-7);
        // Reference value evaluated at 30 significant digits.
        assert_close!(omega(0.01, PI / 6.0, PI / 3.0), 0.031_548_069_712_389_484, 1e-15);
        assert_eq!(omega(0.01, 0.005, 0.5), PI);
    }

    #[test]
    fn omega_nondecreasing_below_theta1() {
        for &(t1, t2) in &[(0.3, 0.9), (1.0, 1.2), (0.05, 2.0), (1.4, 1.5)] {
            let mut prev = omega(0.0, t1, t2);
            for k in 1..=1000 {
                let e = t1 * k as f64 / 1000.0;
                let w = omega(e, t1, t2);
                assert!(w >= prev, "omega decreased at eps={e}");
                prev = w;
            }
        }
    }

    #[test]
    fn residual_zero_cases() {
        let z = Bearing::from_unit(Vector3::z());
        assert_eq!(angular_residual(&RelativePose::identity(), &z, &z, RESIDUAL_TOL), 0.0);

        // y is the exact view of a 3D point seen by x.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let pose = random_pose(&mut rng);
            let p = random_unit(&mut rng) * rng.random_range(2.0..10.0);
            let q = pose.rotation.transpose() * (p - pose.translation);
            let x = Bearing::normalize(p).unwrap();
            let y = Bearing::normalize(q).unwrap();
            assert!(angular_residual(&pose, &x, &y, RESIDUAL_TOL) < 1e-8);
        }
    }

    #[test]
    fn residual_agrees_with_condition() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut checked = 0;
        for _ in 0..20_000 {
            let pose = random_pose(&mut rng);
            let x = Bearing::from_unit(random_unit(&mut rng));
            let y = Bearing::from_unit(random_unit(&mut rng));
            let eps = rng.random_range(0.0..0.5);
            let f = angular_residual(&pose, &x, &y, RESIDUAL_TOL);
            if (f - eps).abs() < 1e-8 {
                continue;
            }
            let r1 = baseline_frame(&pose.translation);
            let (p1, p2) = polar_coords(&r1, &(r1 * pose.rotation), &x, &y);
            assert_eq!(f < eps, satisfies_inlier_condition(eps, &p1, &p2));
            checked += 1;
        }
        assert!(checked > 19_000);
    }

    #[test]
    fn arcs_examples() {
        // theta1 = 0 makes omega = pi: the whole circle.
        let z = Bearing::from_unit(Vector3::z());
        let y = Bearing::from_unit(Vector3::new(0.6, 0.0, 0.8));
        let arcs = feasible_phi_interval(&Vector2::zeros(), &Vector2::zeros(), &z, &y, 0.01);
        assert_eq!(arcs.iter().collect::<Vec<_>>(), vec![Arc::FULL]);

        // theta1 - theta2 = 3 eps: infeasible.
        let eps = 0.01;
        let x = Bearing::from_unit(PolarCoords { theta: 0.5 + 3.0 * eps, azimuth: 1.0 }.to_unit());
        let y = Bearing::from_unit(PolarCoords { theta: 0.5, azimuth: 1.0 }.to_unit());
        let arcs = feasible_phi_interval(&Vector2::zeros(), &Vector2::zeros(), &x, &y, eps);
        assert!(arcs.is_empty());
    }

    #[test]
    fn wrapping_arc_is_split() {
        let arcs = PhiArcs::around(0.1, 0.3);
        let v: Vec<_> = arcs.iter().collect();
        assert_eq!(v.len(), 2);
        assert_close!(v[0].hi, 0.4, 1e-15);
        assert_close!(v[1].lo, TAU - 0.2, 1e-15);
        assert!(arcs.contains(0.0) && arcs.contains(TAU - 0.1) && !arcs.contains(1.0));
    }

    #[test]
    fn arcs_match_dense_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let tol = 1e-7;
        for _ in 0..100 {
            let v1 = Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let v2 = Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let pose0 = params_to_pose(&PoseParams { phi: 0.0, v1, v2 });
            let x = Bearing::from_unit(random_unit(&mut rng));
            // Put y close to a consistent view so the arc is usually nonempty.
            let p = x.dir() * 4.0;
            let q = pose0.rotation.transpose() * (p - pose0.translation)
                + random_unit(&mut rng) * 0.3;
            let y = Bearing::normalize(q).unwrap();
            let eps = rng.random_range(0.005..0.1);
            let arcs = feasible_phi_interval(&v1, &v2, &x, &y, eps);
            for k in 0..720 {
                let phi = TAU * k as f64 / 720.0;
                let pose = params_to_pose(&PoseParams { phi, v1, v2 });
                let f = angular_residual(&pose, &x, &y, 1e-12);
                let inside = arcs.iter().any(|a| a.lo + tol < phi && phi < a.hi - tol);
                let outside = arcs.iter().all(|a| phi < a.lo - tol || phi > a.hi + tol);
                if inside {
                    assert!(f < eps + tol, "phi {phi} inside arcs but residual {f} > {eps}");
                }
                if outside {
                    assert!(f > eps - tol, "phi {phi} outside arcs but residual {f} < {eps}");
                }
            }
        }
    }
}
