//! Pinhole cameras, epipolar geometry and multi-view triangulation.
//!
//! Everything downstream (candidate search, validation, edge growth) is built
//! on the three primitives here: projecting world points, transferring a 2D
//! observation to another view as an epipolar line, and triangulating a set
//! of observations with a tight reprojection-error report.

use std::fmt;

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense per-scene view index. Views of a scene are numbered `0..n` and all
/// slices of per-view data (cameras, edge graphs) are indexed by it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ViewId(pub u32);

impl ViewId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ViewId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point has non-positive depth in view {0}")]
    NonPositiveDepth(ViewId),
    #[error("camera centers coincide; epipolar geometry is undefined")]
    DegenerateBaseline,
    #[error("triangulation needs at least 2 observations, got {0}")]
    InsufficientObservations(usize),
    #[error("triangulation design matrix is rank-deficient")]
    IllConditioned,
    #[error("triangulated point lies behind view {0}")]
    CheiralityViolation(ViewId),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

pub type GeoResult<T> = Result<T, GeometryError>;

/// 2D image point in pixels, sub-pixel precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub u: f64,
    pub v: f64,
}

impl Point2 {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// 3D world point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dist(self, other: Point3) -> f64 {
        self.to_vec().metric_distance(&other.to_vec())
    }

    pub fn to_vec(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vec(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Implicit 2D line `a*u + b*v + c = 0`, normalized so that `a^2 + b^2 = 1`.
/// With that normalization [`Line2::eval`] is the signed distance in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Line2 {
    /// Normalizes the coefficients; returns `None` for a degenerate line
    /// (`a` and `b` both ~zero).
    pub fn new(a: f64, b: f64, c: f64) -> Option<Self> {
        let n = a.hypot(b);
        if n < 1e-15 {
            return None;
        }
        Some(Self {
            a: a / n,
            b: b / n,
            c: c / n,
        })
    }

    /// Line through two distinct points.
    pub fn through(p: Point2, q: Point2) -> Option<Self> {
        // direction (du, dv) -> normal (dv, -du)
        let du = q.u - p.u;
        let dv = q.v - p.v;
        Self::new(dv, -du, du * p.v - dv * p.u)
    }

    /// Signed distance from `p` to the line, in pixels.
    pub fn eval(&self, p: Point2) -> f64 {
        self.a * p.u + self.b * p.v + self.c
    }

    pub fn distance(&self, p: Point2) -> f64 {
        self.eval(p).abs()
    }
}

/// Full calibrated pinhole camera for one view: intrinsics `K`, world-to-camera
/// rotation `R`, camera center `C` (world units) and the image size in pixels.
///
/// A world point `X` projects to `K * R * (X - C)`, dehomogenized. The camera
/// looks along positive depth: `depth(X) = (R * (X - C)).z`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub id: ViewId,
    pub k: Matrix3<f64>,
    pub r: Matrix3<f64>,
    pub c: Vector3<f64>,
    pub width: u32,
    pub height: u32,
}

impl CameraView {
    /// Validates rotation orthonormality (`R R^T = I`, `det R = 1` within 1e-9),
    /// positive focal length and a non-empty image.
    pub fn new(
        id: ViewId,
        k: Matrix3<f64>,
        r: Matrix3<f64>,
        c: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> GeoResult<Self> {
        let rrt = r * r.transpose();
        let dev = (rrt - Matrix3::identity()).norm();
        if dev > 1e-9 {
            return Err(GeometryError::InvalidCamera(format!(
                "rotation is not orthonormal (|R R^T - I| = {dev:.2e})"
            )));
        }
        if (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidCamera(
                "rotation has determinant != 1".into(),
            ));
        }
        if !(k[(0, 0)] > 0.0) {
            return Err(GeometryError::InvalidCamera(
                "focal length must be positive".into(),
            ));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidCamera("empty image".into()));
        }
        Ok(Self {
            id,
            k,
            r,
            c,
            width,
            height,
        })
    }

    /// Camera at `center` looking at `target`, world up `+z`, square pixels,
    /// principal point at the image center.
    pub fn look_at(
        id: ViewId,
        center: Vector3<f64>,
        target: Vector3<f64>,
        focal: f64,
        width: u32,
        height: u32,
    ) -> GeoResult<Self> {
        let forward = (target - center)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidCamera("center coincides with target".into()))?;
        let up = Vector3::new(0.0, 0.0, 1.0);
        let right = forward
            .cross(&up)
            .try_normalize(1e-9)
            .ok_or_else(|| GeometryError::InvalidCamera("viewing direction parallel to up".into()))?;
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let k = Matrix3::new(
            focal,
            0.0,
            width as f64 / 2.0,
            0.0,
            focal,
            height as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        );
        Self::new(id, k, r, center, width, height)
    }

    pub fn focal(&self) -> f64 {
        self.k[(0, 0)]
    }

    /// Depth of a world point along the viewing axis.
    pub fn depth_of(&self, p: Point3) -> f64 {
        (self.r * (p.to_vec() - self.c)).z
    }

    /// 3x4 projection matrix `K [R | -R C]`.
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        let kr = self.k * self.r;
        let t = self.k * (-(self.r * self.c));
        let mut p = Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&kr);
        p.set_column(3, &t);
        p
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u < self.width as f64 && p.v < self.height as f64
    }

    /// Ray through an image point: returns `(origin, unit direction)` in world
    /// coordinates, oriented towards positive depth.
    pub fn back_project(&self, p: Point2) -> (Point3, Vector3<f64>) {
        let kinv = self
            .k
            .try_inverse()
            .expect("intrinsic matrix is invertible by construction");
        let dir_cam = kinv * Vector3::new(p.u, p.v, 1.0);
        let dir = (self.r.transpose() * dir_cam).normalize();
        (Point3::from_vec(self.c), dir)
    }
}

/// Projects a world point; fails when the point is not strictly in front of
/// the camera.
pub fn project(cam: &CameraView, p: Point3) -> GeoResult<Point2> {
    let q = cam.r * (p.to_vec() - cam.c);
    if q.z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(cam.id));
    }
    let h = cam.k * q;
    Ok(Point2::new(h.x / h.z, h.y / h.z))
}

fn skew(v: Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Fundamental matrix mapping points of `cam_a` to epipolar lines on `cam_b`,
/// computed from the two projection matrices: `F = [e_b]x * P_b * P_a^+`.
pub fn fundamental_matrix(cam_a: &CameraView, cam_b: &CameraView) -> GeoResult<Matrix3<f64>> {
    if (cam_a.c - cam_b.c).norm() < 1e-12 {
        return Err(GeometryError::DegenerateBaseline);
    }
    let pa = cam_a.projection_matrix();
    let pb = cam_b.projection_matrix();
    let pa_dyn = DMatrix::from_iterator(3, 4, pa.iter().copied());
    let pa_pinv = pa_dyn
        .pseudo_inverse(1e-12)
        .map_err(|_| GeometryError::DegenerateBaseline)?;
    let epipole = pb * Vector4::new(cam_a.c.x, cam_a.c.y, cam_a.c.z, 1.0);
    let pb_dyn = DMatrix::from_iterator(3, 4, pb.iter().copied());
    let f_dyn = skew(epipole) * (pb_dyn * pa_pinv);
    Ok(Matrix3::from_iterator(f_dyn.iter().copied()))
}

/// Epipolar line induced on `cam_b` by the observation `p_a` on `cam_a`.
pub fn epipolar_line(cam_a: &CameraView, cam_b: &CameraView, p_a: Point2) -> GeoResult<Line2> {
    let f = fundamental_matrix(cam_a, cam_b)?;
    epipolar_line_from_f(&f, p_a)
}

/// Same as [`epipolar_line`] but with a precomputed fundamental matrix, for
/// callers that transfer many points between one view pair.
pub fn epipolar_line_from_f(f: &Matrix3<f64>, p_a: Point2) -> GeoResult<Line2> {
    let l = f * Vector3::new(p_a.u, p_a.v, 1.0);
    Line2::new(l.x, l.y, l.z).ok_or(GeometryError::DegenerateBaseline)
}

/// Triangulated point with its per-view reprojection errors in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangulationResult {
    pub point: Point3,
    pub max_reproj_error: f64,
    pub per_view_errors: Vec<f64>,
}

/// Triangulates `>= 2` observations: linear DLT solution refined by damped
/// Gauss-Newton on the reprojection error (at most 20 iterations, stops when
/// the step drops below 1e-10).
///
/// Fails with [`GeometryError::IllConditioned`] when the design matrix is
/// rank-deficient (e.g. a point on the line of collinear camera centers) and
/// with [`GeometryError::CheiralityViolation`] when the solution lies behind
/// any observing camera.
pub fn triangulate(obs: &[(&CameraView, Point2)]) -> GeoResult<TriangulationResult> {
    if obs.len() < 2 {
        return Err(GeometryError::InsufficientObservations(obs.len()));
    }
    let x0 = dlt_point(obs)?;
    let x = refine_point(obs, x0);

    let mut per_view_errors = Vec::with_capacity(obs.len());
    let mut max_err = 0.0f64;
    for &(cam, p) in obs {
        let q = cam.r * (x - cam.c);
        if q.z <= 0.0 {
            return Err(GeometryError::CheiralityViolation(cam.id));
        }
        let h = cam.k * q;
        let e = Point2::new(h.x / h.z, h.y / h.z).dist(p);
        per_view_errors.push(e);
        max_err = max_err.max(e);
    }
    Ok(TriangulationResult {
        point: Point3::from_vec(x),
        max_reproj_error: max_err,
        per_view_errors,
    })
}

fn dlt_point(obs: &[(&CameraView, Point2)]) -> GeoResult<Vector3<f64>> {
    let n = obs.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 4);
    for (i, &(cam, p)) in obs.iter().enumerate() {
        let pm = cam.projection_matrix();
        for col in 0..4 {
            a[(2 * i, col)] = p.u * pm[(2, col)] - pm[(0, col)];
            a[(2 * i + 1, col)] = p.v * pm[(2, col)] - pm[(1, col)];
        }
        for row in [2 * i, 2 * i + 1] {
            let norm = (0..4).map(|c| a[(row, c)] * a[(row, c)]).sum::<f64>().sqrt();
            if norm > 0.0 {
                for col in 0..4 {
                    a[(row, col)] /= norm;
                }
            }
        }
    }

    let svd = a.svd(false, true);
    let vt = svd.v_t.as_ref().expect("V^T requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .expect("singular values are finite")
    });
    // Rank < 3 leaves a >1-dimensional solution space.
    let smax = svd.singular_values[order[0]];
    if smax <= 0.0 || svd.singular_values[order[2]] < 1e-10 * smax {
        return Err(GeometryError::IllConditioned);
    }
    let null_row = *order.last().expect("non-empty");
    let h = Vector4::new(
        vt[(null_row, 0)],
        vt[(null_row, 1)],
        vt[(null_row, 2)],
        vt[(null_row, 3)],
    );
    if h.w.abs() < 1e-12 * h.norm() {
        return Err(GeometryError::IllConditioned);
    }
    Ok(Vector3::new(h.x / h.w, h.y / h.w, h.z / h.w))
}

fn reprojection_cost(obs: &[(&CameraView, Point2)], x: &Vector3<f64>) -> f64 {
    let mut cost = 0.0;
    for &(cam, p) in obs {
        let q = cam.r * (x - cam.c);
        if q.z <= 1e-12 {
            return f64::INFINITY;
        }
        let h = cam.k * q;
        let du = h.x / h.z - p.u;
        let dv = h.y / h.z - p.v;
        cost += du * du + dv * dv;
    }
    cost
}

/// Damped Gauss-Newton refinement of the reprojection objective.
fn refine_point(obs: &[(&CameraView, Point2)], x0: Vector3<f64>) -> Vector3<f64> {
    let mut x = x0;
    let mut cost = reprojection_cost(obs, &x);
    if !cost.is_finite() {
        return x;
    }
    let mut lambda = 1e-3;
    for _ in 0..20 {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for &(cam, p) in obs {
            let kr = cam.k * cam.r;
            let q = cam.r * (x - cam.c);
            let h = cam.k * q;
            if h.z.abs() < 1e-12 {
                continue;
            }
            let inv_w = 1.0 / h.z;
            let r0 = kr.row(0).transpose();
            let r1 = kr.row(1).transpose();
            let r2 = kr.row(2).transpose();
            // d(h.x/h.z)/dX and d(h.y/h.z)/dX
            let ju = (r0 - r2 * (h.x * inv_w)) * inv_w;
            let jv = (r1 - r2 * (h.y * inv_w)) * inv_w;
            let ru = h.x * inv_w - p.u;
            let rv = h.y * inv_w - p.v;
            jtj += ju * ju.transpose() + jv * jv.transpose();
            jtr += ju * ru + jv * rv;
        }

        let mut stepped = false;
        for _ in 0..8 {
            let damped = jtj + Matrix3::identity() * (lambda * jtj.trace().max(1e-12) / 3.0);
            let Some(step) = damped.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = x + step;
            let new_cost = reprojection_cost(obs, &candidate);
            if new_cost <= cost {
                x = candidate;
                cost = new_cost;
                lambda = (lambda / 3.0).max(1e-12);
                stepped = step.norm() >= 1e-10;
                if step.norm() < 1e-10 {
                    return x;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !stepped {
            break;
        }
    }
    x
}

/// Pixel radius of the circle approximating the projection of a sphere of
/// radius `sphere_r` centered at `center`: `f * sphere_r / depth(center)`.
pub fn sphere_projection_radius(cam: &CameraView, center: Point3, sphere_r: f64) -> GeoResult<f64> {
    let depth = cam.depth_of(center);
    if depth <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(cam.id));
    }
    Ok(cam.focal() * sphere_r / depth)
}
