//! Planar geometry used by mask placement.
//!
//! The homography estimator is a Hartley-normalized direct linear transform:
//! both point sets are translated to their centroid and scaled so the mean
//! distance to the origin is `sqrt(2)`, the stacked `2n x 9` system is solved
//! for its smallest right singular vector, and the result is de-normalized.
//! Homographies are always stored in canonical scale (unit Frobenius norm,
//! largest-magnitude entry positive), so two estimates of the same map compare
//! equal entrywise.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative threshold used for rank and singularity decisions.
const RANK_EPS: f64 = 1e-10;
const SINGULAR_EPS: f64 = 1e-12;
/// Smallest to largest singular value ratio below which a 3x3 map is singular.
const CONDITION_EPS: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point lists differ in length ({src} source vs {dst} destination)")]
    LengthMismatch { src: usize, dst: usize },
    #[error("need at least 4 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("point maps to infinity (w = {0:e})")]
    PointAtInfinity(f64),
    #[error("matrix is singular")]
    SingularMatrix,
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("non-finite coordinate")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Image-plane point in pixels, origin top-left, y pointing down.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Point2D {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Point2D> for [f64; 2] {
    fn from(p: Point2D) -> Self {
        [p.x, p.y]
    }
}

impl From<(f64, f64)> for Point2D {
    fn from(v: (f64, f64)) -> Self {
        Self::new(v.0, v.1)
    }
}

/// Invertible 3x3 projective map in canonical scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self::from_matrix(Matrix3::identity()).expect("identity is non-singular")
    }

    /// Wraps an arbitrary-scale matrix, rescaling it to canonical form.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let m = canonicalize(m).ok_or(GeometryError::SingularMatrix)?;
        let sv = m.singular_values();
        if !(sv.min() > CONDITION_EPS * sv.max()) {
            return Err(GeometryError::SingularMatrix);
        }
        Ok(Self { m })
    }

    /// Row-major 3x3 array.
    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        let m = &self.m;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn estimate(src: &[Point2D], dst: &[Point2D]) -> Result<Self> {
        estimate_homography(src, dst)
    }

    pub fn apply(&self, p: Point2D) -> Result<Point2D> {
        apply_homography(self, p)
    }

    pub fn inverse(&self) -> Result<Self> {
        invert(self)
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Homography) -> Result<Self> {
        Self::from_matrix(self.m * first.m)
    }

    /// Root-mean-square distance between `H(src[i])` and `dst[i]`, in pixels.
    pub fn rms_reprojection_error(&self, src: &[Point2D], dst: &[Point2D]) -> Result<f64> {
        if src.len() != dst.len() {
            return Err(GeometryError::LengthMismatch {
                src: src.len(),
                dst: dst.len(),
            });
        }
        if src.is_empty() {
            return Ok(0.0);
        }
        let mut sum = 0.0;
        for (s, d) in src.iter().zip(dst) {
            let q = self.apply(*s)?;
            sum += (q.x - d.x).powi(2) + (q.y - d.y).powi(2);
        }
        Ok((sum / src.len() as f64).sqrt())
    }
}

impl Default for Homography {
    fn default() -> Self {
        Self::identity()
    }
}

/// Unit Frobenius norm, sign chosen so the largest-magnitude entry is positive.
/// Ties go to the first entry in row-major order.
fn canonicalize(m: Matrix3<f64>) -> Option<Matrix3<f64>> {
    let norm = m.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    let scaled = m / norm;
    let mut best = scaled[(0, 0)];
    for r in 0..3 {
        for c in 0..3 {
            let v = scaled[(r, c)];
            if v.abs() > best.abs() {
                best = v;
            }
        }
    }
    Some(if best < 0.0 { -scaled } else { scaled })
}

/// Similarity transform moving the centroid to the origin and the mean
/// distance from it to `sqrt(2)`.
pub(crate) fn hartley_normalization(points: &[Point2D]) -> Option<Matrix3<f64>> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_dist = points
        .iter()
        .map(|p| (p.x - cx).hypot(p.y - cy))
        .sum::<f64>()
        / n;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(
        s,
        0.0,
        -s * cx,
        0.0,
        s,
        -s * cy,
        0.0,
        0.0,
        1.0,
    ))
}

fn transform_raw(t: &Matrix3<f64>, p: &Point2D) -> (f64, f64) {
    let v = t * Vector3::new(p.x, p.y, 1.0);
    (v.x / v.z, v.y / v.z)
}

/// Stacked DLT design matrix for `dst ~ H src`, two rows per correspondence.
pub(crate) fn dlt_design_matrix(src: &[(f64, f64)], dst: &[(f64, f64)]) -> DMatrix<f64> {
    let n = src.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 9);
    for (i, (&(x, y), &(u, v))) in src.iter().zip(dst).enumerate() {
        let r0 = 2 * i;
        let r1 = r0 + 1;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;

        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }
    a
}

fn check_input(src: &[Point2D], dst: &[Point2D]) -> Result<()> {
    if src.len() != dst.len() {
        return Err(GeometryError::LengthMismatch {
            src: src.len(),
            dst: dst.len(),
        });
    }
    if src.len() < 4 {
        return Err(GeometryError::TooFewPoints(src.len()));
    }
    if src.iter().chain(dst).any(|p| !p.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    for (name, pts) in [("source", src), ("destination", dst)] {
        let scale = diameter(pts).max(f64::MIN_POSITIVE);
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                if pts[i].distance(&pts[j]) <= 1e-12 * scale {
                    return Err(GeometryError::DegenerateConfiguration(format!(
                        "duplicate {name} points at indices {i} and {j}"
                    )));
                }
            }
        }
        if pts.len() == 4 {
            for skip in 0..4 {
                let tri: Vec<&Point2D> = (0..4).filter(|&k| k != skip).map(|k| &pts[k]).collect();
                let cross = (tri[1].x - tri[0].x) * (tri[2].y - tri[0].y)
                    - (tri[1].y - tri[0].y) * (tri[2].x - tri[0].x);
                if cross.abs() <= 1e-12 * scale * scale {
                    return Err(GeometryError::DegenerateConfiguration(format!(
                        "three collinear {name} points"
                    )));
                }
            }
        }
    }
    Ok(())
}

fn diameter(pts: &[Point2D]) -> f64 {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in pts {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    (x1 - x0).hypot(y1 - y0)
}

/// Estimates `H` with `dst[i] ~ H src[i]`.
///
/// Four correspondences give the exact map; more give the minimizer of the
/// algebraic residual of the Hartley-normalized system.
pub fn estimate_homography(src: &[Point2D], dst: &[Point2D]) -> Result<Homography> {
    check_input(src, dst)?;

    let degenerate = || GeometryError::DegenerateConfiguration("rank-deficient system".into());
    let t_src = hartley_normalization(src).ok_or_else(degenerate)?;
    let t_dst = hartley_normalization(dst).ok_or_else(degenerate)?;
    let src_n: Vec<(f64, f64)> = src.iter().map(|p| transform_raw(&t_src, p)).collect();
    let dst_n: Vec<(f64, f64)> = dst.iter().map(|p| transform_raw(&t_dst, p)).collect();

    let mut a = dlt_design_matrix(&src_n, &dst_n);
    // The thin SVD of an 8x9 matrix drops the null vector; pad to square.
    let rows = a.nrows();
    if rows < 9 {
        a = a.insert_rows(rows, 9 - rows, 0.0);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(degenerate)?;
    let sv = &svd.singular_values;

    // nalgebra does not sort singular values.
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let largest = sv[order[0]];
    let second_smallest = sv[order[7]];
    if !(largest > 0.0) || second_smallest <= RANK_EPS * largest {
        return Err(degenerate());
    }
    let h = v_t.row(order[8]);
    let h_n = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);

    let t_dst_inv = t_dst.try_inverse().ok_or_else(degenerate)?;
    let m = t_dst_inv * h_n * t_src;
    Homography::from_matrix(m).map_err(|e| match e {
        GeometryError::SingularMatrix => {
            GeometryError::DegenerateConfiguration("estimated map is singular".into())
        }
        other => other,
    })
}

/// Projects `p` through `h` with perspective division.
pub fn apply_homography(h: &Homography, p: Point2D) -> Result<Point2D> {
    if !p.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let m = &h.m;
    let w = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
    if w.abs() <= SINGULAR_EPS * m.norm() {
        return Err(GeometryError::PointAtInfinity(w));
    }
    Ok(Point2D::new(
        (m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)]) / w,
        (m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)]) / w,
    ))
}

pub fn invert(h: &Homography) -> Result<Homography> {
    let inv = h.m.try_inverse().ok_or(GeometryError::SingularMatrix)?;
    Homography::from_matrix(inv)
}

/// Even-odd containment test. Points on an edge (or vertex) count as inside.
pub fn point_in_polygon(p: Point2D, polygon: &[Point2D]) -> Result<bool> {
    if polygon.len() < 3 {
        return Err(GeometryError::TooFewVertices(polygon.len()));
    }
    if !p.is_finite() || polygon.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let n = polygon.len();
    let mut inside = false;
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[(i + 1) % n];
        if on_segment(p, a, b) {
            return Ok(true);
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    Ok(inside)
}

fn on_segment(p: Point2D, a: Point2D, b: Point2D) -> bool {
    let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    let len = a.distance(&b);
    let scale = len.max(a.x.abs()).max(a.y.abs()).max(1.0);
    if cross.abs() > 1e-12 * scale * len.max(f64::MIN_POSITIVE) {
        return false;
    }
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Shoelace signed area. Positive means clockwise on screen (y down).
pub fn signed_area(polygon: &[Point2D]) -> f64 {
    let n = polygon.len();
    (0..n)
        .map(|i| {
            let a = polygon[i];
            let b = polygon[(i + 1) % n];
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        / 2.0
}

/// True when no two non-adjacent edges touch.
pub fn is_simple_polygon(polygon: &[Point2D]) -> bool {
    let n = polygon.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[(i + 1) % n]);
        if a.distance(&b) == 0.0 {
            return false;
        }
        for j in (i + 1)..n {
            // adjacent edges share a vertex by construction
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (polygon[j], polygon[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

fn orient(p: Point2D, q: Point2D, r: Point2D) -> f64 {
    (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x)
}

fn segments_intersect(a: Point2D, b: Point2D, c: Point2D, d: Point2D) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(a, c, d))
        || (d2 == 0.0 && on_segment(b, c, d))
        || (d3 == 0.0 && on_segment(c, a, b))
        || (d4 == 0.0 && on_segment(d, a, b))
}
