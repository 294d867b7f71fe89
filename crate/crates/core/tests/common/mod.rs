//! Reference implementations shared by the integration tests. Nothing here
//! calls into the estimator or the polygon test under scrutiny.
#![allow(dead_code)]

use maskfab::geometry::Point2D;

/// Eigen-decomposition of a symmetric 9x9 matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matching column eigenvectors.
pub fn jacobi_eigen(mut a: [[f64; 9]; 9]) -> ([f64; 9], [[f64; 9]; 9]) {
    let mut v = [[0.0; 9]; 9];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..60 {
        let off: f64 = (0..9)
            .flat_map(|i| (0..9).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..9).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..9 {
            for q in p + 1..9 {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..9 {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..9 {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut vals = [0.0; 9];
    for i in 0..9 {
        vals[i] = a[i][i];
    }
    (vals, v)
}

/// Two DLT rows per correspondence.
pub fn design_rows(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Vec<[f64; 9]> {
    let mut rows = Vec::with_capacity(src.len() * 2);
    for (&(x, y), &(u, v)) in src.iter().zip(dst) {
        rows.push([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        rows.push([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    rows
}

/// `||A h||` for a given 9-vector.
pub fn algebraic_residual(rows: &[[f64; 9]], h: &[f64; 9]) -> f64 {
    rows.iter()
        .map(|r| {
            let d: f64 = r.iter().zip(h).map(|(a, b)| a * b).sum();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Unit vector minimizing `||A h||`, via the smallest eigenvector of `AᵀA`.
pub fn min_residual_vector(rows: &[[f64; 9]]) -> [f64; 9] {
    let mut ata = [[0.0; 9]; 9];
    for r in rows {
        for i in 0..9 {
            for j in 0..9 {
                ata[i][j] += r[i] * r[j];
            }
        }
    }
    let (vals, vecs) = jacobi_eigen(ata);
    let k = (0..9).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    let mut h = [0.0; 9];
    for i in 0..9 {
        h[i] = vecs[i][k];
    }
    let n = h.iter().map(|x| x * x).sum::<f64>().sqrt();
    h.map(|x| x / n)
}

/// Similarity taking the centroid to the origin and the mean distance to √2,
/// as a row-major 3x3 matrix.
pub fn similarity_normalizer(pts: &[(f64, f64)]) -> [[f64; 3]; 3] {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mean = pts
        .iter()
        .map(|p| ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s = std::f64::consts::SQRT_2 / mean;
    [[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]]
}

pub fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

/// Inverse of a similarity built by [`similarity_normalizer`].
pub fn similarity_inverse(t: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let s = t[0][0];
    [
        [1.0 / s, 0.0, -t[0][2] / s],
        [0.0, 1.0 / s, -t[1][2] / s],
        [0.0, 0.0, 1.0],
    ]
}

pub fn map_point(m: &[[f64; 3]; 3], p: (f64, f64)) -> (f64, f64) {
    let w = m[2][0] * p.0 + m[2][1] * p.1 + m[2][2];
    (
        (m[0][0] * p.0 + m[0][1] * p.1 + m[0][2]) / w,
        (m[1][0] * p.0 + m[1][1] * p.1 + m[1][2]) / w,
    )
}

pub fn flatten_unit(m: &[[f64; 3]; 3]) -> [f64; 9] {
    let flat = [
        m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
    ];
    let n = flat.iter().map(|x| x * x).sum::<f64>().sqrt();
    flat.map(|x| x / n)
}

/// Residual of the best normalized-frame DLT solution and of a candidate
/// homography `h` measured in that same frame: `(oracle, candidate)`.
pub fn normalized_residuals(
    src: &[(f64, f64)],
    dst: &[(f64, f64)],
    h: &[[f64; 3]; 3],
) -> (f64, f64) {
    let ts = similarity_normalizer(src);
    let td = similarity_normalizer(dst);
    let sn: Vec<_> = src.iter().map(|p| map_point(&ts, *p)).collect();
    let dn: Vec<_> = dst.iter().map(|p| map_point(&td, *p)).collect();
    let rows = design_rows(&sn, &dn);
    let oracle = algebraic_residual(&rows, &min_residual_vector(&rows));
    let hn = mat_mul(&mat_mul(&td, h), &similarity_inverse(&ts));
    (oracle, algebraic_residual(&rows, &flatten_unit(&hn)))
}

/// Raw (unnormalized) system: `(oracle, candidate)` residuals.
pub fn raw_residuals(src: &[(f64, f64)], dst: &[(f64, f64)], h: &[[f64; 3]; 3]) -> (f64, f64) {
    let rows = design_rows(src, dst);
    let oracle = algebraic_residual(&rows, &min_residual_vector(&rows));
    (oracle, algebraic_residual(&rows, &flatten_unit(h)))
}

/// Winding number of `polygon` around `p` (non-zero means inside).
pub fn winding_number(p: (f64, f64), polygon: &[(f64, f64)]) -> i32 {
    let mut wn = 0;
    for i in 0..polygon.len() {
        let a = polygon[i];
        let b = polygon[(i + 1) % polygon.len()];
        let cross = (b.0 - a.0) * (p.1 - a.1) - (p.0 - a.0) * (b.1 - a.1);
        if a.1 <= p.1 {
            if b.1 > p.1 && cross > 0.0 {
                wn += 1;
            }
        } else if b.1 <= p.1 && cross < 0.0 {
            wn -= 1;
        }
    }
    wn
}

/// Distance from `p` to the closest polygon edge.
pub fn edge_distance(p: (f64, f64), polygon: &[(f64, f64)]) -> f64 {
    (0..polygon.len())
        .map(|i| {
            let a = polygon[i];
            let b = polygon[(i + 1) % polygon.len()];
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let len2 = dx * dx + dy * dy;
            let t = if len2 == 0.0 {
                0.0
            } else {
                (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
            };
            ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn pts(v: &[(f64, f64)]) -> Vec<Point2D> {
    v.iter().map(|&(x, y)| Point2D::new(x, y)).collect()
}

pub fn tuples(v: &[Point2D]) -> Vec<(f64, f64)> {
    v.iter().map(|p| (p.x, p.y)).collect()
}

/// Exact homography through four correspondences by solving the 8x8 system
/// with Gaussian elimination (h33 = 1).
pub fn four_point_homography(src: &[(f64, f64)], dst: &[(f64, f64)]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 9]; 8];
    for i in 0..4 {
        let (x, y) = src[i];
        let (u, v) = dst[i];
        m[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        m[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    for col in 0..8 {
        let piv = (col..8)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, piv);
        for r in 0..8 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..9 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let h: Vec<f64> = (0..8).map(|i| m[i][8] / m[i][i]).collect();
    [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]]
}
