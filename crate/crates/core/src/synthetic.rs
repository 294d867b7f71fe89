//! Analytic faces and a mask template for tests, demos and smoke runs.
//!
//! The face layout follows the 68-point order: an elliptical jawline (0-16),
//! straight brows, a vertical nose bridge (27-30), a nose base arc (31-35),
//! elliptical eyes and an elliptical two-ring mouth (48-67). Everything is a
//! deterministic function of [`FaceShape`].

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{point_in_polygon, Point2D};
use crate::masking::{
    write_landmark_records, FaceBox, FaceLandmarks, KeypointRole, LandmarkRecord, LandmarkStatus,
    MaskTemplate, MaskingError,
};
use crate::warp::{Channels, RasterImage, WarpError};

/// Shape parameters. Vertical offsets are fractions of `jaw_height`,
/// measured down from `center_y` (eye level).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceShape {
    pub center_x: f64,
    pub center_y: f64,
    /// Horizontal jaw semi-axis, pixels.
    pub jaw_width: f64,
    /// Vertical jaw semi-axis (eye level to chin), pixels.
    pub jaw_height: f64,
    /// Mouth half-width as a fraction of `jaw_width`.
    pub mouth_width: f64,
    /// Nose tip depth.
    pub nose_length: f64,
    /// Lower-lip depth.
    pub lip_bottom: f64,
    /// Upper-lip depth.
    pub lip_top: f64,
}

impl Default for FaceShape {
    fn default() -> Self {
        Self {
            center_x: 128.0,
            center_y: 100.0,
            jaw_width: 70.0,
            jaw_height: 110.0,
            mouth_width: 0.38,
            nose_length: 0.48,
            lip_bottom: 0.80,
            lip_top: 0.65,
        }
    }
}

impl FaceShape {
    /// Random shape fitting a 256x256 image.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            center_x: 128.0 + rng.random_range(-10.0..10.0),
            center_y: 100.0 + rng.random_range(-10.0..10.0),
            jaw_width: rng.random_range(55.0..85.0),
            jaw_height: rng.random_range(95.0..125.0),
            mouth_width: rng.random_range(0.30..0.45),
            nose_length: rng.random_range(0.42..0.52),
            lip_bottom: rng.random_range(0.76..0.84),
            lip_top: rng.random_range(0.60..0.68),
        }
    }
}

pub fn canonical_points(s: &FaceShape) -> Vec<Point2D> {
    let (cx, cy, a, b) = (s.center_x, s.center_y, s.jaw_width, s.jaw_height);
    let mut p = vec![Point2D::default(); 68];
    for (i, pt) in p.iter_mut().enumerate().take(17) {
        let t = PI * i as f64 / 16.0;
        *pt = Point2D::new(cx - a * t.cos(), cy + b * t.sin());
    }
    for i in 0..5 {
        let f = i as f64;
        p[17 + i] = Point2D::new(cx - a * (0.8 - 0.15 * f), cy - 0.25 * b);
        p[22 + i] = Point2D::new(cx + a * (0.2 + 0.15 * f), cy - 0.25 * b);
    }
    for k in 0..4 {
        p[27 + k] = Point2D::new(cx, cy + b * s.nose_length * k as f64 / 3.0);
    }
    for k in 0..5 {
        let lift = if k == 1 || k == 3 { 0.02 * b } else { 0.0 };
        p[31 + k] = Point2D::new(
            cx + a * 0.25 * (k as f64 - 2.0) / 2.0,
            cy + b * (s.nose_length + 0.06) - lift,
        );
    }
    p[33] = Point2D::new(cx, cy + b * (s.nose_length + 0.07));
    for (e, ox) in [-0.45, 0.45].into_iter().enumerate() {
        for k in 0..6 {
            let t = 2.0 * PI * k as f64 / 6.0;
            p[36 + 6 * e + k] =
                Point2D::new(cx + a * ox - a * 0.15 * t.cos(), cy - 0.05 * b * t.sin());
        }
    }
    let half = (s.lip_bottom - s.lip_top) / 2.0;
    let mouth_cy = cy + b * (s.lip_top + half);
    for k in 0..12 {
        let t = PI + 2.0 * PI * k as f64 / 12.0;
        p[48 + k] = Point2D::new(
            cx + a * s.mouth_width * t.cos(),
            mouth_cy + b * half * t.sin(),
        );
    }
    for k in 0..8 {
        let t = PI + 2.0 * PI * k as f64 / 8.0;
        p[60 + k] = Point2D::new(
            cx + a * s.mouth_width * 0.7 * t.cos(),
            mouth_cy + b * half * 0.4 * t.sin(),
        );
    }
    p
}

pub fn canonical_bbox(s: &FaceShape) -> FaceBox {
    FaceBox {
        x: s.center_x - s.jaw_width,
        y: s.center_y - 0.35 * s.jaw_height,
        w: 2.0 * s.jaw_width,
        h: 1.35 * s.jaw_height,
    }
}

pub fn canonical_landmarks(source_id: &str, s: &FaceShape) -> FaceLandmarks {
    FaceLandmarks::new(source_id, canonical_bbox(s), canonical_points(s))
        .expect("analytic layout is always valid")
}

/// Flat-shaded RGB rendering of the face: background, skin, eyes, lips.
pub fn render_face(s: &FaceShape, width: u32, height: u32) -> RasterImage {
    let pts = canonical_points(s);
    let jaw: Vec<Point2D> = {
        // close the jaw with an arc over the forehead
        let mut v: Vec<Point2D> = pts[..17].to_vec();
        for k in 1..16 {
            let t = PI * k as f64 / 16.0;
            v.push(Point2D::new(
                s.center_x + s.jaw_width * t.cos(),
                s.center_y - 0.55 * s.jaw_height * t.sin(),
            ));
        }
        v
    };
    let mouth = &pts[48..60];
    let eyes = [&pts[36..42], &pts[42..48]];
    let mut img = RasterImage::new(width, height, Channels::Rgb);
    for y in 0..height {
        for x in 0..width {
            let p = Point2D::new(x as f64, y as f64);
            let inside = |poly: &[Point2D]| point_in_polygon(p, poly).unwrap_or(false);
            let shade = (x + y) as f64 / (width + height) as f64;
            let rgb = if eyes.iter().any(|e| inside(e)) {
                [40, 30, 25]
            } else if inside(mouth) {
                [170, 70, 80]
            } else if inside(&jaw) {
                let g = (20.0 * shade) as u8;
                [225 - g, 180 - g, 150 - g]
            } else {
                let g = (60.0 * shade) as u8;
                [70 + g, 90 + g, 110 + g]
            };
            img.put(x, y, &rgb);
        }
    }
    img
}

/// Keypoints of the bundled surgical-mask template, clockwise from the
/// top-left corner: 3 top, 3 right, 3 bottom (chin point in the middle),
/// 3 left.
pub fn template_keypoints() -> Vec<Point2D> {
    let unit = [
        (0.0, 0.0),
        (0.5, 0.0),
        (1.0, 0.0),
        (0.97, 0.3),
        (0.9, 0.6),
        (0.75, 0.85),
        (0.6, 0.97),
        (0.5, 1.15),
        (0.4, 0.97),
        (0.25, 0.85),
        (0.1, 0.6),
        (0.03, 0.3),
    ];
    unit.iter()
        .map(|&(u, v)| Point2D::new(10.0 + 200.0 * u, 10.0 + 110.0 * v))
        .collect()
}

pub const TEMPLATE_WIDTH: u32 = 220;
pub const TEMPLATE_HEIGHT: u32 = 147;

pub fn template_roles() -> Vec<KeypointRole> {
    use KeypointRole::*;
    vec![
        Top, Top, Top, Right, Right, Right, Bottom, Bottom, Bottom, Left, Left, Left,
    ]
}

/// Light-blue pleated mask on a transparent background.
pub fn template_raster() -> RasterImage {
    let kp = template_keypoints();
    let mut img = RasterImage::new(TEMPLATE_WIDTH, TEMPLATE_HEIGHT, Channels::Rgba);
    for y in 0..TEMPLATE_HEIGHT {
        for x in 0..TEMPLATE_WIDTH {
            let p = Point2D::new(x as f64, y as f64);
            if point_in_polygon(p, &kp).unwrap_or(false) {
                let pleat = (y / 12) % 3 == 2;
                let px = if pleat {
                    [120, 165, 210, 255]
                } else {
                    [160, 200, 235, 255]
                };
                img.put(x, y, &px);
            }
        }
    }
    img
}

pub fn template(image_ref: impl Into<PathBuf>) -> MaskTemplate {
    MaskTemplate {
        name: "synthetic-surgical".into(),
        image_ref: image_ref.into(),
        width: TEMPLATE_WIDTH,
        height: TEMPLATE_HEIGHT,
        keypoints: template_keypoints(),
        roles: template_roles(),
    }
}

#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub count: usize,
    pub seed: u64,
    pub image_size: u32,
    /// Face indices recorded as `no_face` (no landmarks emitted).
    pub no_face: Vec<usize>,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            count: 20,
            seed: 0,
            image_size: 256,
            no_face: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusPaths {
    pub faces_dir: PathBuf,
    pub landmarks: PathBuf,
    pub template: PathBuf,
    pub shapes: Vec<(String, FaceShape)>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Warp(#[from] WarpError),
    #[error(transparent)]
    Masking(#[from] MaskingError),
}

/// Writes `faces/NNNNN.png`, `landmarks.jsonl`, `template.json` and
/// `template.png` under `root`.
pub fn write_corpus(root: &Path, spec: &CorpusSpec) -> Result<CorpusPaths, CorpusError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path, source }
    };
    let faces_dir = root.join("faces");
    fs::create_dir_all(&faces_dir).map_err(io(&faces_dir))?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::with_capacity(spec.count);
    let mut shapes = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let shape = FaceShape::random(&mut rng);
        let id = format!("{i:05}");
        let file = format!("{id}.png");
        render_face(&shape, spec.image_size, spec.image_size).save_png(&faces_dir.join(&file))?;
        if spec.no_face.contains(&i) {
            records.push(LandmarkRecord::failed(&id, &file, LandmarkStatus::NoFace));
        } else {
            records.push(LandmarkRecord::ok(&canonical_landmarks(&id, &shape), &file));
        }
        shapes.push((id, shape));
    }
    let landmarks = root.join("landmarks.jsonl");
    write_landmark_records(&landmarks, &records)?;

    let template_png = root.join("template.png");
    template_raster().save_png(&template_png)?;
    let template_path = root.join("template.json");
    let body = serde_json::to_string_pretty(&template(&template_png).to_file("template.png"))
        .expect("template serializes");
    fs::write(&template_path, body).map_err(io(&template_path))?;

    Ok(CorpusPaths {
        faces_dir,
        landmarks,
        template: template_path,
        shapes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::validate_template;

    #[test]
    fn bundled_template_is_valid() {
        validate_template(template("t.png")).unwrap();
    }

    #[test]
    fn canonical_layout_landmarks_in_expected_regions() {
        let s = FaceShape::default();
        let p = canonical_points(&s);
        assert_eq!(p[8], Point2D::new(s.center_x, s.center_y + s.jaw_height));
        // nose tip above nose base above upper lip above lower lip above chin
        assert!(p[30].y < p[33].y && p[33].y < p[51].y && p[51].y < p[57].y && p[57].y < p[8].y);
        assert!(p[48].x < p[54].x);
        assert!(canonical_landmarks("x", &s).check_bounds(256, 256).is_ok());
    }

    #[test]
    fn random_shapes_fit_in_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let s = FaceShape::random(&mut rng);
            let lm = canonical_landmarks("x", &s);
            assert_eq!(lm.fraction_inside(256, 256), 1.0);
        }
    }
}
