//! Landmark and mask-template data model, per-mode correspondence selection
//! and bounded keypoint perturbation.
//!
//! Landmark indices are **0-based** everywhere (iBUG 300-W order: 0-16 jaw,
//! 17-26 brows, 27-30 nose bridge, 31-35 nose base, 36-47 eyes, 48-67 mouth).
//! Publications often quote the same scheme 1-based.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{is_simple_polygon, signed_area, Point2D};

pub const LANDMARK_COUNT: usize = 68;
pub const KEYPOINT_COUNT: usize = 12;
/// Minimum share of landmarks that must fall inside the image.
pub const MIN_INSIDE_FRACTION: f64 = 0.8;

const DEFAULT_TABLE_JSON: &str = include_str!("../data/default_table.json");

#[derive(Debug, Error)]
pub enum MaskingError {
    #[error("correspondence table has no entry for mode {0}")]
    MissingMode(WearingMode),
    #[error("invalid correspondence table: {0}")]
    InvalidTable(String),
    #[error("invalid landmarks for {source_id}: {reason}")]
    BadLandmarks { source_id: String, reason: String },
    #[error("invalid perturbation config: {0}")]
    InvalidPerturbation(String),
    #[error("unknown wearing mode `{0}` (expected one of CMFD, IMFD1_UNCOVERED_CHIN, IMFD2_UNCOVERED_NOSE, IMFD3_UNCOVERED_NOSE_MOUTH)")]
    UnknownMode(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("template needs exactly 12 keypoints and 12 roles, got {keypoints} keypoints and {roles} roles")]
    BadKeypointCount { keypoints: usize, roles: usize },
    #[error("keypoints do not form a simple clockwise polygon: {0}")]
    NonSimplePolygon(String),
    #[error("keypoint {index} at ({x}, {y}) lies outside the {width}x{height} template image")]
    KeypointOutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("roles must be contiguous runs in the order top, right, bottom, left with each present: {0}")]
    BadRoleOrder(String),
}

/// Axis-aligned face rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct FaceBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for FaceBox {
    fn from(v: [f64; 4]) -> Self {
        Self {
            x: v[0],
            y: v[1],
            w: v[2],
            h: v[3],
        }
    }
}

impl From<FaceBox> for [f64; 4] {
    fn from(b: FaceBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// One detected face: bounding box plus 68 ordered landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceLandmarks {
    source_id: String,
    bbox: FaceBox,
    points: Vec<Point2D>,
}

impl FaceLandmarks {
    pub fn new(
        source_id: impl Into<String>,
        bbox: FaceBox,
        points: Vec<Point2D>,
    ) -> Result<Self, MaskingError> {
        let source_id = source_id.into();
        let bad = |reason: String| MaskingError::BadLandmarks {
            source_id: source_id.clone(),
            reason,
        };
        if points.len() != LANDMARK_COUNT {
            return Err(bad(format!("expected 68 points, got {}", points.len())));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(bad(format!("point {i} is not finite")));
        }
        let bbox_ok = [bbox.x, bbox.y, bbox.w, bbox.h]
            .iter()
            .all(|v| v.is_finite())
            && bbox.w > 0.0
            && bbox.h > 0.0;
        if !bbox_ok {
            return Err(bad(
                "bounding box must have positive width and height".into()
            ));
        }
        Ok(Self {
            source_id,
            bbox,
            points,
        })
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn bbox(&self) -> FaceBox {
        self.bbox
    }

    pub fn points(&self) -> &[Point2D] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Point2D {
        self.points[index]
    }

    /// Mean of the 20 mouth landmarks (48-67).
    pub fn mouth_centroid(&self) -> Point2D {
        let mouth = &self.points[48..68];
        let n = mouth.len() as f64;
        Point2D::new(
            mouth.iter().map(|p| p.x).sum::<f64>() / n,
            mouth.iter().map(|p| p.y).sum::<f64>() / n,
        )
    }

    pub fn fraction_inside(&self, width: u32, height: u32) -> f64 {
        let (w, h) = (width as f64, height as f64);
        let inside = self
            .points
            .iter()
            .filter(|p| p.x >= 0.0 && p.y >= 0.0 && p.x <= w && p.y <= h)
            .count();
        inside as f64 / self.points.len() as f64
    }

    /// Fails when fewer than 80% of the landmarks fall inside the image.
    pub fn check_bounds(&self, width: u32, height: u32) -> Result<(), MaskingError> {
        let frac = self.fraction_inside(width, height);
        if frac < MIN_INSIDE_FRACTION {
            return Err(MaskingError::BadLandmarks {
                source_id: self.source_id.clone(),
                reason: format!(
                    "only {:.0}% of landmarks inside the {width}x{height} image",
                    frac * 100.0
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkStatus {
    Ok,
    NoFace,
    BadLandmarks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceBlock {
    pub bbox: FaceBox,
    pub points: Vec<Point2D>,
}

/// One line of the landmark record file (JSON Lines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRecord {
    pub source_id: String,
    pub image: String,
    pub status: LandmarkStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face: Option<FaceBlock>,
}

impl LandmarkRecord {
    pub fn ok(landmarks: &FaceLandmarks, image: impl Into<String>) -> Self {
        Self {
            source_id: landmarks.source_id.clone(),
            image: image.into(),
            status: LandmarkStatus::Ok,
            face: Some(FaceBlock {
                bbox: landmarks.bbox,
                points: landmarks.points.clone(),
            }),
        }
    }

    pub fn failed(
        source_id: impl Into<String>,
        image: impl Into<String>,
        status: LandmarkStatus,
    ) -> Self {
        Self {
            source_id: source_id.into(),
            image: image.into(),
            status,
            face: None,
        }
    }

    /// Landmarks for an `ok` record; `None` for failed detections.
    pub fn landmarks(&self) -> Option<Result<FaceLandmarks, MaskingError>> {
        if self.status != LandmarkStatus::Ok {
            return None;
        }
        Some(match &self.face {
            Some(face) => {
                FaceLandmarks::new(self.source_id.clone(), face.bbox, face.points.clone())
            }
            None => Err(MaskingError::BadLandmarks {
                source_id: self.source_id.clone(),
                reason: "status ok but no face block".into(),
            }),
        })
    }
}

pub fn read_landmark_records(path: &Path) -> Result<Vec<LandmarkRecord>, MaskingError> {
    let file = fs::File::open(path).map_err(|source| MaskingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| MaskingError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LandmarkRecord =
            serde_json::from_str(&line).map_err(|e| MaskingError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_landmark_records(path: &Path, records: &[LandmarkRecord]) -> Result<(), MaskingError> {
    let io_err = |source| MaskingError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for r in records {
        let line = serde_json::to_string(r).expect("landmark records always serialize");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeypointRole {
    Top,
    Right,
    Bottom,
    Left,
}

/// Mask raster reference plus its 12 annotated keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTemplate {
    pub name: String,
    pub image_ref: PathBuf,
    pub width: u32,
    pub height: u32,
    pub keypoints: Vec<Point2D>,
    pub roles: Vec<KeypointRole>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateFile {
    pub name: String,
    pub image: String,
    pub keypoints: Vec<Point2D>,
    pub roles: Vec<KeypointRole>,
}

impl MaskTemplate {
    /// Reads a template JSON file; the raster path is resolved relative to it.
    pub fn load(path: &Path) -> Result<Self, MaskingError> {
        let text = fs::read_to_string(path).map_err(|source| MaskingError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: TemplateFile = serde_json::from_str(&text).map_err(|e| MaskingError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let image_ref = base.join(&file.image);
        let (width, height) =
            image::image_dimensions(&image_ref).map_err(|e| MaskingError::Io {
                path: image_ref.clone(),
                source: std::io::Error::other(e.to_string()),
            })?;
        Ok(Self {
            name: file.name,
            image_ref,
            width,
            height,
            keypoints: file.keypoints,
            roles: file.roles,
        })
    }

    pub fn to_file(&self, image: impl Into<String>) -> TemplateFile {
        TemplateFile {
            name: self.name.clone(),
            image: image.into(),
            keypoints: self.keypoints.clone(),
            roles: self.roles.clone(),
        }
    }

    pub fn indices_with_role(&self, role: KeypointRole) -> BTreeSet<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == role)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Checks every template invariant and hands the template back.
pub fn validate_template(t: MaskTemplate) -> Result<MaskTemplate, TemplateError> {
    if t.keypoints.len() != KEYPOINT_COUNT || t.roles.len() != KEYPOINT_COUNT {
        return Err(TemplateError::BadKeypointCount {
            keypoints: t.keypoints.len(),
            roles: t.roles.len(),
        });
    }
    let (w, h) = (t.width as f64, t.height as f64);
    for (index, p) in t.keypoints.iter().enumerate() {
        if !p.is_finite() || p.x < 0.0 || p.y < 0.0 || p.x > w || p.y > h {
            return Err(TemplateError::KeypointOutOfBounds {
                index,
                x: p.x,
                y: p.y,
                width: t.width,
                height: t.height,
            });
        }
    }
    if !is_simple_polygon(&t.keypoints) {
        return Err(TemplateError::NonSimplePolygon("edges intersect".into()));
    }
    if signed_area(&t.keypoints) <= 0.0 {
        return Err(TemplateError::NonSimplePolygon(
            "keypoints run counter-clockwise".into(),
        ));
    }
    check_role_order(&t.roles)?;
    Ok(t)
}

fn check_role_order(roles: &[KeypointRole]) -> Result<(), TemplateError> {
    let mut runs: Vec<KeypointRole> = Vec::new();
    for r in roles {
        if runs.last() != Some(r) {
            runs.push(*r);
        }
    }
    let expected = [
        KeypointRole::Top,
        KeypointRole::Right,
        KeypointRole::Bottom,
        KeypointRole::Left,
    ];
    if runs != expected {
        return Err(TemplateError::BadRoleOrder(format!("got runs {runs:?}")));
    }
    Ok(())
}

/// The four mask-wearing classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WearingMode {
    #[serde(rename = "CMFD")]
    Cmfd,
    #[serde(rename = "IMFD1_UNCOVERED_CHIN")]
    Imfd1UncoveredChin,
    #[serde(rename = "IMFD2_UNCOVERED_NOSE")]
    Imfd2UncoveredNose,
    #[serde(rename = "IMFD3_UNCOVERED_NOSE_MOUTH")]
    Imfd3UncoveredNoseMouth,
}

impl WearingMode {
    pub const ALL: [WearingMode; 4] = [
        WearingMode::Cmfd,
        WearingMode::Imfd1UncoveredChin,
        WearingMode::Imfd2UncoveredNose,
        WearingMode::Imfd3UncoveredNoseMouth,
    ];

    pub const INCORRECT: [WearingMode; 3] = [
        WearingMode::Imfd1UncoveredChin,
        WearingMode::Imfd2UncoveredNose,
        WearingMode::Imfd3UncoveredNoseMouth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WearingMode::Cmfd => "CMFD",
            WearingMode::Imfd1UncoveredChin => "IMFD1_UNCOVERED_CHIN",
            WearingMode::Imfd2UncoveredNose => "IMFD2_UNCOVERED_NOSE",
            WearingMode::Imfd3UncoveredNoseMouth => "IMFD3_UNCOVERED_NOSE_MOUTH",
        }
    }

    /// Short tag used for output directories and file names.
    pub fn tag(self) -> &'static str {
        match self {
            WearingMode::Cmfd => "CMFD",
            WearingMode::Imfd1UncoveredChin => "IMFD1",
            WearingMode::Imfd2UncoveredNose => "IMFD2",
            WearingMode::Imfd3UncoveredNoseMouth => "IMFD3",
        }
    }

    pub fn is_correct(self) -> bool {
        self == WearingMode::Cmfd
    }
}

impl fmt::Display for WearingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WearingMode {
    type Err = MaskingError;

    /// Accepts full names or short tags, case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        WearingMode::ALL
            .into_iter()
            .find(|m| m.name() == upper || m.tag() == upper)
            .ok_or_else(|| MaskingError::UnknownMode(s.to_string()))
    }
}

/// Facial landmark indices for one mode, paired positionally with template
/// keypoints 0..11.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeCorrespondence {
    pub indices: Vec<usize>,
    /// Template keypoints allowed to move. `None` means the template's
    /// "top" keypoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation_eligible: Option<BTreeSet<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrespondenceTable {
    pub version: u32,
    pub modes: BTreeMap<WearingMode, ModeCorrespondence>,
}

impl Default for CorrespondenceTable {
    fn default() -> Self {
        Self::from_json(DEFAULT_TABLE_JSON).expect("embedded table is valid")
    }
}

impl CorrespondenceTable {
    pub fn from_json(text: &str) -> Result<Self, MaskingError> {
        let table: CorrespondenceTable =
            serde_json::from_str(text).map_err(|e| MaskingError::InvalidTable(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, MaskingError> {
        let text = fs::read_to_string(path).map_err(|source| MaskingError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn default_json() -> &'static str {
        DEFAULT_TABLE_JSON
    }

    pub fn validate(&self) -> Result<(), MaskingError> {
        for (mode, entry) in &self.modes {
            validate_entry(*mode, entry)?;
        }
        Ok(())
    }

    pub fn get(&self, mode: WearingMode) -> Result<&ModeCorrespondence, MaskingError> {
        self.modes.get(&mode).ok_or(MaskingError::MissingMode(mode))
    }

    /// Eligible template keypoints for `mode`, falling back to the template's
    /// top-role keypoints.
    pub fn eligible_for(
        &self,
        mode: WearingMode,
        template: &MaskTemplate,
    ) -> Result<BTreeSet<usize>, MaskingError> {
        Ok(match &self.get(mode)?.perturbation_eligible {
            Some(set) => set.clone(),
            None => template.indices_with_role(KeypointRole::Top),
        })
    }
}

fn validate_entry(mode: WearingMode, entry: &ModeCorrespondence) -> Result<(), MaskingError> {
    let invalid = |msg: String| MaskingError::InvalidTable(format!("{mode}: {msg}"));
    if entry.indices.len() != KEYPOINT_COUNT {
        return Err(invalid(format!(
            "expected 12 indices, got {}",
            entry.indices.len()
        )));
    }
    if let Some(i) = entry.indices.iter().find(|&&i| i >= LANDMARK_COUNT) {
        return Err(invalid(format!("landmark index {i} outside 0..=67")));
    }
    let distinct: BTreeSet<_> = entry.indices.iter().collect();
    if distinct.len() != KEYPOINT_COUNT {
        return Err(invalid("landmark indices must be distinct".into()));
    }
    if let Some(set) = &entry.perturbation_eligible {
        if let Some(i) = set.iter().find(|&&i| i >= KEYPOINT_COUNT) {
            return Err(invalid(format!("eligible keypoint {i} outside 0..=11")));
        }
    }
    Ok(())
}

/// The 12 facial points for `mode`, each paired with the template keypoint
/// index it matches.
pub fn select_correspondences(
    landmarks: &FaceLandmarks,
    mode: WearingMode,
    table: &CorrespondenceTable,
) -> Result<Vec<(Point2D, usize)>, MaskingError> {
    let entry = table.get(mode)?;
    validate_entry(mode, entry)?;
    Ok(entry
        .indices
        .iter()
        .enumerate()
        .map(|(k, &i)| (landmarks.point(i), k))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub max_displaced: usize,
    /// Displacement radius as a fraction of the face bounding-box height.
    pub radius_fraction: f64,
    pub enabled: bool,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            max_displaced: 2,
            radius_fraction: 0.03,
            enabled: true,
        }
    }
}

impl PerturbationConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), MaskingError> {
        if self.max_displaced > KEYPOINT_COUNT {
            return Err(MaskingError::InvalidPerturbation(format!(
                "max_displaced {} exceeds 12",
                self.max_displaced
            )));
        }
        if !(0.0..=0.2).contains(&self.radius_fraction) {
            return Err(MaskingError::InvalidPerturbation(format!(
                "radius_fraction {} outside [0, 0.2]",
                self.radius_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedKeypoints {
    pub points: Vec<Point2D>,
    /// Indices that were displaced, ascending.
    pub displaced: Vec<usize>,
}

/// Moves up to `cfg.max_displaced` eligible keypoints, each by a vector drawn
/// uniformly from the disc of radius `radius_fraction * face_bbox_height`.
///
/// The number moved is uniform over `0..=min(max_displaced, |eligible|)` and
/// the moved indices are drawn without replacement. Output depends only on
/// the arguments.
pub fn perturb_keypoints(
    keypoints: &[Point2D],
    eligible: &BTreeSet<usize>,
    cfg: &PerturbationConfig,
    rng_seed: u64,
    face_bbox_height: f64,
) -> PerturbedKeypoints {
    let mut points = keypoints.to_vec();
    let radius = cfg.radius_fraction * face_bbox_height;
    let candidates: Vec<usize> = eligible
        .iter()
        .copied()
        .filter(|&i| i < keypoints.len())
        .collect();
    if !cfg.enabled || !(radius > 0.0) || candidates.is_empty() || cfg.max_displaced == 0 {
        return PerturbedKeypoints {
            points,
            displaced: Vec::new(),
        };
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let limit = cfg.max_displaced.min(candidates.len());
    let count = rng.random_range(0..=limit);
    let mut displaced = Vec::with_capacity(count);
    for slot in sample(&mut rng, candidates.len(), count).iter() {
        let idx = candidates[slot];
        let r = radius * rng.random::<f64>().sqrt();
        let theta = std::f64::consts::TAU * rng.random::<f64>();
        points[idx].x += r * theta.cos();
        points[idx].y += r * theta.sin();
        displaced.push(idx);
    }
    displaced.sort_unstable();
    PerturbedKeypoints { points, displaced }
}
