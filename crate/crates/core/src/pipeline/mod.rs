//! End-to-end dataset generation: class assignment, mask placement, coverage
//! checks, manifest and statistics.

mod assign;
mod manifest;
mod stats;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use assign::{
    apportion, assign_modes, class_counts, derive_seed, face_seed, Assignment, ClassRatioConfig,
    Pairing,
};
pub use manifest::{
    apply_exclusion_list, read_exclusion_list, ExclusionOutcome, GenerationManifest,
    GenerationRecord, ManifestHeader, RecordStatus, COLUMNS, CSV_NAME, JSONL_NAME,
};
pub use stats::{compute_statistics, StatisticsReport};

use crate::geometry::{estimate_homography, point_in_polygon, GeometryError, Homography, Point2D};
use crate::masking::{
    perturb_keypoints, select_correspondences, validate_template, CorrespondenceTable,
    FaceLandmarks, LandmarkStatus, MaskTemplate, MaskingError, PerturbationConfig, TemplateError,
    WearingMode,
};
use crate::warp::{composite, feather_alpha, warp_mask, RasterImage, WarpError};

/// Landmark indices used by the coverage predicates.
pub const NOSE_TIP: usize = 30;
pub const CHIN: usize = 8;

/// Faces between progress log lines.
const LOG_EVERY: usize = 1000;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no input faces")]
    EmptyInput,
    #[error("duplicate source id `{0}`")]
    DuplicateSource(String),
    #[error("missing input: {0}")]
    MissingInput(PathBuf),
    #[error("output directory {path} is not writable: {message}")]
    OutputNotWritable { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}:{line}: {message}")]
    InvalidManifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Masking(#[from] MaskingError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Warp(#[from] WarpError),
}

/// A validated template together with its RGBA raster.
#[derive(Debug, Clone)]
pub struct MaskAsset {
    pub template: MaskTemplate,
    pub raster: RasterImage,
}

impl MaskAsset {
    pub fn new(template: MaskTemplate, raster: RasterImage) -> Result<Self, PipelineError> {
        let template = validate_template(template)?;
        if raster.width() != template.width || raster.height() != template.height {
            return Err(PipelineError::InvalidConfig(format!(
                "template raster is {}x{}, template declares {}x{}",
                raster.width(),
                raster.height(),
                template.width,
                template.height
            )));
        }
        Ok(Self {
            template,
            raster: raster.to_rgba(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let template = MaskTemplate::load(path)?;
        let raster = RasterImage::load_png(&template.image_ref)?;
        Self::new(template, raster)
    }
}

/// Which regions a placed mask covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub nose_tip: bool,
    pub mouth: bool,
    pub chin: bool,
}

impl Coverage {
    /// Nose tip (30), mouth centroid (mean of 48-67) and chin (8) tested
    /// against the placed mask polygon.
    pub fn measure(landmarks: &FaceLandmarks, polygon: &[Point2D]) -> Result<Self, GeometryError> {
        Ok(Self {
            nose_tip: point_in_polygon(landmarks.point(NOSE_TIP), polygon)?,
            mouth: point_in_polygon(landmarks.mouth_centroid(), polygon)?,
            chin: point_in_polygon(landmarks.point(CHIN), polygon)?,
        })
    }

    /// Whether this coverage is what `mode` should produce.
    pub fn satisfies(&self, mode: WearingMode) -> bool {
        match mode {
            WearingMode::Cmfd => self.nose_tip && self.mouth && self.chin,
            WearingMode::Imfd1UncoveredChin => self.nose_tip && self.mouth && !self.chin,
            WearingMode::Imfd2UncoveredNose => !self.nose_tip && self.mouth,
            WearingMode::Imfd3UncoveredNoseMouth => !self.nose_tip && !self.mouth && self.chin,
        }
    }
}

/// Output of [`generate_masked_face`].
#[derive(Debug, Clone)]
pub struct MaskedFace {
    pub image: RasterImage,
    pub record: GenerationRecord,
    /// Template to face mapping.
    pub homography: Homography,
    /// Template keypoints (after perturbation) mapped onto the face.
    pub polygon: Vec<Point2D>,
}

impl MaskedFace {
    pub fn coverage(&self, landmarks: &FaceLandmarks) -> Result<Coverage, GeometryError> {
        Coverage::measure(landmarks, &self.polygon)
    }
}

pub fn output_path(source_id: &str, mode: WearingMode) -> String {
    format!("{tag}/{source_id}_{tag}.png", tag = mode.tag())
}

/// Places the mask on one face.
///
/// Template keypoints are perturbed, then mapped onto the facial points
/// selected for `mode` by a least-squares homography. The returned record has
/// status `generated` and an `output_path` relative to the output root.
#[allow(clippy::too_many_arguments)]
pub fn generate_masked_face(
    face: &RasterImage,
    landmarks: &FaceLandmarks,
    asset: &MaskAsset,
    mode: WearingMode,
    table: &CorrespondenceTable,
    perturb: &PerturbationConfig,
    seed: u64,
    feather_radius: Option<f32>,
) -> Result<MaskedFace, PipelineError> {
    let template = &asset.template;
    let pairs = select_correspondences(landmarks, mode, table)?;
    let eligible = table.eligible_for(mode, template)?;
    let moved = perturb_keypoints(
        &template.keypoints,
        &eligible,
        perturb,
        seed,
        landmarks.bbox().h,
    );

    let src: Vec<Point2D> = pairs.iter().map(|&(_, k)| moved.points[k]).collect();
    let dst: Vec<Point2D> = pairs.iter().map(|&(p, _)| p).collect();
    let h = estimate_homography(&src, &dst)?;
    let residual = h.rms_reprojection_error(&src, &dst)?;

    let mut layer = warp_mask(&asset.raster, &h, face.width(), face.height())?;
    if let Some(r) = feather_radius {
        feather_alpha(&mut layer, r)?;
    }
    let image = composite(&face.to_rgb(), &layer)?;
    let polygon = moved
        .points
        .iter()
        .map(|p| h.apply(*p))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(MaskedFace {
        image,
        record: GenerationRecord {
            output_path: output_path(landmarks.source_id(), mode),
            source_id: landmarks.source_id().to_string(),
            class: Some(mode),
            template: template.name.clone(),
            seed,
            residual_px: Some(residual),
            perturbed_indices: moved.displaced,
            status: RecordStatus::Generated,
        },
        homography: h,
        polygon,
    })
}

/// Everything a generation run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfiguration {
    pub faces_dir: PathBuf,
    pub landmarks_path: PathBuf,
    pub template_path: PathBuf,
    pub table_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub ratios: ClassRatioConfig,
    pub seed: u64,
    pub perturbation: PerturbationConfig,
    pub workers: usize,
    pub exclude_path: Option<PathBuf>,
    pub feather_radius: Option<f32>,
}

impl RunConfiguration {
    pub fn new(
        faces_dir: impl Into<PathBuf>,
        landmarks_path: impl Into<PathBuf>,
        template_path: impl Into<PathBuf>,
        out_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            faces_dir: faces_dir.into(),
            landmarks_path: landmarks_path.into(),
            template_path: template_path.into(),
            table_path: None,
            out_dir: out_dir.into(),
            ratios: ClassRatioConfig::default(),
            seed: 0,
            perturbation: PerturbationConfig::default(),
            workers: 1,
            exclude_path: None,
            feather_radius: None,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.ratios.validate()?;
        self.perturbation.validate()?;
        if self.workers == 0 {
            return Err(PipelineError::InvalidConfig(
                "workers must be at least 1".into(),
            ));
        }
        if let Some(r) = self.feather_radius {
            if !r.is_finite() || r < 0.0 {
                return Err(PipelineError::InvalidConfig(format!(
                    "feather radius {r} must be >= 0"
                )));
            }
        }
        for p in [&self.faces_dir, &self.landmarks_path, &self.template_path]
            .into_iter()
            .chain(self.table_path.as_ref())
            .chain(self.exclude_path.as_ref())
        {
            if !p.exists() {
                return Err(PipelineError::MissingInput(p.clone()));
            }
        }
        Ok(())
    }
}

/// A face scheduled for generation.
struct Job {
    source_id: String,
    image: PathBuf,
    landmarks: FaceLandmarks,
    modes: Vec<WearingMode>,
}

/// Lists `*.png` faces in `dir` sorted by stem.
fn list_faces(dir: &Path) -> Result<Vec<(String, PathBuf)>, PipelineError> {
    let entries = fs::read_dir(dir).map_err(|source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut faces = Vec::new();
    for e in entries {
        let path = e
            .map_err(|source| PipelineError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        let is_png = path
            .extension()
            .and_then(|x| x.to_str())
            .is_some_and(|x| x.eq_ignore_ascii_case("png"));
        if !is_png || !path.is_file() {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            faces.push((stem.to_string(), path.clone()));
        }
    }
    faces.sort();
    Ok(faces)
}

/// Runs a full generation pass and writes the manifest.
pub fn run_dataset_generation(cfg: &RunConfiguration) -> Result<GenerationManifest, PipelineError> {
    cfg.validate()?;
    let asset = MaskAsset::load(&cfg.template_path)?;
    let table = match &cfg.table_path {
        Some(p) => CorrespondenceTable::load(p)?,
        None => CorrespondenceTable::default(),
    };
    table.validate()?;

    let faces = list_faces(&cfg.faces_dir)?;
    if faces.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let mut landmark_records = HashMap::new();
    for r in crate::masking::read_landmark_records(&cfg.landmarks_path)? {
        if landmark_records.contains_key(&r.source_id) {
            log::warn!(
                "duplicate landmark record for {}, keeping the first",
                r.source_id
            );
            continue;
        }
        landmark_records.insert(r.source_id.clone(), r);
    }

    let template_name = asset.template.name.clone();
    let mut records = Vec::new();
    let mut ok: Vec<(String, PathBuf, FaceLandmarks)> = Vec::new();
    for (source_id, image) in faces {
        let skip = |status| GenerationRecord::skipped(&source_id, None, &template_name, status);
        let Some(rec) = landmark_records.get(&source_id) else {
            log::warn!("{source_id}: no landmark record");
            records.push(skip(RecordStatus::SkippedBadLandmarks));
            continue;
        };
        match rec.status {
            LandmarkStatus::NoFace => {
                log::debug!("{source_id}: no detected face rectangle");
                records.push(skip(RecordStatus::SkippedNoFace));
                continue;
            }
            LandmarkStatus::BadLandmarks => {
                records.push(skip(RecordStatus::SkippedBadLandmarks));
                continue;
            }
            LandmarkStatus::Ok => {}
        }
        let checked = rec
            .landmarks()
            .unwrap_or_else(|| {
                Err(MaskingError::BadLandmarks {
                    source_id: source_id.clone(),
                    reason: "record has no face block".into(),
                })
            })
            .and_then(|lm| {
                let (w, h) =
                    image::image_dimensions(&image).map_err(|e| MaskingError::BadLandmarks {
                        source_id: source_id.clone(),
                        reason: format!("unreadable image: {e}"),
                    })?;
                lm.check_bounds(w, h)?;
                Ok(lm)
            });
        match checked {
            Ok(lm) => ok.push((source_id, image, lm)),
            Err(e) => {
                log::warn!("{source_id}: {e}");
                records.push(skip(RecordStatus::SkippedBadLandmarks));
            }
        }
    }

    let mut jobs: Vec<Job> = Vec::with_capacity(ok.len());
    if !ok.is_empty() {
        let ids: Vec<String> = ok.iter().map(|(id, _, _)| id.clone()).collect();
        let mut by_id: BTreeMap<String, Vec<WearingMode>> = BTreeMap::new();
        for a in assign_modes(&ids, &cfg.ratios, cfg.seed)? {
            by_id.entry(a.source_id).or_default().push(a.mode);
        }
        for (source_id, image, landmarks) in ok {
            let modes = by_id.remove(&source_id).unwrap_or_default();
            jobs.push(Job {
                source_id,
                image,
                landmarks,
                modes,
            });
        }
    }

    prepare_out_dir(&cfg.out_dir, &jobs)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let done = AtomicUsize::new(0);
    let total = jobs.len();
    let generated: Vec<Vec<GenerationRecord>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let out = process_job(job, &asset, &table, cfg);
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                if n % LOG_EVERY == 0 {
                    log::info!("processed {n}/{total} faces");
                }
                out
            })
            .collect::<Result<_, _>>()
    })?;
    records.extend(generated.into_iter().flatten());

    let mut manifest = GenerationManifest {
        header: ManifestHeader {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            global_seed: cfg.seed,
            ratios: cfg.ratios,
            perturbation: cfg.perturbation,
            table_version: table.version,
            template: template_name,
        },
        records,
    };
    manifest.sort();

    if let Some(p) = &cfg.exclude_path {
        let entries = read_exclusion_list(p)?;
        apply_exclusion_list(&mut manifest, &entries, Some(&cfg.out_dir))?;
    }
    manifest.write(&cfg.out_dir)?;
    Ok(manifest)
}

fn prepare_out_dir(out: &Path, jobs: &[Job]) -> Result<(), PipelineError> {
    let not_writable = |e: std::io::Error| PipelineError::OutputNotWritable {
        path: out.to_path_buf(),
        message: e.to_string(),
    };
    fs::create_dir_all(out).map_err(not_writable)?;
    let used: std::collections::BTreeSet<WearingMode> =
        jobs.iter().flat_map(|j| j.modes.iter().copied()).collect();
    for mode in used {
        fs::create_dir_all(out.join(mode.tag())).map_err(not_writable)?;
    }
    Ok(())
}

/// Generates every assigned class for one face. Placement failures become
/// skip records; only output write failures are fatal.
fn process_job(
    job: &Job,
    asset: &MaskAsset,
    table: &CorrespondenceTable,
    cfg: &RunConfiguration,
) -> Result<Vec<GenerationRecord>, PipelineError> {
    let template = &asset.template.name;
    let skip_all = |reason: &dyn std::fmt::Display| {
        log::warn!("{}: {reason}", job.source_id);
        job.modes
            .iter()
            .map(|m| {
                GenerationRecord::skipped(
                    &job.source_id,
                    Some(*m),
                    template,
                    RecordStatus::SkippedBadLandmarks,
                )
            })
            .collect()
    };
    let face = match RasterImage::load_png(&job.image) {
        Ok(f) => f,
        Err(e) => return Ok(skip_all(&e)),
    };
    let mut out = Vec::with_capacity(job.modes.len());
    for &mode in &job.modes {
        let seed = face_seed(cfg.seed, &job.source_id, mode);
        match generate_masked_face(
            &face,
            &job.landmarks,
            asset,
            mode,
            table,
            &cfg.perturbation,
            seed,
            cfg.feather_radius,
        ) {
            Ok(masked) => {
                let path = cfg.out_dir.join(&masked.record.output_path);
                masked
                    .image
                    .save_png(&path)
                    .map_err(|e| PipelineError::OutputNotWritable {
                        path,
                        message: e.to_string(),
                    })?;
                out.push(masked.record);
            }
            Err(e) => {
                log::warn!("{} {}: {e}", job.source_id, mode.tag());
                let mut r = GenerationRecord::skipped(
                    &job.source_id,
                    Some(mode),
                    template,
                    RecordStatus::SkippedBadLandmarks,
                );
                r.seed = seed;
                out.push(r);
            }
        }
    }
    Ok(out)
}
