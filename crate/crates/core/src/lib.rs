//! Synthesizes correctly and incorrectly masked face images.
//!
//! A mask template with 12 annotated keypoints is mapped onto a face through
//! a homography estimated from 12 facial landmarks. Which landmarks are used
//! decides how the mask is worn: covering nose, mouth and chin (CMFD), or
//! leaving the chin, nose, or nose and mouth uncovered (IMFD1-3).

pub mod cli;
pub mod geometry;
pub mod masking;
pub mod pipeline;
pub mod synthetic;
pub mod warp;

pub use geometry::{
    apply_homography, estimate_homography, invert, point_in_polygon, GeometryError, Homography,
    Point2D,
};
pub use masking::{
    perturb_keypoints, select_correspondences, CorrespondenceTable, FaceBox, FaceLandmarks,
    LandmarkRecord, LandmarkStatus, MaskTemplate, MaskingError, PerturbationConfig, WearingMode,
};
pub use pipeline::{
    apply_exclusion_list, assign_modes, compute_statistics, generate_masked_face,
    run_dataset_generation, ClassRatioConfig, GenerationManifest, GenerationRecord, MaskAsset,
    Pairing, PipelineError, RecordStatus, RunConfiguration, StatisticsReport,
};
pub use warp::{composite, warp_mask, RasterImage, WarpError};
