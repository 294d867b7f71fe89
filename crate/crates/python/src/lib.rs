//! Python bindings. Structured results (manifests, statistics, corpus paths)
//! are returned as plain dicts and lists.

use std::collections::BTreeSet;
use std::path::PathBuf;

use maskfab::geometry::{self, GeometryError, Point2D};
use maskfab::masking::{self, PerturbationConfig, WearingMode};
use maskfab::pipeline::{
    self, ClassRatioConfig, GenerationManifest, MaskAsset, Pairing, PipelineError, RunConfiguration,
};
use maskfab::synthetic::{self, CorpusSpec, FaceShape};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

create_exception!(maskfab, MaskfabError, PyException);

fn geometry_err(e: GeometryError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pipeline_err(e: PipelineError) -> PyErr {
    match e {
        PipelineError::InvalidConfig(_) => PyValueError::new_err(e.to_string()),
        other => MaskfabError::new_err(other.to_string()),
    }
}

fn to_points(v: Vec<(f64, f64)>) -> Vec<Point2D> {
    v.into_iter().map(Point2D::from).collect()
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| MaskfabError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_mode(mode: &str) -> PyResult<WearingMode> {
    mode.parse()
        .map_err(|e: masking::MaskingError| PyValueError::new_err(e.to_string()))
}

/// Projective map of the plane, stored at unit Frobenius norm.
#[pyclass(frozen, skip_from_py_object, module = "maskfab")]
#[derive(Clone)]
struct Homography {
    inner: geometry::Homography,
}

#[pymethods]
impl Homography {
    #[new]
    fn new(rows: [[f64; 3]; 3]) -> PyResult<Self> {
        geometry::Homography::from_rows(rows)
            .map(|inner| Self { inner })
            .map_err(geometry_err)
    }

    #[staticmethod]
    fn identity() -> Self {
        Self {
            inner: geometry::Homography::identity(),
        }
    }

    /// Least-squares fit mapping each `src` point onto its `dst` point.
    #[staticmethod]
    fn estimate(src: Vec<(f64, f64)>, dst: Vec<(f64, f64)>) -> PyResult<Self> {
        geometry::estimate_homography(&to_points(src), &to_points(dst))
            .map(|inner| Self { inner })
            .map_err(geometry_err)
    }

    fn apply(&self, point: (f64, f64)) -> PyResult<(f64, f64)> {
        let p = self.inner.apply(point.into()).map_err(geometry_err)?;
        Ok((p.x, p.y))
    }

    fn inverse(&self) -> PyResult<Self> {
        self.inner
            .inverse()
            .map(|inner| Self { inner })
            .map_err(geometry_err)
    }

    fn rms_reprojection_error(&self, src: Vec<(f64, f64)>, dst: Vec<(f64, f64)>) -> PyResult<f64> {
        self.inner
            .rms_reprojection_error(&to_points(src), &to_points(dst))
            .map_err(geometry_err)
    }

    #[getter]
    fn matrix(&self) -> [[f64; 3]; 3] {
        self.inner.to_rows()
    }

    fn __repr__(&self) -> String {
        format!("Homography({:?})", self.inner.to_rows())
    }
}

#[pyfunction]
fn estimate_homography(src: Vec<(f64, f64)>, dst: Vec<(f64, f64)>) -> PyResult<Homography> {
    Homography::estimate(src, dst)
}

#[pyfunction]
fn apply_homography(h: &Homography, point: (f64, f64)) -> PyResult<(f64, f64)> {
    h.apply(point)
}

#[pyfunction]
fn invert(h: &Homography) -> PyResult<Homography> {
    h.inverse()
}

#[pyfunction]
fn point_in_polygon(point: (f64, f64), polygon: Vec<(f64, f64)>) -> PyResult<bool> {
    geometry::point_in_polygon(point.into(), &to_points(polygon)).map_err(geometry_err)
}

/// The 12 facial points used for `mode`, each with its template keypoint
/// index, from 68 landmarks and the built-in table.
#[pyfunction]
fn select_correspondences(
    landmarks: Vec<(f64, f64)>,
    mode: &str,
) -> PyResult<Vec<((f64, f64), usize)>> {
    let mode = parse_mode(mode)?;
    let points = to_points(landmarks);
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in &points {
        (x0, y0, x1, y1) = (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y));
    }
    let bbox = masking::FaceBox::from([x0, y0, (x1 - x0).max(1.0), (y1 - y0).max(1.0)]);
    let face = masking::FaceLandmarks::new("", bbox, points)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let pairs =
        masking::select_correspondences(&face, mode, &masking::CorrespondenceTable::default())
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(pairs.into_iter().map(|(p, k)| ((p.x, p.y), k)).collect())
}

/// Full names of the four wearing modes.
#[pyfunction]
fn wearing_modes() -> Vec<&'static str> {
    WearingMode::ALL.iter().map(|m| m.name()).collect()
}

#[pyfunction]
fn apportion(total: usize, weights: Vec<f64>) -> Vec<usize> {
    pipeline::apportion(total, &weights)
}

fn ratios(p_cmfd: f64, imfd_shares: (f64, f64, f64), pairing: &str) -> PyResult<ClassRatioConfig> {
    let cfg = ClassRatioConfig {
        p_cmfd,
        imfd2_uncovered_nose: imfd_shares.0,
        imfd1_uncovered_chin: imfd_shares.1,
        imfd3_uncovered_nose_mouth: imfd_shares.2,
        pairing: pairing.parse::<Pairing>().map_err(pipeline_err)?,
    };
    cfg.validate().map_err(pipeline_err)?;
    Ok(cfg)
}

/// Quota assignment; returns `(source_id, mode)` pairs sorted by id.
/// `imfd_shares` is `(IMFD2, IMFD1, IMFD3)`.
#[pyfunction]
#[pyo3(signature = (source_ids, seed=0, p_cmfd=0.49, imfd_shares=(0.8, 0.1, 0.1), pairing="pair"))]
fn assign_modes(
    source_ids: Vec<String>,
    seed: u64,
    p_cmfd: f64,
    imfd_shares: (f64, f64, f64),
    pairing: &str,
) -> PyResult<Vec<(String, &'static str)>> {
    let cfg = ratios(p_cmfd, imfd_shares, pairing)?;
    Ok(pipeline::assign_modes(&source_ids, &cfg, seed)
        .map_err(pipeline_err)?
        .into_iter()
        .map(|a| (a.source_id, a.mode.name()))
        .collect())
}

/// Returns `(points, displaced_indices)`.
#[pyfunction]
#[pyo3(signature = (keypoints, eligible, seed, bbox_height, max_displaced=2, radius_fraction=0.03))]
fn perturb_keypoints(
    keypoints: Vec<(f64, f64)>,
    eligible: BTreeSet<usize>,
    seed: u64,
    bbox_height: f64,
    max_displaced: usize,
    radius_fraction: f64,
) -> PyResult<(Vec<(f64, f64)>, Vec<usize>)> {
    let cfg = PerturbationConfig {
        max_displaced,
        radius_fraction,
        enabled: true,
    };
    cfg.validate()
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let out = masking::perturb_keypoints(&to_points(keypoints), &eligible, &cfg, seed, bbox_height);
    Ok((
        out.points.iter().map(|p| (p.x, p.y)).collect(),
        out.displaced,
    ))
}

/// 68 landmarks of the default synthetic face layout.
#[pyfunction]
fn canonical_landmarks() -> Vec<(f64, f64)> {
    synthetic::canonical_points(&FaceShape::default())
        .into_iter()
        .map(|p| (p.x, p.y))
        .collect()
}

/// Writes a synthetic corpus and returns its paths.
#[pyfunction]
#[pyo3(signature = (root, count=20, seed=0, no_face=Vec::new()))]
fn write_corpus<'py>(
    py: Python<'py>,
    root: PathBuf,
    count: usize,
    seed: u64,
    no_face: Vec<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = CorpusSpec {
        count,
        seed,
        no_face,
        ..CorpusSpec::default()
    };
    let p =
        synthetic::write_corpus(&root, &spec).map_err(|e| MaskfabError::new_err(e.to_string()))?;
    json_to_py(
        py,
        &serde_json::json!({
            "faces": p.faces_dir,
            "landmarks": p.landmarks,
            "template": p.template,
        }),
    )
}

/// Checks a template file; returns its name, size and keypoints.
#[pyfunction]
fn validate_template<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let asset = MaskAsset::load(&path).map_err(pipeline_err)?;
    let t = &asset.template;
    json_to_py(
        py,
        &serde_json::json!({
            "name": t.name,
            "width": t.width,
            "height": t.height,
            "keypoints": t.keypoints,
            "roles": t.roles,
        }),
    )
}

/// Runs a full generation pass; returns the manifest as a dict.
#[pyfunction]
#[pyo3(signature = (
    faces, landmarks, template, out, seed=0, workers=1, p_cmfd=0.49,
    imfd_shares=(0.8, 0.1, 0.1), pairing="pair", perturb=true, max_displaced=2,
    radius_fraction=0.03, table=None, exclude=None, feather=None,
))]
#[allow(clippy::too_many_arguments)]
fn generate<'py>(
    py: Python<'py>,
    faces: PathBuf,
    landmarks: PathBuf,
    template: PathBuf,
    out: PathBuf,
    seed: u64,
    workers: usize,
    p_cmfd: f64,
    imfd_shares: (f64, f64, f64),
    pairing: &str,
    perturb: bool,
    max_displaced: usize,
    radius_fraction: f64,
    table: Option<PathBuf>,
    exclude: Option<PathBuf>,
    feather: Option<f32>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = RunConfiguration {
        faces_dir: faces,
        landmarks_path: landmarks,
        template_path: template,
        table_path: table,
        out_dir: out,
        ratios: ratios(p_cmfd, imfd_shares, pairing)?,
        seed,
        perturbation: PerturbationConfig {
            max_displaced,
            radius_fraction,
            enabled: perturb,
        },
        workers,
        exclude_path: exclude,
        feather_radius: feather,
    };
    let manifest = py
        .detach(|| pipeline::run_dataset_generation(&cfg))
        .map_err(pipeline_err)?;
    json_to_py(py, &manifest)
}

/// Statistics for a manifest file (CSV or JSONL) or output directory.
#[pyfunction]
fn compute_statistics<'py>(py: Python<'py>, manifest: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let m = GenerationManifest::load(&manifest).map_err(pipeline_err)?;
    let report = pipeline::compute_statistics(&m);
    let stats = json_to_py(py, &report)?;
    stats.set_item("pct_correct", report.pct_correct())?;
    stats.set_item("pct_incorrect", report.pct_incorrect())?;
    stats.set_item("text", report.to_string())?;
    Ok(stats)
}

#[pymodule]
#[pyo3(name = "maskfab")]
fn maskfab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MaskfabError", m.py().get_type::<MaskfabError>())?;
    m.add_class::<Homography>()?;
    m.add_function(wrap_pyfunction!(estimate_homography, m)?)?;
    m.add_function(wrap_pyfunction!(apply_homography, m)?)?;
    m.add_function(wrap_pyfunction!(invert, m)?)?;
    m.add_function(wrap_pyfunction!(point_in_polygon, m)?)?;
    m.add_function(wrap_pyfunction!(wearing_modes, m)?)?;
    m.add_function(wrap_pyfunction!(select_correspondences, m)?)?;
    m.add_function(wrap_pyfunction!(apportion, m)?)?;
    m.add_function(wrap_pyfunction!(assign_modes, m)?)?;
    m.add_function(wrap_pyfunction!(perturb_keypoints, m)?)?;
    m.add_function(wrap_pyfunction!(canonical_landmarks, m)?)?;
    m.add_function(wrap_pyfunction!(write_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(validate_template, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(compute_statistics, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
