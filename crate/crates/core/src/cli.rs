//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O or invalid-input failure, 2 configuration
//! error. `generate` accepts `--config FILE` (TOML with keys named after the
//! long flags); flags given on the command line override the file.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::geometry::Point2D;
use crate::masking::{
    select_correspondences, CorrespondenceTable, LandmarkStatus, MaskingError, PerturbationConfig,
    WearingMode,
};
use crate::pipeline::{
    compute_statistics, face_seed, generate_masked_face, run_dataset_generation, ClassRatioConfig,
    GenerationManifest, MaskAsset, Pairing, PipelineError, RunConfiguration, StatisticsReport,
};
use crate::synthetic::{write_corpus, CorpusSpec};
use crate::warp::{Channels, RasterImage};

#[derive(Debug, Parser)]
#[command(
    name = "maskfab",
    version,
    about = "Synthesize correctly and incorrectly masked faces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a masked-face dataset.
    Generate(GenerateArgs),
    /// Print class statistics for a manifest.
    Stats {
        /// manifest.csv, manifest.jsonl or the output directory.
        manifest: PathBuf,
    },
    /// Render landmarks next to the masked result for one face.
    Preview(PreviewArgs),
    /// Check a mask template file.
    ValidateTemplate { template: PathBuf },
    /// Write a synthetic face corpus for trying the tool out.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated face indices recorded as no_face.
        #[arg(long, value_delimiter = ',')]
        no_face: Vec<usize>,
    },
}

#[derive(Debug, Default, Clone, PartialEq, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct GenerateArgs {
    /// TOML file with defaults for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub faces: Option<PathBuf>,
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Correspondence table JSON (defaults to the built-in table).
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// P_CMFD:IMFD2,IMFD1,IMFD3, e.g. 0.49:0.8,0.1,0.1
    #[arg(long)]
    pub ratios: Option<String>,
    /// single or pair
    #[arg(long)]
    pub pairing: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub max_displaced: Option<usize>,
    #[arg(long)]
    pub radius_fraction: Option<f64>,
    #[arg(long)]
    pub no_perturb: bool,
    /// Exclusion list applied after generation.
    #[arg(long)]
    pub exclude: Option<PathBuf>,
    /// Gaussian feather applied to the mask edge, in pixels.
    #[arg(long)]
    pub feather: Option<f32>,
}

#[derive(Debug, Args)]
struct PreviewArgs {
    #[arg(long)]
    face: PathBuf,
    #[arg(long)]
    landmarks: PathBuf,
    #[arg(long)]
    template: PathBuf,
    #[arg(long)]
    mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    no_perturb: bool,
    /// Output PNG (defaults to <source_id>_<TAG>_preview.png).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn failure(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::InvalidConfig(_)
            | PipelineError::MissingInput(_)
            | PipelineError::Template(_)
            | PipelineError::Masking(
                MaskingError::InvalidTable(_)
                | MaskingError::InvalidPerturbation(_)
                | MaskingError::UnknownMode(_)
                | MaskingError::Template(_),
            ) => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<MaskingError> for CliError {
    fn from(e: MaskingError) -> Self {
        PipelineError::from(e).into()
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Generate(args) => cmd_generate(args),
        Command::Stats { manifest } => cmd_stats(&manifest),
        Command::Preview(args) => cmd_preview(args),
        Command::ValidateTemplate { template } => {
            let asset = MaskAsset::load(&template).map_err(|e| CliError::failure(e.to_string()))?;
            println!(
                "{}: template `{}` ok ({}x{}, 12 keypoints)",
                template.display(),
                asset.template.name,
                asset.template.width,
                asset.template.height
            );
            Ok(())
        }
        Command::SynthCorpus {
            out,
            count,
            seed,
            no_face,
        } => {
            let spec = CorpusSpec {
                count,
                seed,
                no_face,
                ..CorpusSpec::default()
            };
            let paths = write_corpus(&out, &spec).map_err(|e| CliError::failure(e.to_string()))?;
            println!("faces      {}", paths.faces_dir.display());
            println!("landmarks  {}", paths.landmarks.display());
            println!("template   {}", paths.template.display());
            Ok(())
        }
    }
}

impl GenerateArgs {
    /// Fills unset fields from `base`.
    fn or(self, base: GenerateArgs) -> GenerateArgs {
        GenerateArgs {
            config: self.config,
            faces: self.faces.or(base.faces),
            landmarks: self.landmarks.or(base.landmarks),
            template: self.template.or(base.template),
            out: self.out.or(base.out),
            table: self.table.or(base.table),
            seed: self.seed.or(base.seed),
            ratios: self.ratios.or(base.ratios),
            pairing: self.pairing.or(base.pairing),
            workers: self.workers.or(base.workers),
            max_displaced: self.max_displaced.or(base.max_displaced),
            radius_fraction: self.radius_fraction.or(base.radius_fraction),
            no_perturb: self.no_perturb || base.no_perturb,
            exclude: self.exclude.or(base.exclude),
            feather: self.feather.or(base.feather),
        }
    }

    /// Merges the config file (if any) and resolves a run configuration.
    pub fn resolve(self) -> Result<RunConfiguration, CliError> {
        let merged = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::config(format!("--config {}: {e}", path.display())))?;
                let file: GenerateArgs = toml::from_str(&text)
                    .map_err(|e| CliError::config(format!("--config {}: {e}", path.display())))?;
                self.or(file)
            }
            None => self,
        };
        let required = |v: Option<PathBuf>, flag: &str| {
            v.ok_or_else(|| CliError::config(format!("missing required flag --{flag}")))
        };
        let pairing = match &merged.pairing {
            Some(p) => p
                .parse::<Pairing>()
                .map_err(|e| CliError::config(format!("--pairing: {e}")))?,
            None => Pairing::PairPerFace,
        };
        let ratios = match &merged.ratios {
            Some(r) => ClassRatioConfig::parse_ratios(r, pairing)
                .map_err(|e| CliError::config(format!("--ratios: {e}")))?,
            None => ClassRatioConfig {
                pairing,
                ..ClassRatioConfig::default()
            },
        };
        let mut perturbation = PerturbationConfig::default();
        if let Some(m) = merged.max_displaced {
            perturbation.max_displaced = m;
        }
        if let Some(r) = merged.radius_fraction {
            perturbation.radius_fraction = r;
        }
        perturbation.enabled = !merged.no_perturb;
        perturbation
            .validate()
            .map_err(|e| CliError::config(format!("perturbation: {e}")))?;
        let workers = merged.workers.unwrap_or(1);
        if workers == 0 {
            return Err(CliError::config("--workers must be at least 1"));
        }
        Ok(RunConfiguration {
            faces_dir: required(merged.faces, "faces")?,
            landmarks_path: required(merged.landmarks, "landmarks")?,
            template_path: required(merged.template, "template")?,
            out_dir: required(merged.out, "out")?,
            table_path: merged.table,
            ratios,
            seed: merged.seed.unwrap_or(0),
            perturbation,
            workers,
            exclude_path: merged.exclude,
            feather_radius: merged.feather,
        })
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let cfg = args.resolve()?;
    let manifest = run_dataset_generation(&cfg)?;
    println!("{}", compute_statistics(&manifest));
    println!("manifest written to {}", cfg.out_dir.display());
    Ok(())
}

fn cmd_stats(path: &Path) -> Result<(), CliError> {
    let file = if path.is_dir() {
        path.join(crate::pipeline::CSV_NAME)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file)
        .map_err(|e| CliError::failure(format!("{}: {e}", file.display())))?;
    let report = if text.trim().is_empty() {
        StatisticsReport::from_records(&[])
    } else {
        compute_statistics(&GenerationManifest::load(&file)?)
    };
    println!("{report}");
    Ok(())
}

fn cmd_preview(args: PreviewArgs) -> Result<(), CliError> {
    let mode: WearingMode = args
        .mode
        .parse()
        .map_err(|e: MaskingError| CliError::config(e.to_string()))?;
    let table = match &args.table {
        Some(p) => CorrespondenceTable::load(p)?,
        None => CorrespondenceTable::default(),
    };
    let asset = MaskAsset::load(&args.template)?;
    let source_id = args
        .face
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CliError::config(format!("--face {}: no file name", args.face.display())))?
        .to_string();
    let records = crate::masking::read_landmark_records(&args.landmarks)?;
    let record = records
        .iter()
        .find(|r| r.source_id == source_id)
        .ok_or_else(|| CliError::failure(format!("{source_id}: no landmark record")))?;
    match record.status {
        LandmarkStatus::NoFace => {
            return Err(CliError::failure(format!(
                "{source_id}: no detected face rectangle"
            )))
        }
        LandmarkStatus::BadLandmarks => {
            return Err(CliError::failure(format!("{source_id}: bad landmarks")))
        }
        LandmarkStatus::Ok => {}
    }
    let landmarks = record.landmarks().ok_or_else(|| {
        CliError::failure(format!("{source_id}: bad landmarks (no face block)"))
    })??;
    let face = RasterImage::load_png(&args.face).map_err(|e| CliError::failure(e.to_string()))?;
    let perturb = if args.no_perturb {
        PerturbationConfig::disabled()
    } else {
        PerturbationConfig::default()
    };
    let seed = face_seed(args.seed, &source_id, mode);
    let masked = generate_masked_face(
        &face, &landmarks, &asset, mode, &table, &perturb, seed, None,
    )?;

    let selected: Vec<Point2D> = select_correspondences(&landmarks, mode, &table)?
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    let mut overlay = face.to_rgb();
    for p in landmarks.points() {
        dot(&mut overlay, *p, 1, [0, 220, 0]);
    }
    for p in &selected {
        dot(&mut overlay, *p, 2, [230, 30, 30]);
    }
    let sheet = side_by_side(&overlay, &masked.image);
    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from(format!("{source_id}_{}_preview.png", mode.tag())));
    sheet
        .save_png(&out)
        .map_err(|e| CliError::failure(e.to_string()))?;
    println!(
        "{}: {} residual {:.3} px",
        out.display(),
        mode,
        masked.record.residual_px.unwrap_or(0.0)
    );
    Ok(())
}

fn dot(img: &mut RasterImage, p: Point2D, r: i64, color: [u8; 3]) {
    let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
                img.put(x as u32, y as u32, &color);
            }
        }
    }
}

fn side_by_side(left: &RasterImage, right: &RasterImage) -> RasterImage {
    let (w, h) = (left.width(), left.height());
    let mut sheet = RasterImage::new(w * 2, h, Channels::Rgb);
    for y in 0..h {
        for x in 0..w {
            sheet.put(x, y, left.pixel(x, y));
            sheet.put(x + w, y, right.pixel(x, y));
        }
    }
    sheet
}
