//! Generation records and the on-disk manifest (CSV and JSONL).
//!
//! Both files begin with the run header. In `manifest.csv` the first line is
//! the header as a JSON object and the second the column names; in
//! `manifest.jsonl` the first line is `{"header": {...}}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ClassRatioConfig, PipelineError};
use crate::masking::{PerturbationConfig, WearingMode};

pub const CSV_NAME: &str = "manifest.csv";
pub const JSONL_NAME: &str = "manifest.jsonl";
pub const COLUMNS: [&str; 8] = [
    "output_path",
    "source_id",
    "class",
    "template",
    "seed",
    "residual_px",
    "perturbed_indices",
    "status",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Generated,
    SkippedNoFace,
    SkippedBadLandmarks,
    Excluded,
}

impl RecordStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordStatus::Generated => "generated",
            RecordStatus::SkippedNoFace => "skipped_no_face",
            RecordStatus::SkippedBadLandmarks => "skipped_bad_landmarks",
            RecordStatus::Excluded => "excluded",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            RecordStatus::Generated,
            RecordStatus::SkippedNoFace,
            RecordStatus::SkippedBadLandmarks,
            RecordStatus::Excluded,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }
}

/// One manifest row. Skip rows for faces that never got a class carry
/// `class: None` and an empty `output_path`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    /// Relative to the output directory.
    pub output_path: String,
    pub source_id: String,
    pub class: Option<WearingMode>,
    pub template: String,
    pub seed: u64,
    pub residual_px: Option<f64>,
    pub perturbed_indices: Vec<usize>,
    pub status: RecordStatus,
}

impl GenerationRecord {
    pub fn skipped(
        source_id: &str,
        class: Option<WearingMode>,
        template: &str,
        status: RecordStatus,
    ) -> Self {
        Self {
            output_path: String::new(),
            source_id: source_id.to_string(),
            class,
            template: template.to_string(),
            seed: 0,
            residual_px: None,
            perturbed_indices: Vec::new(),
            status,
        }
    }

    fn sort_key(&self) -> (&str, Option<WearingMode>) {
        (&self.source_id, self.class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub tool_version: String,
    pub global_seed: u64,
    pub ratios: ClassRatioConfig,
    pub perturbation: PerturbationConfig,
    pub table_version: u32,
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationManifest {
    pub header: ManifestHeader,
    pub records: Vec<GenerationRecord>,
}

impl GenerationManifest {
    /// Orders records by `(source_id, class)`.
    pub fn sort(&mut self) {
        self.records.sort_by(|a, b| {
            a.sort_key()
                .cmp(&b.sort_key())
                .then(a.status.cmp(&b.status))
        });
    }

    pub fn generated(&self) -> impl Iterator<Item = &GenerationRecord> {
        self.records
            .iter()
            .filter(|r| r.status == RecordStatus::Generated)
    }

    pub fn to_csv(&self) -> Result<String, PipelineError> {
        let mut out = serde_json::to_string(&self.header).map_err(manifest_err)?;
        out.push('\n');
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(COLUMNS).map_err(manifest_err)?;
        for r in &self.records {
            let perturbed: Vec<String> =
                r.perturbed_indices.iter().map(|i| i.to_string()).collect();
            w.write_record([
                r.output_path.as_str(),
                &r.source_id,
                r.class.map(|c| c.name()).unwrap_or(""),
                &r.template,
                &r.seed.to_string(),
                &r.residual_px.map(|v| v.to_string()).unwrap_or_default(),
                &perturbed.join(";"),
                r.status.as_str(),
            ])
            .map_err(manifest_err)?;
        }
        let bytes = w.into_inner().map_err(|e| manifest_err(e.error()))?;
        out.push_str(std::str::from_utf8(&bytes).expect("csv output is utf-8"));
        Ok(out)
    }

    pub fn to_jsonl(&self) -> Result<String, PipelineError> {
        #[derive(Serialize)]
        struct HeaderLine<'a> {
            header: &'a ManifestHeader,
        }
        let mut out = serde_json::to_string(&HeaderLine {
            header: &self.header,
        })
        .map_err(manifest_err)?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).map_err(manifest_err)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self, PipelineError> {
        let bad = |line: usize, message: String| PipelineError::InvalidManifest {
            path: path.to_path_buf(),
            line,
            message,
        };
        let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
        let header: ManifestHeader =
            serde_json::from_str(first.trim()).map_err(|e| bad(1, format!("bad header: {e}")))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(rest.as_bytes());
        let columns = reader.headers().map_err(|e| bad(2, e.to_string()))?.clone();
        if columns.iter().collect::<Vec<_>>() != COLUMNS {
            return Err(bad(
                2,
                format!(
                    "unexpected columns {:?}",
                    columns.iter().collect::<Vec<_>>()
                ),
            ));
        }
        let mut records = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| {
                let line = e.position().map(|p| p.line() as usize + 1).unwrap_or(0);
                bad(line, e.to_string())
            })?;
            let line = row.position().map(|p| p.line() as usize + 1).unwrap_or(0);
            records.push(parse_row(&row).map_err(|m| bad(line, m))?);
        }
        Ok(Self { header, records })
    }

    pub fn from_jsonl(text: &str, path: &Path) -> Result<Self, PipelineError> {
        #[derive(Deserialize)]
        struct HeaderLine {
            header: ManifestHeader,
        }
        let bad = |line: usize, message: String| PipelineError::InvalidManifest {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| bad(1, "empty manifest".into()))?;
        let header = serde_json::from_str::<HeaderLine>(first)
            .map_err(|e| bad(1, format!("bad header: {e}")))?
            .header;
        let records = lines
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| bad(i + 1, e.to_string())))
            .collect::<Result<_, _>>()?;
        Ok(Self { header, records })
    }

    /// Reads either format, chosen by extension (`.jsonl` or anything else
    /// as CSV). A directory is taken to contain `manifest.csv`.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let path = if path.is_dir() {
            path.join(CSV_NAME)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&path).map_err(|source| PipelineError::Io {
            path: path.clone(),
            source,
        })?;
        if path.extension().is_some_and(|e| e == "jsonl") {
            Self::from_jsonl(&text, &path)
        } else {
            Self::from_csv(&text, &path)
        }
    }

    /// Writes `manifest.csv` and `manifest.jsonl` into `out_dir`, each via a
    /// temporary file renamed into place.
    pub fn write(&self, out_dir: &Path) -> Result<(), PipelineError> {
        write_atomic(&out_dir.join(CSV_NAME), self.to_csv()?.as_bytes())?;
        write_atomic(&out_dir.join(JSONL_NAME), self.to_jsonl()?.as_bytes())
    }
}

fn parse_row(row: &csv::StringRecord) -> Result<GenerationRecord, String> {
    if row.len() != COLUMNS.len() {
        return Err(format!(
            "expected {} fields, got {}",
            COLUMNS.len(),
            row.len()
        ));
    }
    let class = match &row[2] {
        "" => None,
        s => Some(s.parse::<WearingMode>().map_err(|e| e.to_string())?),
    };
    let seed = row[4]
        .parse::<u64>()
        .map_err(|e| format!("bad seed `{}`: {e}", &row[4]))?;
    let residual_px = match &row[5] {
        "" => None,
        s => Some(
            s.parse::<f64>()
                .map_err(|e| format!("bad residual `{s}`: {e}"))?,
        ),
    };
    let perturbed_indices = row[6]
        .split(';')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|e| format!("bad index `{s}`: {e}"))
        })
        .collect::<Result<_, _>>()?;
    let status =
        RecordStatus::parse(&row[7]).ok_or_else(|| format!("unknown status `{}`", &row[7]))?;
    Ok(GenerationRecord {
        output_path: row[0].to_string(),
        source_id: row[1].to_string(),
        class,
        template: row[3].to_string(),
        seed,
        residual_px,
        perturbed_indices,
        status,
    })
}

fn manifest_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::InvalidManifest {
        path: PathBuf::new(),
        line: 0,
        message: e.to_string(),
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let io = |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Result of applying an exclusion list.
#[derive(Debug, Clone, PartialEq)]
pub struct ExclusionOutcome {
    pub excluded: usize,
    /// Entries that matched no generated record.
    pub unknown: Vec<String>,
}

/// Reads an exclusion list: one file name per line, blank lines and lines
/// starting with `#` ignored.
pub fn read_exclusion_list(path: &Path) -> Result<Vec<String>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

/// Marks generated records named in `entries` as excluded and, when
/// `out_dir` is given, deletes their files. An entry matches a record by its
/// relative output path or by file name alone.
pub fn apply_exclusion_list(
    manifest: &mut GenerationManifest,
    entries: &[String],
    out_dir: Option<&Path>,
) -> Result<ExclusionOutcome, PipelineError> {
    let mut excluded = 0;
    let mut unknown = Vec::new();
    for entry in entries {
        let mut hit = false;
        for r in manifest.records.iter_mut() {
            if r.status != RecordStatus::Generated {
                continue;
            }
            let name = Path::new(&r.output_path)
                .file_name()
                .and_then(|n| n.to_str());
            if r.output_path != *entry && name != Some(entry.as_str()) {
                continue;
            }
            hit = true;
            r.status = RecordStatus::Excluded;
            excluded += 1;
            if let Some(dir) = out_dir {
                let file = dir.join(&r.output_path);
                match fs::remove_file(&file) {
                    Ok(()) => {}
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                    Err(source) => return Err(PipelineError::Io { path: file, source }),
                }
            }
        }
        if !hit {
            log::warn!("exclusion entry `{entry}` matches no generated image");
            unknown.push(entry.clone());
        }
    }
    Ok(ExclusionOutcome { excluded, unknown })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> ManifestHeader {
        ManifestHeader {
            tool_version: "0.1.0".into(),
            global_seed: 7,
            ratios: ClassRatioConfig::default(),
            perturbation: PerturbationConfig::default(),
            table_version: 1,
            template: "surgical".into(),
        }
    }

    fn sample() -> GenerationManifest {
        GenerationManifest {
            header: header(),
            records: vec![
                GenerationRecord {
                    output_path: "CMFD/00001_CMFD.png".into(),
                    source_id: "00001".into(),
                    class: Some(WearingMode::Cmfd),
                    template: "surgical".into(),
                    seed: u64::MAX,
                    residual_px: Some(0.123456789012345),
                    perturbed_indices: vec![0, 2],
                    status: RecordStatus::Generated,
                },
                GenerationRecord {
                    output_path: "IMFD2/00001_IMFD2.png".into(),
                    source_id: "00001".into(),
                    class: Some(WearingMode::Imfd2UncoveredNose),
                    template: "surgical".into(),
                    seed: 3,
                    residual_px: Some(0.0),
                    perturbed_indices: vec![],
                    status: RecordStatus::Generated,
                },
                GenerationRecord::skipped("00002", None, "surgical", RecordStatus::SkippedNoFace),
            ],
        }
    }

    #[test]
    fn csv_round_trip() {
        let m = sample();
        let text = m.to_csv().unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with('{'));
        assert_eq!(lines.next().unwrap(), COLUMNS.join(","));
        assert_eq!(
            GenerationManifest::from_csv(&text, Path::new("m.csv")).unwrap(),
            m
        );
    }

    #[test]
    fn jsonl_round_trip() {
        let m = sample();
        let text = m.to_jsonl().unwrap();
        assert!(text.starts_with("{\"header\":"));
        assert_eq!(
            GenerationManifest::from_jsonl(&text, Path::new("m.jsonl")).unwrap(),
            m
        );
    }

    #[test]
    fn malformed_row_reports_line() {
        let mut text = sample().to_csv().unwrap();
        text.push_str("x.png,00003,CMFD,surgical,notanumber,,,generated\n");
        match GenerationManifest::from_csv(&text, Path::new("m.csv")) {
            Err(PipelineError::InvalidManifest { line, message, .. }) => {
                assert_eq!(line, 6);
                assert!(message.contains("seed"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exclusion_marks_and_deletes() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("CMFD")).unwrap();
        let f = dir.path().join("CMFD/00001_CMFD.png");
        fs::write(&f, b"x").unwrap();
        let mut m = sample();
        let out = apply_exclusion_list(
            &mut m,
            &["00001_CMFD.png".into(), "ghost.png".into()],
            Some(dir.path()),
        )
        .unwrap();
        assert_eq!(out.excluded, 1);
        assert_eq!(out.unknown, vec!["ghost.png".to_string()]);
        assert_eq!(m.records[0].status, RecordStatus::Excluded);
        assert_eq!(m.records[1].status, RecordStatus::Generated);
        assert!(!f.exists());
    }

    #[test]
    fn exclusion_list_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ex.txt");
        fs::write(&p, "# reviewed\n\n a.png \nb.png\n").unwrap();
        assert_eq!(read_exclusion_list(&p).unwrap(), vec!["a.png", "b.png"]);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample();
        m.write(dir.path()).unwrap();
        m.write(dir.path()).unwrap();
        let back = GenerationManifest::load(dir.path()).unwrap();
        assert_eq!(back, m);
        let back = GenerationManifest::load(&dir.path().join(JSONL_NAME)).unwrap();
        assert_eq!(back, m);
    }
}
