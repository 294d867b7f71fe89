use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::manifest::{GenerationManifest, GenerationRecord, RecordStatus};
use crate::masking::WearingMode;

/// Per-class counts over generated images.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatisticsReport {
    pub generated: usize,
    pub per_class: BTreeMap<WearingMode, usize>,
    pub skipped_no_face: usize,
    pub skipped_bad_landmarks: usize,
    pub excluded: usize,
}

impl StatisticsReport {
    pub fn count(&self, mode: WearingMode) -> usize {
        self.per_class.get(&mode).copied().unwrap_or(0)
    }

    pub fn correct(&self) -> usize {
        self.count(WearingMode::Cmfd)
    }

    pub fn incorrect(&self) -> usize {
        WearingMode::INCORRECT.iter().map(|m| self.count(*m)).sum()
    }

    /// CMFD share of generated images, in percent.
    pub fn pct_correct(&self) -> Option<f64> {
        percent(self.correct(), self.generated)
    }

    pub fn pct_incorrect(&self) -> Option<f64> {
        percent(self.incorrect(), self.generated)
    }

    /// Share of `mode` within the IMFD images, in percent.
    pub fn pct_of_incorrect(&self, mode: WearingMode) -> Option<f64> {
        percent(self.count(mode), self.incorrect())
    }

    pub fn from_records(records: &[GenerationRecord]) -> Self {
        let mut report = StatisticsReport {
            generated: 0,
            per_class: WearingMode::ALL.iter().map(|m| (*m, 0)).collect(),
            skipped_no_face: 0,
            skipped_bad_landmarks: 0,
            excluded: 0,
        };
        for r in records {
            match r.status {
                RecordStatus::Generated => {
                    report.generated += 1;
                    if let Some(c) = r.class {
                        *report.per_class.entry(c).or_default() += 1;
                    }
                }
                RecordStatus::SkippedNoFace => report.skipped_no_face += 1,
                RecordStatus::SkippedBadLandmarks => report.skipped_bad_landmarks += 1,
                RecordStatus::Excluded => report.excluded += 1,
            }
        }
        report
    }
}

fn percent(part: usize, whole: usize) -> Option<f64> {
    (whole > 0).then(|| 100.0 * part as f64 / whole as f64)
}

fn fmt_pct(p: Option<f64>) -> String {
    p.map_or_else(|| "n/a".to_string(), |v| format!("{v:.1}%"))
}

pub fn compute_statistics(manifest: &GenerationManifest) -> StatisticsReport {
    StatisticsReport::from_records(&manifest.records)
}

impl fmt::Display for StatisticsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "generated images           {:>8}", self.generated)?;
        writeln!(
            f,
            "  CMFD  correctly masked   {:>8}  {:>6}",
            self.correct(),
            fmt_pct(self.pct_correct())
        )?;
        writeln!(
            f,
            "  IMFD  incorrectly masked {:>8}  {:>6}",
            self.incorrect(),
            fmt_pct(self.pct_incorrect())
        )?;
        for (mode, label) in [
            (
                WearingMode::Imfd1UncoveredChin,
                "IMFD1 uncovered chin      ",
            ),
            (
                WearingMode::Imfd2UncoveredNose,
                "IMFD2 uncovered nose      ",
            ),
            (
                WearingMode::Imfd3UncoveredNoseMouth,
                "IMFD3 uncovered nose+mouth",
            ),
        ] {
            writeln!(
                f,
                "    {label} {:>6}  {:>6} of IMFD",
                self.count(mode),
                fmt_pct(self.pct_of_incorrect(mode))
            )?;
        }
        writeln!(f, "skipped (no face)          {:>8}", self.skipped_no_face)?;
        writeln!(
            f,
            "skipped (bad landmarks)    {:>8}",
            self.skipped_bad_landmarks
        )?;
        write!(f, "excluded                   {:>8}", self.excluded)
    }
}
