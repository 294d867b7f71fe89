//! Quota-based class assignment.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::masking::WearingMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// One output per face, drawn from all four classes.
    SinglePerFace,
    /// One CMFD output plus one IMFD output per face.
    PairPerFace,
}

impl Pairing {
    pub fn outputs_per_face(self) -> usize {
        match self {
            Pairing::SinglePerFace => 1,
            Pairing::PairPerFace => 2,
        }
    }
}

impl fmt::Display for Pairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pairing::SinglePerFace => "single_per_face",
            Pairing::PairPerFace => "pair_per_face",
        })
    }
}

impl FromStr for Pairing {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "single" | "single_per_face" => Ok(Pairing::SinglePerFace),
            "pair" | "pair_per_face" => Ok(Pairing::PairPerFace),
            other => Err(PipelineError::InvalidConfig(format!(
                "unknown pairing `{other}` (expected single or pair)"
            ))),
        }
    }
}

/// Target class proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassRatioConfig {
    pub p_cmfd: f64,
    pub imfd2_uncovered_nose: f64,
    pub imfd1_uncovered_chin: f64,
    pub imfd3_uncovered_nose_mouth: f64,
    pub pairing: Pairing,
}

impl Default for ClassRatioConfig {
    fn default() -> Self {
        Self {
            p_cmfd: 0.49,
            imfd2_uncovered_nose: 0.80,
            imfd1_uncovered_chin: 0.10,
            imfd3_uncovered_nose_mouth: 0.10,
            pairing: Pairing::PairPerFace,
        }
    }
}

impl ClassRatioConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let shares = [
            self.imfd1_uncovered_chin,
            self.imfd2_uncovered_nose,
            self.imfd3_uncovered_nose_mouth,
        ];
        if !(0.0..=1.0).contains(&self.p_cmfd) {
            return Err(PipelineError::InvalidConfig(format!(
                "p_cmfd {} outside [0, 1]",
                self.p_cmfd
            )));
        }
        if shares.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(PipelineError::InvalidConfig(
                "IMFD shares must be non-negative".into(),
            ));
        }
        let sum: f64 = shares.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(PipelineError::InvalidConfig(format!(
                "IMFD shares sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Within-IMFD shares in class order IMFD1, IMFD2, IMFD3.
    pub fn imfd_shares(&self) -> [f64; 3] {
        [
            self.imfd1_uncovered_chin,
            self.imfd2_uncovered_nose,
            self.imfd3_uncovered_nose_mouth,
        ]
    }

    /// Parses `P_CMFD:IMFD2,IMFD1,IMFD3`, e.g. `0.49:0.8,0.1,0.1`.
    pub fn parse_ratios(spec: &str, pairing: Pairing) -> Result<Self, PipelineError> {
        let bad = || {
            PipelineError::InvalidConfig(format!(
                "bad --ratios `{spec}` (expected P_CMFD:IMFD2,IMFD1,IMFD3)"
            ))
        };
        let (p, rest) = spec.split_once(':').ok_or_else(bad)?;
        let shares: Vec<f64> = rest
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        if shares.len() != 3 {
            return Err(bad());
        }
        let cfg = Self {
            p_cmfd: p.trim().parse().map_err(|_| bad())?,
            imfd2_uncovered_nose: shares[0],
            imfd1_uncovered_chin: shares[1],
            imfd3_uncovered_nose_mouth: shares[2],
            pairing,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Largest-remainder apportionment of `total` seats over `weights`.
///
/// Remainders within 1e-9 of each other count as tied; ties go to the lower
/// index. The result always sums to `total` when any weight is positive.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().filter(|w| w.is_finite() && **w > 0.0).sum();
    if total == 0 || !(sum > 0.0) {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights
        .iter()
        .map(|&w| {
            if w.is_finite() && w > 0.0 {
                total as f64 * w / sum
            } else {
                0.0
            }
        })
        .collect();
    // snap quotas sitting a rounding error below an integer
    let mut seats: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = seats.iter().sum();
    let left = total.saturating_sub(assigned);
    let mut remainders: Vec<Option<f64>> = quotas
        .iter()
        .zip(&seats)
        .map(|(q, s)| (*q > 0.0).then(|| (q - *s as f64).max(0.0)))
        .collect();
    for _ in 0..left {
        let mut best: Option<usize> = None;
        for (i, r) in remainders.iter().enumerate() {
            let Some(r) = r else { continue };
            match best {
                Some(b) if *r <= remainders[b].unwrap() + 1e-9 => {}
                _ => best = Some(i),
            }
        }
        let Some(b) = best else { break };
        seats[b] += 1;
        remainders[b] = None;
    }
    seats
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment {
    pub source_id: String,
    pub mode: WearingMode,
}

/// Exact per-class counts implied by `ratios` for `n` faces, in class order
/// CMFD, IMFD1, IMFD2, IMFD3.
pub fn class_counts(n: usize, ratios: &ClassRatioConfig) -> [usize; 4] {
    let (cmfd, imfd_total) = match ratios.pairing {
        Pairing::PairPerFace => (n, n),
        Pairing::SinglePerFace => {
            let top = apportion(n, &[ratios.p_cmfd, 1.0 - ratios.p_cmfd]);
            (top[0], top[1])
        }
    };
    let imfd = apportion(imfd_total, &ratios.imfd_shares());
    [cmfd, imfd[0], imfd[1], imfd[2]]
}

/// Assigns classes to faces with exact quotas.
///
/// Counts come from [`class_counts`]; which face receives which class is
/// decided by a shuffle seeded from `seed`. Output is sorted by
/// `(source_id, mode)`.
pub fn assign_modes(
    source_ids: &[String],
    ratios: &ClassRatioConfig,
    seed: u64,
) -> Result<Vec<Assignment>, PipelineError> {
    if source_ids.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    ratios.validate()?;
    let mut ids: Vec<&String> = source_ids.iter().collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(PipelineError::DuplicateSource(w[0].clone()));
    }

    let n = ids.len();
    let counts = class_counts(n, ratios);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "assign-modes", ""));
    let mut out = Vec::with_capacity(n * ratios.pairing.outputs_per_face());

    let mut labels: Vec<WearingMode> = Vec::with_capacity(n);
    match ratios.pairing {
        Pairing::PairPerFace => {
            out.extend(ids.iter().map(|id| Assignment {
                source_id: (*id).clone(),
                mode: WearingMode::Cmfd,
            }));
            for (mode, &c) in WearingMode::INCORRECT.iter().zip(&counts[1..]) {
                labels.extend(std::iter::repeat_n(*mode, c));
            }
        }
        Pairing::SinglePerFace => {
            for (mode, &c) in WearingMode::ALL.iter().zip(&counts) {
                labels.extend(std::iter::repeat_n(*mode, c));
            }
        }
    }
    debug_assert_eq!(labels.len(), n);
    labels.shuffle(&mut rng);
    out.extend(ids.iter().zip(labels).map(|(id, mode)| Assignment {
        source_id: (*id).clone(),
        mode,
    }));
    out.sort();
    Ok(out)
}

/// Stable 64-bit seed from a global seed and two labels (SHA-256 based, so
/// identical on every platform and toolchain).
pub fn derive_seed(global: u64, domain: &str, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global.to_le_bytes());
    hasher.update(domain.as_bytes());
    hasher.update([0u8]);
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Per-output seed: depends on the global seed, face and class only.
pub fn face_seed(global: u64, source_id: &str, mode: WearingMode) -> u64 {
    derive_seed(global, mode.tag(), source_id)
}
