//! Detected/missed scoring of consensus nodules and assembly of per-nodule
//! outcome records.

use serde::{Deserialize, Serialize};

use crate::consensus::{distance, ConsensusNodule};
use crate::error::{Error, Result};
use crate::geometry::{compute_zphase, interval_diameter_ratio, VolumeGeometry, ZPhase, BOUNDARY_TOLERANCE_MM};
use crate::ingest::DetectionRecord;

pub const DEFAULT_MATCH_RADIUS_MM: f64 = 15.0;
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.5;
pub const DEFAULT_RISK_PHASE_THRESHOLD: f64 = 0.35;
pub const DEFAULT_RISK_RATIO_THRESHOLD: f64 = 1.0;

/// Reconstruction condition of a detection run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    #[serde(rename = "baseline_1mm")]
    Baseline1mm,
    #[serde(rename = "recon_3mm")]
    Recon3mm,
    #[serde(rename = "recon_5mm")]
    Recon5mm,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Baseline1mm, Condition::Recon3mm, Condition::Recon5mm];

    pub fn nominal_interval_mm(self) -> f64 {
        match self {
            Condition::Baseline1mm => 1.0,
            Condition::Recon3mm => 3.0,
            Condition::Recon5mm => 5.0,
        }
    }

    /// Short label used in tables.
    pub fn label(self) -> &'static str {
        match self {
            Condition::Baseline1mm => "1mm",
            Condition::Recon3mm => "3mm",
            Condition::Recon5mm => "5mm",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Condition::Baseline1mm => "baseline_1mm",
            Condition::Recon3mm => "recon_3mm",
            Condition::Recon5mm => "recon_5mm",
        }
    }

    pub fn matches_interval(self, interval_mm: f64) -> bool {
        (interval_mm - self.nominal_interval_mm()).abs() <= BOUNDARY_TOLERANCE_MM
    }

    pub fn from_interval(interval_mm: f64) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.matches_interval(interval_mm))
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.label() == s || c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown condition {s:?} (expected 1mm, 3mm or 5mm)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchParams {
    pub radius_mm: f64,
    pub confidence_threshold: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            radius_mm: DEFAULT_MATCH_RADIUS_MM,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
        }
    }
}

/// Score each nodule: detected iff some detection at or above the confidence
/// threshold lies within the match radius (3D Euclidean) of its centre.
/// Detections are not consumed, so one detection may hit several nodules.
pub fn match_detections(
    nodules: &[ConsensusNodule],
    detections: &[DetectionRecord],
    params: &MatchParams,
) -> Vec<bool> {
    nodules
        .iter()
        .map(|n| {
            detections.iter().any(|d| {
                d.confidence >= params.confidence_threshold
                    && distance(&n.center_mm, &d.center_mm) <= params.radius_mm
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskParams {
    pub phase_threshold: f64,
    pub ratio_threshold: f64,
}

impl Default for RiskParams {
    fn default() -> Self {
        Self {
            phase_threshold: DEFAULT_RISK_PHASE_THRESHOLD,
            ratio_threshold: DEFAULT_RISK_RATIO_THRESHOLD,
        }
    }
}

impl RiskParams {
    /// Undersampled (d/D at or above the ratio threshold) and past the phase threshold.
    pub fn is_high_risk(&self, ratio: Option<f64>, zphase: ZPhase) -> bool {
        ratio.is_some_and(|r| r >= self.ratio_threshold) && zphase.value() > self.phase_threshold
    }
}

/// One consensus nodule under one reconstruction condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoduleOutcome {
    pub series_id: String,
    pub condition: Condition,
    /// Position of the nodule in its series' consensus list.
    pub nodule_index: usize,
    pub center_mm: [f64; 3],
    /// `None` when the nodule was excluded for a non-positive diameter.
    pub diameter_mm: Option<f64>,
    pub detected: bool,
    pub zphase: ZPhase,
    pub ratio: Option<f64>,
    pub risk_flag: bool,
}

/// Join match results with z-phase and d/D for one series under one condition.
pub fn assemble_outcomes(
    nodules: &[ConsensusNodule],
    detected: &[bool],
    geometry: &VolumeGeometry,
    condition: Condition,
    risk: &RiskParams,
) -> Result<Vec<NoduleOutcome>> {
    if !condition.matches_interval(geometry.recon_interval_mm) {
        return Err(Error::Config(format!(
            "condition {} expects a {} mm reconstruction interval, geometry has {} mm",
            condition,
            condition.nominal_interval_mm(),
            geometry.recon_interval_mm
        )));
    }
    if nodules.len() != detected.len() {
        return Err(Error::Config(format!(
            "{} nodules but {} match results",
            nodules.len(),
            detected.len()
        )));
    }
    nodules
        .iter()
        .zip(detected)
        .enumerate()
        .map(|(i, (n, &hit))| {
            let zphase = compute_zphase(n.center_mm[2], geometry)?;
            let ratio = match n.valid_diameter() {
                Some(d) => Some(interval_diameter_ratio(geometry.recon_interval_mm, d)?),
                None => None,
            };
            Ok(NoduleOutcome {
                series_id: n.series_id.clone(),
                condition,
                nodule_index: i,
                center_mm: n.center_mm,
                diameter_mm: n.valid_diameter(),
                detected: hit,
                zphase,
                ratio,
                risk_flag: risk.is_high_risk(ratio, zphase),
            })
        })
        .collect()
}
