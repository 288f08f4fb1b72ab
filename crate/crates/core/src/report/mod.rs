//! Audit orchestration: ingest → consensus → matching → stats, plus the
//! tables and per-study risk list written for downstream plotting.

mod tables;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{cluster_annotations, ClusterParams, Clustering, ZCenter};
use crate::error::{Error, Result};
use crate::geometry::{PhaseBinning, VolumeGeometry};
use crate::ingest::{parse_annotations, parse_detections, parse_manifest, ReaderAnnotation};
use crate::matching::{assemble_outcomes, match_detections, Condition, MatchParams, NoduleOutcome, RiskParams};
use crate::stats::{
    derive_seed, stratify_by_phase, stratify_by_ratio, summarize, BootstrapConfig, CellSeeding, ResamplingUnit,
    SensitivityCell,
};

pub use tables::{emit_tables, render_table, OutputFormat, Table, TableValue};

pub const TOOL_NAME: &str = "zphase";

pub const ASSUMPTIONS: [&str; 4] = [
    "series are axis-aligned axial; in-plane patient x/y = xy_origin_mm + pixel index * pixel spacing",
    "detections are matched to nodule centres by 3D Euclidean distance",
    "z origin is taken from the manifest as given",
    "bootstrap intervals use the percentile method with nearest-rank quantiles",
];

/// Statistical settings shared by the audit and outcome-level analyses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    pub bins: usize,
    pub resamples: usize,
    pub ci_level: f64,
    pub seed: u64,
    pub bootstrap_unit: ResamplingUnit,
}

impl AnalysisParams {
    pub fn new(seed: u64) -> Self {
        Self {
            bins: 5,
            resamples: crate::stats::DEFAULT_RESAMPLES,
            ci_level: crate::stats::DEFAULT_CI_LEVEL,
            seed,
            bootstrap_unit: ResamplingUnit::Nodule,
        }
    }

    fn bootstrap(&self) -> Option<BootstrapConfig> {
        (self.resamples > 0).then_some(BootstrapConfig {
            resamples: self.resamples,
            level: self.ci_level,
            seed: self.seed,
            unit: self.bootstrap_unit,
        })
    }
}

/// Everything needed to reproduce an audit run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub annotations_dir: PathBuf,
    pub manifest: PathBuf,
    pub detections: BTreeMap<Condition, PathBuf>,
    pub cluster_radius_mm: f64,
    pub min_readers: usize,
    pub z_center: ZCenter,
    pub match_radius_mm: f64,
    pub confidence_threshold: f64,
    pub risk_phase_threshold: f64,
    pub risk_ratio_threshold: f64,
    pub analysis: AnalysisParams,
    pub out_dir: PathBuf,
    pub format: OutputFormat,
}

impl AuditConfig {
    pub fn new(
        annotations_dir: impl Into<PathBuf>,
        manifest: impl Into<PathBuf>,
        detections: BTreeMap<Condition, PathBuf>,
        out_dir: impl Into<PathBuf>,
        seed: u64,
    ) -> Self {
        let cluster = ClusterParams::default();
        let matching = MatchParams::default();
        let risk = RiskParams::default();
        Self {
            annotations_dir: annotations_dir.into(),
            manifest: manifest.into(),
            detections,
            cluster_radius_mm: cluster.radius_mm,
            min_readers: cluster.min_readers,
            z_center: cluster.z_center,
            match_radius_mm: matching.radius_mm,
            confidence_threshold: matching.confidence_threshold,
            risk_phase_threshold: risk.phase_threshold,
            risk_ratio_threshold: risk.ratio_threshold,
            analysis: AnalysisParams::new(seed),
            out_dir: out_dir.into(),
            format: OutputFormat::Csv,
        }
    }

    pub fn cluster_params(&self) -> ClusterParams {
        ClusterParams {
            radius_mm: self.cluster_radius_mm,
            min_readers: self.min_readers,
            z_center: self.z_center,
        }
    }

    pub fn match_params(&self) -> MatchParams {
        MatchParams {
            radius_mm: self.match_radius_mm,
            confidence_threshold: self.confidence_threshold,
        }
    }

    pub fn risk_params(&self) -> RiskParams {
        RiskParams {
            phase_threshold: self.risk_phase_threshold,
            ratio_threshold: self.risk_ratio_threshold,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub annotation_files: usize,
    pub series: usize,
    pub annotations: usize,
    pub skipped_annotations: usize,
    pub discarded_annotations: usize,
    pub consensus_nodules: usize,
    pub excluded_nodules: usize,
    pub detections: BTreeMap<Condition, usize>,
    pub rejected_detections: BTreeMap<Condition, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: AuditConfig,
    pub assumptions: Vec<String>,
    pub inputs: InputSummary,
}

/// Sensitivity tables derived from a set of outcomes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeTables {
    pub condition_summary: Vec<(Condition, SensitivityCell)>,
    pub phase_table: Vec<(Condition, SensitivityCell)>,
    /// Three pooled strata followed by the stratum × phase-bin cells.
    pub ratio_table: Vec<SensitivityCell>,
    pub risk_list: Vec<NoduleOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub metadata: RunMetadata,
    pub tables: OutcomeTables,
    pub outcomes: Vec<NoduleOutcome>,
}

const SUMMARY_TABLE: u64 = 1;
const PHASE_TABLE: u64 = 2;
const RATIO_TABLE: u64 = 3;
const RATIO_CROSSED_TABLE: u64 = 4;

/// Stratify outcomes (any mix of conditions) into the report tables.
pub fn analyze_outcomes(outcomes: &[NoduleOutcome], params: &AnalysisParams) -> Result<OutcomeTables> {
    let binning = PhaseBinning::new(params.bins)?;
    let bootstrap = params.bootstrap();
    let mut by_condition: BTreeMap<Condition, Vec<NoduleOutcome>> = BTreeMap::new();
    for o in outcomes {
        by_condition.entry(o.condition).or_default().push(o.clone());
    }

    let mut condition_summary = Vec::new();
    let mut phase_table = Vec::new();
    for (condition, group) in &by_condition {
        let tag = *condition as u64;
        let refs: Vec<&NoduleOutcome> = group.iter().collect();
        let cell_boot = bootstrap.map(|b| BootstrapConfig {
            seed: derive_seed(b.seed, &[SUMMARY_TABLE, tag]),
            ..b
        });
        condition_summary.push((*condition, summarize(condition.label(), None, &refs, cell_boot.as_ref())?));
        let table_seed = bootstrap.map(|b| BootstrapConfig {
            seed: derive_seed(b.seed, &[PHASE_TABLE, tag]),
            ..b
        });
        for cell in stratify_by_phase(group, &binning, CellSeeding { bootstrap: table_seed.as_ref(), table: PHASE_TABLE })? {
            phase_table.push((*condition, cell));
        }
    }

    let mut ratio_table = stratify_by_ratio(outcomes, None, CellSeeding { bootstrap: bootstrap.as_ref(), table: RATIO_TABLE })?;
    ratio_table.extend(stratify_by_ratio(
        outcomes,
        Some(&binning),
        CellSeeding { bootstrap: bootstrap.as_ref(), table: RATIO_CROSSED_TABLE },
    )?);

    let mut risk_list = outcomes.to_vec();
    risk_list.sort_by(|a, b| {
        b.risk_flag
            .cmp(&a.risk_flag)
            .then_with(|| match (a.ratio, b.ratio) {
                (Some(x), Some(y)) => y.total_cmp(&x),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            })
            .then(b.zphase.value().total_cmp(&a.zphase.value()))
            .then_with(|| a.series_id.cmp(&b.series_id))
            .then(a.condition.cmp(&b.condition))
            .then(a.nodule_index.cmp(&b.nodule_index))
    });

    Ok(OutcomeTables {
        condition_summary,
        phase_table,
        ratio_table,
        risk_list,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Geometry lookup keyed by series and condition.
#[derive(Debug, Default)]
struct GeometryIndex {
    by_condition: BTreeMap<(String, Condition), VolumeGeometry>,
}

impl GeometryIndex {
    fn load(path: &Path) -> Result<Self> {
        let mut index = Self::default();
        for m in parse_manifest(&read(path)?)? {
            let Some(condition) = m.condition else {
                log::warn!(
                    "manifest entry for {} has a {} mm interval that matches no condition; ignored",
                    m.series_id,
                    m.geometry.recon_interval_mm
                );
                continue;
            };
            if index
                .by_condition
                .insert((m.series_id.clone(), condition), m.geometry)
                .is_some()
            {
                return Err(Error::Manifest(format!(
                    "duplicate entry for series {} under condition {}",
                    m.series_id, condition
                )));
            }
        }
        Ok(index)
    }

    fn get(&self, series: &str, condition: Condition) -> Option<&VolumeGeometry> {
        self.by_condition.get(&(series.to_string(), condition))
    }

    /// Geometry used for in-plane conversion: the finest reconstruction available.
    fn base(&self, series: &str) -> Option<&VolumeGeometry> {
        Condition::ALL.iter().find_map(|c| self.get(series, *c))
    }
}

fn xml_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file()
            && path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("xml"))
        {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn load_annotations(dir: &Path, summary: &mut InputSummary) -> Result<BTreeMap<String, Vec<ReaderAnnotation>>> {
    let files = xml_files(dir)?;
    summary.annotation_files = files.len();
    let mut docs: BTreeMap<String, Vec<(String, Vec<ReaderAnnotation>)>> = BTreeMap::new();
    for path in &files {
        let doc = parse_annotations(&read(path)?).map_err(|e| match e {
            Error::Xml { offset, message } => Error::Xml {
                offset,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        summary.skipped_annotations += doc.skipped.len();
        let series = doc.series_uid.clone().filter(|s| !s.is_empty()).unwrap_or_else(|| stem.clone());
        docs.entry(series).or_default().push((stem, doc.into_annotations()));
    }
    Ok(docs
        .into_iter()
        .map(|(series, files)| {
            let several = files.len() > 1;
            let annotations = files
                .into_iter()
                .flat_map(|(stem, anns)| {
                    anns.into_iter().map(move |mut a| {
                        // session ordinals repeat across files of the same series
                        if several {
                            a.reader_id = format!("{stem}:{}", a.reader_id);
                        }
                        a
                    })
                })
                .collect();
            (series, annotations)
        })
        .collect())
}

/// Run the full pipeline and compute the report. Nothing is written.
pub fn run_audit(config: &AuditConfig) -> Result<AuditReport> {
    let mut inputs = InputSummary::default();
    let geometry = GeometryIndex::load(&config.manifest)?;
    let annotations = load_annotations(&config.annotations_dir, &mut inputs)?;
    inputs.series = annotations.len();
    inputs.annotations = annotations.values().map(Vec::len).sum();

    let cluster_params = config.cluster_params();
    let clusterings: Vec<(String, Clustering)> = annotations
        .par_iter()
        .map(|(series, anns)| {
            let g = geometry.base(series).ok_or_else(|| {
                Error::Config(format!("no manifest geometry for annotated series {series}"))
            })?;
            Ok((series.clone(), cluster_annotations(series, anns, g, &cluster_params)?))
        })
        .collect::<Result<_>>()?;

    inputs.consensus_nodules = clusterings.iter().map(|(_, c)| c.nodules.len()).sum();
    inputs.excluded_nodules = clusterings
        .iter()
        .flat_map(|(_, c)| c.nodules.iter())
        .filter(|n| n.excluded)
        .count();
    inputs.discarded_annotations = clusterings
        .iter()
        .flat_map(|(_, c)| c.discarded.iter())
        .map(|d| d.members.len())
        .sum();
    if inputs.consensus_nodules == 0 {
        return Err(Error::EmptyConsensus {
            min_readers: config.min_readers,
        });
    }

    let match_params = config.match_params();
    let risk = config.risk_params();
    let mut outcomes = Vec::new();
    for (&condition, path) in &config.detections {
        let table = parse_detections(&read(path)?)?;
        inputs.detections.insert(condition, table.records.len());
        inputs.rejected_detections.insert(condition, table.rejected.len());
        let mut by_series: BTreeMap<&str, Vec<_>> = BTreeMap::new();
        for d in &table.records {
            by_series.entry(d.series_id.as_str()).or_default().push(d.clone());
        }
        for (series, clustering) in &clusterings {
            if clustering.nodules.is_empty() {
                continue;
            }
            let g = geometry.get(series, condition).ok_or_else(|| {
                Error::Config(format!("manifest has no {condition} geometry for series {series}"))
            })?;
            let dets = by_series.remove(series.as_str()).unwrap_or_default();
            let hits = match_detections(&clustering.nodules, &dets, &match_params);
            outcomes.extend(assemble_outcomes(&clustering.nodules, &hits, g, condition, &risk)?);
        }
        for series in by_series.keys() {
            log::debug!("{condition}: detections for series {series} without consensus nodules");
        }
    }

    let tables = analyze_outcomes(&outcomes, &config.analysis)?;
    Ok(AuditReport {
        metadata: RunMetadata {
            tool: TOOL_NAME.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.analysis.seed,
            config: config.clone(),
            assumptions: ASSUMPTIONS.iter().map(|s| s.to_string()).collect(),
            inputs,
        },
        tables,
        outcomes,
    })
}

/// Run the pipeline and write every table plus `run_metadata.json` to the configured directory.
pub fn execute_audit(config: &AuditConfig) -> Result<(AuditReport, Vec<PathBuf>)> {
    let report = run_audit(config)?;
    let files = emit_tables(&report, &config.out_dir, config.format)?;
    Ok((report, files))
}
