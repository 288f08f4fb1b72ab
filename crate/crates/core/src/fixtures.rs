//! Bundled fixtures that encode the reported cohort counts.
//!
//! The reference-cohort cohort has 408 consensus nodules over 154 series under the
//! 1, 3 and 5 mm conditions. Overall, 5 mm phase-bin and pooled d/D-stratum
//! counts are exact; where only some cells were reported, the remaining
//! cells are filled with counts consistent with the reported totals
//! (marked `reported: false`). The same cohort is available as outcome
//! records and as a raw input bundle (annotation XML, manifest, detections)
//! that flows through the whole pipeline.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{compute_zphase, interval_diameter_ratio, VolumeGeometry};
use crate::ingest::{write_detections, write_manifest, DetectionRecord, GeometryManifest, ReaderAnnotation, Roi};
use crate::matching::{Condition, NoduleOutcome, RiskParams};
use crate::stats::RatioStratum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CountCell {
    pub detected: usize,
    pub total: usize,
    /// Whether the count appears in the source publication.
    pub reported: bool,
}

const fn reported(detected: usize, total: usize) -> CountCell {
    CountCell { detected, total, reported: true }
}

const fn filled(detected: usize, total: usize) -> CountCell {
    CountCell { detected, total, reported: false }
}

pub const CONDITION_COUNTS: [(Condition, CountCell); 3] = [
    (Condition::Baseline1mm, reported(346, 408)),
    (Condition::Recon3mm, reported(336, 408)),
    (Condition::Recon5mm, reported(292, 408)),
];

/// 5 mm condition, by phase-bin centre.
pub const PHASE_5MM_COUNTS: [(f64, CountCell); 5] = [
    (0.05, reported(58, 88)),
    (0.15, filled(70, 92)),
    (0.25, reported(58, 73)),
    (0.35, filled(67, 92)),
    (0.45, reported(39, 63)),
];

/// Pooled over conditions. Detected counts are round(p × n) of the reported
/// percentages, which round-trip: 585/633 = 0.9242, 138/177 = 0.7797, 70/114 = 0.6140.
pub const RATIO_COUNTS: [(RatioStratum, CountCell); 3] = [
    (RatioStratum::WellSampled, reported(585, 633)),
    (RatioStratum::Critical, reported(138, 177)),
    (RatioStratum::Undersampled, reported(70, 114)),
];

pub const SERIES_COUNT: usize = 154;
pub const NODULE_COUNT: usize = 408;
const PIXEL_SPACING_MM: f64 = 0.5;

/// Diameter classes of the cohort. With intervals 1/3/5 mm they land in the
/// ratio strata as: 12 mm = well/well/well, 8 mm = well/well/critical,
/// 4 mm = well/critical/undersampled. Point markings have no diameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SizeClass {
    Large,
    Medium,
    Small,
    Point,
}

const CLASSES: [SizeClass; 4] = [SizeClass::Large, SizeClass::Medium, SizeClass::Small, SizeClass::Point];

impl SizeClass {
    fn diameter_mm(self) -> f64 {
        match self {
            SizeClass::Large => 12.0,
            SizeClass::Medium => 8.0,
            SizeClass::Small => 4.0,
            SizeClass::Point => 0.0,
        }
    }
}

/// (count, detected at 5 mm) per phase bin and size class.
const LAYOUT_5MM: [[(usize, usize); 4]; 5] = [
    [(28, 26), (14, 10), (26, 17), (20, 5)],
    [(30, 29), (14, 11), (24, 16), (24, 14)],
    [(25, 24), (11, 10), (20, 15), (17, 9)],
    [(28, 27), (13, 10), (22, 11), (29, 19)],
    [(20, 14), (11, 9), (22, 11), (10, 5)],
];

/// Detected per size class at 1 mm and 3 mm.
const DETECTED_1MM: [usize; 4] = [125, 60, 97, 64];
const DETECTED_3MM: [usize; 4] = [124, 59, 88, 65];

#[derive(Debug, Clone)]
struct PlannedNodule {
    index: usize,
    series: usize,
    slot: usize,
    class: SizeClass,
    phase_bin_5mm: usize,
    detected: [bool; 3],
}

fn series_id(series: usize) -> String {
    format!("LIDC-IDRI-{:04}", series + 1)
}

fn series_geometry(series: usize, condition: Condition) -> VolumeGeometry {
    let d = condition.nominal_interval_mm();
    VolumeGeometry {
        z_origin_mm: -350.0 + (series % 7) as f64 * 0.5,
        recon_interval_mm: d,
        pixel_spacing_mm: [PIXEL_SPACING_MM; 2],
        slice_count: (180.0 / d).ceil() as u32,
        xy_origin_mm: [-160.0, -160.0 - (series % 3) as f64],
    }
}

fn plan() -> Vec<PlannedNodule> {
    let mut entries = Vec::with_capacity(NODULE_COUNT);
    for (bin, row) in LAYOUT_5MM.iter().enumerate() {
        for (class, &(count, detected)) in CLASSES.iter().zip(row) {
            for k in 0..count {
                entries.push((bin, *class, k < detected));
            }
        }
    }
    debug_assert_eq!(entries.len(), NODULE_COUNT);
    let mut nodules: Vec<PlannedNodule> = entries
        .into_iter()
        .enumerate()
        .map(|(i, (bin, class, hit5))| PlannedNodule {
            index: i,
            series: i % SERIES_COUNT,
            slot: i / SERIES_COUNT,
            class,
            phase_bin_5mm: bin,
            detected: [false, false, hit5],
        })
        .collect();
    for (ci, class) in CLASSES.iter().enumerate() {
        let members: Vec<usize> = nodules.iter().filter(|n| n.class == *class).map(|n| n.index).collect();
        for &i in members.iter().take(DETECTED_1MM[ci]) {
            nodules[i].detected[0] = true;
        }
        for &i in members.iter().rev().take(DETECTED_3MM[ci]) {
            nodules[i].detected[1] = true;
        }
    }
    nodules
}

impl PlannedNodule {
    fn z_mm(&self) -> f64 {
        let origin = series_geometry(self.series, Condition::Recon5mm).z_origin_mm;
        let center = (self.phase_bin_5mm as f64 + 0.5) * 0.1;
        // odd nodules sit on the far side of the cycle and rely on folding
        let frac = if self.index % 2 == 1 { 1.0 - center } else { center };
        origin + 5.0 * (12.0 + 8.0 * self.slot as f64) + 5.0 * frac
    }

    fn center_px(&self) -> (f64, f64) {
        (100.0 + 120.0 * self.slot as f64, 200.0 + 20.0 * (self.series % 5) as f64)
    }

    fn center_mm(&self) -> [f64; 3] {
        let g = series_geometry(self.series, Condition::Recon5mm);
        let (px, py) = self.center_px();
        [
            g.xy_origin_mm[0] + px * PIXEL_SPACING_MM,
            g.xy_origin_mm[1] + py * PIXEL_SPACING_MM,
            self.z_mm(),
        ]
    }
}

/// Outcome records for the reference-cohort cohort, as the pipeline would produce them.
pub fn reference_cohort_outcomes() -> Result<Vec<NoduleOutcome>> {
    let risk = RiskParams::default();
    let mut out = Vec::with_capacity(3 * NODULE_COUNT);
    let nodules = plan();
    for (ci, condition) in Condition::ALL.into_iter().enumerate() {
        for n in &nodules {
            let g = series_geometry(n.series, condition);
            let zphase = compute_zphase(n.z_mm(), &g)?;
            let diameter = (n.class != SizeClass::Point).then(|| n.class.diameter_mm());
            let ratio = diameter
                .map(|d| interval_diameter_ratio(g.recon_interval_mm, d))
                .transpose()?;
            out.push(NoduleOutcome {
                series_id: series_id(n.series),
                condition,
                nodule_index: n.slot,
                center_mm: n.center_mm(),
                diameter_mm: diameter,
                detected: n.detected[ci],
                zphase,
                ratio,
                risk_flag: risk.is_high_risk(ratio, zphase),
            });
        }
    }
    Ok(out)
}

/// Square outline of half-width `half` pixels: corners and edge midpoints.
fn outline(cx: f64, cy: f64, half: f64) -> Vec<(f64, f64)> {
    vec![
        (cx - half, cy - half),
        (cx, cy - half),
        (cx + half, cy - half),
        (cx + half, cy),
        (cx + half, cy + half),
        (cx, cy + half),
        (cx - half, cy + half),
        (cx - half, cy),
    ]
}

fn marking(reader: usize, nodule_id: String, cx: f64, cy: f64, z: f64, diameter: f64) -> ReaderAnnotation {
    const JITTER: [(f64, f64); 4] = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)];
    let (dx, dy) = JITTER[reader % 4];
    let (cx, cy) = (cx + dx, cy + dy);
    let rois = if diameter > 0.0 {
        let half = diameter / (2.0 * PIXEL_SPACING_MM);
        let q = diameter / 4.0;
        [z - q, z, z + q]
            .into_iter()
            .map(|zr| Roi { z_position_mm: zr, edge_points: outline(cx, cy, half) })
            .collect()
    } else {
        vec![Roi { z_position_mm: z, edge_points: vec![(cx, cy)] }]
    };
    ReaderAnnotation {
        reader_id: format!("session-{}", reader + 1),
        nodule_id,
        rois,
        characteristics: Default::default(),
    }
}

/// Serialise reading sessions in the LIDC reading-session layout the parser reads.
pub fn write_lidc_xml(series_uid: &str, sessions: &[Vec<ReaderAnnotation>]) -> String {
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    s.push_str("<LidcReadMessage xmlns=\"http://www.nih.gov\">\n");
    let _ = writeln!(s, "  <ResponseHeader>\n    <SeriesInstanceUid>{series_uid}</SeriesInstanceUid>\n  </ResponseHeader>");
    for anns in sessions {
        s.push_str("  <readingSession>\n    <annotationVersion>3.12</annotationVersion>\n");
        for a in anns {
            let _ = writeln!(s, "    <unblindedReadNodule>\n      <noduleID>{}</noduleID>", escape(&a.nodule_id));
            if !a.characteristics.is_empty() {
                s.push_str("      <characteristics>\n");
                for (k, v) in &a.characteristics {
                    let _ = writeln!(s, "        <{k}>{}</{k}>", escape(v));
                }
                s.push_str("      </characteristics>\n");
            }
            for roi in &a.rois {
                let _ = writeln!(
                    s,
                    "      <roi>\n        <imageZposition>{}</imageZposition>\n        <inclusion>TRUE</inclusion>",
                    roi.z_position_mm
                );
                for (x, y) in &roi.edge_points {
                    let _ = writeln!(s, "        <edgeMap><xCoord>{x}</xCoord><yCoord>{y}</yCoord></edgeMap>");
                }
                s.push_str("      </roi>\n");
            }
            s.push_str("    </unblindedReadNodule>\n");
        }
        s.push_str("  </readingSession>\n");
    }
    s.push_str("</LidcReadMessage>\n");
    s
}

fn escape(text: &str) -> String {
    quick_xml::escape::escape(text).into_owned()
}

/// Raw inputs for one audit run.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBundle {
    /// (file name, XML document)
    pub annotations: Vec<(String, String)>,
    pub manifest: String,
    pub detections: Vec<(Condition, String)>,
}

/// Paths of a bundle written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct BundlePaths {
    pub annotations_dir: PathBuf,
    pub manifest: PathBuf,
    pub detections: Vec<(Condition, PathBuf)>,
}

/// Annotation XML, manifest and detection tables whose audit reproduces
/// [`reference_cohort_outcomes`].
pub fn reference_cohort_bundle() -> Result<InputBundle> {
    let nodules = plan();
    let mut annotations = Vec::with_capacity(SERIES_COUNT);
    for s in 0..SERIES_COUNT {
        let mut sessions: Vec<Vec<ReaderAnnotation>> = vec![Vec::new(); 4];
        for n in nodules.iter().filter(|n| n.series == s) {
            let (px, py) = n.center_px();
            for (r, session) in sessions.iter_mut().enumerate() {
                session.push(marking(r, format!("Nodule {:03}", n.slot + 1), px, py, n.z_mm(), n.class.diameter_mm()));
            }
        }
        if s % 3 == 0 {
            // two-reader finding that must not reach consensus
            let z = series_geometry(s, Condition::Recon5mm).z_origin_mm + 177.0;
            for (r, session) in sessions.iter_mut().enumerate().take(2) {
                session.push(marking(r, "Nodule 900".into(), 440.0, 440.0, z, 6.0));
            }
        }
        annotations.push((format!("{}.xml", series_id(s)), write_lidc_xml(&series_id(s), &sessions)));
    }

    let manifests: Vec<GeometryManifest> = (0..SERIES_COUNT)
        .flat_map(|s| {
            Condition::ALL.into_iter().map(move |c| GeometryManifest {
                series_id: series_id(s),
                geometry: series_geometry(s, c),
                condition: Some(c),
                source: "reference-cohort fixture".into(),
            })
        })
        .collect();

    let mut detections = Vec::new();
    for (ci, condition) in Condition::ALL.into_iter().enumerate() {
        let mut records = Vec::new();
        for n in &nodules {
            let c = n.center_mm();
            let i = n.index;
            let record = if n.detected[ci] {
                DetectionRecord {
                    series_id: series_id(n.series),
                    center_mm: [c[0] + 2.0, c[1] - 1.0, c[2] + 1.5],
                    confidence: 0.5 + (i % 50) as f64 / 100.0,
                }
            } else if i % 2 == 0 {
                DetectionRecord {
                    series_id: series_id(n.series),
                    center_mm: [c[0] - 1.0, c[1], c[2]],
                    confidence: 0.2 + (i % 25) as f64 / 100.0,
                }
            } else {
                DetectionRecord {
                    series_id: series_id(n.series),
                    center_mm: [c[0], c[1] + 25.0, c[2]],
                    confidence: 0.9,
                }
            };
            records.push(record);
        }
        records.sort_by(|a, b| a.series_id.cmp(&b.series_id));
        detections.push((condition, write_detections(&records)?));
    }

    Ok(InputBundle {
        annotations,
        manifest: write_manifest(&manifests)?,
        detections,
    })
}

impl InputBundle {
    /// Write as `annotations/*.xml`, `manifest.json` and `detections_<condition>.csv`.
    pub fn write_to(&self, dir: &Path) -> Result<BundlePaths> {
        let annotations_dir = dir.join("annotations");
        std::fs::create_dir_all(&annotations_dir).map_err(|e| Error::io(&annotations_dir, e))?;
        for (name, xml) in &self.annotations {
            let p = annotations_dir.join(name);
            std::fs::write(&p, xml).map_err(|e| Error::io(&p, e))?;
        }
        let manifest = dir.join("manifest.json");
        std::fs::write(&manifest, &self.manifest).map_err(|e| Error::io(&manifest, e))?;
        let mut detections = Vec::new();
        for (c, text) in &self.detections {
            let p = dir.join(format!("detections_{}.csv", c.label()));
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            detections.push((*c, p));
        }
        Ok(BundlePaths {
            annotations_dir,
            manifest,
            detections,
        })
    }
}

/// Reported and filled counts as JSON, written next to the bundle.
pub fn expected_counts_json() -> Result<String> {
    #[derive(Serialize)]
    struct Expected {
        condition_summary: Vec<(&'static str, CountCell)>,
        phase_5mm: Vec<(f64, CountCell)>,
        ratio_strata: Vec<(&'static str, CountCell)>,
    }
    let e = Expected {
        condition_summary: CONDITION_COUNTS.iter().map(|(c, n)| (c.label(), *n)).collect(),
        phase_5mm: PHASE_5MM_COUNTS.to_vec(),
        ratio_strata: RATIO_COUNTS.iter().map(|(s, n)| (s.name(), *n)).collect(),
    };
    let mut text = serde_json::to_string_pretty(&e)?;
    text.push('\n');
    Ok(text)
}
