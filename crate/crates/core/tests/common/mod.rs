#![allow(dead_code)]

pub mod oracle;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zphase_core::consensus::ClusterParams;
use zphase_core::geometry::VolumeGeometry;
use zphase_core::ingest::{parse_annotations, parse_manifest, ReaderAnnotation, Roi};
use zphase_core::matching::Condition;
use zphase_core::report::AuditConfig;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn e2e_dir() -> PathBuf {
    fixture_dir().join("e2e")
}

pub fn e2e_config(out: impl Into<PathBuf>, seed: u64) -> AuditConfig {
    let dir = e2e_dir();
    let detections = BTreeMap::from([(Condition::Recon5mm, dir.join("detections_5mm.csv"))]);
    let mut config = AuditConfig::new(dir.join("annotations"), dir.join("manifest.json"), detections, out, seed);
    config.analysis.resamples = 200;
    config
}

/// Unit pixel spacing and zero origins, so pixel coordinates are millimetres.
pub fn unit_geometry() -> VolumeGeometry {
    VolumeGeometry::new(0.0, 1.0, [1.0, 1.0], 100).unwrap()
}

/// One-ROI, one-point annotation centred at `p` under [`unit_geometry`].
pub fn point_annotation(reader: usize, nodule: &str, p: [f64; 3]) -> ReaderAnnotation {
    ReaderAnnotation {
        reader_id: format!("r{reader}"),
        nodule_id: nodule.to_string(),
        rois: vec![Roi { z_position_mm: p[2], edge_points: vec![(p[0], p[1])] }],
        characteristics: BTreeMap::new(),
    }
}

fn e2e_series(name: &str) -> (Vec<ReaderAnnotation>, VolumeGeometry) {
    let dir = e2e_dir();
    let xml = std::fs::read(dir.join("annotations").join(format!("{name}.xml"))).unwrap();
    let manifest = parse_manifest(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    let geometry = manifest.iter().find(|m| m.series_id == name).unwrap().geometry;
    (parse_annotations(&xml).unwrap().into_annotations(), geometry)
}

/// Named small clustering inputs (at most 12 annotations each).
pub fn small_fixtures() -> Vec<(String, Vec<ReaderAnnotation>, ClusterParams, VolumeGeometry)> {
    let d = ClusterParams::default();
    let g = unit_geometry();
    let mut out: Vec<(String, Vec<ReaderAnnotation>, ClusterParams, VolumeGeometry)> = Vec::new();
    let mut push = |name: &str, input: Vec<ReaderAnnotation>, params: ClusterParams, geometry: VolumeGeometry| {
        out.push((name.to_string(), input, params, geometry));
    };

    push("four-close", (0..4).map(|r| point_annotation(r, "a", [r as f64 * 0.5, 0.0, 0.0])).collect(), d, g);
    push("three-readers", (0..3).map(|r| point_annotation(r, "a", [0.0, r as f64, 0.0])).collect(), d, g);
    push(
        "two-sites-40mm",
        (0..4)
            .flat_map(|r| [point_annotation(r, "l", [0.0, 0.0, 0.0]), point_annotation(r, "r", [40.0, 0.0, 0.0])])
            .collect(),
        d,
        g,
    );
    push(
        "drift-chain",
        (0..6).map(|r| point_annotation(r, "c", [6.0 * r as f64, 0.0, 0.0])).collect(),
        d,
        g,
    );
    push(
        "repeated-reader",
        vec![
            point_annotation(0, "a", [0.0, 0.0, 0.0]),
            point_annotation(0, "b", [1.0, 0.0, 0.0]),
            point_annotation(1, "a", [0.0, 1.0, 0.0]),
            point_annotation(2, "a", [0.0, 0.0, 1.0]),
            point_annotation(3, "a", [1.0, 1.0, 1.0]),
        ],
        d,
        g,
    );
    push(
        "overlapping-sites-12mm",
        (0..4)
            .flat_map(|r| {
                [
                    point_annotation(r, "p", [0.0, r as f64, 0.0]),
                    point_annotation(r, "q", [12.0, r as f64, 0.0]),
                ]
            })
            .collect(),
        d,
        g,
    );
    push(
        "radius-boundary",
        vec![
            point_annotation(0, "a", [-15.0, 0.0, 0.0]),
            point_annotation(1, "a", [15.0, 0.0, 0.0]),
            point_annotation(2, "a", [0.0, -15.0, 0.0]),
            point_annotation(3, "a", [0.0, 15.0, 0.0]),
            point_annotation(4, "a", [0.0, 0.0, 15.01]),
        ],
        d,
        g,
    );
    push(
        "two-reader-threshold",
        (0..5).map(|r| point_annotation(r, "x", [30.0 * r as f64, 0.0, 0.0])).collect(),
        ClusterParams { min_readers: 2, ..d },
        g,
    );
    let (a, ga) = e2e_series("series-a");
    push("e2e-series-a", a, d, ga);
    let (b, gb) = e2e_series("series-b");
    push("e2e-series-b", b, d, gb);

    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for k in 0..40 {
        let sites: Vec<[f64; 3]> = (0..rng.random_range(1..4))
            .map(|_| [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)])
            .collect();
        let n = rng.random_range(4..=12);
        let input = (0..n)
            .map(|i| {
                let s = sites[rng.random_range(0..sites.len())];
                point_annotation(
                    rng.random_range(0..5),
                    &format!("n{i}"),
                    [
                        s[0] + rng.random_range(-8.0..8.0),
                        s[1] + rng.random_range(-8.0..8.0),
                        s[2] + rng.random_range(-8.0..8.0),
                    ],
                )
            })
            .collect();
        push(&format!("seeded-{k}"), input, ClusterParams { min_readers: rng.random_range(2..=4), ..d }, g);
    }
    out
}
