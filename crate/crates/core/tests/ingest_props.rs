mod common;


use proptest::prelude::*;

use zphase_core::fixtures::write_lidc_xml;
use zphase_core::ingest::{parse_annotations, parse_detections, write_detections, DetectionRecord, ReaderAnnotation, Roi};

fn annotation() -> impl Strategy<Value = ReaderAnnotation> {
    (
        "[A-Za-z0-9 &<>_-]{1,12}",
        proptest::collection::vec(
            (-400.0f64..100.0, proptest::collection::vec((0.0f64..512.0, 0.0f64..512.0), 1..10)),
            1..5,
        ),
        proptest::collection::btree_map("[a-z]{3,8}", "[1-5]", 0..3),
    )
        .prop_map(|(id, rois, characteristics)| ReaderAnnotation {
            reader_id: String::new(),
            nodule_id: id.trim().to_string(),
            rois: rois
                .into_iter()
                .map(|(z, edge_points)| Roi { z_position_mm: z, edge_points })
                .collect(),
            characteristics,
        })
        .prop_filter("non-blank id", |a| !a.nodule_id.is_empty())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn one_reader_per_session(sessions in proptest::collection::vec(proptest::collection::vec(annotation(), 0..4), 0..6)) {
        let sessions: Vec<Vec<ReaderAnnotation>> = sessions
            .into_iter()
            .enumerate()
            .map(|(i, anns)| {
                anns.into_iter()
                    .map(|a| ReaderAnnotation { reader_id: format!("session-{}", i + 1), ..a })
                    .collect()
            })
            .collect();
        let doc = parse_annotations(write_lidc_xml("uid", &sessions).as_bytes()).unwrap();
        prop_assert_eq!(doc.sessions.len(), sessions.len());
        let ids: std::collections::BTreeSet<_> = doc.sessions.iter().map(|s| s.reader_id.clone()).collect();
        prop_assert_eq!(ids.len(), sessions.len());
        for (parsed, written) in doc.sessions.iter().zip(&sessions) {
            prop_assert_eq!(&parsed.annotations, written);
        }
        prop_assert!(doc.skipped.is_empty());
    }

    #[test]
    fn detections_round_trip(rows in proptest::collection::vec(
        ("[A-Z]{1,4}-[0-9]{1,3}", -300.0f64..300.0, -300.0f64..300.0, -400.0f64..100.0, 0.0f64..=1.0), 0..40)) {
        let records: Vec<DetectionRecord> = rows
            .into_iter()
            .map(|(s, x, y, z, c)| DetectionRecord { series_id: s, center_mm: [x, y, z], confidence: c })
            .collect();
        let table = parse_detections(write_detections(&records).unwrap().as_bytes()).unwrap();
        prop_assert_eq!(table.records, records);
        prop_assert!(table.rejected.is_empty());
    }
}

#[test]
fn empty_session_yields_reader_without_annotations() {
    let xml = write_lidc_xml("uid", &[vec![], vec![]]);
    let doc = parse_annotations(xml.as_bytes()).unwrap();
    assert_eq!(doc.sessions.len(), 2);
    assert!(doc.sessions.iter().all(|s| s.annotations.is_empty()));
}
