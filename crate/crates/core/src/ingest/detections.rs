use serde::Serialize;

use crate::error::{Error, Result};

pub const DETECTION_HEADER: [&str; 5] = ["series_id", "x_mm", "y_mm", "z_mm", "confidence"];

/// One model detection in patient coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRecord {
    pub series_id: String,
    pub center_mm: [f64; 3],
    pub confidence: f64,
}

/// A row that parsed structurally but was rejected on its values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedRow {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionTable {
    pub records: Vec<DetectionRecord>,
    pub rejected: Vec<RejectedRow>,
}

/// Parse a `series_id,x_mm,y_mm,z_mm,confidence` table.
///
/// A row with the wrong number of columns aborts the parse. Rows with
/// non-finite coordinates or a confidence outside [0, 1] are rejected
/// individually and reported.
pub fn parse_detections(csv_bytes: &[u8]) -> Result<DetectionTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(csv_bytes);

    let header = reader.headers().map_err(|e| Error::Detections {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != DETECTION_HEADER {
        return Err(Error::Detections {
            line: 1,
            message: format!(
                "expected header {}, found {}",
                DETECTION_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut table = DetectionTable::default();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            let message = match e.kind() {
                csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                    format!("expected {expected_len} columns, found {len}")
                }
                _ => e.to_string(),
            };
            Error::Detections { line, message }
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        match parse_row(&row) {
            Ok(record) => table.records.push(record),
            Err(message) => {
                log::warn!("detections line {line}: {message}");
                table.rejected.push(RejectedRow { line, message });
            }
        }
    }
    Ok(table)
}

fn parse_row(row: &csv::StringRecord) -> std::result::Result<DetectionRecord, String> {
    let series_id = row[0].to_string();
    if series_id.is_empty() {
        return Err("empty series_id".into());
    }
    let mut values = [0.0f64; 4];
    for (i, slot) in values.iter_mut().enumerate() {
        let field = &row[i + 1];
        *slot = field
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("{} is not a finite number: {field:?}", DETECTION_HEADER[i + 1]))?;
    }
    let confidence = values[3];
    if !(0.0..=1.0).contains(&confidence) {
        return Err(format!("confidence {confidence} outside [0, 1]"));
    }
    Ok(DetectionRecord {
        series_id,
        center_mm: [values[0], values[1], values[2]],
        confidence,
    })
}

pub fn write_detections(records: &[DetectionRecord]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(DETECTION_HEADER)?;
    for r in records {
        writer.write_record([
            r.series_id.clone(),
            r.center_mm[0].to_string(),
            r.center_mm[1].to_string(),
            r.center_mm[2].to_string(),
            r.confidence.to_string(),
        ])?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Config(format!("flushing detections: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "series_id,x_mm,y_mm,z_mm,confidence\n";

    #[test]
    fn single_row() {
        let t = parse_detections(format!("{HEADER}A,12.0,34.0,-120.0,0.73\n").as_bytes()).unwrap();
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.records[0].confidence, 0.73);
        assert_eq!(t.records[0].center_mm, [12.0, 34.0, -120.0]);
    }

    #[test]
    fn header_only() {
        assert!(parse_detections(HEADER.as_bytes()).unwrap().records.is_empty());
    }

    #[test]
    fn rows_in_order() {
        let text = format!("{HEADER}A,1,1,1,0.1\nB,2,2,2,0.2\nA,3,3,3,0.3\n");
        let t = parse_detections(text.as_bytes()).unwrap();
        let ids: Vec<_> = t.records.iter().map(|r| (r.series_id.as_str(), r.confidence)).collect();
        assert_eq!(ids, vec![("A", 0.1), ("B", 0.2), ("A", 0.3)]);
    }

    #[test]
    fn column_count_error_has_line() {
        let text = format!("{HEADER}A,1,1,1,0.1\nB,2,2,0.2\n");
        match parse_detections(text.as_bytes()) {
            Err(Error::Detections { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn out_of_range_confidence_rejected() {
        let text = format!("{HEADER}A,1,1,1,1.3\nB,2,2,2,0.2\nC,1,1,1,-0.1\n");
        let t = parse_detections(text.as_bytes()).unwrap();
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.rejected.len(), 2);
        assert_eq!(t.rejected[0].line, 2);
        assert_eq!(t.rejected[1].line, 4);
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(parse_detections(b"id,x,y,z,score\n").is_err());
    }

    #[test]
    fn writer_round_trips() {
        let recs = vec![DetectionRecord { series_id: "S".into(), center_mm: [1.5, -2.25, 100.0], confidence: 0.5 }];
        let text = write_detections(&recs).unwrap();
        assert_eq!(parse_detections(text.as_bytes()).unwrap().records, recs);
    }
}
