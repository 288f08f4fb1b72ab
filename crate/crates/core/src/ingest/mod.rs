//! Input parsers: reader annotation XML, geometry manifests and detection tables.

mod annotations;
mod detections;
mod manifest;

pub use annotations::{
    parse_annotations, AnnotationDocument, Diagnostic, ReaderAnnotation, ReadingSession, Roi,
};
pub use detections::{parse_detections, write_detections, DetectionRecord, DetectionTable, RejectedRow};
pub use manifest::{parse_manifest, write_manifest, GeometryManifest};
