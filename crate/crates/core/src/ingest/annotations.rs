//! Reader for the subset of the LIDC-IDRI reading-session XML the audit needs:
//! session boundaries, nodule ids, characteristics, and per-ROI z positions
//! with edge maps. Everything else in the document is skipped.

use std::collections::BTreeMap;

use quick_xml::escape::resolve_predefined_entity;
use quick_xml::events::Event;
use quick_xml::Reader;
use serde::Serialize;

use crate::error::{Error, Result};

/// One slice outline of a nodule marking.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Roi {
    pub z_position_mm: f64,
    /// Edge-map points in pixel coordinates.
    pub edge_points: Vec<(f64, f64)>,
}

/// One reader's marking of one nodule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReaderAnnotation {
    pub reader_id: String,
    pub nodule_id: String,
    pub rois: Vec<Roi>,
    pub characteristics: BTreeMap<String, String>,
}

impl ReaderAnnotation {
    pub fn validate(&self) -> Result<()> {
        if self.rois.is_empty() {
            return Err(Error::MalformedAnnotation(format!(
                "{}/{}: no ROIs",
                self.reader_id, self.nodule_id
            )));
        }
        for roi in &self.rois {
            if !roi.z_position_mm.is_finite() {
                return Err(Error::MalformedAnnotation(format!(
                    "{}/{}: non-finite z position",
                    self.reader_id, self.nodule_id
                )));
            }
            if roi.edge_points.is_empty() {
                return Err(Error::MalformedAnnotation(format!(
                    "{}/{}: ROI at z={} has no edge points",
                    self.reader_id, self.nodule_id, roi.z_position_mm
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReadingSession {
    /// Session ordinal; LIDC sessions are anonymous.
    pub reader_id: String,
    pub annotations: Vec<ReaderAnnotation>,
}

/// A nodule record that could not be turned into an annotation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub reader_id: String,
    pub nodule_id: String,
    pub byte_offset: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationDocument {
    /// `SeriesInstanceUid` from the response header, when present.
    pub series_uid: Option<String>,
    pub sessions: Vec<ReadingSession>,
    pub skipped: Vec<Diagnostic>,
}

impl AnnotationDocument {
    pub fn annotations(&self) -> impl Iterator<Item = &ReaderAnnotation> {
        self.sessions.iter().flat_map(|s| s.annotations.iter())
    }

    pub fn into_annotations(self) -> Vec<ReaderAnnotation> {
        self.sessions.into_iter().flat_map(|s| s.annotations).collect()
    }
}

#[derive(Default)]
struct NoduleBuilder {
    nodule_id: Option<String>,
    rois: Vec<Roi>,
    characteristics: BTreeMap<String, String>,
    problem: Option<String>,
    start_offset: u64,
}

#[derive(Default)]
struct RoiBuilder {
    z: Option<String>,
    inclusion: Option<String>,
    points: Vec<(f64, f64)>,
}

#[derive(Default)]
struct PointBuilder {
    x: Option<String>,
    y: Option<String>,
}

fn parse_number(text: &str, what: &str) -> std::result::Result<f64, String> {
    let value: f64 = text
        .trim()
        .parse()
        .map_err(|_| format!("{what} is not a number: {text:?}"))?;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("{what} is not finite: {text:?}"))
    }
}

/// Parse one LIDC-style XML document.
///
/// Reading sessions become readers `session-1`, `session-2`, ... in document
/// order; sessions without nodules are kept with no annotations. A nodule
/// with a missing or unreadable ROI z position (or an empty ROI) is skipped
/// and reported in [`AnnotationDocument::skipped`].
pub fn parse_annotations(xml: &[u8]) -> Result<AnnotationDocument> {
    let mut reader = Reader::from_reader(xml);

    let mut doc = AnnotationDocument {
        series_uid: None,
        sessions: Vec::new(),
        skipped: Vec::new(),
    };
    let mut path: Vec<String> = Vec::new();
    let mut text = String::new();
    let mut nodule: Option<NoduleBuilder> = None;
    let mut roi: Option<RoiBuilder> = None;
    let mut point: Option<PointBuilder> = None;
    let mut buf = Vec::new();

    loop {
        let event = reader.read_event_into(&mut buf).map_err(|e| Error::Xml {
            offset: reader.error_position(),
            message: e.to_string(),
        })?;
        match event {
            Event::Start(e) => {
                let name = String::from_utf8_lossy(e.local_name().as_ref()).into_owned();
                text.clear();
                let in_session = path.iter().any(|p| p == "readingSession");
                match name.as_str() {
                    "readingSession" => {
                        let reader_id = format!("session-{}", doc.sessions.len() + 1);
                        doc.sessions.push(ReadingSession {
                            reader_id,
                            annotations: Vec::new(),
                        });
                    }
                    "unblindedReadNodule" if in_session => {
                        nodule = Some(NoduleBuilder {
                            start_offset: reader.buffer_position(),
                            ..Default::default()
                        });
                    }
                    "roi" if nodule.is_some() => roi = Some(RoiBuilder::default()),
                    "edgeMap" if roi.is_some() => point = Some(PointBuilder::default()),
                    _ => {}
                }
                path.push(name);
            }
            Event::Text(t) => {
                let decoded = t.decode().map_err(|e| Error::Xml {
                    offset: reader.buffer_position(),
                    message: e.to_string(),
                })?;
                text.push_str(&decoded);
            }
            Event::GeneralRef(r) => {
                let name = String::from_utf8_lossy(r.as_ref()).into_owned();
                if let Some(ch) = resolve_predefined_entity(&name) {
                    text.push_str(ch);
                }
            }
            Event::CData(c) => text.push_str(&String::from_utf8_lossy(c.as_ref())),
            Event::End(_) => {
                let name = path.pop().unwrap_or_default();
                let parent = path.last().map(String::as_str);
                let value = std::mem::take(&mut text);
                match (name.as_str(), parent) {
                    ("SeriesInstanceUid", Some("ResponseHeader")) if doc.series_uid.is_none() => {
                        doc.series_uid = Some(value.trim().to_string());
                    }
                    ("noduleID", Some("unblindedReadNodule")) => {
                        if let Some(n) = nodule.as_mut() {
                            n.nodule_id = Some(value.trim().to_string());
                        }
                    }
                    (key, Some("characteristics")) => {
                        if let Some(n) = nodule.as_mut() {
                            n.characteristics.insert(key.to_string(), value.trim().to_string());
                        }
                    }
                    ("imageZposition", Some("roi")) => {
                        if let Some(r) = roi.as_mut() {
                            r.z = Some(value);
                        }
                    }
                    ("inclusion", Some("roi")) => {
                        if let Some(r) = roi.as_mut() {
                            r.inclusion = Some(value);
                        }
                    }
                    ("xCoord", Some("edgeMap")) => {
                        if let Some(p) = point.as_mut() {
                            p.x = Some(value);
                        }
                    }
                    ("yCoord", Some("edgeMap")) => {
                        if let Some(p) = point.as_mut() {
                            p.y = Some(value);
                        }
                    }
                    ("edgeMap", _) => {
                        if let (Some(p), Some(r)) = (point.take(), roi.as_mut()) {
                            match finish_point(p) {
                                Ok(xy) => r.points.push(xy),
                                Err(msg) => flag(&mut nodule, msg),
                            }
                        }
                    }
                    ("roi", _) => {
                        if let Some(r) = roi.take() {
                            match finish_roi(r) {
                                Ok(Some(done)) => {
                                    if let Some(n) = nodule.as_mut() {
                                        n.rois.push(done);
                                    }
                                }
                                Ok(None) => {}
                                Err(msg) => flag(&mut nodule, msg),
                            }
                        }
                    }
                    ("unblindedReadNodule", _) => {
                        if let Some(n) = nodule.take() {
                            finish_nodule(&mut doc, n);
                        }
                    }
                    _ => {}
                }
            }
            Event::Eof => {
                if let Some(open) = path.last() {
                    return Err(Error::Xml {
                        offset: reader.buffer_position(),
                        message: format!("unexpected end of document inside <{open}>"),
                    });
                }
                break;
            }
            _ => {}
        }
        buf.clear();
    }
    Ok(doc)
}

fn flag(nodule: &mut Option<NoduleBuilder>, msg: String) {
    if let Some(n) = nodule.as_mut() {
        n.problem.get_or_insert(msg);
    }
}

fn finish_point(p: PointBuilder) -> std::result::Result<(f64, f64), String> {
    let x = p.x.ok_or("edgeMap without xCoord")?;
    let y = p.y.ok_or("edgeMap without yCoord")?;
    Ok((parse_number(&x, "xCoord")?, parse_number(&y, "yCoord")?))
}

/// Exclusion ROIs (holes inside a nodule outline) are dropped.
fn finish_roi(r: RoiBuilder) -> std::result::Result<Option<Roi>, String> {
    let z = r.z.ok_or("ROI without imageZposition")?;
    let z_position_mm = parse_number(&z, "imageZposition")?;
    if r
        .inclusion
        .as_deref()
        .is_some_and(|v| v.trim().eq_ignore_ascii_case("false"))
    {
        return Ok(None);
    }
    if r.points.is_empty() {
        return Err(format!("ROI at z={z_position_mm} has no edge points"));
    }
    Ok(Some(Roi {
        z_position_mm,
        edge_points: r.points,
    }))
}

fn finish_nodule(doc: &mut AnnotationDocument, n: NoduleBuilder) {
    let Some(session) = doc.sessions.last_mut() else {
        return;
    };
    let nodule_id = n
        .nodule_id
        .clone()
        .unwrap_or_else(|| format!("nodule-{}", session.annotations.len() + 1));
    let problem = n.problem.or_else(|| {
        n.rois
            .is_empty()
            .then(|| "nodule has no inclusion ROIs".to_string())
    });
    if let Some(message) = problem {
        log::warn!(
            "skipping {}/{} (byte {}): {}",
            session.reader_id,
            nodule_id,
            n.start_offset,
            message
        );
        doc.skipped.push(Diagnostic {
            reader_id: session.reader_id.clone(),
            nodule_id,
            byte_offset: n.start_offset,
            message,
        });
        return;
    }
    session.annotations.push(ReaderAnnotation {
        reader_id: session.reader_id.clone(),
        nodule_id,
        rois: n.rois,
        characteristics: n.characteristics,
    });
}
