use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::VolumeGeometry;
use crate::matching::Condition;

/// Geometry of one reconstructed series.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryManifest {
    pub series_id: String,
    pub geometry: VolumeGeometry,
    /// Reconstruction condition this entry describes. When the file omits it,
    /// it is inferred from the interval (1, 3 or 5 mm).
    pub condition: Option<Condition>,
    pub source: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    series_id: String,
    z_origin_mm: f64,
    recon_interval_mm: f64,
    pixel_spacing_mm: [f64; 2],
    slice_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    xy_origin_mm: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    condition: Option<Condition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
}

pub fn parse_manifest(json: &[u8]) -> Result<Vec<GeometryManifest>> {
    let entries: Vec<ManifestEntry> =
        serde_json::from_slice(json).map_err(|e| Error::Manifest(e.to_string()))?;
    entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            if e.series_id.trim().is_empty() {
                return Err(Error::Manifest(format!("entry {i}: series_id is empty")));
            }
            let geometry = VolumeGeometry {
                z_origin_mm: e.z_origin_mm,
                recon_interval_mm: e.recon_interval_mm,
                pixel_spacing_mm: e.pixel_spacing_mm,
                slice_count: e.slice_count,
                xy_origin_mm: e.xy_origin_mm.unwrap_or([0.0, 0.0]),
            };
            geometry.validate().map_err(|err| match err {
                Error::InvalidGeometry(msg) => {
                    Error::InvalidGeometry(format!("series {} (entry {i}): {msg}", e.series_id))
                }
                other => other,
            })?;
            let condition = match e.condition {
                Some(c) => {
                    if !c.matches_interval(geometry.recon_interval_mm) {
                        return Err(Error::Config(format!(
                            "series {} (entry {i}): condition {} expects a {} mm interval, manifest says {} mm",
                            e.series_id,
                            c.label(),
                            c.nominal_interval_mm(),
                            geometry.recon_interval_mm
                        )));
                    }
                    Some(c)
                }
                None => Condition::from_interval(geometry.recon_interval_mm),
            };
            Ok(GeometryManifest {
                series_id: e.series_id,
                geometry,
                condition,
                source: e.source.unwrap_or_else(|| format!("manifest entry {i}")),
            })
        })
        .collect()
}

/// Serialise manifests in the same schema [`parse_manifest`] reads.
pub fn write_manifest(manifests: &[GeometryManifest]) -> Result<String> {
    let entries: Vec<ManifestEntry> = manifests
        .iter()
        .map(|m| ManifestEntry {
            series_id: m.series_id.clone(),
            z_origin_mm: m.geometry.z_origin_mm,
            recon_interval_mm: m.geometry.recon_interval_mm,
            pixel_spacing_mm: m.geometry.pixel_spacing_mm,
            slice_count: m.geometry.slice_count,
            xy_origin_mm: (m.geometry.xy_origin_mm != [0.0, 0.0]).then_some(m.geometry.xy_origin_mm),
            condition: m.condition,
            source: Some(m.source.clone()),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&entries)?)
}
