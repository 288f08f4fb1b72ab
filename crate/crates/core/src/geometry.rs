//! Reconstruction-grid geometry: z-phase folding, phase binning and the
//! interval/diameter ratio.
//!
//! All functions here are pure and thread-safe.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when deciding whether a nodule sits exactly on a plane.
pub const BOUNDARY_TOLERANCE_MM: f64 = 1e-9;

/// Upper end of the folded phase range.
pub const MAX_PHASE: f64 = 0.5;

/// Per-series reconstruction geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeGeometry {
    /// Inferior z-coordinate of the volume, mm.
    pub z_origin_mm: f64,
    /// Spacing between reconstructed planes, mm.
    pub recon_interval_mm: f64,
    /// In-plane pixel spacing (x, y), mm per pixel.
    pub pixel_spacing_mm: [f64; 2],
    pub slice_count: u32,
    /// Patient-space position of pixel (0, 0). Series are assumed axis-aligned axial.
    pub xy_origin_mm: [f64; 2],
}

impl VolumeGeometry {
    pub fn new(
        z_origin_mm: f64,
        recon_interval_mm: f64,
        pixel_spacing_mm: [f64; 2],
        slice_count: u32,
    ) -> Result<Self> {
        let geometry = Self {
            z_origin_mm,
            recon_interval_mm,
            pixel_spacing_mm,
            slice_count,
            xy_origin_mm: [0.0, 0.0],
        };
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn with_xy_origin(mut self, xy_origin_mm: [f64; 2]) -> Result<Self> {
        self.xy_origin_mm = xy_origin_mm;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.z_origin_mm.is_finite() {
            return Err(Error::InvalidGeometry(format!(
                "z_origin_mm must be finite, got {}",
                self.z_origin_mm
            )));
        }
        if !(self.recon_interval_mm.is_finite() && self.recon_interval_mm > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "recon_interval_mm must be > 0, got {}",
                self.recon_interval_mm
            )));
        }
        for (axis, s) in ["x", "y"].iter().zip(self.pixel_spacing_mm) {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidGeometry(format!(
                    "pixel spacing in {axis} must be > 0, got {s}"
                )));
            }
        }
        if self.slice_count == 0 {
            return Err(Error::InvalidGeometry("slice_count must be positive".into()));
        }
        if !self.xy_origin_mm.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGeometry("xy_origin_mm must be finite".into()));
        }
        Ok(())
    }
}

/// Folded position of a nodule centre within the reconstruction cycle, in [0, 0.5].
///
/// 0 means centred on a plane, 0.5 means equidistant between two planes.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ZPhase(f64);

impl ZPhase {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=MAX_PHASE).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::InvalidGeometry(format!(
                "z-phase must lie in [0, 0.5], got {value}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Fold an unfolded cycle fraction `f` in [0, 1) onto [0, 0.5].
pub fn fold_fraction(f: f64) -> f64 {
    f.min(1.0 - f).clamp(0.0, MAX_PHASE)
}

/// `x mod d` for `d > 0`, always in [0, d).
fn positive_mod(x: f64, d: f64) -> f64 {
    let r = x - d * (x / d).floor();
    if r < 0.0 || r >= d {
        0.0
    } else {
        r
    }
}

pub fn compute_zphase(z_nodule_mm: f64, geometry: &VolumeGeometry) -> Result<ZPhase> {
    if !z_nodule_mm.is_finite() {
        return Err(Error::InvalidGeometry(format!(
            "nodule z must be finite, got {z_nodule_mm}"
        )));
    }
    geometry.validate()?;
    let d = geometry.recon_interval_mm;
    let offset = (z_nodule_mm - geometry.z_origin_mm).abs();
    let mut r = positive_mod(offset, d);
    if r < BOUNDARY_TOLERANCE_MM || d - r < BOUNDARY_TOLERANCE_MM {
        r = 0.0;
    }
    ZPhase::new(fold_fraction(r / d))
}

/// One equal-width interval of the folded phase range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseBin {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    pub center: f64,
}

/// Equal-width partition of [0, 0.5]. Bins are half-open except the last,
/// which also takes φ = 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PhaseBinning {
    count: usize,
}

impl Default for PhaseBinning {
    fn default() -> Self {
        Self { count: 5 }
    }
}

impl PhaseBinning {
    pub fn new(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("phase bin count must be positive".into()));
        }
        Ok(Self { count })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn width(&self) -> f64 {
        MAX_PHASE / self.count as f64
    }

    pub fn bin(&self, index: usize) -> PhaseBin {
        let w = self.width();
        let lower = index as f64 * w;
        let upper = if index + 1 == self.count {
            MAX_PHASE
        } else {
            (index + 1) as f64 * w
        };
        PhaseBin {
            index,
            lower,
            upper,
            center: (index as f64 + 0.5) * w,
        }
    }

    pub fn bins(&self) -> impl Iterator<Item = PhaseBin> + '_ {
        (0..self.count).map(|i| self.bin(i))
    }

    pub fn bin_phase(&self, phase: ZPhase) -> PhaseBin {
        // 0.3 / 0.1 evaluates just below 3; nudge so edges land in the upper bin.
        let raw = (phase.value() / self.width() + 1e-9).floor() as usize;
        self.bin(raw.min(self.count - 1))
    }
}

/// Bin with the default five-bin partition.
pub fn bin_phase(phase: ZPhase) -> PhaseBin {
    PhaseBinning::default().bin_phase(phase)
}

/// Reconstruction interval divided by nodule diameter (d/D).
///
/// A non-positive diameter yields [`Error::ExcludedNodule`]; callers drop such
/// nodules from ratio analyses.
pub fn interval_diameter_ratio(recon_interval_mm: f64, diameter_mm: f64) -> Result<f64> {
    if !(recon_interval_mm.is_finite() && recon_interval_mm > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "recon_interval_mm must be > 0, got {recon_interval_mm}"
        )));
    }
    if !(diameter_mm.is_finite() && diameter_mm > 0.0) {
        return Err(Error::ExcludedNodule { diameter_mm });
    }
    Ok(recon_interval_mm / diameter_mm)
}
