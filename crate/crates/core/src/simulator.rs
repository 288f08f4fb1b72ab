//! Desk-scale partial-volume model: a uniform sphere sampled by reconstruction
//! planes with a configurable slice sensitivity profile, and a
//! max-plane-fraction detector proxy.
//!
//! This is a qualitative analogue of a 3D detector, not a model of any
//! particular network.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{bootstrap_ci_flags, derive_seed, BootstrapConfig, SensitivityCell};

/// Largest quadrature step used by [`plane_signal`].
pub const QUADRATURE_STEP_MM: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SspShape {
    #[default]
    Rect,
    Triangular,
    Gaussian,
}

impl std::str::FromStr for SspShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rect" => Ok(SspShape::Rect),
            "triangular" => Ok(SspShape::Triangular),
            "gaussian" => Ok(SspShape::Gaussian),
            other => Err(Error::Config(format!("unknown SSP shape {other:?}"))),
        }
    }
}

/// Reconstruction grid plus slice sensitivity profile.
///
/// `ssp_width_mm` is the full width of the rect profile, or the FWHM of the
/// triangular and Gaussian profiles. All profiles peak at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SliceModel {
    pub recon_interval_mm: f64,
    pub ssp_width_mm: f64,
    pub shape: SspShape,
}

const FWHM_TO_SIGMA: f64 = 2.354_820_045_030_949_3;

impl SliceModel {
    pub fn new(recon_interval_mm: f64, ssp_width_mm: f64, shape: SspShape) -> Result<Self> {
        for (name, v) in [("recon_interval_mm", recon_interval_mm), ("ssp_width_mm", ssp_width_mm)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(Self {
            recon_interval_mm,
            ssp_width_mm,
            shape,
        })
    }

    /// Profile width equal to the interval.
    pub fn matched(recon_interval_mm: f64, shape: SspShape) -> Result<Self> {
        Self::new(recon_interval_mm, recon_interval_mm, shape)
    }

    pub fn weight(&self, dz: f64) -> f64 {
        let w = self.ssp_width_mm;
        match self.shape {
            SspShape::Rect => {
                if dz.abs() <= 0.5 * w {
                    1.0
                } else {
                    0.0
                }
            }
            SspShape::Triangular => (1.0 - dz.abs() / w).max(0.0),
            SspShape::Gaussian => {
                let sigma = w / FWHM_TO_SIGMA;
                (-0.5 * (dz / sigma).powi(2)).exp()
            }
        }
    }

    /// Half-width beyond which the weight is zero (or negligible for Gaussians).
    pub fn half_support(&self) -> f64 {
        match self.shape {
            SspShape::Rect => 0.5 * self.ssp_width_mm,
            SspShape::Triangular => self.ssp_width_mm,
            SspShape::Gaussian => 6.0 * self.ssp_width_mm / FWHM_TO_SIGMA,
        }
    }

    /// Points where the weight has a kink or jump, relative to the plane.
    fn breakpoints(&self) -> Vec<f64> {
        match self.shape {
            SspShape::Rect => vec![-0.5 * self.ssp_width_mm, 0.5 * self.ssp_width_mm],
            SspShape::Triangular => vec![-self.ssp_width_mm, 0.0, self.ssp_width_mm],
            SspShape::Gaussian => vec![],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SyntheticNodule {
    pub diameter_mm: f64,
    /// Centre position relative to the reconstruction plane at z = 0.
    pub z_offset_mm: f64,
    pub intensity: f64,
}

impl SyntheticNodule {
    pub fn new(diameter_mm: f64, z_offset_mm: f64) -> Result<Self> {
        if !(diameter_mm.is_finite() && diameter_mm > 0.0) {
            return Err(Error::Config(format!("nodule diameter must be > 0, got {diameter_mm}")));
        }
        Ok(Self {
            diameter_mm,
            z_offset_mm,
            intensity: 1.0,
        })
    }

    fn radius(&self) -> f64 {
        0.5 * self.diameter_mm
    }

    /// Axial cross-section area of the sphere at height `z`.
    pub fn cross_section(&self, z: f64) -> f64 {
        let r = self.radius();
        let dz = z - self.z_offset_mm;
        if dz.abs() >= r {
            0.0
        } else {
            PI * (r * r - dz * dz)
        }
    }

    pub fn total_signal(&self) -> f64 {
        4.0 / 3.0 * PI * self.radius().powi(3) * self.intensity
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let mut n = ((b - a) / QUADRATURE_STEP_MM).ceil() as usize;
    n = n.max(2);
    if n % 2 == 1 {
        n += 1;
    }
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for k in 1..n {
        let coeff = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += coeff * f(a + k as f64 * h);
    }
    sum * h / 3.0
}

/// Signal a plane at `plane_z` receives: the sphere's cross-section area
/// integrated against the SSP centred on the plane. Uses composite Simpson
/// quadrature (step ≤ 0.01 mm) split at the profile's breakpoints.
pub fn plane_signal(nodule: &SyntheticNodule, slice: &SliceModel, plane_z: f64) -> f64 {
    let r = nodule.radius();
    let lo = (nodule.z_offset_mm - r).max(plane_z - slice.half_support());
    let hi = (nodule.z_offset_mm + r).min(plane_z + slice.half_support());
    if hi <= lo {
        return 0.0;
    }
    let mut cuts: Vec<f64> = slice
        .breakpoints()
        .into_iter()
        .map(|b| plane_z + b)
        .filter(|&z| z > lo && z < hi)
        .collect();
    cuts.insert(0, lo);
    cuts.push(hi);
    let integrand = |z: f64| nodule.cross_section(z) * slice.weight(z - plane_z);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        // rect weight is constant on each piece; sample it at the midpoint
        if slice.shape == SspShape::Rect {
            if slice.weight(mid - plane_z) > 0.0 {
                total += simpson(|z| nodule.cross_section(z), a, b);
            }
        } else {
            total += simpson(integrand, a, b);
        }
    }
    total * nodule.intensity
}

/// Signal of the same nodule centred on an isolated plane; the detector's reference.
pub fn reference_signal(nodule: &SyntheticNodule, slice: &SliceModel) -> f64 {
    let centred = SyntheticNodule {
        z_offset_mm: 0.0,
        ..*nodule
    };
    plane_signal(&centred, slice, 0.0)
}

/// Fractions of the reference signal received by every plane the nodule touches.
pub fn plane_fractions(nodule: &SyntheticNodule, slice: &SliceModel) -> Vec<f64> {
    let d = slice.recon_interval_mm;
    let reach = nodule.radius() + slice.half_support();
    let first = ((nodule.z_offset_mm - reach) / d).floor() as i64;
    let last = ((nodule.z_offset_mm + reach) / d).ceil() as i64;
    let reference = reference_signal(nodule, slice);
    (first..=last)
        .map(|k| plane_signal(nodule, slice, k as f64 * d) / reference)
        .collect()
}

pub fn max_plane_fraction(nodule: &SyntheticNodule, slice: &SliceModel) -> f64 {
    plane_fractions(nodule, slice).into_iter().fold(0.0, f64::max)
}

/// Detected iff some plane carries at least `threshold` of the reference signal.
pub fn simulate_detection(nodule: &SyntheticNodule, slice: &SliceModel, threshold: f64) -> Result<bool> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("detection threshold must be in (0, 1), got {threshold}")));
    }
    Ok(max_plane_fraction(nodule, slice) >= threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    /// Cycle fractions of the nodule centre. Values in [0, 0.5] are folded
    /// phases; values up to 1 are accepted as unfolded offsets.
    pub phases: Vec<f64>,
    /// Interval/diameter ratios; the diameter is `interval / ratio`.
    pub ratios: Vec<f64>,
    pub slice: SliceModel,
    pub threshold: f64,
    pub n_per_cell: usize,
    /// Standard deviation of additive Gaussian noise on each plane fraction.
    pub noise_sd: f64,
    pub seed: u64,
    /// Interval estimation per cell; `None` leaves intervals empty.
    pub bootstrap: Option<BootstrapConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub ratio: f64,
    pub phase: f64,
    pub diameter_mm: f64,
    /// Noise-free max plane fraction.
    pub clean_max_fraction: f64,
    pub detected: usize,
    pub total: usize,
    pub ci: Option<(f64, f64)>,
}

impl SweepCell {
    pub fn sensitivity(&self) -> f64 {
        self.detected as f64 / self.total as f64
    }

    /// Binomial Monte Carlo standard error of the sensitivity.
    pub fn standard_error(&self) -> f64 {
        let p = self.sensitivity();
        (p * (1.0 - p) / self.total as f64).sqrt()
    }

    pub fn to_sensitivity_cell(&self) -> SensitivityCell {
        SensitivityCell {
            label: format!("{:.4}", self.ratio),
            bin_center: Some(self.phase),
            detected: self.detected,
            total: self.total,
            sensitivity: Some(self.sensitivity()),
            ci: self.ci,
        }
    }
}

/// Detection rate on a (ratio, phase) grid. Rows are ordered by ratio, then
/// phase. Each cell draws from its own sub-seed, so the result is the same
/// regardless of thread count.
pub fn sweep(config: &SweepConfig) -> Result<Vec<SweepCell>> {
    if config.phases.is_empty() || config.ratios.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    if config.n_per_cell == 0 {
        return Err(Error::Config("n_per_cell must be positive".into()));
    }
    if !(config.noise_sd.is_finite() && config.noise_sd >= 0.0) {
        return Err(Error::Config(format!("noise_sd must be >= 0, got {}", config.noise_sd)));
    }
    if !(config.threshold > 0.0 && config.threshold < 1.0) {
        return Err(Error::Config(format!("threshold must be in (0, 1), got {}", config.threshold)));
    }
    if let Some(p) = config.phases.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Config(format!("phase {p} outside [0, 1]")));
    }
    if let Some(r) = config.ratios.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(Error::Config(format!("ratio {r} must be > 0")));
    }
    let d = config.slice.recon_interval_mm;
    let grid: Vec<(usize, usize)> = (0..config.ratios.len())
        .flat_map(|ri| (0..config.phases.len()).map(move |pi| (ri, pi)))
        .collect();
    grid.into_par_iter()
        .map(|(ri, pi)| {
            let ratio = config.ratios[ri];
            let phase = config.phases[pi];
            let nodule = SyntheticNodule::new(d / ratio, phase * d)?;
            let fractions = plane_fractions(&nodule, &config.slice);
            let clean = fractions.iter().copied().fold(0.0, f64::max);
            let cell_seed = derive_seed(config.seed, &[ri as u64, pi as u64]);
            let flags: Vec<bool> = if config.noise_sd == 0.0 {
                vec![clean >= config.threshold; config.n_per_cell]
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(cell_seed);
                let noise = Normal::new(0.0, config.noise_sd)
                    .map_err(|e| Error::Config(e.to_string()))?;
                (0..config.n_per_cell)
                    .map(|_| {
                        fractions
                            .iter()
                            .map(|f| f + noise.sample(&mut rng))
                            .fold(f64::NEG_INFINITY, f64::max)
                            >= config.threshold
                    })
                    .collect()
            };
            let ci = config
                .bootstrap
                .map(|b| {
                    bootstrap_ci_flags(
                        &flags,
                        &BootstrapConfig {
                            seed: derive_seed(cell_seed, &[b.seed]),
                            ..b
                        },
                    )
                })
                .transpose()?;
            Ok(SweepCell {
                ratio,
                phase,
                diameter_mm: nodule.diameter_mm,
                clean_max_fraction: clean,
                detected: flags.iter().filter(|&&f| f).count(),
                total: flags.len(),
                ci,
            })
        })
        .collect()
}

/// Evenly spaced folded phases from 0 to 0.5 inclusive.
pub fn phase_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 0.5) {
        return Err(Error::Config(format!("phase step must be in (0, 0.5], got {step}")));
    }
    let n = (0.5 / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| (k as f64 * step).min(0.5)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force midpoint rule on a 0.001 mm grid.
    fn fine_plane_signal(n: &SyntheticNodule, s: &SliceModel, plane_z: f64) -> f64 {
        let h = 0.001;
        let r = 0.5 * n.diameter_mm;
        let steps = (2.0 * r / h).round() as usize;
        (0..steps)
            .map(|k| {
                let z = n.z_offset_mm - r + (k as f64 + 0.5) * h;
                n.cross_section(z) * s.weight(z - plane_z) * h
            })
            .sum()
    }

    #[test]
    fn centred_small_nodule_fully_contained() {
        let s = SliceModel::matched(5.0, SspShape::Rect).unwrap();
        let n = SyntheticNodule::new(4.0, 0.0).unwrap();
        let sig = plane_signal(&n, &s, 0.0);
        assert!((sig - n.total_signal()).abs() / n.total_signal() < 1e-9);
    }

    #[test]
    fn half_phase_splits_signal() {
        let s = SliceModel::matched(5.0, SspShape::Rect).unwrap();
        let n = SyntheticNodule::new(4.0, 2.5).unwrap();
        let a = plane_signal(&n, &s, 0.0);
        let b = plane_signal(&n, &s, 5.0);
        assert!((a - b).abs() < 1e-9);
        assert!((a - 0.5 * n.total_signal()).abs() / n.total_signal() < 1e-9);
    }

    #[test]
    fn matches_fine_grid_quadrature() {
        for shape in [SspShape::Rect, SspShape::Triangular, SspShape::Gaussian] {
            let s = SliceModel::matched(5.0, shape).unwrap();
            let n = SyntheticNodule::new(4.0, 0.3 * 5.0).unwrap();
            for plane in [-5.0, 0.0, 5.0] {
                let got = plane_signal(&n, &s, plane);
                let want = fine_plane_signal(&n, &s, plane);
                let scale = n.total_signal();
                assert!((got - want).abs() <= 1e-3 * scale, "{shape:?} plane {plane}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn signal_conserved_across_contiguous_planes() {
        let s = SliceModel::matched(5.0, SspShape::Rect).unwrap();
        for (d, z) in [(4.0, 1.3), (12.0, 0.7), (3.0, 4.9), (7.5, 2.5)] {
            let n = SyntheticNodule::new(d, z).unwrap();
            let total: f64 = (-5..=5).map(|k| plane_signal(&n, &s, k as f64 * 5.0)).sum();
            assert!((total - n.total_signal()).abs() / n.total_signal() < 1e-3);
        }
    }

    #[test]
    fn detection_examples() {
        let s = SliceModel::matched(5.0, SspShape::Rect).unwrap();
        let mid = SyntheticNodule::new(4.0, 2.5).unwrap();
        assert!(simulate_detection(&mid, &s, 1e-6).unwrap());
        assert!(!simulate_detection(&mid, &s, 0.6).unwrap());
        assert!((max_plane_fraction(&mid, &s) - 0.5).abs() < 1e-9);

        for k in 0..=10 {
            let phase = k as f64 * 0.05;
            let big = SyntheticNodule::new(5.0 / 0.3, phase * 5.0).unwrap();
            assert!(simulate_detection(&big, &s, 0.6).unwrap(), "phase {phase}");
        }
        assert!(simulate_detection(&mid, &s, 0.0).is_err());
        assert!(simulate_detection(&mid, &s, 1.0).is_err());
    }

    #[test]
    fn half_phase_fraction_non_increasing_in_ratio() {
        let s = SliceModel::matched(5.0, SspShape::Rect).unwrap();
        let mut last = f64::INFINITY;
        for ratio in [0.2, 0.3, 0.5, 0.7, 0.9, 1.0, 1.2, 1.5, 2.0] {
            let n = SyntheticNodule::new(5.0 / ratio, 2.5).unwrap();
            let f = max_plane_fraction(&n, &s);
            assert!(f <= last + 1e-9, "ratio {ratio}: {f} > {last}");
            last = f;
        }
    }

    #[test]
    fn phase_grid_is_inclusive() {
        let g = phase_grid(0.05).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(*g.last().unwrap(), 0.5);
        assert!(phase_grid(0.0).is_err());
    }

    #[test]
    fn noisy_transition_is_fractional() {
        let cfg = SweepConfig {
            phases: vec![0.45],
            ratios: vec![1.2],
            slice: SliceModel::matched(5.0, SspShape::Rect).unwrap(),
            threshold: 0.6,
            n_per_cell: 400,
            noise_sd: 0.05,
            seed: 11,
            bootstrap: None,
        };
        let cells = sweep(&cfg).unwrap();
        let s = cells[0].sensitivity();
        assert!(s > 0.0 && s < 1.0, "{s}");
        assert_eq!(sweep(&cfg).unwrap(), cells);
    }

    #[test]
    fn sweep_rejects_empty_grids() {
        let cfg = SweepConfig {
            phases: vec![],
            ratios: vec![1.0],
            slice: SliceModel::matched(5.0, SspShape::Rect).unwrap(),
            threshold: 0.6,
            n_per_cell: 10,
            noise_sd: 0.0,
            seed: 0,
            bootstrap: None,
        };
        assert!(sweep(&cfg).is_err());
    }
}
