//! Sensitivity estimates with percentile bootstrap intervals, stratified by
//! z-phase bin and by interval/diameter ratio.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PhaseBinning;
use crate::matching::NoduleOutcome;

pub const DEFAULT_RESAMPLES: usize = 2000;
pub const DEFAULT_CI_LEVEL: f64 = 0.95;

/// What a bootstrap draw resamples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResamplingUnit {
    /// Individual nodule outcomes.
    #[default]
    Nodule,
    /// Whole series (cluster bootstrap); each draw takes all outcomes of a series.
    Case,
}

impl std::str::FromStr for ResamplingUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nodule" => Ok(ResamplingUnit::Nodule),
            "case" => Ok(ResamplingUnit::Case),
            other => Err(Error::Config(format!("unknown resampling unit {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
    pub unit: ResamplingUnit,
}

impl BootstrapConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            resamples: DEFAULT_RESAMPLES,
            level: DEFAULT_CI_LEVEL,
            seed,
            unit: ResamplingUnit::Nodule,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.resamples == 0 {
            return Err(Error::Config("bootstrap needs at least one resample".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("CI level must be in (0, 1), got {}", self.level)));
        }
        Ok(())
    }

    fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic sub-seed for a table cell.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Detected fraction; [`Error::EmptyCell`] when there are no outcomes.
pub fn sensitivity(outcomes: &[NoduleOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::EmptyCell);
    }
    Ok(outcomes.iter().filter(|o| o.detected).count() as f64 / outcomes.len() as f64)
}

/// Nearest-rank empirical quantile of sorted values.
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

fn percentile_interval(mut stats: Vec<f64>, level: f64) -> (f64, f64) {
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    (nearest_rank(&stats, tail), nearest_rank(&stats, 1.0 - tail))
}

/// RNG for one resample. Depends only on (seed, index), so serial and
/// parallel evaluation agree bit for bit.
fn resample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Percentile bootstrap interval for the detected fraction of `flags`.
pub fn bootstrap_ci_flags(flags: &[bool], config: &BootstrapConfig) -> Result<(f64, f64)> {
    config.validate()?;
    if flags.is_empty() {
        return Err(Error::EmptyCell);
    }
    let n = flags.len();
    let stats: Vec<f64> = (0..config.resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = resample_rng(config.seed, i);
            let hits = (0..n).filter(|_| flags[rng.random_range(0..n)]).count();
            hits as f64 / n as f64
        })
        .collect();
    Ok(percentile_interval(stats, config.level))
}

/// Cluster bootstrap over groups of `(detected, total)` counts.
pub fn bootstrap_ci_grouped(groups: &[(usize, usize)], config: &BootstrapConfig) -> Result<(f64, f64)> {
    config.validate()?;
    if groups.iter().all(|g| g.1 == 0) {
        return Err(Error::EmptyCell);
    }
    let k = groups.len();
    let stats: Vec<f64> = (0..config.resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = resample_rng(config.seed, i);
            let (mut hits, mut total) = (0usize, 0usize);
            for _ in 0..k {
                let g = groups[rng.random_range(0..k)];
                hits += g.0;
                total += g.1;
            }
            if total == 0 {
                0.0
            } else {
                hits as f64 / total as f64
            }
        })
        .collect();
    Ok(percentile_interval(stats, config.level))
}

/// Percentile bootstrap interval for sensitivity over `outcomes`.
pub fn bootstrap_ci(outcomes: &[NoduleOutcome], config: &BootstrapConfig) -> Result<(f64, f64)> {
    let refs: Vec<&NoduleOutcome> = outcomes.iter().collect();
    bootstrap_refs(&refs, config)
}

fn bootstrap_refs(outcomes: &[&NoduleOutcome], config: &BootstrapConfig) -> Result<(f64, f64)> {
    match config.unit {
        ResamplingUnit::Nodule => {
            let flags: Vec<bool> = outcomes.iter().map(|o| o.detected).collect();
            bootstrap_ci_flags(&flags, config)
        }
        ResamplingUnit::Case => {
            let mut groups: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
            for o in outcomes {
                let g = groups.entry(o.series_id.as_str()).or_default();
                g.0 += usize::from(o.detected);
                g.1 += 1;
            }
            let groups: Vec<_> = groups.into_values().collect();
            bootstrap_ci_grouped(&groups, config)
        }
    }
}

/// One row of a sensitivity table. Empty cells carry no estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityCell {
    pub label: String,
    pub bin_center: Option<f64>,
    pub detected: usize,
    pub total: usize,
    pub sensitivity: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

impl SensitivityCell {
    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Detected fraction as an exact ratio of counts.
    pub fn counts(&self) -> (usize, usize) {
        (self.detected, self.total)
    }
}

/// Build a cell; `bootstrap` of `None` skips interval estimation.
pub fn summarize(
    label: impl Into<String>,
    bin_center: Option<f64>,
    outcomes: &[&NoduleOutcome],
    bootstrap: Option<&BootstrapConfig>,
) -> Result<SensitivityCell> {
    let total = outcomes.len();
    let detected = outcomes.iter().filter(|o| o.detected).count();
    let (sensitivity, ci) = if total == 0 {
        (None, None)
    } else {
        let ci = bootstrap.map(|b| bootstrap_refs(outcomes, b)).transpose()?;
        (Some(detected as f64 / total as f64), ci)
    };
    Ok(SensitivityCell {
        label: label.into(),
        bin_center,
        detected,
        total,
        sensitivity,
        ci,
    })
}

/// Bootstrap settings plus a table tag so every cell gets its own sub-seed.
#[derive(Debug, Clone, Copy)]
pub struct CellSeeding<'a> {
    pub bootstrap: Option<&'a BootstrapConfig>,
    pub table: u64,
}

impl CellSeeding<'_> {
    fn for_cell(&self, cell: u64) -> Option<BootstrapConfig> {
        self.bootstrap
            .map(|b| b.with_seed(derive_seed(b.seed, &[self.table, cell])))
    }
}

/// One cell per phase bin, labelled by bin centre. Outcomes should come from one condition.
pub fn stratify_by_phase(
    outcomes: &[NoduleOutcome],
    binning: &PhaseBinning,
    seeding: CellSeeding<'_>,
) -> Result<Vec<SensitivityCell>> {
    let mut buckets: Vec<Vec<&NoduleOutcome>> = vec![Vec::new(); binning.count()];
    for o in outcomes {
        buckets[binning.bin_phase(o.zphase).index].push(o);
    }
    binning
        .bins()
        .zip(buckets)
        .map(|(bin, members)| {
            let b = seeding.for_cell(bin.index as u64);
            summarize(format!("{:.4}", bin.center), Some(bin.center), &members, b.as_ref())
        })
        .collect()
}

/// Sampling regime by interval/diameter ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioStratum {
    /// d/D < 0.5
    WellSampled,
    /// 0.5 ≤ d/D < 1.0
    Critical,
    /// d/D ≥ 1.0
    Undersampled,
}

impl RatioStratum {
    pub const ALL: [RatioStratum; 3] = [RatioStratum::WellSampled, RatioStratum::Critical, RatioStratum::Undersampled];

    pub fn classify(ratio: f64) -> Option<Self> {
        if !(ratio.is_finite() && ratio > 0.0) {
            None
        } else if ratio < 0.5 {
            Some(RatioStratum::WellSampled)
        } else if ratio < 1.0 {
            Some(RatioStratum::Critical)
        } else {
            Some(RatioStratum::Undersampled)
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RatioStratum::WellSampled => "well_sampled",
            RatioStratum::Critical => "critical",
            RatioStratum::Undersampled => "undersampled",
        }
    }
}

/// Cells for the three ratio strata; outcomes without a ratio are dropped.
/// With `crossed` set, each stratum is further split by phase bin.
pub fn stratify_by_ratio(
    outcomes: &[NoduleOutcome],
    crossed: Option<&PhaseBinning>,
    seeding: CellSeeding<'_>,
) -> Result<Vec<SensitivityCell>> {
    let mut by_stratum: BTreeMap<RatioStratum, Vec<&NoduleOutcome>> = BTreeMap::new();
    for o in outcomes {
        if let Some(s) = o.ratio.and_then(RatioStratum::classify) {
            by_stratum.entry(s).or_default().push(o);
        }
    }
    let mut cells = Vec::new();
    for (si, stratum) in RatioStratum::ALL.into_iter().enumerate() {
        let members = by_stratum.remove(&stratum).unwrap_or_default();
        match crossed {
            None => {
                let b = seeding.for_cell(si as u64);
                cells.push(summarize(stratum.name(), None, &members, b.as_ref())?);
            }
            Some(binning) => {
                let mut buckets: Vec<Vec<&NoduleOutcome>> = vec![Vec::new(); binning.count()];
                for o in members {
                    buckets[binning.bin_phase(o.zphase).index].push(o);
                }
                for (bin, bucket) in binning.bins().zip(buckets) {
                    let b = seeding.for_cell(((si as u64) << 16) | bin.index as u64);
                    cells.push(summarize(stratum.name(), Some(bin.center), &bucket, b.as_ref())?);
                }
            }
        }
    }
    Ok(cells)
}
