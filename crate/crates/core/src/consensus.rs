//! Multi-reader consensus: annotation centres, greedy radius clustering and
//! diameter estimation from annotation extents.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::VolumeGeometry;
use crate::ingest::ReaderAnnotation;

pub const DEFAULT_CLUSTER_RADIUS_MM: f64 = 15.0;
pub const DEFAULT_MIN_READERS: usize = 4;

/// Slack on every radius comparison, absorbing centroid rounding.
pub const RADIUS_EPSILON_MM: f64 = 1e-6;

/// How the z coordinate of an annotation centre is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZCenter {
    /// Mean of the ROI z positions.
    #[default]
    Centroid,
    /// Midpoint of the ROI z range.
    MidExtent,
}

impl std::str::FromStr for ZCenter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centroid" => Ok(ZCenter::Centroid),
            "mid-extent" => Ok(ZCenter::MidExtent),
            other => Err(Error::Config(format!("unknown z-center mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusterParams {
    pub radius_mm: f64,
    pub min_readers: usize,
    pub z_center: ZCenter,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            radius_mm: DEFAULT_CLUSTER_RADIUS_MM,
            min_readers: DEFAULT_MIN_READERS,
            z_center: ZCenter::Centroid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusNodule {
    pub series_id: String,
    pub center_mm: [f64; 3],
    pub reader_count: usize,
    /// Members ordered by reader id.
    pub members: Vec<ReaderAnnotation>,
    pub member_centers_mm: Vec<[f64; 3]>,
    /// Mean per-reader diameter (D). Meaningless when `excluded` is set.
    pub diameter_mm: f64,
    /// Set when the estimated diameter is not positive.
    pub excluded: bool,
}

impl ConsensusNodule {
    pub fn valid_diameter(&self) -> Option<f64> {
        (!self.excluded).then_some(self.diameter_mm)
    }
}

/// Annotations that ended up in a cluster below the reader threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscardedCluster {
    pub center_mm: [f64; 3],
    pub members: Vec<ReaderAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clustering {
    pub nodules: Vec<ConsensusNodule>,
    pub discarded: Vec<DiscardedCluster>,
}

impl Clustering {
    pub fn annotation_count(&self) -> usize {
        self.nodules.iter().map(|n| n.members.len()).sum::<usize>()
            + self.discarded.iter().map(|d| d.members.len()).sum::<usize>()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Patient-space centre of one annotation.
///
/// x and y are the mean edge-point position scaled by pixel spacing (axis-aligned
/// axial series); z follows `mode`.
pub fn annotation_center(
    annotation: &ReaderAnnotation,
    geometry: &VolumeGeometry,
    mode: ZCenter,
) -> Result<[f64; 3]> {
    annotation.validate()?;
    let points = || annotation.rois.iter().flat_map(|r| r.edge_points.iter());
    let px = mean(points().map(|p| p.0));
    let py = mean(points().map(|p| p.1));
    let zs = || annotation.rois.iter().map(|r| r.z_position_mm);
    let z = match mode {
        ZCenter::Centroid => mean(zs()),
        ZCenter::MidExtent => {
            let lo = zs().fold(f64::INFINITY, f64::min);
            let hi = zs().fold(f64::NEG_INFINITY, f64::max);
            0.5 * (lo + hi)
        }
    };
    Ok([
        geometry.xy_origin_mm[0] + px * geometry.pixel_spacing_mm[0],
        geometry.xy_origin_mm[1] + py * geometry.pixel_spacing_mm[1],
        z,
    ])
}

/// Per-reader diameter: larger of the edge bounding-box sides (mm) and the ROI z range.
pub fn annotation_diameter(annotation: &ReaderAnnotation, geometry: &VolumeGeometry) -> Result<f64> {
    annotation.validate()?;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    let (mut z0, mut z1) = (f64::INFINITY, f64::NEG_INFINITY);
    for roi in &annotation.rois {
        z0 = z0.min(roi.z_position_mm);
        z1 = z1.max(roi.z_position_mm);
        for &(x, y) in &roi.edge_points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    let xy = ((x1 - x0) * geometry.pixel_spacing_mm[0]).max((y1 - y0) * geometry.pixel_spacing_mm[1]);
    Ok(xy.max(z1 - z0))
}

/// Mean per-reader diameter over the nodule's members. Returns the raw
/// estimate; a value ≤ 0 means the nodule is excluded from ratio analyses.
pub fn estimate_diameter(nodule: &ConsensusNodule, geometry: &VolumeGeometry) -> Result<f64> {
    mean_diameter(&nodule.members, geometry)
}

fn mean_diameter(members: &[ReaderAnnotation], geometry: &VolumeGeometry) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::MalformedAnnotation("consensus nodule has no members".into()));
    }
    let per_member = members
        .iter()
        .map(|m| annotation_diameter(m, geometry))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(per_member.into_iter()))
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

fn centroid(points: impl Iterator<Item = [f64; 3]>) -> [f64; 3] {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for p in points {
        for k in 0..3 {
            sum[k] += p[k];
        }
        n += 1;
    }
    sum.map(|s| s / n as f64)
}

struct Work<'a> {
    annotations: Vec<&'a ReaderAnnotation>,
    centers: Vec<[f64; 3]>,
    radius: f64,
}

impl Work<'_> {
    fn centroid_of(&self, members: &[usize]) -> [f64; 3] {
        centroid(members.iter().map(|&i| self.centers[i]))
    }

    /// Distance from `candidate` to the cluster centroid if the candidate may
    /// join: its reader is new to the cluster, it lies within the radius of
    /// the current centroid, and every member stays within the radius of the
    /// centroid after it joins.
    fn admission_distance(&self, members: &[usize], candidate: usize) -> Option<f64> {
        let reader = &self.annotations[candidate].reader_id;
        if members.iter().any(|&m| &self.annotations[m].reader_id == reader) {
            return None;
        }
        let d = distance(&self.centers[candidate], &self.centroid_of(members));
        if d > self.radius {
            return None;
        }
        let mut grown = members.to_vec();
        grown.push(candidate);
        let next = self.centroid_of(&grown);
        grown
            .iter()
            .all(|&m| distance(&self.centers[m], &next) <= self.radius)
            .then_some(d)
    }

    /// Grow clusters from seeds in index order over `pool`. Each step admits
    /// the unassigned annotation nearest the running centroid.
    fn greedy(&self, pool: &[usize]) -> Vec<Vec<usize>> {
        let mut free: BTreeSet<usize> = pool.iter().copied().collect();
        let mut clusters = Vec::new();
        while let Some(seed) = free.pop_first() {
            let mut members = vec![seed];
            loop {
                let best = free
                    .iter()
                    .filter_map(|&c| self.admission_distance(&members, c).map(|d| (d, c)))
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                match best {
                    Some((_, c)) => {
                        free.remove(&c);
                        members.push(c);
                    }
                    None => break,
                }
            }
            clusters.push(members);
        }
        clusters
    }

    fn distinct_readers(&self, members: &[usize]) -> usize {
        members
            .iter()
            .map(|&m| self.annotations[m].reader_id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }
}

fn sort_key_cmp(a: (&[f64; 3], &ReaderAnnotation), b: (&[f64; 3], &ReaderAnnotation)) -> Ordering {
    a.0[2]
        .total_cmp(&b.0[2])
        .then(a.0[0].total_cmp(&b.0[0]))
        .then(a.0[1].total_cmp(&b.0[1]))
        .then_with(|| a.1.reader_id.cmp(&b.1.reader_id))
        .then_with(|| a.1.nodule_id.cmp(&b.1.nodule_id))
}

/// Cluster one series' annotations into consensus nodules.
///
/// Seeds are taken in (z, x, y) order of annotation centres. A cluster grows
/// by repeatedly admitting the nearest unassigned annotation from a reader not
/// yet represented, provided it lies within `radius_mm` of the running
/// centroid and no member ends up farther than `radius_mm` from the updated
/// centroid. Clusters with fewer than `min_readers` readers are discarded, and
/// their annotations are offered to the surviving clusters and re-clustered
/// until nothing changes. The result does not depend on input order.
pub fn cluster_annotations(
    series_id: &str,
    annotations: &[ReaderAnnotation],
    geometry: &VolumeGeometry,
    params: &ClusterParams,
) -> Result<Clustering> {
    if !(params.radius_mm.is_finite() && params.radius_mm >= 0.0) {
        return Err(Error::Config(format!("cluster radius must be >= 0, got {}", params.radius_mm)));
    }
    let mut indexed = annotations
        .iter()
        .map(|a| annotation_center(a, geometry, params.z_center).map(|c| (c, a)))
        .collect::<Result<Vec<_>>>()?;
    indexed.sort_by(|a, b| sort_key_cmp((&a.0, a.1), (&b.0, b.1)));
    let work = Work {
        centers: indexed.iter().map(|(c, _)| *c).collect(),
        annotations: indexed.iter().map(|(_, a)| *a).collect(),
        radius: params.radius_mm + RADIUS_EPSILON_MM,
    };

    let all: Vec<usize> = (0..work.annotations.len()).collect();
    let mut clusters = work.greedy(&all);
    let (mut kept, mut rest): (Vec<_>, Vec<_>) = clusters
        .drain(..)
        .partition(|c| work.distinct_readers(c) >= params.min_readers);
    loop {
        let mut pool: Vec<usize> = rest.iter().flatten().copied().collect();
        pool.sort_unstable();
        let mut changed = false;
        pool.retain(|&a| {
            let best = kept
                .iter()
                .enumerate()
                .filter_map(|(k, members)| work.admission_distance(members, a).map(|d| (d, k)))
                .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            match best {
                Some((_, k)) => {
                    kept[k].push(a);
                    changed = true;
                    false
                }
                None => true,
            }
        });
        if !changed {
            break;
        }
        let regrouped = work.greedy(&pool);
        let (more, still): (Vec<_>, Vec<_>) = regrouped
            .into_iter()
            .partition(|c| work.distinct_readers(c) >= params.min_readers);
        kept.extend(more);
        rest = still;
    }

    let by_reader = |members: &mut Vec<usize>| {
        members.sort_by(|&a, &b| {
            work.annotations[a]
                .reader_id
                .cmp(&work.annotations[b].reader_id)
                .then(a.cmp(&b))
        })
    };

    let mut nodules = kept
        .into_iter()
        .map(|mut members| {
            by_reader(&mut members);
            let owned: Vec<ReaderAnnotation> = members.iter().map(|&m| work.annotations[m].clone()).collect();
            let diameter = mean_diameter(&owned, geometry)?;
            Ok(ConsensusNodule {
                series_id: series_id.to_string(),
                center_mm: work.centroid_of(&members),
                reader_count: work.distinct_readers(&members),
                member_centers_mm: members.iter().map(|&m| work.centers[m]).collect(),
                members: owned,
                diameter_mm: diameter,
                excluded: diameter.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    nodules.sort_by(|a, b| {
        a.center_mm[2]
            .total_cmp(&b.center_mm[2])
            .then(a.center_mm[0].total_cmp(&b.center_mm[0]))
            .then(a.center_mm[1].total_cmp(&b.center_mm[1]))
    });

    let discarded = rest
        .into_iter()
        .map(|mut members| {
            by_reader(&mut members);
            DiscardedCluster {
                center_mm: work.centroid_of(&members),
                members: members.iter().map(|&m| work.annotations[m].clone()).collect(),
            }
        })
        .collect();

    Ok(Clustering { nodules, discarded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Roi;

    fn geom(spacing: f64) -> VolumeGeometry {
        VolumeGeometry::new(-300.0, 5.0, [spacing, spacing], 100).unwrap()
    }

    fn ann(reader: &str, points: &[(f64, f64)], zs: &[f64]) -> ReaderAnnotation {
        ReaderAnnotation {
            reader_id: reader.into(),
            nodule_id: format!("{reader}-{}", zs[0]),
            rois: zs
                .iter()
                .map(|&z| Roi { z_position_mm: z, edge_points: points.to_vec() })
                .collect(),
            characteristics: Default::default(),
        }
    }

    fn square(cx: f64, cy: f64, half: f64) -> Vec<(f64, f64)> {
        vec![(cx - half, cy - half), (cx + half, cy - half), (cx + half, cy + half), (cx - half, cy + half)]
    }

    #[test]
    fn center_examples() {
        let a = ann("r1", &[(10.0, 10.0), (20.0, 10.0), (20.0, 20.0), (10.0, 20.0)], &[-100.0]);
        let c = annotation_center(&a, &geom(0.5), ZCenter::Centroid).unwrap();
        assert_eq!((c[0], c[1]), (7.5, 7.5));

        let b = ann("r1", &[(0.0, 0.0)], &[-100.0, -104.0]);
        let c = annotation_center(&b, &geom(0.5), ZCenter::Centroid).unwrap();
        assert_eq!(c, [0.0, 0.0, -102.0]);
    }

    #[test]
    fn mid_extent_differs_from_centroid() {
        let a = ann("r1", &[(0.0, 0.0)], &[0.0, 1.0, 5.0]);
        let g = geom(1.0);
        assert_eq!(annotation_center(&a, &g, ZCenter::Centroid).unwrap()[2], 2.0);
        assert_eq!(annotation_center(&a, &g, ZCenter::MidExtent).unwrap()[2], 2.5);
    }

    #[test]
    fn center_of_empty_annotation_fails() {
        let a = ReaderAnnotation {
            reader_id: "r".into(),
            nodule_id: "n".into(),
            rois: vec![],
            characteristics: Default::default(),
        };
        assert!(matches!(
            annotation_center(&a, &geom(1.0), ZCenter::Centroid),
            Err(Error::MalformedAnnotation(_))
        ));
    }

    #[test]
    fn four_readers_one_nodule() {
        let g = geom(1.0);
        let anns: Vec<_> = (0..4)
            .map(|i| ann(&format!("r{i}"), &square(100.0 + i as f64 * 0.5, 100.0, 3.0), &[-50.0]))
            .collect();
        let c = cluster_annotations("S", &anns, &g, &ClusterParams::default()).unwrap();
        assert_eq!(c.nodules.len(), 1);
        assert_eq!(c.nodules[0].reader_count, 4);
        assert!(c.discarded.is_empty());
    }

    #[test]
    fn three_readers_below_threshold() {
        let g = geom(1.0);
        let anns: Vec<_> = (0..3)
            .map(|i| ann(&format!("r{i}"), &square(100.0, 100.0, 3.0), &[-50.0]))
            .collect();
        let c = cluster_annotations("S", &anns, &g, &ClusterParams::default()).unwrap();
        assert!(c.nodules.is_empty());
        assert_eq!(c.annotation_count(), 3);
    }

    #[test]
    fn empty_input() {
        let c = cluster_annotations("S", &[], &geom(1.0), &ClusterParams::default()).unwrap();
        assert!(c.nodules.is_empty() && c.discarded.is_empty());
    }

    #[test]
    fn same_reader_never_twice() {
        let g = geom(1.0);
        let mut anns: Vec<_> = (0..4)
            .map(|i| ann(&format!("r{i}"), &square(100.0, 100.0, 3.0), &[-50.0]))
            .collect();
        anns.push(ann("r0", &square(101.0, 100.0, 3.0), &[-50.0]));
        let c = cluster_annotations("S", &anns, &g, &ClusterParams::default()).unwrap();
        assert_eq!(c.nodules.len(), 1);
        let readers: BTreeSet<_> = c.nodules[0].members.iter().map(|m| m.reader_id.clone()).collect();
        assert_eq!(readers.len(), c.nodules[0].members.len());
        assert_eq!(c.discarded.len(), 1);
    }

    #[test]
    fn diameter_examples() {
        let g = geom(0.5);
        // 10 x 6 pixel box, single slice
        let a = ann("r1", &[(0.0, 0.0), (10.0, 0.0), (10.0, 6.0), (0.0, 6.0)], &[-10.0]);
        assert_eq!(annotation_diameter(&a, &g).unwrap(), 5.0);

        let point = ann("r1", &[(3.0, 3.0)], &[-10.0]);
        assert_eq!(annotation_diameter(&point, &g).unwrap(), 0.0);

        let m4 = ann("r1", &[(0.0, 0.0), (8.0, 8.0)], &[-10.0]);
        let m6 = ann("r2", &[(0.0, 0.0), (12.0, 12.0)], &[-10.0]);
        assert_eq!(mean_diameter(&[m4, m6], &g).unwrap(), 5.0);
    }

    #[test]
    fn z_extent_can_dominate() {
        let g = geom(0.5);
        let a = ann("r1", &[(0.0, 0.0), (4.0, 4.0)], &[-10.0, -12.0, -17.0]);
        assert_eq!(annotation_diameter(&a, &g).unwrap(), 7.0);
    }

    #[test]
    fn single_point_markings_are_excluded() {
        let g = geom(0.5);
        let anns: Vec<_> = (0..4).map(|i| ann(&format!("r{i}"), &[(50.0, 50.0)], &[-20.0])).collect();
        let c = cluster_annotations("S", &anns, &g, &ClusterParams::default()).unwrap();
        assert_eq!(c.nodules.len(), 1);
        assert!(c.nodules[0].excluded);
        assert_eq!(c.nodules[0].valid_diameter(), None);
    }
}
