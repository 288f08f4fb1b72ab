//! Independent checks on a consensus clustering.

use std::collections::BTreeMap;

use zphase_core::consensus::{ClusterParams, Clustering, RADIUS_EPSILON_MM};
use zphase_core::geometry::VolumeGeometry;
use zphase_core::ingest::ReaderAnnotation;

use super::unit_geometry;

type Key = (String, String);

fn key(a: &ReaderAnnotation) -> Key {
    (a.reader_id.clone(), a.nodule_id.clone())
}

/// Geometry used by [`center`] for the current thread.
pub fn with_geometry(g: VolumeGeometry) {
    GEOMETRY.with(|c| c.set(g));
}

thread_local! {
    static GEOMETRY: std::cell::Cell<VolumeGeometry> = std::cell::Cell::new(unit_geometry());
}

/// Mean edge point in mm and mean ROI z, computed from scratch.
fn center(a: &ReaderAnnotation) -> [f64; 3] {
    let g = GEOMETRY.with(|c| c.get());
    let pts: Vec<(f64, f64)> = a.rois.iter().flat_map(|r| r.edge_points.iter().copied()).collect();
    let n = pts.len() as f64;
    let px = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let py = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let z = a.rois.iter().map(|r| r.z_position_mm).sum::<f64>() / a.rois.len() as f64;
    [
        g.xy_origin_mm[0] + px * g.pixel_spacing_mm[0],
        g.xy_origin_mm[1] + py * g.pixel_spacing_mm[1],
        z,
    ]
}

fn mean(points: &[[f64; 3]]) -> [f64; 3] {
    let n = points.len() as f64;
    let mut m = [0.0; 3];
    for p in points {
        for k in 0..3 {
            m[k] += p[k] / n;
        }
    }
    m
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn compact(points: &[[f64; 3]], radius: f64) -> bool {
    let c = mean(points);
    points.iter().all(|p| dist(*p, c) <= radius + 1e-6)
}

fn distinct_readers(members: &[&ReaderAnnotation]) -> bool {
    let mut ids: Vec<&str> = members.iter().map(|a| a.reader_id.as_str()).collect();
    ids.sort_unstable();
    ids.windows(2).all(|w| w[0] != w[1])
}

/// Could `a` be admitted to `members` under the greedy admission rule?
fn could_join(members: &[&ReaderAnnotation], a: &ReaderAnnotation, radius: f64) -> bool {
    if members.iter().any(|m| m.reader_id == a.reader_id) {
        return false;
    }
    let pts: Vec<[f64; 3]> = members.iter().map(|m| center(m)).collect();
    if dist(center(a), mean(&pts)) > radius + RADIUS_EPSILON_MM {
        return false;
    }
    let mut grown = pts;
    grown.push(center(a));
    compact(&grown, radius)
}

/// Every property the oracle demands of a clustering; returns the first violation.
pub fn check(input: &[ReaderAnnotation], out: &Clustering, params: &ClusterParams) -> Result<(), String> {
    let mut seen: BTreeMap<Key, usize> = BTreeMap::new();
    for a in out.nodules.iter().flat_map(|n| &n.members).chain(out.discarded.iter().flat_map(|d| &d.members)) {
        *seen.entry(key(a)).or_default() += 1;
    }
    let expected: BTreeMap<Key, usize> = input.iter().map(|a| (key(a), 1)).collect();
    if seen != expected {
        return Err(format!("output is not a partition of the input: {seen:?}"));
    }
    for n in &out.nodules {
        let members: Vec<&ReaderAnnotation> = n.members.iter().collect();
        if !distinct_readers(&members) {
            return Err(format!("repeated reader in cluster at {:?}", n.center_mm));
        }
        if members.len() < params.min_readers || n.reader_count != members.len() {
            return Err(format!("cluster at {:?} has {} readers", n.center_mm, members.len()));
        }
        let pts: Vec<[f64; 3]> = members.iter().map(|m| center(m)).collect();
        if !compact(&pts, params.radius_mm) {
            return Err(format!("cluster at {:?} exceeds the radius", n.center_mm));
        }
        if dist(mean(&pts), n.center_mm) > 1e-9 {
            return Err("reported centre is not the member centroid".into());
        }
    }
    let discarded: Vec<&ReaderAnnotation> = out.discarded.iter().flat_map(|d| &d.members).collect();
    for a in &discarded {
        for n in &out.nodules {
            let members: Vec<&ReaderAnnotation> = n.members.iter().collect();
            if could_join(&members, a, params.radius_mm) {
                return Err(format!("discarded {:?} could join cluster at {:?}", key(a), n.center_mm));
            }
        }
    }
    Ok(())
}

/// Exhaustive search over subsets of the discarded annotations for a group
/// of at least `min_readers` that some order of admissions under the greedy
/// rule could assemble. Subset reachability is computed bottom-up over bitmasks.
pub fn discarded_subset_forming_cluster(out: &Clustering, params: &ClusterParams) -> Option<Vec<Key>> {
    let pool: Vec<&ReaderAnnotation> = out.discarded.iter().flat_map(|d| &d.members).collect();
    let n = pool.len();
    assert!(n <= 16, "exhaustive search limited to small pools");
    let members = |mask: usize| -> Vec<&ReaderAnnotation> { (0..n).filter(|i| mask >> i & 1 == 1).map(|i| pool[i]).collect() };
    let mut reachable = vec![false; 1 << n];
    for mask in 1usize..(1 << n) {
        reachable[mask] = if mask.count_ones() == 1 {
            true
        } else {
            (0..n).filter(|i| mask >> i & 1 == 1).any(|i| {
                let rest = mask & !(1 << i);
                reachable[rest] && could_join(&members(rest), pool[i], params.radius_mm)
            })
        };
        if reachable[mask] && mask.count_ones() as usize >= params.min_readers {
            return Some(members(mask).iter().map(|a| key(a)).collect());
        }
    }
    None
}

