//! Per-identity clustering of labeled Gaussians into ground-plane detections.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussians::Gaussian3D;

/// DBSCAN over `D`-dimensional points with Euclidean distance.
///
/// A point is core when at least `min_pts` points (itself included) lie
/// within `eps`. Clusters are the connected components of cores under the
/// `eps` relation; a border point joins the cluster of its lowest-index core
/// neighbor. Clusters are numbered by their lowest member index. Noise is
/// `None`.
pub fn dbscan<const D: usize>(points: &[[f64; D]], eps: f64, min_pts: usize) -> Result<Vec<Option<usize>>> {
    if !(eps > 0.0) || min_pts == 0 {
        return Err(Error::Config("dbscan needs eps > 0 and min_pts ≥ 1".into()));
    }
    let n = points.len();
    let neighbors = neighbor_lists(points, eps);
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut comp = vec![usize::MAX; n];
    let mut stack = Vec::new();
    for start in 0..n {
        if !core[start] || comp[start] != usize::MAX {
            continue;
        }
        comp[start] = start;
        stack.push(start);
        while let Some(i) = stack.pop() {
            for &j in &neighbors[i] {
                if core[j] && comp[j] == usize::MAX {
                    comp[j] = start;
                    stack.push(j);
                }
            }
        }
    }
    let mut raw: Vec<Option<usize>> = (0..n)
        .map(|i| {
            if core[i] {
                Some(comp[i])
            } else {
                neighbors[i].iter().copied().filter(|&j| core[j]).min().map(|j| comp[j])
            }
        })
        .collect();
    // Renumber by lowest member index.
    let mut rename = HashMap::new();
    for label in raw.iter_mut().flatten() {
        let next = rename.len();
        *label = *rename.entry(*label).or_insert(next);
    }
    Ok(raw)
}

fn cell<const D: usize>(p: &[f64; D], eps: f64) -> [i64; D] {
    let mut c = [0i64; D];
    for k in 0..D {
        c[k] = (p[k] / eps).floor() as i64;
    }
    c
}

/// Sorted neighbor indices (including self) within `eps`, via a uniform grid.
fn neighbor_lists<const D: usize>(points: &[[f64; D]], eps: f64) -> Vec<Vec<usize>> {
    let mut grid: HashMap<[i64; D], Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(cell(p, eps)).or_default().push(i);
    }
    let offsets = {
        let mut v = vec![[0i64; D]];
        for k in 0..D {
            v = v
                .into_iter()
                .flat_map(|o| {
                    [-1i64, 0, 1].into_iter().map(move |d| {
                        let mut o = o;
                        o[k] = d;
                        o
                    })
                })
                .collect();
        }
        v
    };
    let eps2 = eps * eps;
    points
        .iter()
        .map(|p| {
            let c = cell(p, eps);
            let mut out = Vec::new();
            for off in &offsets {
                let mut key = c;
                for k in 0..D {
                    key[k] += off[k];
                }
                if let Some(list) = grid.get(&key) {
                    for &j in list {
                        let d2: f64 = (0..D).map(|k| (p[k] - points[j][k]).powi(2)).sum();
                        if d2 <= eps2 {
                            out.push(j);
                        }
                    }
                }
            }
            out.sort_unstable();
            out
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizeParams {
    /// An identity needs more than this many Gaussians to be clustered.
    pub tau_cluster: usize,
    pub eps: f64,
    pub min_pts: usize,
    pub nms_radius: f64,
}

impl Default for LocalizeParams {
    fn default() -> Self {
        Self {
            tau_cluster: 20,
            eps: 0.2,
            min_pts: 10,
            nms_radius: 0.5,
        }
    }
}

impl LocalizeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || self.min_pts == 0 || !(self.nms_radius > 0.0) {
            return Err(Error::Config("localization parameters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    /// Number of Gaussians in the cluster.
    pub confidence: f64,
    pub id: u32,
}

/// Clusters every sufficiently large identity on the ground plane and
/// suppresses near-duplicate detections.
pub fn localize(gaussians: &[Gaussian3D], params: &LocalizeParams) -> Result<Vec<Detection>> {
    params.validate()?;
    let mut by_id: BTreeMap<u32, Vec<[f64; 2]>> = BTreeMap::new();
    for g in gaussians {
        if let Some(id) = g.ped_id {
            by_id.entry(id).or_default().push([g.mean.x, g.mean.y]);
        }
    }
    let mut dets = Vec::new();
    for (id, mut pts) in by_id {
        if pts.len() <= params.tau_cluster {
            continue;
        }
        pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        let labels = dbscan(&pts, params.eps, params.min_pts)?;
        let k = labels.iter().flatten().max().map_or(0, |m| m + 1);
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (p, l) in pts.iter().zip(&labels) {
            if let Some(l) = l {
                sums[*l].0 += p[0];
                sums[*l].1 += p[1];
                sums[*l].2 += 1;
            }
        }
        for (sx, sy, c) in sums {
            dets.push(Detection {
                x: sx / c as f64,
                y: sy / c as f64,
                confidence: c as f64,
                id,
            });
        }
    }
    Ok(nms(dets, params.nms_radius))
}

/// Greedy suppression by descending confidence.
pub fn nms(mut dets: Vec<Detection>, radius: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.id.cmp(&b.id))
            .then(a.x.total_cmp(&b.x))
            .then(a.y.total_cmp(&b.y))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        if kept.iter().all(|k| (k.x - d.x).hypot(k.y - d.y) > radius) {
            kept.push(d);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn blob_and_isolated_noise() {
        let mut pts: Vec<[f64; 2]> = (0..5).map(|i| [0.002 * i as f64, 0.001]).collect();
        let l = dbscan(&pts, 0.1, 3).unwrap();
        assert!(l.iter().all(|&x| x == Some(0)));
        pts.push([10.0, 0.0]);
        let l = dbscan(&pts, 0.1, 3).unwrap();
        assert_eq!(l[5], None);
        assert!(l[..5].iter().all(|&x| x == Some(0)));
    }

    #[test]
    fn rejects_bad_params() {
        assert!(dbscan::<2>(&[], 0.0, 3).is_err());
        assert!(dbscan::<2>(&[], 1.0, 0).is_err());
    }

    fn labeled(id: u32, center: (f64, f64), n: usize, spread: f64, rng: &mut ChaCha8Rng) -> Vec<Gaussian3D> {
        (0..n)
            .map(|_| {
                let mut g = Gaussian3D::isotropic(
                    Vector3::new(
                        center.0 + rng.random_range(-spread..spread),
                        center.1 + rng.random_range(-spread..spread),
                        rng.random_range(0.0..1.7),
                    ),
                    0.05,
                    0.9,
                    [0.5; 3],
                );
                g.ped_id = Some(id);
                g
            })
            .collect()
    }

    #[test]
    fn blob_gives_one_detection_at_centroid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gs = labeled(1, (2.0, -1.0), 100, 0.15, &mut rng);
        let d = localize(&gs, &LocalizeParams::default()).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d[0].x - 2.0).abs() < 0.05 && (d[0].y + 1.0).abs() < 0.05);
        assert_eq!(d[0].confidence, 100.0);
    }

    #[test]
    fn small_identity_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gs = labeled(3, (0.0, 0.0), 5, 0.05, &mut rng);
        assert!(localize(&gs, &LocalizeParams::default()).unwrap().is_empty());
    }

    #[test]
    fn nms_keeps_stronger() {
        let a = Detection { x: 0.0, y: 0.0, confidence: 60.0, id: 1 };
        let b = Detection { x: 0.3, y: 0.0, confidence: 40.0, id: 1 };
        let kept = nms(vec![b, a], 0.5);
        assert_eq!(kept, vec![a]);
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut gs = labeled(1, (0.0, 0.0), 60, 0.2, &mut rng);
        gs.extend(labeled(2, (2.0, 0.0), 60, 0.2, &mut rng));
        let a = localize(&gs, &LocalizeParams::default()).unwrap();
        gs.reverse();
        let b = localize(&gs, &LocalizeParams::default()).unwrap();
        assert_eq!(a, b);
    }
}
