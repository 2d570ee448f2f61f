//! Cross-view identity assignment for Gaussians and instance masks.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::gaussians::Gaussian3D;
use crate::renderer::Rasterizer;
use crate::view::CameraView;

/// Gaussians with identities plus one identity per instance mask.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScene {
    pub gaussians: Vec<Gaussian3D>,
    /// `mask_ids[v][i]` labels `views[v].masks[i]`.
    pub mask_ids: Vec<Vec<u32>>,
}

impl LabeledScene {
    /// Runs the assignment again on an already labeled scene. Masks without
    /// candidates keep their previous identity.
    pub fn rematch(&self, views: &[CameraView], tau_vis: f64) -> LabeledScene {
        assign(self.gaussians.clone(), views, tau_vis, Some(&self.mask_ids))
    }
}

/// Processes views in order; within a view, masks in order. A mask whose
/// candidates already carry identities takes the most frequent one (ties go
/// to the smallest); otherwise it gets a fresh identity. The voting
/// candidates take the mask's identity.
///
/// Candidates come from the mask eroded by [`SILHOUETTE_GUARD`] when that
/// interior holds a labeled Gaussian, else from the whole mask. Limb
/// Gaussians of a nearer pedestrian can round into the border pixels of the
/// one behind it.
pub fn match_labels(gaussians: Vec<Gaussian3D>, views: &[CameraView], tau_vis: f64) -> LabeledScene {
    assign(gaussians, views, tau_vis, None)
}

/// Width in pixels of the band along each mask border whose Gaussians only
/// vote when the interior offers no labeled candidate.
pub const SILHOUETTE_GUARD: usize = 1;

/// Per-mask candidates: Gaussians whose projected mean falls inside the mask
/// (nearest pixel) with blend weight above `tau_vis`. The first list holds
/// those inside the guarded (eroded) mask, the second all of them.
fn candidates(gaussians: &[Gaussian3D], view: &CameraView, tau_vis: f64) -> Vec<(Vec<usize>, Vec<usize>)> {
    let raster = Rasterizer::new(gaussians, &view.camera);
    let inst = view.instance_map();
    let mut inside: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); view.masks.len()];
    for s in raster.splats() {
        if let Some(Some(m)) = inst.nearest(s.mean.x, s.mean.y) {
            inside[*m].push((s.source, s.mean.x, s.mean.y));
        }
    }
    inside
        .into_par_iter()
        .enumerate()
        .map(|(m, mut idx)| {
            if idx.is_empty() {
                return (Vec::new(), Vec::new());
            }
            let w = raster.weights(gaussians.len(), &view.masks[m]);
            idx.retain(|&(i, _, _)| w[i] > tau_vis);
            idx.sort_unstable_by_key(|c| c.0);
            let core = view.masks[m].eroded(SILHOUETTE_GUARD);
            let guarded = idx
                .iter()
                .filter(|&&(_, x, y)| *core.nearest(x, y).unwrap_or(&false))
                .map(|c| c.0)
                .collect();
            (guarded, idx.into_iter().map(|c| c.0).collect())
        })
        .collect()
}

fn most_frequent(ids: impl Iterator<Item = u32>) -> Option<u32> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for id in ids {
        *counts.entry(id).or_default() += 1;
    }
    // BTreeMap iterates in ascending id order, so the first maximum wins ties.
    counts
        .into_iter()
        .fold(None, |best: Option<(u32, usize)>, (id, c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((id, c)),
        })
        .map(|(id, _)| id)
}

fn assign(
    mut gaussians: Vec<Gaussian3D>,
    views: &[CameraView],
    tau_vis: f64,
    previous: Option<&Vec<Vec<u32>>>,
) -> LabeledScene {
    let mut next = gaussians.iter().filter_map(|g| g.ped_id).max().unwrap_or(0);
    if let Some(prev) = previous {
        next = next.max(prev.iter().flatten().copied().max().unwrap_or(0));
    }
    let mut mask_ids = Vec::with_capacity(views.len());
    for (v, view) in views.iter().enumerate() {
        let cands = candidates(&gaussians, view, tau_vis);
        let mut ids = Vec::with_capacity(view.masks.len());
        for (m, (guarded, all)) in cands.iter().enumerate() {
            let labeled = |set: &[usize]| set.iter().any(|&i| gaussians[i].ped_id.is_some());
            let c = if labeled(guarded) || (!guarded.is_empty() && !labeled(all)) {
                guarded
            } else {
                all
            };
            let id = match most_frequent(c.iter().filter_map(|&i| gaussians[i].ped_id)) {
                Some(id) => id,
                None => match previous.and_then(|p| p.get(v)).and_then(|p| p.get(m)) {
                    Some(&id) if c.is_empty() => id,
                    _ => {
                        next += 1;
                        next
                    }
                },
            };
            for &i in c.iter() {
                gaussians[i].ped_id = Some(id);
            }
            ids.push(id);
        }
        mask_ids.push(ids);
    }
    LabeledScene { gaussians, mask_ids }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Camera, Extrinsics, Intrinsics};
    use crate::image::{Mask, RgbImage};
    use nalgebra::Vector3;

    fn view(id: usize, eye: Vector3<f64>, masks: Vec<Mask>) -> CameraView {
        CameraView {
            id,
            name: format!("v{id}"),
            camera: Camera::new(
                Intrinsics::new(40.0, 40.0, 15.5, 15.5, 32, 32).unwrap(),
                Extrinsics::look_at(eye, Vector3::zeros(), Vector3::z()).unwrap(),
            ),
            image: RgbImage::new(32, 32, [0.5; 3]),
            masks,
            depth: None,
        }
    }

    fn blob(n: usize) -> Vec<Gaussian3D> {
        (0..n)
            .map(|i| {
                let a = i as f64 * 0.7;
                Gaussian3D::isotropic(Vector3::new(0.1 * a.cos(), 0.1 * a.sin(), 0.02 * i as f64 - 0.1), 0.05, 0.9, [0.5; 3])
            })
            .collect()
    }

    #[test]
    fn most_frequent_ties_smallest() {
        assert_eq!(most_frequent([1, 1, 2].into_iter()), Some(1));
        assert_eq!(most_frequent([3, 2, 3, 2].into_iter()), Some(2));
        assert_eq!(most_frequent(std::iter::empty()), None);
    }

    #[test]
    fn one_pedestrian_two_views_share_id() {
        let full = Mask::from_fn(32, 32, |x, y| (8..24).contains(&x) && (8..24).contains(&y));
        let views = vec![
            view(0, Vector3::new(4.0, 0.0, 1.0), vec![full.clone()]),
            view(1, Vector3::new(0.0, 4.0, 1.0), vec![full]),
        ];
        let s = match_labels(blob(10), &views, 0.05);
        assert_eq!(s.mask_ids[0], s.mask_ids[1]);
        assert!(s.gaussians.iter().any(|g| g.ped_id == Some(s.mask_ids[0][0])));
        let again = s.rematch(&views, 0.05);
        assert_eq!(again, s);
    }

    #[test]
    fn occluded_gaussian_excluded() {
        // Opaque wall of Gaussians in front of a single hidden one.
        let mut gs: Vec<Gaussian3D> = (0..25)
            .map(|i| {
                let (a, b) = ((i % 5) as f64 - 2.0, (i / 5) as f64 - 2.0);
                let mut g = Gaussian3D::isotropic(Vector3::new(1.0, 0.08 * a, 0.08 * b), 0.06, 0.5, [0.5; 3]);
                g.opacity_logit = 40.0;
                g
            })
            .collect();
        let mut wall2 = gs.clone();
        for g in wall2.iter_mut() {
            g.mean.x = 0.95;
        }
        gs.extend(wall2);
        gs.push(Gaussian3D::isotropic(Vector3::new(-0.5, 0.0, 0.0), 0.03, 0.9, [0.5; 3]));
        let hidden = gs.len() - 1;
        let mask = Mask::new(32, 32, true);
        let views = vec![view(0, Vector3::new(4.0, 0.0, 0.0), vec![mask])];
        let s = match_labels(gs, &views, 0.05);
        assert_eq!(s.gaussians[hidden].ped_id, None);
    }

    #[test]
    fn empty_mask_gets_fresh_id() {
        let views = vec![view(0, Vector3::new(4.0, 0.0, 1.0), vec![Mask::new(32, 32, false)])];
        let s = match_labels(Vec::new(), &views, 0.05);
        assert_eq!(s.mask_ids, vec![vec![1]]);
        assert_eq!(s.rematch(&views, 0.05), s);
    }
}
