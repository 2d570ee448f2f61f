//! Cross-view validation of rendered depth into pseudo-depth labels.
//!
//! A source pixel survives when (a) its back-projected point lands on
//! foreground in every reference view that sees it in frame, and (b) at least
//! one reference view renders a depth within `τ` of the reprojected depth.

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::camera::{reproject, Camera};
use crate::error::{Error, Result};
use crate::gaussians::Gaussian3D;
use crate::image::{DepthImage, Mask};
use crate::renderer::render;
use crate::view::CameraView;

/// Source of reference-view depth at a continuous pixel location.
pub trait DepthLookup: Sync {
    /// Depth seen by camera `view` through `pixel`, `None` when invalid.
    fn depth_at(&self, view: usize, pixel: Vector2<f64>) -> Option<f64>;
}

/// Nearest-pixel lookup into per-view depth images.
pub struct ImageDepths<'a> {
    pub depths: Vec<&'a DepthImage>,
}

impl DepthLookup for ImageDepths<'_> {
    fn depth_at(&self, view: usize, pixel: Vector2<f64>) -> Option<f64> {
        let d = *self.depths.get(view)?.nearest(pixel.x, pixel.y)?;
        (d.is_finite() && d > 0.0).then_some(d)
    }
}

/// Depth labels that passed both filters for one view.
#[derive(Clone, Debug)]
pub struct PseudoDepthMap {
    pub view: usize,
    pub depth: DepthImage,
    pub valid: Mask,
}

impl PseudoDepthMap {
    pub fn valid_count(&self) -> usize {
        self.valid.count()
    }

    /// Depth image with invalid pixels set to NaN.
    pub fn labels(&self) -> DepthImage {
        DepthImage::from_fn(self.depth.width(), self.depth.height(), |x, y| {
            if *self.valid.get(x, y) {
                *self.depth.get(x, y)
            } else {
                f64::NAN
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FilterParams {
    /// Consistency threshold in metres.
    pub tau: f64,
    /// Dilation radius applied to reference foregrounds before the veto.
    pub silhouette_guard: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            tau: 0.1,
            silhouette_guard: 1,
        }
    }
}

fn usable(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

fn check_refs(src: usize, n_views: usize) -> Result<()> {
    if src >= n_views {
        return Err(Error::Data(format!("source view {src} out of range")));
    }
    if n_views < 2 {
        return Err(Error::InsufficientViews {
            needed: 2,
            got: n_views,
        });
    }
    Ok(())
}

/// Foreground veto: invalid if any in-frame reference sees background.
pub fn foreground_filter(
    src: usize,
    depth: &DepthImage,
    views: &[CameraView],
    guard: usize,
) -> Result<Mask> {
    check_refs(src, views.len())?;
    let fg: Vec<Mask> = views.iter().map(|v| v.foreground().dilated(guard)).collect();
    let own = views[src].foreground();
    Ok(per_pixel(&own, depth, |pixel, d| {
        views.iter().enumerate().all(|(r, view)| {
            if r == src {
                return true;
            }
            match reproject(&pixel, d, &views[src].camera, &view.camera) {
                Ok(rp) if rp.usable() => *fg[r].nearest(rp.pixel.x, rp.pixel.y).unwrap_or(&false),
                _ => true,
            }
        })
    }))
}

/// Consistency check: valid if some reference agrees within `tau`.
pub fn consistency_filter(
    src: usize,
    depth: &DepthImage,
    cameras: &[Camera],
    own_foreground: &Mask,
    lookup: &dyn DepthLookup,
    tau: f64,
) -> Result<Mask> {
    check_refs(src, cameras.len())?;
    if !(tau > 0.0) {
        return Err(Error::Config("consistency threshold must be positive".into()));
    }
    Ok(per_pixel(own_foreground, depth, |pixel, d| {
        cameras.iter().enumerate().any(|(r, cam)| {
            if r == src {
                return false;
            }
            match reproject(&pixel, d, &cameras[src], cam) {
                Ok(rp) if rp.usable() => lookup
                    .depth_at(r, rp.pixel)
                    .is_some_and(|dr| (rp.depth - dr).abs() < tau),
                _ => false,
            }
        })
    }))
}

fn per_pixel<F>(own: &Mask, depth: &DepthImage, pred: F) -> Mask
where
    F: Fn(Vector2<f64>, f64) -> bool + Sync,
{
    let (w, h) = (own.width(), own.height());
    let rows: Vec<Vec<bool>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let d = *depth.get(x, y);
                    *own.get(x, y) && usable(d) && pred(Vector2::new(x as f64, y as f64), d)
                })
                .collect()
        })
        .collect();
    Mask::from_vec(w, h, rows.concat())
}

/// Applies both filters to externally supplied per-view depths.
pub fn filter_depths(
    views: &[CameraView],
    depths: &[DepthImage],
    lookup: &dyn DepthLookup,
    params: &FilterParams,
) -> Result<Vec<PseudoDepthMap>> {
    if depths.len() != views.len() {
        return Err(Error::LengthMismatch {
            what: "depth images vs views",
            left: depths.len(),
            right: views.len(),
        });
    }
    let cameras: Vec<Camera> = views.iter().map(|v| v.camera).collect();
    (0..views.len())
        .map(|s| {
            let fg = foreground_filter(s, &depths[s], views, params.silhouette_guard)?;
            let cons = consistency_filter(s, &depths[s], &cameras, &views[s].foreground(), lookup, params.tau)?;
            let valid = Mask::from_fn(fg.width(), fg.height(), |x, y| *fg.get(x, y) && *cons.get(x, y));
            Ok(PseudoDepthMap {
                view: views[s].id,
                depth: depths[s].clone(),
                valid,
            })
        })
        .collect()
}

/// Renders depth from the optimized Gaussians and filters it per view, each
/// view acting once as source with all others as references.
pub fn generate_pseudo_depth(
    gaussians: &[Gaussian3D],
    views: &[CameraView],
    params: &FilterParams,
) -> Result<Vec<PseudoDepthMap>> {
    let depths: Vec<DepthImage> = views
        .par_iter()
        .map(|v| render(gaussians, &v.camera).depth)
        .collect();
    let lookup = ImageDepths {
        depths: depths.iter().collect(),
    };
    filter_depths(views, &depths, &lookup, params)
}
