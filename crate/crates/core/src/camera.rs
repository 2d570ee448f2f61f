//! Pinhole cameras: world ↔ camera ↔ pixel transforms, cross-view
//! reprojection and analytic ground-plane depth.
//!
//! Conventions: extrinsics are camera-to-world (`p_world = R·p_cam + t`, so
//! `t` is the camera center), camera axes follow the x-right / y-down /
//! z-forward convention, pixel centers sit on integer coordinates, and all
//! world units are meters with the ground plane at `z = 0`.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::DepthImage;

const DEGENERATE_Z: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64)
            || !(self.cy >= 0.0 && self.cy < self.height as f64)
        {
            return Err(Error::Config(format!(
                "principal point ({}, {}) outside {}x{} frame",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// True when the pixel rounds onto the frame.
    #[inline]
    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= -0.5
            && pixel.y >= -0.5
            && pixel.x < self.width as f64 - 0.5
            && pixel.y < self.height as f64 - 0.5
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extrinsics {
    /// Camera-to-world rotation.
    pub rotation: Matrix3<f64>,
    /// Camera center in world coordinates (m).
    pub translation: Vector3<f64>,
}

impl Extrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let e = Self {
            rotation,
            translation,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        let det = self.rotation.determinant();
        if ortho > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "rotation is not a proper rotation (|RᵀR−I|={ortho:e}, det={det})"
            )));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("non-finite translation".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with `up` giving the world up direction.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Config("look_at: eye coincides with target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Config("look_at: up is parallel to view direction".into()))?;
        let down = forward.cross(&right);
        Self::new(Matrix3::from_columns(&[right, down, forward]), eye)
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.tr_mul(&(p - self.translation))
    }

    #[inline]
    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Inclusive ground-plane range in meters (z = 0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundRange {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl GroundRange {
    pub fn validate(&self) -> Result<()> {
        if self.x_min < self.x_max && self.y_min < self.y_max {
            Ok(())
        } else {
            Err(Error::EmptyRange)
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Result of projecting a world point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    /// Camera-space z; non-positive values mean the point is behind the camera.
    pub depth: f64,
}

impl Projection {
    #[inline]
    pub fn is_behind(&self) -> bool {
        self.depth <= 0.0
    }
}

/// Result of carrying a pixel from one view into another.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reprojection {
    pub pixel: Vector2<f64>,
    pub depth: f64,
    pub in_frame: bool,
    pub behind: bool,
}

impl Reprojection {
    /// In front of the reference camera and landing on its frame.
    #[inline]
    pub fn usable(&self) -> bool {
        self.in_frame && !self.behind
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, extrinsics: Extrinsics) -> Self {
        Self {
            intrinsics,
            extrinsics,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    #[inline]
    pub fn center(&self) -> Vector3<f64> {
        self.extrinsics.translation
    }

    /// Pinhole projection. Points behind the camera are reported with a
    /// negative depth rather than rejected.
    pub fn project(&self, point_world: &Vector3<f64>) -> Result<Projection> {
        let pc = self.extrinsics.world_to_camera(point_world);
        self.project_camera(&pc)
    }

    pub fn project_camera(&self, pc: &Vector3<f64>) -> Result<Projection> {
        if pc.z.abs() < DEGENERATE_Z {
            return Err(Error::DegenerateProjection { z: pc.z });
        }
        let k = &self.intrinsics;
        Ok(Projection {
            pixel: Vector2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy),
            depth: pc.z,
        })
    }

    /// Camera-space direction through `pixel` with unit z component (`K⁻¹·[u, v, 1]`).
    #[inline]
    pub fn pixel_direction_camera(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let k = &self.intrinsics;
        Vector3::new((pixel.x - k.cx) / k.fx, (pixel.y - k.cy) / k.fy, 1.0)
    }

    /// Unit world-space viewing ray through `pixel`.
    pub fn ray_direction(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        (self.extrinsics.rotation * self.pixel_direction_camera(pixel)).normalize()
    }

    /// Back-projects a pixel at camera-space depth `depth` into the world.
    pub fn unproject(&self, pixel: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(Error::InvalidDepth(depth));
        }
        let pc = self.pixel_direction_camera(pixel) * depth;
        Ok(self.extrinsics.camera_to_world(&pc))
    }

    /// Camera-space depth at which the ray through `pixel` meets the ground
    /// plane, if it does so in front of the camera.
    pub fn ground_depth_at(&self, pixel: &Vector2<f64>) -> Option<f64> {
        let dir_cam = self.pixel_direction_camera(pixel);
        let dir_world = self.extrinsics.rotation * dir_cam;
        let o = self.center();
        if dir_world.z.abs() < 1e-15 {
            return None;
        }
        // dir_cam has unit z, so the ray parameter is the camera depth.
        let depth = -o.z / dir_world.z;
        (depth > 0.0).then_some(depth)
    }

    /// Metric size of one pixel at unit depth, `(1/fx, 1/fy)`.
    pub fn pixel_pitch_unit_depth(&self) -> (f64, f64) {
        (1.0 / self.intrinsics.fx, 1.0 / self.intrinsics.fy)
    }
}

/// Carries `pixel` at `depth` from `src` into `reference`.
pub fn reproject(
    pixel: &Vector2<f64>,
    depth: f64,
    src: &Camera,
    reference: &Camera,
) -> Result<Reprojection> {
    let pw = src.unproject(pixel, depth)?;
    let p = reference.project(&pw)?;
    Ok(Reprojection {
        pixel: p.pixel,
        depth: p.depth,
        in_frame: reference.intrinsics.contains(&p.pixel),
        behind: p.is_behind(),
    })
}

/// Depth image of the ground plane obtained by sampling ground points on a
/// regular grid of spacing `step` and splatting each sample's camera depth to
/// its nearest pixel (smallest depth wins). Pixels receiving no sample are NaN.
pub fn ground_depth_map(camera: &Camera, range: &GroundRange, step: f64) -> Result<DepthImage> {
    range.validate()?;
    if !(step > 0.0) {
        return Err(Error::Config(format!("ground sampling step must be > 0, got {step}")));
    }
    let (w, h) = (camera.width(), camera.height());
    let mut depth = DepthImage::new(w, h, f64::NAN);
    let nx = ((range.x_max - range.x_min) / step).floor() as usize + 1;
    let ny = ((range.y_max - range.y_min) / step).floor() as usize + 1;
    for j in 0..ny {
        let y = range.y_min + j as f64 * step;
        for i in 0..nx {
            let x = range.x_min + i as f64 * step;
            let pc = camera
                .extrinsics
                .world_to_camera(&Vector3::new(x, y, 0.0));
            if pc.z <= DEGENERATE_Z {
                continue;
            }
            let Ok(p) = camera.project_camera(&pc) else {
                continue;
            };
            if !camera.intrinsics.contains(&p.pixel) {
                continue;
            }
            let (u, v) = (p.pixel.x.round() as usize, p.pixel.y.round() as usize);
            let d = depth.get_mut(u, v);
            if d.is_nan() || p.depth < *d {
                *d = p.depth;
            }
        }
    }
    Ok(depth)
}

/// Analytic ray–plane ground depth for every pixel (NaN where the ray misses
/// the plane or hits it outside `range`).
pub fn ground_depth_exact(camera: &Camera, range: Option<&GroundRange>) -> DepthImage {
    DepthImage::from_fn(camera.width(), camera.height(), |x, y| {
        let px = Vector2::new(x as f64, y as f64);
        match camera.ground_depth_at(&px) {
            Some(d) => {
                if let Some(r) = range {
                    let p = camera.unproject(&px, d).expect("positive depth");
                    if !r.contains(p.x, p.y) {
                        return f64::NAN;
                    }
                }
                d
            }
            None => f64::NAN,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn k100() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    fn cam(t: Vector3<f64>) -> Camera {
        Camera::new(k100(), Extrinsics::new(Matrix3::identity(), t).unwrap())
    }

    #[test]
    fn project_principal_axis() {
        let c = cam(Vector3::new(0.0, 0.0, -3.0));
        let p = c.project(&Vector3::zeros()).unwrap();
        assert_abs_diff_eq!(p.pixel, Vector2::new(50.0, 50.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p.depth, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn project_off_axis() {
        let c = cam(Vector3::zeros());
        let p = c.project(&Vector3::new(1.0, 0.0, 4.0)).unwrap();
        assert_abs_diff_eq!(p.pixel, Vector2::new(75.0, 50.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p.depth, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn project_behind_is_flagged() {
        let c = cam(Vector3::zeros());
        let p = c.project(&Vector3::new(0.0, 0.0, -2.0)).unwrap();
        assert_eq!(p.depth, -2.0);
        assert!(p.is_behind());
    }

    #[test]
    fn project_degenerate() {
        let c = cam(Vector3::zeros());
        assert!(matches!(
            c.project(&Vector3::new(1.0, 1.0, 0.0)),
            Err(Error::DegenerateProjection { .. })
        ));
    }

    #[test]
    fn unproject_examples() {
        let c = cam(Vector3::zeros());
        let p = c.unproject(&Vector2::new(50.0, 50.0), 3.0).unwrap();
        assert_abs_diff_eq!(p, Vector3::new(0.0, 0.0, 3.0), epsilon = 1e-12);
        let p = c.unproject(&Vector2::new(75.0, 50.0), 4.0).unwrap();
        assert_abs_diff_eq!(p, Vector3::new(1.0, 0.0, 4.0), epsilon = 1e-12);
        let back = c.project(&p).unwrap();
        assert_abs_diff_eq!(back.pixel, Vector2::new(75.0, 50.0), epsilon = 1e-12);
        assert!(matches!(
            c.unproject(&Vector2::new(1.0, 1.0), 0.0),
            Err(Error::InvalidDepth(_))
        ));
    }

    #[test]
    fn reproject_examples() {
        let src = cam(Vector3::zeros());
        let same = reproject(&Vector2::new(12.3, 45.6), 2.5, &src, &src).unwrap();
        assert_abs_diff_eq!(same.pixel, Vector2::new(12.3, 45.6), epsilon = 1e-9);
        assert_abs_diff_eq!(same.depth, 2.5, epsilon = 1e-9);

        let reference = cam(Vector3::new(1.0, 0.0, 0.0));
        let r = reproject(&Vector2::new(50.0, 50.0), 4.0, &src, &reference).unwrap();
        assert_abs_diff_eq!(r.pixel, Vector2::new(25.0, 50.0), epsilon = 1e-12);
        assert_abs_diff_eq!(r.depth, 4.0, epsilon = 1e-12);
        assert!(r.usable());

        let ahead = cam(Vector3::new(0.0, 0.0, 10.0));
        let r = reproject(&Vector2::new(50.0, 50.0), 4.0, &src, &ahead).unwrap();
        assert!(r.behind);
    }

    #[test]
    fn rejects_bad_calibration() {
        assert!(Intrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Extrinsics::new(skew, Vector3::zeros()).is_err());
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Extrinsics::new(flip, Vector3::zeros()).is_err());
    }

    fn nadir(height: f64) -> Camera {
        let e = Extrinsics::look_at(
            Vector3::new(0.0, 0.0, height),
            Vector3::zeros(),
            Vector3::new(0.0, 1.0, 0.0),
        )
        .unwrap();
        Camera::new(k100(), e)
    }

    #[test]
    fn ground_depth_nadir() {
        let c = nadir(3.0);
        let range = GroundRange {
            x_min: -1.0,
            x_max: 1.0,
            y_min: -1.0,
            y_max: 1.0,
        };
        let d = ground_depth_map(&c, &range, 0.01).unwrap();
        assert_abs_diff_eq!(*d.get(50, 50), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.ground_depth_at(&Vector2::new(50.0, 50.0)).unwrap(), 3.0);
    }

    #[test]
    fn ground_depth_all_behind() {
        // Camera below the ground looking further down.
        let e = Extrinsics::look_at(
            Vector3::new(0.0, 0.0, -3.0),
            Vector3::new(0.0, 0.0, -6.0),
            Vector3::new(0.0, 1.0, 0.0),
        )
        .unwrap();
        let c = Camera::new(k100(), e);
        let range = GroundRange {
            x_min: -5.0,
            x_max: 5.0,
            y_min: -5.0,
            y_max: 5.0,
        };
        let d = ground_depth_map(&c, &range, 0.05).unwrap();
        assert!(d.as_slice().iter().all(|v| v.is_nan()));
    }

    #[test]
    fn ground_depth_errors() {
        let c = nadir(3.0);
        let empty = GroundRange {
            x_min: 1.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
        };
        assert!(matches!(ground_depth_map(&c, &empty, 0.1), Err(Error::EmptyRange)));
        let ok = GroundRange {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
        };
        assert!(ground_depth_map(&c, &ok, 0.0).is_err());
    }

    #[test]
    fn ground_depth_oblique_monotone() {
        // Camera 3 m up at y = -6 looking toward +y and down; image rows
        // further up (smaller v) see farther ground.
        let e = Extrinsics::look_at(
            Vector3::new(0.0, -6.0, 3.0),
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        let c = Camera::new(k100(), e);
        let range = GroundRange {
            x_min: -0.5,
            x_max: 0.5,
            y_min: -5.0,
            y_max: 10.0,
        };
        let d = ground_depth_map(&c, &range, 0.005).unwrap();
        // Oracle: per-point projection of ground points along the y axis.
        let mut prev: Option<(f64, f64)> = None;
        for i in 0..60 {
            let y = -4.0 + i as f64 * 0.2;
            let p = c.project(&Vector3::new(0.0, y, 0.0)).unwrap();
            if p.depth <= 0.0 || !c.intrinsics.contains(&p.pixel) {
                continue;
            }
            if let Some((pv, pd)) = prev {
                assert!(p.pixel.y < pv);
                assert!(p.depth > pd);
            }
            prev = Some((p.pixel.y, p.depth));
        }
        let col: Vec<f64> = (0..100)
            .rev()
            .map(|v| *d.get(50, v))
            .filter(|v| v.is_finite())
            .collect();
        assert!(col.len() > 20);
        assert!(col.windows(2).all(|w| w[1] > w[0]));
    }
}
