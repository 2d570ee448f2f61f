use crate::camera::Camera;
use crate::image::{union_mask, DepthImage, Mask, RgbImage};

/// One calibrated camera observation of a frame.
#[derive(Clone, Debug)]
pub struct CameraView {
    /// Camera index in dataset order.
    pub id: usize,
    pub name: String,
    pub camera: Camera,
    pub image: RgbImage,
    /// Pairwise-disjoint pedestrian instance masks.
    pub masks: Vec<Mask>,
    pub depth: Option<DepthImage>,
}

impl CameraView {
    pub fn width(&self) -> usize {
        self.camera.width()
    }

    pub fn height(&self) -> usize {
        self.camera.height()
    }

    /// Union of all instance masks (`M^v`).
    pub fn foreground(&self) -> Mask {
        union_mask(&self.masks, self.width(), self.height())
    }

    /// Instance index per pixel, `None` on background.
    pub fn instance_map(&self) -> crate::image::Grid<Option<usize>> {
        let mut out = crate::image::Grid::new(self.width(), self.height(), None);
        for (i, m) in self.masks.iter().enumerate() {
            for (x, y, &b) in m.iter_xy() {
                if b {
                    out.set(x, y, Some(i));
                }
            }
        }
        out
    }
}
