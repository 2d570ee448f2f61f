//! Randomized properties checked against brute-force references.

mod common;

use common::{assignment_oracle, canonical, dbscan_oracle};
use mvhuman::camera::{reproject, Camera, Extrinsics, Intrinsics};
use mvhuman::gaussians::Gaussian3D;
use mvhuman::localization::dbscan;
use mvhuman::metrics::evaluate;
use mvhuman::renderer::render;
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;

fn camera() -> impl Strategy<Value = Camera> {
    (200.0..800.0f64, -8.0..8.0f64, -8.0..8.0f64, 1.0..6.0f64).prop_filter_map("eye on target", |(f, x, y, z)| {
        let intr = Intrinsics::new(f, f, 160.0, 120.0, 320, 240).ok()?;
        let extr = Extrinsics::look_at(Vector3::new(x, y, z), Vector3::zeros(), Vector3::z()).ok()?;
        Some(Camera::new(intr, extr))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pixel_depth_round_trip(cam in camera(), u in 0.0..320.0f64, v in 0.0..240.0f64, d in 0.2..40.0f64) {
        let px = Vector2::new(u, v);
        let p = cam.unproject(&px, d).unwrap();
        let back = cam.project(&p).unwrap();
        prop_assert!((back.pixel - px).norm() < 1e-7);
        prop_assert!((back.depth - d).abs() < 1e-9);
        let same = reproject(&px, d, &cam, &cam).unwrap();
        prop_assert!(same.in_frame || !cam.intrinsics.contains(&px));
    }

    #[test]
    fn render_ignores_input_order(
        splats in prop::collection::vec((-0.4..0.4f64, -0.4..0.4f64, 1.5..4.0f64, 0.02..0.2f64, 0.05..0.95f64), 1..15),
        rot in 0usize..15,
    ) {
        let cam = Camera::new(Intrinsics::new(40.0, 40.0, 12.0, 12.0, 24, 24).unwrap(), Extrinsics::identity());
        let gs: Vec<Gaussian3D> = splats
            .iter()
            .map(|&(x, y, z, s, o)| Gaussian3D::isotropic(Vector3::new(x, y, z), s, o, [x.abs(), y.abs(), 0.5]))
            .collect();
        let mut shifted = gs.clone();
        shifted.rotate_left(rot % gs.len());
        shifted.reverse();
        let (a, b) = (render(&gs, &cam), render(&shifted, &cam));
        let bits = |m: &[f64]| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(a.mask.as_slice()), bits(b.mask.as_slice()));
        prop_assert_eq!(bits(a.raw_depth.as_slice()), bits(b.raw_depth.as_slice()));
    }

    #[test]
    fn dbscan_matches_reference(
        pts in prop::collection::vec((0.0..3.0f64, 0.0..3.0f64), 0..120),
        eps in 0.05..0.5f64,
        min_pts in 1usize..8,
    ) {
        let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
        let got = dbscan(&pts, eps, min_pts).unwrap();
        prop_assert_eq!(canonical(&got), canonical(&dbscan_oracle(&pts, eps, min_pts)));
    }

    #[test]
    fn assignment_is_optimal(
        d in prop::collection::vec((0.0..2.0f64, 0.0..2.0f64), 0..7),
        g in prop::collection::vec((0.0..2.0f64, 0.0..2.0f64), 0..7),
    ) {
        let d: Vec<_> = d.into_iter().map(|(x, y)| Vector2::new(x, y)).collect();
        let g: Vec<_> = g.into_iter().map(|(x, y)| Vector2::new(x, y)).collect();
        let r = evaluate(&d, &g, 0.5).unwrap();
        let (k, s) = assignment_oracle(&d, &g, 0.5);
        prop_assert_eq!(r.tp, k);
        prop_assert!((r.matches.iter().map(|m| m.2).sum::<f64>() - s).abs() < 1e-9);
        prop_assert_eq!(r.tp + r.fp, d.len());
        prop_assert_eq!(r.tp + r.fn_, g.len());
    }
}
