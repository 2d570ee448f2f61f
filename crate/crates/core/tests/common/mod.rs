#![allow(dead_code)]

use mvhuman::camera::{Camera, Extrinsics, Intrinsics};
use mvhuman::gaussians::{logit, Gaussian3D};
use mvhuman::image::{Mask, RgbImage};
use mvhuman::optimizer::{compute_losses, loss_and_gradients, FitTarget, LossWeights, PARAMS};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GROUPS: [(&str, std::ops::Range<usize>); 5] = [
    ("mean", 0..3),
    ("log_scales", 3..6),
    ("rotation", 6..10),
    ("opacity", 10..11),
    ("color", 11..14),
];

/// Up to `n` random Gaussians seen by three 32×32 cameras with random
/// superpixel colors and two disjoint instance masks per view.
pub fn random_fit_scene(seed: u64, n: usize) -> (Vec<Gaussian3D>, Vec<FitTarget>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gs = (0..n)
        .map(|_| {
            let mean = Vector3::new(
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
            );
            let mut g = Gaussian3D::isotropic(mean, 0.1, 0.5, [0.0; 3]);
            g.log_scales = Vector3::new(
                rng.random_range(0.04f64..0.15).ln(),
                rng.random_range(0.04f64..0.15).ln(),
                rng.random_range(0.04f64..0.15).ln(),
            );
            g.rotation = UnitQuaternion::from_euler_angles(
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(-3.0..3.0),
            );
            g.opacity_logit = logit(rng.random_range(0.1..0.7));
            g.color = [
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
            ];
            g
        })
        .collect();
    let eyes = [
        Vector3::new(3.0, 0.3, 0.8),
        Vector3::new(-0.5, 3.0, 1.0),
        Vector3::new(-2.5, -2.0, 0.5),
    ];
    let targets = eyes
        .iter()
        .map(|&eye| {
            let cam = Camera::new(
                Intrinsics::new(45.0, 45.0, 15.5, 15.5, 32, 32).unwrap(),
                Extrinsics::look_at(eye, Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0)).unwrap(),
            );
            let sp = RgbImage::from_fn(32, 32, |_, _| {
                [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]
            });
            let split = rng.random_range(12..20);
            let a = Mask::from_fn(32, 32, |x, y| x < split && (6..26).contains(&y) && x > 4);
            let b = Mask::from_fn(32, 32, |x, y| x >= split && x < 28 && (8..28).contains(&y));
            FitTarget::new(cam, sp, vec![a, b]).unwrap()
        })
        .collect();
    (gs, targets)
}

fn perturb(g: &Gaussian3D, p: usize, h: f64) -> Gaussian3D {
    let mut g = g.clone();
    match p {
        0..=2 => g.mean[p] += h,
        3..=5 => g.log_scales[p - 3] += h,
        6..=9 => {
            let q = g.rotation.quaternion();
            let mut c = [q.w, q.i, q.j, q.k];
            c[p - 6] += h;
            g.rotation = UnitQuaternion::from_quaternion(Quaternion::new(c[0], c[1], c[2], c[3]));
        }
        10 => g.opacity_logit += h,
        _ => g.color[p - 11] += h,
    }
    g
}

/// Relative error `‖analytic − numeric‖ / ‖numeric‖` per parameter group.
pub fn fd_check(gs: &[Gaussian3D], targets: &[FitTarget], w: &LossWeights) -> Vec<(String, f64)> {
    let (_, grads) = loss_and_gradients(gs, targets, w).unwrap();
    let h = 1e-6;
    let mut numeric = vec![[0.0; PARAMS]; gs.len()];
    for i in 0..gs.len() {
        for p in 0..PARAMS {
            let mut plus = gs.to_vec();
            plus[i] = perturb(&gs[i], p, h);
            let mut minus = gs.to_vec();
            minus[i] = perturb(&gs[i], p, -h);
            let lp = compute_losses(&plus, targets, w).unwrap().total;
            let lm = compute_losses(&minus, targets, w).unwrap().total;
            numeric[i][p] = (lp - lm) / (2.0 * h);
        }
    }
    GROUPS
        .iter()
        .map(|(name, range)| {
            let mut diff = 0.0;
            let mut norm = 0.0;
            for i in 0..gs.len() {
                for p in range.clone() {
                    diff += (grads.params[i][p] - numeric[i][p]).powi(2);
                    norm += numeric[i][p].powi(2);
                }
            }
            let err = if norm == 0.0 { diff.sqrt() } else { (diff / norm).sqrt() };
            (name.to_string(), err)
        })
        .collect()
}

pub struct FilterScene {
    pub views: Vec<mvhuman::view::CameraView>,
    pub gt: mvhuman::simulator::GroundTruthBundle,
    /// Exact pedestrian depth per view (NaN elsewhere).
    pub depths: Vec<mvhuman::image::DepthImage>,
}

impl FilterScene {
    /// Pedestrian pixels (1 px eroded silhouettes) whose surface point is
    /// seen by at least one other camera.
    pub fn covisible_pixels(&self, v: usize) -> Vec<(usize, usize)> {
        let geo = &self.gt.geometry;
        let cam = &geo.cameras[v];
        let mut out = Vec::new();
        for (_, sil) in &self.gt.silhouettes[v] {
            for (x, y) in sil.eroded(1).pixels() {
                let d = *self.depths[v].get(x, y);
                let p = cam.unproject(&nalgebra::Vector2::new(x as f64, y as f64), d).unwrap();
                if (0..geo.cameras.len()).any(|r| r != v && geo.point_visible(r, &p)) {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// Ten pedestrians, six cameras at 128², every silhouette reported.
pub fn filter_scene(seed: u64) -> FilterScene {
    filter_scene_with(seed, 0.25)
}

pub fn filter_scene_with(seed: u64, radius: f64) -> FilterScene {
    let cfg = mvhuman::simulator::SceneConfig {
        width: 128,
        image_height: 128,
        min_mask_pixels: 1,
        radius,
        seed,
        ..Default::default()
    };
    let (views, gt) = mvhuman::simulator::generate_scene(&cfg).unwrap();
    let depths = (0..views.len()).map(|v| gt.pedestrian_depth(v)).collect();
    FilterScene { views, gt, depths }
}

/// Gaussians fused from every view's exact pedestrian depth.
pub fn gt_gaussians(
    views: &[mvhuman::view::CameraView],
    gt: &mvhuman::simulator::GroundTruthBundle,
) -> Vec<Gaussian3D> {
    let (mut pts, mut cols, mut srcs) = (Vec::new(), Vec::new(), Vec::new());
    for (v, view) in views.iter().enumerate() {
        let depth = gt.pedestrian_depth(v);
        let (p, c, s) = mvhuman::gaussians::backproject_mask(v, view, &depth, &view.foreground());
        pts.extend(p);
        cols.extend(c);
        srcs.extend(s);
    }
    let cams: Vec<_> = views.iter().map(|v| v.camera).collect();
    mvhuman::gaussians::from_point_cloud(&pts, &cols, &srcs, &cams).unwrap()
}

/// Fraction of same-pedestrian mask pairs (across views) that share an id,
/// and the number of distinct pedestrians that were given one shared id.
pub fn matching_report(mask_ids: &[Vec<u32>], gt_ids: &[Vec<usize>]) -> (usize, usize, usize) {
    let flat: Vec<(u32, usize)> = mask_ids
        .iter()
        .zip(gt_ids)
        .flat_map(|(a, b)| a.iter().copied().zip(b.iter().copied()))
        .collect();
    let (mut same, mut pairs, mut merged) = (0, 0, 0);
    for i in 0..flat.len() {
        for j in i + 1..flat.len() {
            if flat[i].1 == flat[j].1 {
                pairs += 1;
                same += (flat[i].0 == flat[j].0) as usize;
            } else if flat[i].0 == flat[j].0 {
                merged += 1;
            }
        }
    }
    (same, pairs, merged)
}

/// O(n²) DBSCAN reference: union-find over core pairs, border points join
/// the component of their lowest-index core neighbor.
pub fn dbscan_oracle(points: &[[f64; 2]], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let near = |i: usize, j: usize| {
        let (dx, dy) = (points[i][0] - points[j][0], points[i][1] - points[j][1]);
        dx * dx + dy * dy <= eps * eps
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    (0..n)
        .map(|i| {
            if core[i] {
                Some(find(&mut parent, i))
            } else {
                (0..n).find(|&j| core[j] && near(i, j)).map(|j| find(&mut parent, j))
            }
        })
        .collect()
}

/// Canonical form of a labeling: labels renumbered by first occurrence.
pub fn canonical(labels: &[Option<usize>]) -> Vec<Option<usize>> {
    let mut seen = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            l.map(|l| {
                let k = seen.len();
                *seen.entry(l).or_insert(k)
            })
        })
        .collect()
}

/// Exhaustive gated matching: the largest number of pairs closer than
/// `gate`, and the smallest total distance among matchings of that size.
pub fn assignment_oracle(a: &[nalgebra::Vector2<f64>], b: &[nalgebra::Vector2<f64>], gate: f64) -> (usize, f64) {
    fn go(i: usize, a: &[nalgebra::Vector2<f64>], b: &[nalgebra::Vector2<f64>], gate: f64, used: &mut Vec<bool>) -> (usize, f64) {
        if i == a.len() {
            return (0, 0.0);
        }
        let better = |x: (usize, f64), y: (usize, f64)| x.0 > y.0 || (x.0 == y.0 && x.1 < y.1);
        let mut best = go(i + 1, a, b, gate, used);
        for j in 0..b.len() {
            let d = (a[i] - b[j]).norm();
            if !used[j] && d < gate {
                used[j] = true;
                let (k, s) = go(i + 1, a, b, gate, used);
                used[j] = false;
                if better((k + 1, s + d), best) {
                    best = (k + 1, s + d);
                }
            }
        }
        best
    }
    go(0, a, b, gate, &mut vec![false; b.len()])
}

/// Numeric sphere radius for the cone construction: the circle of radius
/// `r` centered at `c` on the image plane at distance `f` from `o` (optical
/// axis `axis`) is cut by the plane through the central ray and the
/// principal point; the sphere centered at distance `t` on the central ray
/// touches the generator through the circle's inner rim point. The distance
/// from the center to that line is found by golden-section search.
pub fn tangency_oracle(t: f64, f: f64, r: f64, c: &Vector3<f64>, o: &Vector3<f64>, axis: &Vector3<f64>) -> f64 {
    let principal = o + axis * f;
    let radial = (c - principal).normalize();
    let rim = c - radial * r;
    let center = o + (c - o).normalize() * t;
    let dir = rim - o;
    let dist = |lambda: f64| (o + dir * lambda - center).norm();
    let (mut lo, mut hi) = (0.0, 4.0 * t / dir.norm());
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if dist(m1) < dist(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    dist(0.5 * (lo + hi))
}
