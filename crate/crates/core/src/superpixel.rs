//! Mask-constrained SLIC superpixels for pedestrian instances.
//!
//! Each instance mask is partitioned on its own: seeds are laid on a hex grid
//! inside the mask, then refined with k-means in (L, a, b, x, y) space where
//! pixels outside the mask are unreachable. The superpixel mean-color image
//! is the photometric target for the splat optimizer.

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Grid, Mask, Rgb, RgbImage};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlicParams {
    /// Target segments per pedestrian.
    pub k: usize,
    pub compactness: f64,
    pub iterations: usize,
}

impl SlicParams {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            k: 30,
            compactness: 10.0,
            iterations: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    /// Index of the instance mask this segment belongs to.
    pub pedestrian: usize,
    /// Segment index within its pedestrian.
    pub segment: usize,
    pub count: usize,
    pub mean_color: Rgb,
    /// Mean pixel coordinate.
    pub centroid: Vector2<f64>,
}

/// Per-pixel partition of pedestrian pixels into superpixels.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelMap {
    /// Index into `segments`, or `None` outside every pedestrian mask.
    pub labels: Grid<Option<u32>>,
    pub segments: Vec<Segment>,
}

impl SuperpixelMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            labels: Grid::new(width, height, None),
            segments: Vec::new(),
        }
    }

    /// Segment indices belonging to one pedestrian.
    pub fn segments_of(&self, pedestrian: usize) -> impl Iterator<Item = usize> + '_ {
        self.segments
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.pedestrian == pedestrian)
            .map(|(i, _)| i)
    }
}

/// Segments every pedestrian mask into `k` superpixels with default SLIC settings.
pub fn segment_pedestrians(image: &RgbImage, masks: &[Mask], k: usize) -> Result<SuperpixelMap> {
    segment_pedestrians_with(image, masks, &SlicParams::with_k(k))
}

pub fn segment_pedestrians_with(
    image: &RgbImage,
    masks: &[Mask],
    params: &SlicParams,
) -> Result<SuperpixelMap> {
    if params.k == 0 {
        return Err(Error::Config("superpixel count K must be >= 1".into()));
    }
    let (w, h) = (image.width(), image.height());
    let mut owner: Grid<Option<usize>> = Grid::new(w, h, None);
    for (i, m) in masks.iter().enumerate() {
        if !m.same_shape(image) {
            return Err(Error::Data(format!("mask {i} does not match image size")));
        }
        for (x, y, &b) in m.iter_xy() {
            if b {
                if let Some(j) = owner.get(x, y) {
                    return Err(Error::Data(format!(
                        "masks {j} and {i} overlap at pixel ({x}, {y})"
                    )));
                }
                owner.set(x, y, Some(i));
            }
        }
    }

    let lab = image.map(|c| rgb_to_lab(*c));
    let per_ped: Vec<Vec<Vec<(usize, usize)>>> = masks
        .par_iter()
        .map(|m| segment_one(m, &lab, params))
        .collect();

    let mut map = SuperpixelMap::empty(w, h);
    for (ped, groups) in per_ped.into_iter().enumerate() {
        for (seg, pixels) in groups.into_iter().enumerate() {
            let idx = map.segments.len() as u32;
            let mut sum = [0.0; 3];
            let mut cx = 0.0;
            let mut cy = 0.0;
            for &(x, y) in &pixels {
                map.labels.set(x, y, Some(idx));
                let c = image.get(x, y);
                for k in 0..3 {
                    sum[k] += c[k];
                }
                cx += x as f64;
                cy += y as f64;
            }
            let n = pixels.len() as f64;
            map.segments.push(Segment {
                pedestrian: ped,
                segment: seg,
                count: pixels.len(),
                mean_color: [sum[0] / n, sum[1] / n, sum[2] / n],
                centroid: Vector2::new(cx / n, cy / n),
            });
        }
    }
    Ok(map)
}

/// Replaces every labeled pixel by its segment's mean color.
pub fn mean_color_image(image: &RgbImage, map: &SuperpixelMap) -> RgbImage {
    let mut out = image.clone();
    for (x, y, l) in map.labels.iter_xy() {
        if let Some(s) = l {
            out.set(x, y, map.segments[*s as usize].mean_color);
        }
    }
    out
}

type Lab = [f64; 3];

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// sRGB in `[0, 1]` to CIE L*a*b* (D65).
pub fn rgb_to_lab(rgb: Rgb) -> Lab {
    let [r, g, b] = rgb.map(|c| srgb_to_linear(c.clamp(0.0, 1.0)));
    let x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    let f = |t: f64| {
        if t > 0.008856 {
            t.cbrt()
        } else {
            7.787 * t + 16.0 / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Pixel groups (one per segment) for a single pedestrian mask.
fn segment_one(mask: &Mask, lab: &Grid<Lab>, params: &SlicParams) -> Vec<Vec<(usize, usize)>> {
    let n = mask.count();
    if n == 0 {
        return Vec::new();
    }
    if n <= params.k {
        return mask.pixels().into_iter().map(|p| vec![p]).collect();
    }
    let comps = mask.connected_components();
    let alloc = allocate_seeds(&comps.iter().map(|c| c.len()).collect::<Vec<_>>(), params.k);
    let mut groups = Vec::new();
    let mut orphans: Vec<(usize, usize)> = Vec::new();
    for (comp, &k) in comps.iter().zip(&alloc) {
        if k == 0 {
            orphans.extend(comp.iter().copied());
            continue;
        }
        let mut pixels = comp.clone();
        pixels.sort_by_key(|&(x, y)| (y, x));
        groups.extend(slic_component(&pixels, lab, k, params));
    }
    // Components too small to receive a seed join the spatially nearest segment.
    for p in orphans {
        let best = groups
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let d = g
                    .iter()
                    .map(|q| sq_dist(p, *q))
                    .fold(f64::INFINITY, f64::min);
                (i, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
            .expect("at least one seeded component");
        groups[best].push(p);
    }
    groups
}

fn sq_dist(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dx = a.0 as f64 - b.0 as f64;
    let dy = a.1 as f64 - b.1 as f64;
    dx * dx + dy * dy
}

/// Largest-remainder allocation of `k` seeds over components by area, at
/// least one per component while seeds last and never more than its size.
fn allocate_seeds(sizes: &[usize], k: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut alloc = vec![0usize; sizes.len()];
    let mut left = k;
    for &i in &order {
        if left == 0 {
            break;
        }
        alloc[i] = 1;
        left -= 1;
    }
    if left == 0 {
        return alloc;
    }
    let quotas: Vec<f64> = sizes
        .iter()
        .map(|&s| k as f64 * s as f64 / total as f64)
        .collect();
    while left > 0 {
        // Component furthest below its quota that still has room.
        let pick = order
            .iter()
            .copied()
            .filter(|&i| alloc[i] < sizes[i])
            .max_by(|&a, &b| {
                (quotas[a] - alloc[a] as f64)
                    .total_cmp(&(quotas[b] - alloc[b] as f64))
                    .then(b.cmp(&a))
            });
        match pick {
            Some(i) => {
                alloc[i] += 1;
                left -= 1;
            }
            None => break,
        }
    }
    alloc
}

fn hex_seeds(pixels: &[(usize, usize)], k: usize) -> Vec<usize> {
    let n = pixels.len();
    let spacing = (n as f64 / k as f64).sqrt();
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for &(x, y) in pixels {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let index: std::collections::HashMap<(usize, usize), usize> =
        pixels.iter().enumerate().map(|(i, &p)| (p, i)).collect();

    let mut cands: Vec<usize> = Vec::new();
    let row_step = spacing * 3f64.sqrt() / 2.0;
    let mut row = 0;
    loop {
        let y = y0 as f64 + spacing / 2.0 + row as f64 * row_step;
        if y > y1 as f64 + 0.5 {
            break;
        }
        let offset = if row % 2 == 1 { spacing / 2.0 } else { 0.0 };
        let mut col = 0;
        loop {
            let x = x0 as f64 + spacing / 2.0 + offset + col as f64 * spacing;
            if x > x1 as f64 + 0.5 {
                break;
            }
            let key = (x.round() as usize, y.round() as usize);
            if let Some(&i) = index.get(&key) {
                if !cands.contains(&i) {
                    cands.push(i);
                }
            }
            col += 1;
        }
        row += 1;
    }

    let min_d2 = |chosen: &[usize], p: (usize, usize)| {
        chosen
            .iter()
            .map(|&c| sq_dist(pixels[c], p))
            .fold(f64::INFINITY, f64::min)
    };

    if cands.len() > k {
        // Farthest-point thinning, starting from the candidate nearest the centroid.
        let (sx, sy) = pixels
            .iter()
            .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x as f64, b + y as f64));
        let c = ((sx / n as f64), (sy / n as f64));
        let first = *cands
            .iter()
            .min_by(|&&a, &&b| {
                let da = (pixels[a].0 as f64 - c.0).powi(2) + (pixels[a].1 as f64 - c.1).powi(2);
                let db = (pixels[b].0 as f64 - c.0).powi(2) + (pixels[b].1 as f64 - c.1).powi(2);
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .unwrap();
        let mut chosen = vec![first];
        while chosen.len() < k {
            let next = *cands
                .iter()
                .filter(|i| !chosen.contains(i))
                .max_by(|&&a, &&b| {
                    min_d2(&chosen, pixels[a])
                        .total_cmp(&min_d2(&chosen, pixels[b]))
                        .then(b.cmp(&a))
                })
                .unwrap();
            chosen.push(next);
        }
        cands = chosen;
    }
    while cands.len() < k {
        let next = (0..n)
            .filter(|i| !cands.contains(i))
            .max_by(|&a, &b| {
                min_d2(&cands, pixels[a])
                    .total_cmp(&min_d2(&cands, pixels[b]))
                    .then(b.cmp(&a))
            })
            .unwrap();
        cands.push(next);
    }
    cands
}

#[derive(Clone, Copy)]
struct Center {
    lab: Lab,
    x: f64,
    y: f64,
}

fn slic_component(
    pixels: &[(usize, usize)],
    lab: &Grid<Lab>,
    k: usize,
    params: &SlicParams,
) -> Vec<Vec<(usize, usize)>> {
    let n = pixels.len();
    if k >= n {
        return pixels.iter().map(|&p| vec![p]).collect();
    }
    let spacing = (n as f64 / k as f64).sqrt();
    let spatial_w = (params.compactness / spacing).powi(2);
    let feats: Vec<Center> = pixels
        .iter()
        .map(|&(x, y)| Center {
            lab: *lab.get(x, y),
            x: x as f64,
            y: y as f64,
        })
        .collect();
    let dist = |c: &Center, p: &Center| {
        let dl = (c.lab[0] - p.lab[0]).powi(2)
            + (c.lab[1] - p.lab[1]).powi(2)
            + (c.lab[2] - p.lab[2]).powi(2);
        let ds = (c.x - p.x).powi(2) + (c.y - p.y).powi(2);
        dl + spatial_w * ds
    };

    let mut centers: Vec<Center> = hex_seeds(pixels, k).into_iter().map(|i| feats[i]).collect();
    let mut assign = vec![0usize; n];
    let mut dists = vec![0.0f64; n];

    let assign_all = |centers: &[Center], assign: &mut [usize], dists: &mut [f64]| {
        for (i, p) in feats.iter().enumerate() {
            let (best, d) = centers
                .iter()
                .enumerate()
                .map(|(j, c)| (j, dist(c, p)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .unwrap();
            assign[i] = best;
            dists[i] = d;
        }
    };

    for _ in 0..params.iterations.max(1) {
        assign_all(&centers, &mut assign, &mut dists);
        let mut acc = vec![([0.0; 3], 0.0, 0.0, 0usize); k];
        for (i, p) in feats.iter().enumerate() {
            let a = &mut acc[assign[i]];
            for c in 0..3 {
                a.0[c] += p.lab[c];
            }
            a.1 += p.x;
            a.2 += p.y;
            a.3 += 1;
        }
        for (j, a) in acc.iter().enumerate() {
            if a.3 > 0 {
                let m = a.3 as f64;
                centers[j] = Center {
                    lab: [a.0[0] / m, a.0[1] / m, a.0[2] / m],
                    x: a.1 / m,
                    y: a.2 / m,
                };
            }
        }
    }
    assign_all(&centers, &mut assign, &mut dists);

    // Every segment must be nonempty: move the worst-fitting pixel of a
    // multi-pixel segment into each empty one.
    let mut counts = vec![0usize; k];
    for &a in &assign {
        counts[a] += 1;
    }
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let worst = (0..n)
            .filter(|&i| counts[assign[i]] > 1)
            .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
            .expect("more pixels than segments");
        counts[assign[worst]] -= 1;
        assign[worst] = j;
        dists[worst] = 0.0;
        counts[j] = 1;
    }

    let mut groups = vec![Vec::new(); k];
    for (i, &a) in assign.iter().enumerate() {
        groups[a].push(pixels[i]);
    }
    groups
}
