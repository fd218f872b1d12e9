//! SLIC superpixels: local k-means in joint CIELAB + position space on a
//! regular grid of seeds, followed by connectivity enforcement.

use std::collections::VecDeque;

use super::SuperpixelLabels;
use crate::error::{Error, Result};
use crate::image::ImageRGB;

/// sRGB in `[0, 1]` to CIELAB under a D65 white point.
pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    fn linear(v: f64) -> f64 {
        if v <= 0.04045 {
            v / 12.92
        } else {
            ((v + 0.055) / 1.055).powf(2.4)
        }
    }
    fn f(t: f64) -> f64 {
        const DELTA: f64 = 6.0 / 29.0;
        if t > DELTA * DELTA * DELTA {
            t.cbrt()
        } else {
            t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
        }
    }
    let [r, g, b] = rgb.map(linear);
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let (fx, fy, fz) = (f(x / 0.950_47), f(y), f(z / 1.088_83));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[derive(Clone, Copy, Debug)]
struct Center {
    lab: [f64; 3],
    y: f64,
    x: f64,
}

pub fn slic_segment(
    img: &ImageRGB,
    n_segments: usize,
    compactness: f64,
    max_iters: usize,
) -> Result<SuperpixelLabels> {
    if n_segments == 0 {
        return Err(Error::InvalidParam("n_segments must be at least 1".into()));
    }
    if compactness.is_nan() || compactness <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "compactness must be positive, got {compactness}"
        )));
    }
    let (h, w) = (img.height(), img.width());
    let n = h * w;
    let lab: Vec<[f64; 3]> = (0..n)
        .map(|i| rgb_to_lab(img.pixel(i / w, i % w)))
        .collect();

    let step = (n as f64 / n_segments as f64).sqrt();
    let ny = ((h as f64 / step).round() as usize).clamp(1, h);
    let nx = ((w as f64 / step).round() as usize).clamp(1, w);
    let (dy, dx) = (h as f64 / ny as f64, w as f64 / nx as f64);
    let mut centers = Vec::with_capacity(ny * nx);
    for gy in 0..ny {
        for gx in 0..nx {
            let y = (gy as f64 + 0.5) * dy - 0.5;
            let x = (gx as f64 + 0.5) * dx - 0.5;
            let p = (y.round() as usize).min(h - 1) * w + (x.round() as usize).min(w - 1);
            centers.push(Center { lab: lab[p], y, x });
        }
    }

    let spatial = dy.max(dx);
    let weight = (compactness / spatial).powi(2);
    let reach = (2.0 * spatial).ceil() as isize;
    let mut labels = vec![u32::MAX; n];
    let mut dist = vec![f64::INFINITY; n];

    for _ in 0..max_iters.max(1) {
        dist.fill(f64::INFINITY);
        let previous = labels.clone();
        for (k, ctr) in centers.iter().enumerate() {
            let (cy, cx) = (ctr.y.round() as isize, ctr.x.round() as isize);
            let r0 = (cy - reach).max(0) as usize;
            let r1 = ((cy + reach).max(0) as usize).min(h - 1);
            let c0 = (cx - reach).max(0) as usize;
            let c1 = ((cx + reach).max(0) as usize).min(w - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let p = r * w + c;
                    let d = joint_distance(&lab[p], r, c, ctr, weight);
                    if d < dist[p] {
                        dist[p] = d;
                        labels[p] = k as u32;
                    }
                }
            }
        }
        // Windows cover the grid, but fall back to a full scan for safety on odd shapes.
        for p in 0..n {
            if labels[p] == u32::MAX || !dist[p].is_finite() {
                let (r, c) = (p / w, p % w);
                let (best, _) = centers
                    .iter()
                    .enumerate()
                    .map(|(k, ctr)| (k, joint_distance(&lab[p], r, c, ctr, weight)))
                    .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
                labels[p] = best as u32;
            }
        }

        let mut sums = vec![[0.0f64; 6]; centers.len()];
        for p in 0..n {
            let s = &mut sums[labels[p] as usize];
            s[0] += lab[p][0];
            s[1] += lab[p][1];
            s[2] += lab[p][2];
            s[3] += (p / w) as f64;
            s[4] += (p % w) as f64;
            s[5] += 1.0;
        }
        for (ctr, s) in centers.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                ctr.lab = [s[0] / s[5], s[1] / s[5], s[2] / s[5]];
                ctr.y = s[3] / s[5];
                ctr.x = s[4] / s[5];
            }
        }
        if previous == labels {
            break;
        }
    }

    let min_size = ((n as f64 / centers.len() as f64) / 4.0).floor() as usize;
    let labels = enforce_connectivity(&labels, h, w, min_size);
    SuperpixelLabels::new(h, w, labels)
}

fn joint_distance(lab: &[f64; 3], r: usize, c: usize, ctr: &Center, weight: f64) -> f64 {
    let dc = (lab[0] - ctr.lab[0]).powi(2) + (lab[1] - ctr.lab[1]).powi(2) + (lab[2] - ctr.lab[2]).powi(2);
    let ds = (r as f64 - ctr.y).powi(2) + (c as f64 - ctr.x).powi(2);
    dc + weight * ds
}

/// Relabels 4-connected components in raster order; components smaller than
/// `min_size` join the component of an already-labeled neighbor.
fn enforce_connectivity(labels: &[u32], h: usize, w: usize, min_size: usize) -> Vec<u32> {
    let n = h * w;
    let mut out = vec![u32::MAX; n];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    let mut members = Vec::new();
    for start in 0..n {
        if out[start] != u32::MAX {
            continue;
        }
        let (sr, sc) = (start / w, start % w);
        let adjacent = neighbors(sr, sc, h, w)
            .map(|(r, c)| out[r * w + c])
            .find(|&l| l != u32::MAX);
        members.clear();
        out[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            members.push(p);
            for (r, c) in neighbors(p / w, p % w, h, w) {
                let q = r * w + c;
                if out[q] == u32::MAX && labels[q] == labels[start] {
                    out[q] = next;
                    queue.push_back(q);
                }
            }
        }
        match adjacent {
            Some(adj) if members.len() < min_size => {
                for &p in &members {
                    out[p] = adj;
                }
            }
            _ => next += 1,
        }
    }
    out
}

fn neighbors(r: usize, c: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    let mut v = [(usize::MAX, usize::MAX); 4];
    let mut k = 0;
    if r > 0 {
        v[k] = (r - 1, c);
        k += 1;
    }
    if c > 0 {
        v[k] = (r, c - 1);
        k += 1;
    }
    if r + 1 < h {
        v[k] = (r + 1, c);
        k += 1;
    }
    if c + 1 < w {
        v[k] = (r, c + 1);
        k += 1;
    }
    v.into_iter().take(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, BTreeSet};

    /// Plain Lloyd iterations on pixel positions only, seeded on the same grid.
    fn positional_lloyd(h: usize, w: usize, ny: usize, nx: usize, iters: usize) -> Vec<usize> {
        let mut centers: Vec<(f64, f64)> = Vec::new();
        for gy in 0..ny {
            for gx in 0..nx {
                centers.push((
                    (gy as f64 + 0.5) * h as f64 / ny as f64 - 0.5,
                    (gx as f64 + 0.5) * w as f64 / nx as f64 - 0.5,
                ));
            }
        }
        let mut assign = vec![0; h * w];
        for _ in 0..iters {
            for r in 0..h {
                for c in 0..w {
                    let mut best = (f64::INFINITY, 0);
                    for (k, &(y, x)) in centers.iter().enumerate() {
                        let d = (r as f64 - y).powi(2) + (c as f64 - x).powi(2);
                        if d < best.0 {
                            best = (d, k);
                        }
                    }
                    assign[r * w + c] = best.1;
                }
            }
            let mut acc = vec![(0.0, 0.0, 0.0); centers.len()];
            for (p, &k) in assign.iter().enumerate() {
                acc[k].0 += (p / w) as f64;
                acc[k].1 += (p % w) as f64;
                acc[k].2 += 1.0;
            }
            for (ctr, a) in centers.iter_mut().zip(acc) {
                if a.2 > 0.0 {
                    *ctr = (a.0 / a.2, a.1 / a.2);
                }
            }
        }
        assign
    }

    fn partition<T: Ord + Copy>(labels: &[T]) -> BTreeSet<Vec<usize>> {
        let mut groups: BTreeMap<T, Vec<usize>> = BTreeMap::new();
        for (p, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(p);
        }
        groups.into_values().collect()
    }

    #[test]
    fn constant_image_gives_grid_quadrants() {
        let img = ImageRGB::filled(8, 8, 0.4);
        let seg = slic_segment(&img, 4, 1000.0, 10).unwrap();
        assert_eq!(seg.n_segments(), 4);
        assert_eq!(seg.sizes(), vec![16; 4]);
        let oracle = positional_lloyd(8, 8, 2, 2, 10);
        assert_eq!(partition(seg.labels()), partition(&oracle));
        assert_ne!(seg.get(0, 0), seg.get(0, 7));
        assert_ne!(seg.get(0, 0), seg.get(7, 0));
    }

    #[test]
    fn single_segment_labels_everything_zero() {
        let img = ImageRGB::from_fn(9, 7, |r, c| [r as f64 / 9.0, c as f64 / 7.0, 0.2]);
        let seg = slic_segment(&img, 1, 10.0, 10).unwrap();
        assert!(seg.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn rejects_bad_parameters() {
        let img = ImageRGB::filled(4, 4, 0.0);
        assert!(slic_segment(&img, 0, 10.0, 5).is_err());
        assert!(slic_segment(&img, 2, 0.0, 5).is_err());
    }

    #[test]
    fn lab_reference_points() {
        let white = rgb_to_lab([1.0, 1.0, 1.0]);
        assert!((white[0] - 100.0).abs() < 1e-3 && white[1].abs() < 1e-2 && white[2].abs() < 1e-2);
        assert_eq!(rgb_to_lab([0.0, 0.0, 0.0])[0], 0.0);
    }

    fn assert_connected(seg: &SuperpixelLabels) {
        let (h, w) = (seg.height(), seg.width());
        for label in 0..seg.n_segments() as u32 {
            let pixels: Vec<usize> = (0..h * w).filter(|&p| seg.labels()[p] == label).collect();
            assert!(!pixels.is_empty(), "label {label} unused");
            let mut seen = BTreeSet::from([pixels[0]]);
            let mut stack = vec![pixels[0]];
            while let Some(p) = stack.pop() {
                for (r, c) in neighbors(p / w, p % w, h, w) {
                    let q = r * w + c;
                    if seg.labels()[q] == label && seen.insert(q) {
                        stack.push(q);
                    }
                }
            }
            assert_eq!(seen.len(), pixels.len(), "label {label} is disconnected");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn full_cover_and_connected(h in 4usize..40, w in 4usize..40, k in 1usize..30, seed in any::<u64>()) {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let img = ImageRGB::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()]);
                let seg = slic_segment(&img, k, 10.0, 10).unwrap();
                prop_assert_eq!(seg.sizes().iter().sum::<usize>(), h * w);
                prop_assert!(seg.labels().iter().all(|&l| (l as usize) < seg.n_segments()));
                assert_connected(&seg);
            }
        }
    }
}
