use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BinaryMask, SegmentationMap, SuperpixelLabels};
use crate::error::{Error, Result};
use crate::image::ImageRGB;

/// Superpixel size bands used for type III masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    /// Fewer than 100 pixels.
    Small,
    /// 200 to 1000 pixels inclusive.
    Medium,
}

impl SizeClass {
    pub fn contains(self, pixels: usize) -> bool {
        match self {
            SizeClass::Small => pixels < 100,
            SizeClass::Medium => (200..=1000).contains(&pixels),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
        }
    }
}

/// Pixels whose class differs from at least one 4-neighbor.
pub fn boundary_pixels(seg: &SegmentationMap) -> BinaryMask {
    let (h, w) = (seg.height(), seg.width());
    BinaryMask::from_fn(h, w, |r, c| {
        let v = seg.get(r, c);
        (r > 0 && seg.get(r - 1, c) != v)
            || (r + 1 < h && seg.get(r + 1, c) != v)
            || (c > 0 && seg.get(r, c - 1) != v)
            || (c + 1 < w && seg.get(r, c + 1) != v)
    })
}

/// Offsets of a digital disk: all `(dy, dx)` with `dy² + dx² ≤ radius²`.
pub fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Binary dilation with a disk structuring element.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let (h, w) = (mask.height(), mask.width());
    let disk = disk_offsets(radius);
    let mut out = BinaryMask::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            for &(dy, dx) in &disk {
                let (y, x) = (r as isize + dy, c as isize + dx);
                if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                    out.set(y as usize, x as usize, true);
                }
            }
        }
    }
    out
}

/// Type I: object boundaries of `seg`, dilated by a disk of `dilation_radius`.
pub fn mask_type1(seg: &SegmentationMap, dilation_radius: usize) -> BinaryMask {
    dilate(&boundary_pixels(seg), dilation_radius)
}

/// Type II: `out(r, c) = m(r - dy, c - dx)`, zero where the source is out of range.
pub fn mask_type2(m: &BinaryMask, dx: isize, dy: isize) -> BinaryMask {
    let (h, w) = (m.height(), m.width());
    BinaryMask::from_fn(h, w, |r, c| {
        let (sr, sc) = (r as isize - dy, c as isize - dx);
        sr >= 0 && sc >= 0 && (sr as usize) < h && (sc as usize) < w && m.get(sr as usize, sc as usize)
    })
}

/// Type III: a random subset of the superpixels whose size falls in `size_class`.
///
/// `fraction` of the eligible superpixels (at least one) is chosen; picks are
/// kept pairwise non-adjacent so each hole stays a single superpixel.
pub fn mask_type3(
    labels: &SuperpixelLabels,
    size_class: SizeClass,
    fraction: f64,
    rng_seed: u64,
) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidParam(format!("fraction {fraction} outside [0, 1]")));
    }
    let sizes = labels.sizes();
    let mut eligible: Vec<u32> = (0..labels.n_segments() as u32)
        .filter(|&l| size_class.contains(sizes[l as usize]))
        .collect();
    if eligible.is_empty() {
        return Err(Error::NoEligibleSegments(size_class.name()));
    }
    let wanted = ((eligible.len() as f64 * fraction).round() as usize).max(1);

    let adjacency = label_adjacency(labels);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    eligible.shuffle(&mut rng);
    let mut chosen = BTreeSet::new();
    for l in eligible {
        if chosen.len() == wanted {
            break;
        }
        if adjacency[l as usize].iter().all(|n| !chosen.contains(n)) {
            chosen.insert(l);
        }
    }
    let (h, w) = (labels.height(), labels.width());
    Ok(BinaryMask::from_fn(h, w, |r, c| chosen.contains(&labels.get(r, c))))
}

fn label_adjacency(labels: &SuperpixelLabels) -> Vec<BTreeSet<u32>> {
    let (h, w) = (labels.height(), labels.width());
    let mut adj = vec![BTreeSet::new(); labels.n_segments()];
    for r in 0..h {
        for c in 0..w {
            let a = labels.get(r, c);
            for (y, x) in [(r + 1, c), (r, c + 1)] {
                if y < h && x < w {
                    let b = labels.get(y, x);
                    if a != b {
                        adj[a as usize].insert(b);
                        adj[b as usize].insert(a);
                    }
                }
            }
        }
    }
    adj
}

/// Sets masked pixels to black: `(1 - M) ⊙ img`.
pub fn punch_holes(img: &ImageRGB, m: &BinaryMask) -> Result<ImageRGB> {
    if img.height() != m.height() || img.width() != m.width() {
        return Err(Error::DimMismatch(format!(
            "image {}x{} vs mask {}x{}",
            img.height(),
            img.width(),
            m.height(),
            m.width()
        )));
    }
    let mut out = img.clone();
    for r in 0..img.height() {
        for c in 0..img.width() {
            if m.get(r, c) {
                out.set_pixel(r, c, [0.0; 3]);
            }
        }
    }
    Ok(out)
}

/// Areas of the 4-connected components of a mask.
pub fn component_areas(m: &BinaryMask) -> Vec<usize> {
    let (h, w) = (m.height(), m.width());
    let mut seen = vec![false; h * w];
    let mut areas = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if seen[start] || m.data()[start] == 0 {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut area = 0;
        while let Some(p) = stack.pop() {
            area += 1;
            let (r, c) = (p / w, p % w);
            let mut visit = |q: usize| {
                if !seen[q] && m.data()[q] != 0 {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if r > 0 {
                visit(p - w);
            }
            if r + 1 < h {
                visit(p + w);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < w {
                visit(p + 1);
            }
        }
        areas.push(area);
    }
    areas
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskgen::slic_segment;

    fn single_object(n: usize) -> SegmentationMap {
        let mut data = vec![0; n * n];
        data[(n / 2) * n + n / 2] = 1;
        SegmentationMap::new(n, n, data).unwrap()
    }

    #[test]
    fn background_only_has_no_boundary() {
        let seg = SegmentationMap::new(6, 6, vec![0; 36]).unwrap();
        assert_eq!(mask_type1(&seg, 3).count(), 0);
    }

    #[test]
    fn single_pixel_object_dilates_to_thirteen_pixels() {
        let seg = single_object(7);
        // oracle: explicit boundary scan, then explicit radius-1 disk dilation
        let mut boundary = vec![];
        for r in 0..7i32 {
            for c in 0..7i32 {
                let v = seg.get(r as usize, c as usize);
                let differs = [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dy, dx)| {
                    let (y, x) = (r + dy, c + dx);
                    (0..7).contains(&y) && (0..7).contains(&x) && seg.get(y as usize, x as usize) != v
                });
                if differs {
                    boundary.push((r, c));
                }
            }
        }
        assert_eq!(boundary.len(), 5);
        let mut expected = BTreeSet::new();
        for (r, c) in boundary {
            for (dy, dx) in [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)] {
                expected.insert((r + dy, c + dx));
            }
        }
        assert_eq!(expected.len(), 13);
        let m = mask_type1(&seg, 1);
        assert_eq!(m.count(), 13);
        for (r, c) in expected {
            assert!(m.get(r as usize, c as usize));
        }
    }

    #[test]
    fn disk_shapes() {
        assert_eq!(disk_offsets(0).len(), 1);
        assert_eq!(disk_offsets(1).len(), 5);
        assert_eq!(disk_offsets(2).len(), 13);
    }

    #[test]
    fn shift_cases() {
        let m = BinaryMask::from_fn(6, 7, |r, c| (r + c) % 3 == 0);
        assert_eq!(mask_type2(&m, 0, 0), m);
        assert_eq!(mask_type2(&m, 7, 0).count(), 0);
        let single = BinaryMask::from_fn(5, 6, |r, c| (r, c) == (2, 3));
        let shifted = mask_type2(&single, 1, 0);
        assert_eq!(shifted.count(), 1);
        assert!(shifted.get(2, 4));
        let down = mask_type2(&single, 0, 2);
        assert!(down.get(4, 3));
    }

    #[test]
    fn only_candidate_is_selected() {
        // 10x15 grid: a 50-pixel strip on the left, 100 pixels on the right
        let labels: Vec<u32> = (0..150).map(|p| if p % 15 < 5 { 0 } else { 1 }).collect();
        let sp = SuperpixelLabels::new(10, 15, labels).unwrap();
        assert_eq!(sp.sizes(), vec![50, 100]);
        let m = mask_type3(&sp, SizeClass::Small, 1.0, 3).unwrap();
        assert_eq!(m, BinaryMask::from_fn(10, 15, |_, c| c < 5));
    }

    #[test]
    fn gap_sized_segments_are_not_eligible() {
        // three vertical strips of 150 pixels each
        let labels: Vec<u32> = (0..450).map(|p| ((p % 30) / 10) as u32).collect();
        let sp = SuperpixelLabels::new(15, 30, labels).unwrap();
        assert!(sp.sizes().iter().all(|&s| s == 150));
        for class in [SizeClass::Small, SizeClass::Medium] {
            assert!(matches!(
                mask_type3(&sp, class, 1.0, 0),
                Err(Error::NoEligibleSegments(_))
            ));
        }
    }

    #[test]
    fn medium_mask_components_are_in_range() {
        use rand::{Rng, SeedableRng};
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = ImageRGB::from_fn(64, 64, |r, c| {
                let n: f64 = rng.random_range(-0.05..0.05);
                [r as f64 / 64.0 + n, c as f64 / 64.0, 0.5 + n]
            });
            let sp = slic_segment(&img, 10, 10.0, 10).unwrap();
            let m = mask_type3(&sp, SizeClass::Medium, 1.0, seed).unwrap();
            let areas = component_areas(&m);
            assert!(!areas.is_empty());
            assert!(areas.iter().all(|a| (200..=1000).contains(a)), "{areas:?}");
        }
    }

    #[test]
    fn punching_holes() {
        let img = ImageRGB::filled(4, 4, 0.5);
        assert_eq!(punch_holes(&img, &BinaryMask::zeros(4, 4)).unwrap(), img);
        assert!(punch_holes(&img, &BinaryMask::ones(4, 4))
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let checker = BinaryMask::from_fn(4, 4, |r, c| (r + c) % 2 == 0);
        let out = punch_holes(&img, &checker).unwrap();
        let mean = out.data().iter().sum::<f64>() / out.data().len() as f64;
        assert_eq!(mean, 0.25);
        assert!(punch_holes(&img, &BinaryMask::zeros(3, 4)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn seg_strategy() -> impl Strategy<Value = SegmentationMap> {
            (3usize..12, 3usize..12).prop_flat_map(|(h, w)| {
                proptest::collection::vec(0u32..3, h * w)
                    .prop_map(move |d| SegmentationMap::new(h, w, d).unwrap())
            })
        }

        proptest! {
            #[test]
            fn type1_contains_boundary_and_grows(seg in seg_strategy(), r in 1usize..4) {
                let b = boundary_pixels(&seg);
                let m1 = mask_type1(&seg, r);
                let m2 = mask_type1(&seg, r + 1);
                prop_assert!(b.is_subset_of(&m1));
                prop_assert!(m1.is_subset_of(&m2));
            }

            #[test]
            fn shift_round_trip_on_valid_range(seg in seg_strategy(), dx in -4isize..5, dy in -4isize..5) {
                let m = boundary_pixels(&seg);
                let back = mask_type2(&mask_type2(&m, dx, dy), -dx, -dy);
                let (h, w) = (m.height() as isize, m.width() as isize);
                for r in 0..h {
                    for c in 0..w {
                        let (sr, sc) = (r + dy, c + dx);
                        if sr >= 0 && sc >= 0 && sr < h && sc < w {
                            prop_assert_eq!(back.get(r as usize, c as usize), m.get(r as usize, c as usize));
                        }
                    }
                }
            }

            #[test]
            fn type3_takes_whole_superpixels(seed in any::<u64>(), frac in 0.1f64..1.0) {
                use rand::{Rng, SeedableRng};
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let img = ImageRGB::from_fn(40, 40, |_, _| [rng.random(), rng.random(), rng.random()]);
                let sp = slic_segment(&img, 40, 10.0, 10).unwrap();
                if let Ok(m) = mask_type3(&sp, SizeClass::Small, frac, seed) {
                    let hit: BTreeSet<u32> = (0..40 * 40)
                        .filter(|&p| m.data()[p] != 0)
                        .map(|p| sp.labels()[p])
                        .collect();
                    for p in 0..40 * 40 {
                        prop_assert_eq!(m.data()[p] != 0, hit.contains(&sp.labels()[p]));
                    }
                }
            }

            #[test]
            fn punch_agrees_off_mask(seed in any::<u64>()) {
                use rand::{Rng, SeedableRng};
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let img = ImageRGB::from_fn(9, 7, |_, _| [rng.random(), rng.random(), rng.random()]);
                let m = BinaryMask::from_fn(9, 7, |_, _| rng.random_bool(0.3));
                let out = punch_holes(&img, &m).unwrap();
                for r in 0..9 {
                    for c in 0..7 {
                        let expect = if m.get(r, c) { [0.0; 3] } else { img.pixel(r, c) };
                        prop_assert_eq!(out.pixel(r, c), expect);
                    }
                }
            }
        }
    }
}
