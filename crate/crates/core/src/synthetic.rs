//! Procedural scenes with known object segmentation, used as fixtures and for
//! planted-quality experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::ImageRGB;
use crate::maskgen::{BinaryMask, SegmentationMap};

#[derive(Clone, Copy)]
enum Shape {
    Rect { r0: f64, c0: f64, r1: f64, c1: f64 },
    Disk { r: f64, c: f64, radius: f64 },
}

impl Shape {
    fn contains(&self, r: f64, c: f64) -> bool {
        match *self {
            Shape::Rect { r0, c0, r1, c1 } => r >= r0 && r < r1 && c >= c0 && c < c1,
            Shape::Disk { r: cr, c: cc, radius } => (r - cr).powi(2) + (c - cc).powi(2) < radius * radius,
        }
    }
}

fn color(rng: &mut impl Rng) -> [f64; 3] {
    [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)]
}

/// A gradient background with 1–3 solid, lightly textured objects.
///
/// Object `k` (1-based, later objects on top) is labelled `k` in the map; background is 0.
pub fn scene(size: usize, seed: u64) -> (ImageRGB, SegmentationMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (top, bottom) = (color(&mut rng), color(&mut rng));
    let n_obj = rng.random_range(1..=3);
    let s = size as f64;
    let mut shapes = Vec::with_capacity(n_obj);
    for _ in 0..n_obj {
        let shape = if rng.random_bool(0.5) {
            let h = rng.random_range(0.2..0.5) * s;
            let w = rng.random_range(0.2..0.5) * s;
            let r0 = rng.random_range(0.0..s - h);
            let c0 = rng.random_range(0.0..s - w);
            Shape::Rect { r0, c0, r1: r0 + h, c1: c0 + w }
        } else {
            let radius = rng.random_range(0.1..0.25) * s;
            Shape::Disk {
                r: rng.random_range(radius..s - radius),
                c: rng.random_range(radius..s - radius),
                radius,
            }
        };
        shapes.push((shape, color(&mut rng)));
    }
    let freq = rng.random_range(0.2..0.6);
    let amp = rng.random_range(0.0..0.08);
    let mut labels = vec![0u32; size * size];
    let img = ImageRGB::from_fn(size, size, |r, c| {
        let (rf, cf) = (r as f64 + 0.5, c as f64 + 0.5);
        let t = rf / s;
        let mut px = [0.0; 3];
        for k in 0..3 {
            px[k] = top[k] * (1.0 - t) + bottom[k] * t;
        }
        for (k, (shape, col)) in shapes.iter().enumerate() {
            if shape.contains(rf, cf) {
                let tex = amp * ((rf * freq).sin() * (cf * freq).cos());
                px = [col[0] + tex, col[1] + tex, col[2] + tex];
                labels[r * size + c] = k as u32 + 1;
            }
        }
        px
    });
    let seg = SegmentationMap::new(size, size, labels).expect("matching dims");
    (img, seg)
}

/// Square holes of side `side` at random non-overlapping positions, `count` of them.
pub fn square_holes(size: usize, side: usize, count: usize, seed: u64) -> BinaryMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = BinaryMask::zeros(size, size);
    let mut placed = 0;
    let mut attempts = 0;
    while placed < count && attempts < 1000 {
        attempts += 1;
        let r0 = rng.random_range(0..=size - side);
        let c0 = rng.random_range(0..=size - side);
        let clash = (r0..r0 + side).any(|r| (c0..c0 + side).any(|c| m.get(r, c)));
        if clash {
            continue;
        }
        for r in r0..r0 + side {
            for c in c0..c0 + side {
                m.set(r, c, true);
            }
        }
        placed += 1;
    }
    m
}
