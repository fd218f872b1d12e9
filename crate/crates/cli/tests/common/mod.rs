#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use viewqual::dataset::{Manifest, ManifestRecord};
use viewqual::image::save_image;
use viewqual::maskgen::punch_holes;
use viewqual::synthetic::{scene, square_holes};

pub fn viewqual(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viewqual"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

/// Runs the binary and panics with its stderr on a non-zero exit.
pub fn viewqual_ok(args: &[&str], cwd: &Path) -> Output {
    let out = viewqual(args, cwd);
    assert!(
        out.status.success(),
        "viewqual {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// `n` synthetic scenes of side `size` as PNGs, optionally with `<stem>.seg.png` label maps.
pub fn write_corpus(dir: &Path, n: usize, size: usize, seed: u64, with_labels: bool) {
    fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let (img, seg) = scene(size, seed + i as u64);
        save_image(&img, &dir.join(format!("img{i:04}.png"))).unwrap();
        if with_labels {
            seg.save_png(&dir.join(format!("img{i:04}.seg.png"))).unwrap();
        }
    }
}

/// Hole count per degradation level; level 0 is the clean image.
pub const LEVEL_HOLES: [usize; 4] = [0, 4, 8, 16];
pub const HOLE_SIDE: usize = 16;

/// Images whose planted quality is the punched-hole area: `contents` scenes,
/// each at every level of [`LEVEL_HOLES`]. The DMOS is the hole coverage in
/// percent, so higher is worse.
pub fn planted_manifest(dir: &Path, name: &str, contents: usize, size: usize, seed: u64) -> PathBuf {
    let img_dir = dir.join(name);
    fs::create_dir_all(&img_dir).unwrap();
    let mut records = Vec::new();
    for c in 0..contents {
        let scene_seed = seed + c as u64;
        let (img, _) = scene(size, scene_seed);
        for (level, &count) in LEVEL_HOLES.iter().enumerate() {
            let mask = square_holes(size, HOLE_SIDE, count, scene_seed.wrapping_mul(31) + level as u64);
            let file = format!("{name}/c{c:03}_L{level}.png");
            save_image(&punch_holes(&img, &mask).unwrap(), &dir.join(&file)).unwrap();
            records.push(ManifestRecord {
                image_path: PathBuf::from(file),
                content_id: format!("c{c:03}"),
                viewpoint_id: "v0".into(),
                algorithm_id: format!("L{level}"),
                dmos: 100.0 * mask.coverage(),
                rotation: 0,
                mask_path: None,
            });
        }
    }
    let path = dir.join(format!("{name}.jsonl"));
    Manifest::new(dir, records)
        .unwrap()
        .write(&path, &["planted-quality fixture".to_string()])
        .unwrap();
    path
}

/// `path score` lines of a score file, comments skipped.
pub fn parse_score_lines(text: &str) -> Vec<(String, f64)> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let (p, s) = l.rsplit_once(' ').expect("path and score");
            (p.to_string(), s.parse().expect("numeric score"))
        })
        .collect()
}

/// Value of a `# name: value` header line.
pub fn header_value<'a>(text: &'a str, name: &str) -> Option<&'a str> {
    let prefix = format!("# {name}: ");
    text.lines().find_map(|l| l.strip_prefix(prefix.as_str()))
}
