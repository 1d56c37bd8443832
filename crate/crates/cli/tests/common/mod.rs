#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use emorec_core::datapipe::write_pgm;
use emorec_core::haar::export_cascade;
use emorec_core::haar::fixtures::{mouth_cascade, plant_edge, plant_mouth, top_bottom_cascade};
use emorec_core::{SeededRng, Tensor};

pub const CLASSES: [&str; 3] = ["Disgust", "Joy", "Neutral"];

pub fn emorec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emorec"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn write_cascades(dir: &Path) -> (PathBuf, PathBuf) {
    let face = dir.join("face.xml");
    let mouth = dir.join("mouth.xml");
    fs::write(&face, export_cascade(&top_bottom_cascade(), "face")).unwrap();
    fs::write(&mouth, export_cascade(&mouth_cascade(), "mouth")).unwrap();
    (face, mouth)
}

/// 80x90 image at intensity 100 with a 24x24 edge pattern at `(x, y)`.
pub fn face_image(x: usize, y: usize) -> Tensor {
    let mut img = Tensor::new(&[90, 80], 100.0).unwrap();
    plant_edge(&mut img, x, y, 24, 24);
    img
}

/// A 48x48 face pattern with a mouth pattern in its lower half.
pub fn face_with_mouth(fx: usize, fy: usize) -> Tensor {
    let mut img = Tensor::new(&[100, 100], 100.0).unwrap();
    plant_edge(&mut img, fx, fy, 48, 48);
    plant_mouth(&mut img, fx + 18, fy + 34);
    img
}

/// Raw 20x20 synthetic mouth crop for `class`: a bright block in the top-left
/// quadrant, a horizontal band, or a vertical band, over noise.
pub fn class_image(class: usize, rng: &mut SeededRng) -> Tensor {
    let n = 20;
    let mut img = Tensor::zeros(&[n, n]).unwrap();
    for y in 0..n {
        for x in 0..n {
            let on = match class {
                0 => x < 10 && y < 10,
                1 => (8..12).contains(&y),
                _ => (8..12).contains(&x),
            };
            let base = if on { 200.0 } else { 60.0 };
            img.set(&[y, x], base + 40.0 * (rng.next_f64() - 0.5));
        }
    }
    img
}

/// `root/<Class>/<prefix>NN.pgm`, `per_class` images per class.
pub fn synthetic_dataset(root: &Path, per_class: usize, prefix: &str, seed: u64) {
    let mut rng = SeededRng::new(seed);
    for (c, name) in CLASSES.iter().enumerate() {
        let dir = root.join(name);
        fs::create_dir_all(&dir).unwrap();
        for i in 0..per_class {
            write_pgm(&dir.join(format!("{prefix}{i:02}.pgm")), &class_image(c, &mut rng)).unwrap();
        }
    }
}

pub fn write_config(path: &Path, body: &str) {
    fs::write(path, body).unwrap();
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
