#![allow(dead_code)]

use std::path::Path;
use std::process::Command;

use qualaudit::image_metrics::{encode_pnm, ImageBuffer};
use qualaudit::tensor_io::{DatasetManifest, ManifestEntry};

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn run(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_qualaudit"))
        .args(args)
        .output()
        .expect("binary runs");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Clean entries `img00000..` with labels cycling over 10 classes.
pub fn clean_manifest(n: usize) -> DatasetManifest {
    DatasetManifest::new(
        (0..n)
            .map(|i| ManifestEntry::clean(format!("img{i:05}"), format!("img{i:05}.pgm"), (i % 10) as u32))
            .collect(),
    )
    .unwrap()
}

/// Gradient-plus-stripes grayscale image.
pub fn textured(w: usize, h: usize, phase: usize) -> ImageBuffer {
    let samples = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            ((x * 7 + y * 3 + phase * 11) % 200 + if (x + phase) % 4 < 2 { 40 } else { 0 }) as u8
        })
        .collect();
    ImageBuffer::new(w, h, 1, samples).unwrap()
}

pub fn write_images(dir: &Path, manifest: &DatasetManifest, w: usize, h: usize) {
    for (i, e) in manifest.iter().enumerate() {
        std::fs::write(dir.join(&e.path), encode_pnm(&textured(w, h, i))).unwrap();
    }
}
