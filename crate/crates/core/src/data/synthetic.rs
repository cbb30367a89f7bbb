//! Seeded three-class blob images. Each image is a noisy grey background
//! with one soft disc whose colour identifies the class.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, stream};

use super::dataset::Dataset;
use super::record::{write_imgr, ImageRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticTask {
    /// Primary-colour discs: red, green, blue.
    A,
    /// Mixed-colour discs (yellow, magenta, cyan) under leaf-class names.
    B,
}

impl SyntheticTask {
    fn colours(self) -> [[f32; 3]; 3] {
        match self {
            SyntheticTask::A => [[1.0, 0.1, 0.1], [0.1, 1.0, 0.1], [0.1, 0.1, 1.0]],
            SyntheticTask::B => [[0.9, 0.8, 0.1], [0.8, 0.1, 0.9], [0.1, 0.8, 0.9]],
        }
    }

    pub fn class_names(self) -> Vec<String> {
        let names: [&str; 3] = match self {
            SyntheticTask::A => ["blue", "green", "red"],
            SyntheticTask::B => ["early_blight", "healthy", "late_blight"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    fn tag(self) -> u64 {
        match self {
            SyntheticTask::A => 0xA,
            SyntheticTask::B => 0xB,
        }
    }
}

/// `per_class` images of `size×size` for each of three classes, in class
/// order. The class list is sorted so the dataset matches what
/// [`super::load_dataset`] returns after [`write_dataset`].
pub fn synthetic_blobs(task: SyntheticTask, per_class: usize, size: usize, seed: u64) -> Result<Dataset> {
    if per_class == 0 || size < 4 {
        return Err(Error::Config("synthetic data needs per_class ≥ 1 and size ≥ 4".into()));
    }
    let colours = task.colours();
    // sorted names: A = blue, green, red; B = early_blight, healthy, late_blight
    let colour_of = match task {
        SyntheticTask::A => [colours[2], colours[1], colours[0]],
        SyntheticTask::B => colours,
    };
    let names = task.class_names();
    let mut records = Vec::with_capacity(3 * per_class);
    for (label, colour) in colour_of.iter().enumerate() {
        for i in 0..per_class {
            let mut rng = seed::rng(seed, &[stream::SYNTH, task.tag(), label as u64, i as u64]);
            let s = size as f32;
            let radius = rng.gen_range(s / 6.0..s / 3.0);
            let cy = rng.gen_range(radius..s - radius);
            let cx = rng.gen_range(radius..s - radius);
            let intensity = rng.gen_range(170.0..250.0);
            let mut pixels = Vec::with_capacity(size * size * 3);
            for y in 0..size {
                for x in 0..size {
                    let d = ((y as f32 + 0.5 - cy).powi(2) + (x as f32 + 0.5 - cx).powi(2)).sqrt();
                    // soft edge over one pixel
                    let inside = (radius - d + 0.5).clamp(0.0, 1.0);
                    for &c in colour {
                        let bg: f32 = rng.gen_range(40.0..100.0);
                        let fg = intensity * c + rng.gen_range(-15.0..15.0);
                        pixels.push((bg * (1.0 - inside) + fg * inside).clamp(0.0, 255.0) as u8);
                    }
                }
            }
            let id = format!("{}/{:04}.imgr", names[label], i);
            records.push(ImageRecord::new(size, size, pixels, label, id)?);
        }
    }
    Dataset::new(records, names)
}

/// Writes a directory-per-class IMGR tree that loads back as `ds`.
pub fn write_dataset(ds: &Dataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    for name in &ds.class_names {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for (i, r) in ds.records.iter().enumerate() {
        let path = root.join(&ds.class_names[r.label]).join(format!("{i:05}.imgr"));
        write_imgr(r, path)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_dataset;

    fn channel_means(r: &ImageRecord) -> [f32; 3] {
        let mut m = [0f32; 3];
        for px in r.pixels.chunks_exact(3) {
            for c in 0..3 {
                m[c] += px[c] as f32;
            }
        }
        m.map(|v| v / (r.height * r.width) as f32)
    }

    #[test]
    fn deterministic_and_balanced() {
        let a = synthetic_blobs(SyntheticTask::A, 5, 16, 1).unwrap();
        assert_eq!(a, synthetic_blobs(SyntheticTask::A, 5, 16, 1).unwrap());
        assert_ne!(a, synthetic_blobs(SyntheticTask::A, 5, 16, 2).unwrap());
        assert_eq!(a.class_counts(), [5, 5, 5]);
    }

    #[test]
    fn task_a_classes_follow_dominant_channel() {
        let ds = synthetic_blobs(SyntheticTask::A, 20, 16, 3).unwrap();
        for r in &ds.records {
            let m = channel_means(r);
            let dominant = (0..3).max_by(|&a, &b| m[a].total_cmp(&m[b])).unwrap();
            // blue=0 → channel 2, green=1 → 1, red=2 → 0
            assert_eq!(dominant, 2 - r.label, "{}", r.source_id);
        }
    }

    #[test]
    fn written_tree_loads_back() {
        let ds = synthetic_blobs(SyntheticTask::B, 3, 8, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.class_names, ds.class_names);
        assert_eq!(back.labels(), ds.labels());
        for (x, y) in back.records.iter().zip(&ds.records) {
            assert_eq!(x.pixels, y.pixels);
        }
    }
}
