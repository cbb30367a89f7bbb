use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::par;
use crate::seed::{self, stream};
use crate::tensor::Tensor;

use super::record::{augment, normalize, read_image, resize, AugmentSpec, ImageRecord};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub records: Vec<ImageRecord>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(records: Vec<ImageRecord>, class_names: Vec<String>) -> Result<Self> {
        if let Some(r) = records.iter().find(|r| r.label >= class_names.len()) {
            return Err(Error::Data(format!(
                "{}: label {} but only {} classes",
                r.source_id,
                r.label,
                class_names.len()
            )));
        }
        Ok(Dataset { records, class_names })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for r in &self.records {
            counts[r.label] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Every record resized to `height×width`.
    pub fn resized(&self, height: usize, width: usize) -> Self {
        let records = par::map_range(self.len(), self.len() * height * width * 12, |i| {
            resize(&self.records[i], height, width)
        });
        Dataset {
            records,
            class_names: self.class_names.clone(),
        }
    }

    fn subset(&self, indices: &[usize]) -> Self {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let hidden = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with('.'));
        if !hidden {
            entries.push(path);
        }
    }
    entries.sort();
    Ok(entries)
}

/// Loads a directory-per-class tree. Classes are the sorted subdirectory
/// names; files within a class are read in path order. Decoding may run in
/// parallel, the record order does not depend on it.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", root.display())));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Data(format!("{} has no class subdirectories", root.display())));
    }
    let mut class_names = Vec::with_capacity(class_dirs.len());
    let mut files = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Data(format!("{}: class name is not UTF-8", dir.display())))?;
        class_names.push(name.to_string());
        for path in sorted_entries(dir)? {
            if path.is_file() {
                files.push((path, label));
            }
        }
    }
    let decoded = par::map_range(files.len(), usize::MAX, |i| {
        let (path, label) = &files[i];
        let id = path.strip_prefix(root).unwrap_or(path).to_string_lossy().into_owned();
        read_image(path, *label, id)
    });
    Dataset::new(decoded.into_iter().collect::<Result<_>>()?, class_names)
}

/// Stratified, seeded split. Each class is shuffled on its own stream and
/// cut so the class totals follow `train_fraction` (largest remainder, so
/// the overall train count is `round(fraction·N)` and each class is within
/// one record of its exact share). Both halves keep dataset order.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train_fraction {train_fraction} must lie in (0, 1)")));
    }
    let counts = ds.class_counts();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Data(format!("class {:?} has no records", ds.class_names[c])));
    }
    let exact: Vec<f64> = counts.iter().map(|&n| n as f64 * train_fraction).collect();
    let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let target = (ds.len() as f64 * train_fraction).round() as usize;
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let missing = target.saturating_sub(take.iter().sum());
    for &c in order.iter().take(missing) {
        take[c] += 1;
    }

    let mut in_train = vec![false; ds.len()];
    for (class, &n) in take.iter().enumerate() {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.records[i].label == class).collect();
        members.shuffle(&mut seed::rng(seed, &[stream::SPLIT, class as u64]));
        for &i in &members[..n] {
            in_train[i] = true;
        }
    }
    let (train, val): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| in_train[i]);
    Ok((ds.subset(&train), ds.subset(&val)))
}

/// One mini-batch: `N×3×H×W` inputs and `N×K` one-hot labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Tensor<f32>,
    pub labels: Tensor<f32>,
    pub targets: Vec<usize>,
    /// Dataset indices of the rows.
    pub indices: Vec<usize>,
}

/// Epoch view over a dataset. Augmentation randomness is keyed by
/// `(seed, epoch, record index)`, so a batch can be rebuilt in isolation.
pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    seed: u64,
    epoch: u64,
    augment: Option<AugmentSpec>,
}

pub fn batches(ds: &Dataset, batch_size: usize, shuffle: bool, seed: u64, epoch: u64) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let first = ds.records.first().ok_or_else(|| Error::Data("cannot batch an empty dataset".into()))?;
    if let Some(r) = ds
        .records
        .iter()
        .find(|r| (r.height, r.width) != (first.height, first.width))
    {
        return Err(Error::Data(format!(
            "{} is {}×{}, expected {}×{}; resize before batching",
            r.source_id, r.height, r.width, first.height, first.width
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    if shuffle {
        order.shuffle(&mut seed::rng(seed, &[stream::SHUFFLE, epoch]));
    }
    Ok(Batches {
        ds,
        order,
        batch_size,
        pos: 0,
        seed,
        epoch,
        augment: None,
    })
}

impl<'a> Batches<'a> {
    pub fn with_augment(mut self, spec: Option<AugmentSpec>) -> Self {
        self.augment = spec.filter(|s| !s.is_identity());
        self
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    fn build(&self, indices: &[usize]) -> Batch {
        let first = &self.ds.records[0];
        let (h, w, k) = (first.height, first.width, self.ds.n_classes());
        let n = indices.len();
        let rows = par::map_range(n, n * h * w * 40, |j| {
            let i = indices[j];
            let rec = &self.ds.records[i];
            match &self.augment {
                Some(spec) => {
                    let mut rng = seed::rng(self.seed, &[stream::AUGMENT, self.epoch, i as u64]);
                    normalize(&augment(rec, spec, &mut rng))
                }
                None => normalize(rec),
            }
        });
        let mut inputs = Vec::with_capacity(n * 3 * h * w);
        for r in rows {
            inputs.extend_from_slice(r.data());
        }
        let targets: Vec<usize> = indices.iter().map(|&i| self.ds.records[i].label).collect();
        let mut labels = vec![0f32; n * k];
        for (row, &t) in targets.iter().enumerate() {
            labels[row * k + t] = 1.0;
        }
        Batch {
            inputs: Tensor::new(&[n, 3, h, w], inputs).expect("batch dims are positive"),
            labels: Tensor::new(&[n, k], labels).expect("batch dims are positive"),
            targets,
            indices: indices.to_vec(),
        }
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.build(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}
