//! IDX image/label loading and seeded splits.

use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::rng::seeded;
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: u8 = 10;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic { path: String, expected: u32, found: u32 },
    #[error("{path}: truncated, need {needed} bytes, have {actual}")]
    Truncated { path: String, needed: usize, actual: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} outside 0..{NUM_CLASSES}")]
    BadLabel { index: usize, label: u8 },
    #[error("subset of {requested} requested from a set of {available}")]
    SubsetTooLarge { requested: usize, available: usize },
}

/// Images in `[0, 1]` with their class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledSet {
    images: Vec<Tensor>,
    labels: Vec<u8>,
}

impl LabelledSet {
    /// Panics if the lengths differ or a label is out of range.
    pub fn new(images: Vec<Tensor>, labels: Vec<u8>) -> Self {
        assert_eq!(images.len(), labels.len(), "images and labels must pair up");
        assert!(labels.iter().all(|&l| l < NUM_CLASSES), "label out of range");
        Self { images, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> (&Tensor, usize) {
        (&self.images[i], usize::from(self.labels[i]))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tensor, usize)> {
        self.images.iter().zip(self.labels.iter().map(|&l| usize::from(l)))
    }

    pub fn select(&self, indices: &[usize]) -> LabelledSet {
        LabelledSet {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn map_images(&self, f: impl Fn(&Tensor) -> Tensor) -> LabelledSet {
        LabelledSet {
            images: self.images.iter().map(f).collect(),
            labels: self.labels.clone(),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, IdxError> {
    fs::read(path).map_err(|source| IdxError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn check_header(bytes: &[u8], path: &Path, magic: u32, header_len: usize) -> Result<(), IdxError> {
    let p = || path.display().to_string();
    if bytes.len() < 4 {
        return Err(IdxError::Truncated {
            path: p(),
            needed: header_len,
            actual: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(IdxError::BadMagic {
            path: p(),
            expected: magic,
            found,
        });
    }
    if bytes.len() < header_len {
        return Err(IdxError::Truncated {
            path: p(),
            needed: header_len,
            actual: bytes.len(),
        });
    }
    Ok(())
}

/// Parses an IDX3 image file into `[rows, cols, 1]` tensors scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Vec<Tensor>, IdxError> {
    check_header(bytes, path, IMAGES_MAGIC, 16)?;
    let count = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    let pixels = rows * cols;
    let needed = 16 + count * pixels;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            path: path.display().to_string(),
            needed,
            actual: bytes.len(),
        });
    }
    Ok(bytes[16..needed]
        .chunks_exact(pixels.max(1))
        .map(|chunk| {
            let data = chunk.iter().map(|&b| f32::from(b) / 255.0).collect();
            Tensor::image(rows, cols, 1, data).expect("dims match chunk")
        })
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>, IdxError> {
    check_header(bytes, path, LABELS_MAGIC, 8)?;
    let count = be_u32(bytes, 4) as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            path: path.display().to_string(),
            needed,
            actual: bytes.len(),
        });
    }
    let labels = bytes[8..needed].to_vec();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= NUM_CLASSES) {
        return Err(IdxError::BadLabel { index, label });
    }
    Ok(labels)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabelledSet, IdxError> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = parse_idx_images(&read(ip)?, ip)?;
    let labels = parse_idx_labels(&read(lp)?, lp)?;
    if images.len() != labels.len() {
        return Err(IdxError::CountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    Ok(LabelledSet { images, labels })
}

/// The conventional `train-*` / `t10k-*` file pair inside `dir`.
pub fn load_mnist_dir(dir: impl AsRef<Path>, train: bool) -> Result<LabelledSet, IdxError> {
    let prefix = if train { "train" } else { "t10k" };
    let dir = dir.as_ref();
    load_idx(
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    idx
}

/// Seeded shuffle, then halves: validation gets ⌈n/2⌉, test ⌊n/2⌋.
pub fn split_val_test(set: &LabelledSet, seed: u64) -> (LabelledSet, LabelledSet) {
    let idx = shuffled_indices(set.len(), seed);
    let half = set.len().div_ceil(2);
    (set.select(&idx[..half]), set.select(&idx[half..]))
}

pub fn take_subset(set: &LabelledSet, n: usize, seed: u64) -> Result<LabelledSet, IdxError> {
    if n > set.len() {
        return Err(IdxError::SubsetTooLarge {
            requested: n,
            available: set.len(),
        });
    }
    let idx = shuffled_indices(set.len(), seed);
    Ok(set.select(&idx[..n]))
}
