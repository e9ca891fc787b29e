//! IDX image/label files and their reduction to binary datasets.

use std::fs;
use std::path::Path;

use rand::seq::index;

use crate::distributions::Dataset;
use crate::error::{invalid, Error, Result};
use crate::rng::stream_rng;

pub const MAGIC_LABELS: u32 = 0x0000_0801;
pub const MAGIC_IMAGES: u32 = 0x0000_0803;

/// Largest label accepted when pairing images with labels.
pub const MAX_LABEL: u8 = 9;

/// A decoded IDX file of unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    magic: u32,
    dims: Vec<u32>,
    data: Vec<u8>,
}

impl IdxTensor {
    pub fn new(magic: u32, dims: Vec<u32>, data: Vec<u8>) -> Result<Self> {
        let rank = rank_for(magic)?;
        if dims.len() != rank {
            return Err(invalid(format!("magic {magic:#010x} needs {rank} dimensions, got {}", dims.len())));
        }
        let len = element_count(&dims)?;
        if data.len() != len {
            return Err(Error::DimensionMismatch { expected: len, got: data.len() });
        }
        Ok(IdxTensor { magic, dims, data })
    }

    pub fn labels(values: Vec<u8>) -> Result<Self> {
        let n = u32::try_from(values.len()).map_err(|_| invalid("too many labels for IDX"))?;
        Self::new(MAGIC_LABELS, vec![n], values)
    }

    pub fn images(count: u32, rows: u32, cols: u32, pixels: Vec<u8>) -> Result<Self> {
        Self::new(MAGIC_IMAGES, vec![count, rows, cols], pixels)
    }

    pub fn magic(&self) -> u32 {
        self.magic
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    /// Number of items along the first axis.
    pub fn count(&self) -> usize {
        self.dims[0] as usize
    }

    /// Elements per item (1 for labels, rows·cols for images).
    pub fn item_len(&self) -> usize {
        self.dims[1..].iter().map(|&d| d as usize).product()
    }

    pub fn item(&self, i: usize) -> &[u8] {
        let m = self.item_len();
        &self.data[i * m..(i + 1) * m]
    }

    /// Elements as reals, optionally divided by 255.
    pub fn to_reals(&self, scale: bool) -> Vec<f64> {
        let s = if scale { 1.0 / 255.0 } else { 1.0 };
        self.data.iter().map(|&b| b as f64 * s).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.data.len());
        out.extend_from_slice(&self.magic.to_be_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let magic = be_u32(bytes, 0).ok_or(Error::IdxTruncated { expected: 4, found: bytes.len() })?;
        let rank = rank_for(magic)?;
        let header = 4 + 4 * rank;
        if bytes.len() < header {
            return Err(Error::IdxTruncated { expected: header, found: bytes.len() });
        }
        let dims: Vec<u32> = (0..rank).map(|i| be_u32(bytes, 4 + 4 * i).unwrap()).collect();
        let len = element_count(&dims)?;
        let expected = header.checked_add(len).ok_or_else(|| Error::IdxDimOverflow { dims: dims.clone() })?;
        if bytes.len() < expected {
            return Err(Error::IdxTruncated { expected, found: bytes.len() });
        }
        if bytes.len() > expected {
            return Err(Error::IdxTrailingBytes { extra: bytes.len() - expected });
        }
        Ok(IdxTensor { magic, dims, data: bytes[header..].to_vec() })
    }
}

fn rank_for(magic: u32) -> Result<usize> {
    match magic {
        MAGIC_LABELS => Ok(1),
        MAGIC_IMAGES => Ok(3),
        _ => Err(Error::IdxBadMagic { magic }),
    }
}

fn element_count(dims: &[u32]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .filter(|&n| n <= isize::MAX as usize)
        .ok_or_else(|| Error::IdxDimOverflow { dims: dims.to_vec() })
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    let b = bytes.get(at..at + 4)?;
    Some(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    IdxTensor::from_bytes(&bytes)
}

pub fn write_idx(tensor: &IdxTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Keeps the images labelled `class_a` (→ 0) or `class_b` (→ 1), scaled by
/// 1/255 and flattened. With `n_max`, a seeded subsample of that size is
/// drawn, kept in file order.
pub fn to_binary_dataset(
    images: &IdxTensor,
    labels: &IdxTensor,
    class_a: u8,
    class_b: u8,
    n_max: Option<usize>,
    seed: u64,
) -> Result<Dataset> {
    if images.magic() != MAGIC_IMAGES {
        return Err(invalid("first argument must be an image file"));
    }
    if labels.magic() != MAGIC_LABELS {
        return Err(invalid("second argument must be a label file"));
    }
    if class_a == class_b {
        return Err(invalid(format!("the two classes must differ, both are {class_a}")));
    }
    for c in [class_a, class_b] {
        if c > MAX_LABEL {
            return Err(invalid(format!("class {c} is outside 0..={MAX_LABEL}")));
        }
    }
    if images.count() != labels.count() {
        return Err(Error::DimensionMismatch { expected: images.count(), got: labels.count() });
    }
    if n_max == Some(0) {
        return Err(invalid("n_max must be positive"));
    }
    if let Some(&value) = labels.bytes().iter().find(|&&y| y > MAX_LABEL) {
        return Err(Error::LabelRange { value, max: MAX_LABEL });
    }

    let mut keep: Vec<usize> = Vec::new();
    let mut counts = [0usize; 2];
    for (i, &y) in labels.bytes().iter().enumerate() {
        if y == class_a {
            counts[0] += 1;
            keep.push(i);
        } else if y == class_b {
            counts[1] += 1;
            keep.push(i);
        }
    }
    for (c, class) in [class_a, class_b].into_iter().enumerate() {
        if counts[c] == 0 {
            return Err(Error::EmptyClass { class });
        }
    }
    if let Some(m) = n_max.filter(|&m| m < keep.len()) {
        let mut rng = stream_rng(seed);
        let mut chosen = index::sample(&mut rng, keep.len(), m).into_vec();
        chosen.sort_unstable();
        keep = chosen.into_iter().map(|j| keep[j]).collect();
    }

    let d = images.item_len();
    let mut points = Vec::with_capacity(keep.len() * d);
    let mut out_labels = Vec::with_capacity(keep.len());
    for &i in &keep {
        points.extend(images.item(i).iter().map(|&b| b as f64 / 255.0));
        out_labels.push(u8::from(labels.bytes()[i] == class_b));
    }
    Dataset::new(d, points, out_labels)
}

/// Splits off `n_test` seeded random rows as a test set; the rest keep their order.
pub fn holdout(data: &Dataset, n_test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_test == 0 || n_test >= data.len() {
        return Err(invalid(format!("hold-out size must lie in 1..{}, got {n_test}", data.len())));
    }
    let mut rng = stream_rng(seed);
    let mut test_idx = index::sample(&mut rng, data.len(), n_test).into_vec();
    test_idx.sort_unstable();
    let mut is_test = vec![false; data.len()];
    test_idx.iter().for_each(|&i| is_test[i] = true);
    let train_idx: Vec<usize> = (0..data.len()).filter(|&i| !is_test[i]).collect();
    Ok((data.select(&train_idx)?, data.select(&test_idx)?))
}
