use std::path::PathBuf;

use knn_scaling::experiments::{dataset_scan, KRule};
use knn_scaling::ingest::{read_idx, to_binary_dataset, write_idx, IdxTensor, MAGIC_IMAGES};
use knn_scaling::Error;
use proptest::prelude::*;

fn tiny_images() -> IdxTensor {
    IdxTensor::images(2, 2, 2, vec![0, 1, 127, 255, 9, 8, 7, 6]).unwrap()
}

fn toy_pair() -> (IdxTensor, IdxTensor) {
    let labels: Vec<u8> = (0..60u8).map(|i| i % 3).collect();
    let pixels: Vec<u8> = (0..60u32 * 4).map(|i| (i * 7 % 256) as u8).collect();
    (IdxTensor::images(60, 2, 2, pixels).unwrap(), IdxTensor::labels(labels).unwrap())
}

#[test]
fn header_layout_is_big_endian() {
    let bytes = tiny_images().to_bytes();
    assert_eq!(&bytes[..16], &[0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2]);
    assert_eq!(&bytes[16..], &[0, 1, 127, 255, 9, 8, 7, 6]);
}

#[test]
fn file_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("imgs.idx");
    let t = tiny_images();
    write_idx(&t, &path).unwrap();
    let raw = std::fs::read(&path).unwrap();
    let back = read_idx(&path).unwrap();
    assert_eq!(back, t);
    let again = dir.path().join("again.idx");
    write_idx(&back, &again).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), raw);
}

#[test]
fn scaling_is_on_request() {
    let t = tiny_images();
    assert_eq!(t.to_reals(false)[3], 255.0);
    assert_eq!(t.to_reals(true)[3], 1.0);
    assert_eq!(t.to_reals(true)[2], 127.0 / 255.0);
}

#[test]
fn truncated_payload_is_reported() {
    let bytes = tiny_images().to_bytes();
    match IdxTensor::from_bytes(&bytes[..bytes.len() - 3]) {
        Err(Error::IdxTruncated { expected, found }) => assert_eq!((expected, found), (24, 21)),
        other => panic!("{other:?}"),
    }
    assert!(matches!(IdxTensor::from_bytes(&bytes[..10]), Err(Error::IdxTruncated { .. })));
    assert!(matches!(IdxTensor::from_bytes(&bytes[..2]), Err(Error::IdxTruncated { .. })));
}

#[test]
fn bad_magic_is_reported() {
    let mut bytes = tiny_images().to_bytes();
    bytes[2] = 0x0d;
    assert!(matches!(IdxTensor::from_bytes(&bytes), Err(Error::IdxBadMagic { magic: 0x0d03 })));
}

#[test]
fn trailing_bytes_are_reported() {
    let mut bytes = tiny_images().to_bytes();
    bytes.push(0);
    assert!(matches!(IdxTensor::from_bytes(&bytes), Err(Error::IdxTrailingBytes { extra: 1 })));
}

#[test]
fn huge_dimensions_overflow_instead_of_allocating() {
    let mut bytes = MAGIC_IMAGES.to_be_bytes().to_vec();
    for _ in 0..3 {
        bytes.extend_from_slice(&u32::MAX.to_be_bytes());
    }
    assert!(matches!(IdxTensor::from_bytes(&bytes), Err(Error::IdxDimOverflow { .. })));
}

#[test]
fn missing_file_is_an_io_error() {
    let err = read_idx("/nonexistent/definitely/not/here").unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.is_data_error());
}

#[test]
fn pair_selection_maps_and_scales() {
    let (images, labels) = toy_pair();
    let ds = to_binary_dataset(&images, &labels, 2, 0, None, 0).unwrap();
    assert_eq!(ds.len(), 40);
    assert_eq!(ds.dim(), 4);
    // first kept image is index 0 (label 0 → class 1), then index 2 (label 2 → class 0)
    assert_eq!(&ds.labels()[..2], &[1, 0]);
    let expect: Vec<f64> = images.item(2).iter().map(|&b| b as f64 / 255.0).collect();
    assert_eq!(ds.row(1), expect.as_slice());
    assert_eq!(ds.class_counts(), [20, 20]);
}

#[test]
fn subsample_is_seeded() {
    let (images, labels) = toy_pair();
    let a = to_binary_dataset(&images, &labels, 0, 1, Some(15), 5).unwrap();
    let b = to_binary_dataset(&images, &labels, 0, 1, Some(15), 5).unwrap();
    let c = to_binary_dataset(&images, &labels, 0, 1, Some(15), 6).unwrap();
    assert_eq!(a.len(), 15);
    assert_eq!(a.points(), b.points());
    assert_ne!(a.points(), c.points());
    assert_eq!(to_binary_dataset(&images, &labels, 0, 1, Some(1000), 5).unwrap().len(), 40);
}

#[test]
fn pairing_errors() {
    let (images, labels) = toy_pair();
    assert!(matches!(to_binary_dataset(&images, &labels, 1, 1, None, 0), Err(Error::InvalidArgument(_))));
    assert!(matches!(to_binary_dataset(&images, &labels, 0, 7, None, 0), Err(Error::EmptyClass { class: 7 })));
    assert!(matches!(to_binary_dataset(&labels, &images, 0, 1, None, 0), Err(Error::InvalidArgument(_))));

    let mut bad: Vec<u8> = labels.bytes().to_vec();
    bad[13] = 10;
    let bad = IdxTensor::labels(bad).unwrap();
    assert!(matches!(to_binary_dataset(&images, &bad, 0, 1, None, 0), Err(Error::LabelRange { value: 10, max: 9 })));

    let short = IdxTensor::labels(vec![0, 1]).unwrap();
    assert!(matches!(to_binary_dataset(&images, &short, 0, 1, None, 0), Err(Error::DimensionMismatch { .. })));
}

proptest! {
    #[test]
    fn arbitrary_tensors_round_trip(count in 0u32..6, rows in 0u32..5, cols in 0u32..5, seed in any::<u64>()) {
        let len = (count * rows * cols) as usize;
        let pixels: Vec<u8> = (0..len).map(|i| (seed.rotate_left(i as u32 % 64) >> 7) as u8).collect();
        let t = IdxTensor::images(count, rows, cols, pixels).unwrap();
        let bytes = t.to_bytes();
        let back = IdxTensor::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, t);
    }

    #[test]
    fn arbitrary_labels_round_trip(values in proptest::collection::vec(any::<u8>(), 0..64)) {
        let t = IdxTensor::labels(values).unwrap();
        prop_assert_eq!(IdxTensor::from_bytes(&t.to_bytes()).unwrap(), t);
    }
}

fn mnist_dir() -> Option<PathBuf> {
    let dir = PathBuf::from(std::env::var_os("MNIST_DIR")?);
    let files = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];
    files.iter().all(|f| dir.join(f).is_file()).then_some(dir)
}

macro_rules! require_mnist {
    () => {
        match mnist_dir() {
            Some(d) => d,
            None => {
                eprintln!("skipping: set MNIST_DIR to a directory holding the four MNIST IDX files");
                return;
            }
        }
    };
}

#[test]
fn mnist_zero_one_pair_size() {
    let dir = require_mnist!();
    let images = read_idx(dir.join("train-images-idx3-ubyte")).unwrap();
    let labels = read_idx(dir.join("train-labels-idx1-ubyte")).unwrap();
    let oracle = labels.bytes().iter().filter(|&&y| y <= 1).count();
    let ds = to_binary_dataset(&images, &labels, 0, 1, None, 0).unwrap();
    assert_eq!(ds.len(), oracle);
    assert_eq!(ds.len(), 12_665);
    assert_eq!(ds.dim(), 28 * 28);
}

#[test]
fn mnist_easy_pair_learns_monotonically() {
    let dir = require_mnist!();
    let train = to_binary_dataset(
        &read_idx(dir.join("train-images-idx3-ubyte")).unwrap(),
        &read_idx(dir.join("train-labels-idx1-ubyte")).unwrap(),
        0,
        1,
        None,
        0,
    )
    .unwrap();
    let test = to_binary_dataset(
        &read_idx(dir.join("t10k-images-idx3-ubyte")).unwrap(),
        &read_idx(dir.join("t10k-labels-idx1-ubyte")).unwrap(),
        0,
        1,
        Some(1000),
        1,
    )
    .unwrap();
    let curve = dataset_scan(&train, &test, &[500, 2000, 8000], KRule::Affine, 5, 3).unwrap();
    for w in curve.rows.windows(2) {
        assert!(w[1].mean_test_error <= w[0].mean_test_error + 2.0 * w[0].stderr.max(w[1].stderr), "{:?}", curve.rows);
    }
}
