//! Full-size loads of the downloaded datasets. They read `$JUNCNET_DATA`
//! (default: the workspace `data/` directory) and fail when it is missing.

use std::path::PathBuf;

use juncnet::classifier::{load_cifar10, load_mnist, CIFAR10_CLASSES};

fn data_root() -> PathBuf {
    std::env::var_os("JUNCNET_DATA").map_or_else(
        || PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"),
        PathBuf::from,
    )
}

fn class_counts(labels: &[usize], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

#[test]
fn mnist_split_sizes() {
    let dir = data_root().join("mnist");
    let train = load_mnist(
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
        28,
        None,
    )
    .expect("MNIST training files (scripts/fetch-data.sh)");
    let test = load_mnist(
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
        28,
        None,
    )
    .expect("MNIST test files (scripts/fetch-data.sh)");
    assert_eq!(train.len(), 60_000);
    assert_eq!(test.len(), 10_000);
    assert_eq!(train.input_shape(), Some([1, 28, 28]));
    assert!(class_counts(&train.labels(), 10).iter().all(|&c| c > 5000));
    let px = train.samples()[0].0.data();
    assert!(px.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn cifar10_batch_sizes() {
    let dir = data_root().join("cifar-10-batches-bin");
    let batch =
        load_cifar10(&[dir.join("data_batch_1.bin")], 32, None).expect("CIFAR-10 batch (scripts/fetch-data.sh)");
    assert_eq!(batch.len(), 10_000);
    assert_eq!(batch.class_names().len(), CIFAR10_CLASSES.len());
    assert!(class_counts(&batch.labels(), 10).iter().all(|&c| c > 800));
    let test = load_cifar10(&[dir.join("test_batch.bin")], 32, Some(500)).unwrap();
    assert_eq!(test.len(), 500);
}
