//! The junction classifier: network assembly, frame preprocessing, dataset
//! loading, training and evaluation.

mod data;
pub mod synthetic;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub use data::{load_cifar10, load_image_dir, load_mnist, Dataset, CIFAR10_CLASSES, CIFAR10_RECORD};

use crate::error::{Error, Result};
use crate::imaging::{self, GrayImage};
use crate::network::{argmax_rows, Conv2d, Dense, InferenceModel, Layer, Model, Tensor};
use crate::parallel;
use crate::radon::{self, RadonConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct JuncNetConfig {
    pub input_side: usize,
    /// 1 = grayscale only, 2 = sharpened grayscale plus radon feature.
    pub in_channels: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel: usize,
    pub dense_hidden: usize,
    pub classes: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Projector settings for the radon feature channel.
    pub radon: RadonConfig,
}

impl Default for JuncNetConfig {
    fn default() -> Self {
        JuncNetConfig {
            input_side: 64,
            in_channels: 2,
            conv1_filters: 32,
            conv2_filters: 64,
            kernel: 3,
            dense_hidden: 128,
            classes: 2,
            lr: 1e-5,
            batch_size: 30,
            epochs: 200,
            seed: 42,
            radon: RadonConfig::default(),
        }
    }
}

impl JuncNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.input_side < 4 || !self.input_side.is_multiple_of(4) {
            return bad(format!(
                "input_side {} must be a positive multiple of 4",
                self.input_side
            ));
        }
        if !(1..=2).contains(&self.in_channels) {
            return bad(format!("in_channels must be 1 or 2, got {}", self.in_channels));
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.kernel.is_multiple_of(2) || self.kernel > self.input_side / 2 {
            return bad(format!("kernel {} must be odd and fit the pooled input", self.kernel));
        }
        if self.conv1_filters == 0 || self.conv2_filters == 0 || self.dense_hidden == 0 {
            return bad("filter and hidden counts must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("learning rate {} is not a finite non-negative number", self.lr));
        }
        self.radon.validate()
    }
}

/// conv -> relu -> pool -> conv -> relu -> pool -> flatten -> dense -> relu
/// -> dense -> softmax, He-initialised from `cfg.seed`.
pub fn build_juncnet(cfg: &JuncNetConfig) -> Result<Model> {
    build_ablation(cfg, 2)
}

/// [`build_juncnet`] with one or two conv+pool stages.
pub fn build_ablation(cfg: &JuncNetConfig, conv_blocks: usize) -> Result<Model> {
    if !(1..=2).contains(&conv_blocks) {
        return Err(Error::InvalidConfig(format!(
            "conv_blocks must be 1 or 2, got {conv_blocks}"
        )));
    }
    cfg.validate()?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
    let filters = [cfg.conv1_filters, cfg.conv2_filters];
    let mut layers = Vec::new();
    let mut channels = cfg.in_channels;
    let mut side = cfg.input_side;
    for &f in &filters[..conv_blocks] {
        layers.push(Layer::Conv2d(Conv2d::he_normal(f, channels, cfg.kernel, &mut rng)));
        layers.push(Layer::Relu);
        layers.push(Layer::MaxPool2d);
        channels = f;
        side /= 2;
    }
    let flat = channels * side * side;
    layers.extend([
        Layer::Flatten,
        Layer::Dense(Dense::he_normal(cfg.dense_hidden, flat, &mut rng)),
        Layer::Relu,
        Layer::Dense(Dense::he_normal(cfg.classes, cfg.dense_hidden, &mut rng)),
        Layer::Softmax,
    ]);
    let mut model = Model::new([cfg.in_channels, cfg.input_side, cfg.input_side], layers)?;
    model.set_learning_rate(cfg.lr);
    Ok(model)
}

/// Turns a camera frame into the network input `[in_channels, side, side]`.
///
/// The frame is padded to a square by edge replication, resized, normalised
/// to `[0, 1]` and sharpened (channel 0). With two channels, channel 1 is the
/// normalised filtered back-projection of channel 0.
pub fn preprocess_frame(img: &GrayImage, cfg: &JuncNetConfig) -> Result<Tensor> {
    let side = cfg.input_side;
    let square = imaging::pad_to_square(img);
    let resized = imaging::resize_bilinear(&square, side, side)?;
    let gray = imaging::sharpen(&imaging::normalize(&resized))?;
    let mut data = gray.pixels().to_vec();
    if cfg.in_channels == 2 {
        let feature = radon::reconstruct_feature(&gray, &cfg.radon)?;
        data.extend_from_slice(feature.pixels());
    }
    Tensor::new(vec![cfg.in_channels, side, side], data)?.ensure_finite("preprocess_frame")
}

/// Anything that maps a batch `[N, C, H, W]` to class probabilities `[N, K]`.
pub trait FrameClassifier: Sync {
    fn input_shape(&self) -> [usize; 3];
    fn num_classes(&self) -> usize;
    fn predict(&self, x: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl FrameClassifier for InferenceModel {
    fn input_shape(&self) -> [usize; 3] {
        InferenceModel::input_shape(self)
    }

    fn num_classes(&self) -> usize {
        InferenceModel::num_classes(self)
    }

    fn predict(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        InferenceModel::predict(self, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Mini-batch Adam training. Batches are drawn from a per-epoch shuffle
/// seeded by `cfg.seed`; the final short batch is kept.
pub fn train(
    model: &mut Model,
    data: &Dataset,
    cfg: &JuncNetConfig,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_compatible(model.input_shape(), model.num_classes(), data)?;
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    model.set_learning_rate(cfg.lr);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed ^ 0x5348_5546_464c_4521);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for batch in order.chunks(cfg.batch_size) {
            let (x, labels) = data.batch(batch)?;
            let (loss, ok) = model.train_step(&x, &labels)?;
            loss_sum += loss * batch.len() as f64;
            correct += ok;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        progress(&stats);
        history.push(stats);
    }
    Ok(history)
}

/// False when the moving average (width `window`) of the epoch losses rises
/// anywhere in the first `epochs` epochs.
pub fn smoothed_loss_non_increasing(history: &[EpochStats], window: usize, epochs: usize) -> bool {
    let losses: Vec<f64> = history.iter().take(epochs).map(|h| h.loss).collect();
    let w = window.max(1);
    let avg: Vec<f64> = losses.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect();
    avg.windows(2).all(|p| p[1] <= p[0])
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,loss,accuracy\n");
    for h in history {
        writeln!(out, "{},{:.8},{:.6}", h.epoch, h.loss, h.accuracy).expect("write to string");
    }
    out
}

fn check_compatible(shape: [usize; 3], classes: usize, data: &Dataset) -> Result<()> {
    if data.input_shape() != Some(shape) {
        return Err(Error::ShapeMismatch(format!(
            "model input {shape:?} but dataset samples are {:?}",
            data.input_shape()
        )));
    }
    if data.num_classes() != classes {
        return Err(Error::ShapeMismatch(format!(
            "model has {classes} classes but dataset has {}",
            data.num_classes()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub error_rate: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Zero for a class that was never predicted.
    pub precision: Vec<f64>,
    /// Zero for a class with no samples.
    pub recall: Vec<f64>,
}

impl EvalReport {
    pub fn from_predictions(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if truth.len() != predicted.len() {
            return Err(Error::CountMismatch {
                images: predicted.len(),
                labels: truth.len(),
            });
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::LabelOutOfRange {
                    label: t.max(p),
                    classes,
                });
            }
            confusion[t][p] += 1;
        }
        let total = truth.len();
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = (0..classes)
            .map(|c| ratio(confusion[c][c], (0..classes).map(|t| confusion[t][c]).sum()))
            .collect();
        let recall = (0..classes)
            .map(|c| ratio(confusion[c][c], confusion[c].iter().sum()))
            .collect();
        let accuracy = correct as f64 / total as f64;
        Ok(EvalReport {
            total,
            correct,
            accuracy,
            error_rate: 1.0 - accuracy,
            confusion,
            precision,
            recall,
        })
    }

    pub fn confusion_csv(&self, class_names: &[String]) -> String {
        let name = |i: usize| class_names.get(i).cloned().unwrap_or_else(|| i.to_string());
        let mut out = String::from("true\\predicted");
        for c in 0..self.confusion.len() {
            write!(out, ",{}", name(c)).expect("write to string");
        }
        out.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            out.push_str(&name(t));
            for v in row {
                write!(out, ",{v}").expect("write to string");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_confusion_csv(&self, path: impl AsRef<Path>, class_names: &[String]) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.confusion_csv(class_names)).map_err(|e| Error::io(path, e))
    }
}

const EVAL_BATCH: usize = 32;

/// Argmax class (ties to the lowest index) for every sample, fanned out over
/// `threads` workers in fixed-size batches.
pub fn classify_dataset(clf: &impl FrameClassifier, data: &Dataset, threads: usize) -> Result<Vec<usize>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_compatible(clf.input_shape(), clf.num_classes(), data)?;
    let starts: Vec<usize> = (0..data.len()).step_by(EVAL_BATCH).collect();
    let parts = parallel::par_map(&starts, threads, |&s| -> Result<Vec<usize>> {
        let idx: Vec<usize> = (s..(s + EVAL_BATCH).min(data.len())).collect();
        let x = data.batch_f32(&idx)?;
        Ok(argmax_rows(&clf.predict(&x)?))
    });
    let mut out = Vec::with_capacity(data.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn evaluate_with(clf: &impl FrameClassifier, data: &Dataset, threads: usize) -> Result<EvalReport> {
    let predicted = classify_dataset(clf, data, threads)?;
    EvalReport::from_predictions(clf.num_classes(), &data.labels(), &predicted)
}

/// Evaluates the model's inference path using [`parallel::worker_threads`].
pub fn evaluate(model: &Model, data: &Dataset) -> Result<EvalReport> {
    evaluate_with(&model.inference(), data, parallel::worker_threads())
}
