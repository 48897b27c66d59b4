//! CIFAR-10 binary ingestion, a synthetic stand-in in the same format,
//! seeded batching and augmentation.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SIDE: usize = 32;
pub const PLANE: usize = SIDE * SIDE;
pub const IMAGE_BYTES: usize = 3 * PLANE;
pub const RECORD_BYTES: usize = IMAGE_BYTES + 1;
pub const NUM_CLASSES: usize = 10;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";
pub const CROP_PAD: usize = 4;

/// Channel statistics of the real CIFAR-10 training split, pixels in [0, 1].
pub const CIFAR10_TRAIN_STATS: ChannelStats = ChannelStats {
    mean: [0.491_399_68, 0.482_158_41, 0.446_530_9],
    std: [0.247_032_23, 0.243_485_13, 0.261_587_84],
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl ChannelStats {
    /// Per-channel mean and population standard deviation of planar
    /// `3×32×32` byte images, scaled to [0, 1].
    pub fn from_pixels(pixels: &[u8]) -> Self {
        let mut sum = [0f64; 3];
        let mut sq = [0f64; 3];
        for img in pixels.chunks_exact(IMAGE_BYTES) {
            for c in 0..3 {
                for &p in &img[c * PLANE..][..PLANE] {
                    let v = p as f64 / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let n = (pixels.len() / 3).max(1) as f64;
        let mut out = ChannelStats {
            mean: [0.0; 3],
            std: [1.0; 3],
        };
        for c in 0..3 {
            let m = sum[c] / n;
            out.mean[c] = m as f32;
            out.std[c] = ((sq[c] / n - m * m).max(0.0).sqrt() as f32).max(1e-6);
        }
        out
    }

    pub fn standardize(&self, channel: usize, raw: u8) -> f32 {
        (raw as f32 / 255.0 - self.mean[channel]) / self.std[channel]
    }
}

/// Images stay as raw bytes; standardization happens when a batch is built.
#[derive(Debug, Clone)]
pub struct Dataset {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    pub split: Split,
    pub stats: ChannelStats,
}

impl Dataset {
    pub fn from_raw(pixels: Vec<u8>, labels: Vec<u8>, split: Split, stats: ChannelStats) -> Result<Self> {
        if pixels.len() != labels.len() * IMAGE_BYTES {
            return Err(Error::config(format!(
                "{} pixel bytes for {} labels",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::config(format!("label {bad} out of range")));
        }
        Ok(Dataset {
            pixels,
            labels,
            split,
            stats,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| l as usize).collect()
    }

    pub fn raw_image(&self, i: usize) -> &[u8] {
        &self.pixels[i * IMAGE_BYTES..][..IMAGE_BYTES]
    }

    pub fn raw_pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn image(&self, i: usize) -> Vec<f32> {
        standardize_image(self.raw_image(i), &self.stats)
    }

    /// The first `n` records (all of them if `n` exceeds the size).
    pub fn subset(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            pixels: self.pixels[..n * IMAGE_BYTES].to_vec(),
            labels: self.labels[..n].to_vec(),
            split: self.split,
            stats: self.stats,
        }
    }

    /// Records at `indices`, in that order, standardized into `[B, 3, 32, 32]`.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let mut x = Vec::with_capacity(indices.len() * IMAGE_BYTES);
        for &i in indices {
            x.extend(self.image(i));
        }
        let labels = indices.iter().map(|&i| self.label(i)).collect();
        Ok((Tensor::new(vec![indices.len(), 3, SIDE, SIDE], x)?, labels))
    }
}

pub fn standardize_image(raw: &[u8], stats: &ChannelStats) -> Vec<f32> {
    raw.iter()
        .enumerate()
        .map(|(i, &p)| stats.standardize(i / PLANE, p))
        .collect()
}

/// Split a CIFAR-10 binary file into (pixels, labels).
pub fn parse_records(bytes: &[u8], path: &Path) -> Result<(Vec<u8>, Vec<u8>)> {
    if bytes.is_empty() {
        return Err(Error::data(path, "file holds no records"));
    }
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::data(
            path,
            format!(
                "truncated record: {} bytes is not a multiple of {RECORD_BYTES}",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut pixels = Vec::with_capacity(n * IMAGE_BYTES);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        if rec[0] as usize >= NUM_CLASSES {
            return Err(Error::data(path, format!("record {i} has label {} >= 10", rec[0])));
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((pixels, labels))
}

pub fn read_batch_file(path: &Path) -> Result<(Vec<u8>, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::data(path, format!("cannot read: {e}")))?;
    parse_records(&bytes, path)
}

pub fn write_batch_file(path: &Path, pixels: &[u8], labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(labels.len() * RECORD_BYTES);
    for (l, img) in labels.iter().zip(pixels.chunks_exact(IMAGE_BYTES)) {
        out.push(*l);
        out.extend_from_slice(img);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Look for the batch files in `dir` or in its `cifar-10-batches-bin`
/// subdirectory.
pub fn resolve_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if !dir.join(TEST_FILE).exists() && nested.join(TEST_FILE).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Train and test splits, both standardized with training-split statistics.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let dir = resolve_dir(dir);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for name in TRAIN_FILES {
        let path = dir.join(name);
        if !path.exists() {
            return Err(Error::data(&path, "missing training batch file"));
        }
        let (p, l) = read_batch_file(&path)?;
        pixels.extend(p);
        labels.extend(l);
    }
    let test_path = dir.join(TEST_FILE);
    if !test_path.exists() {
        return Err(Error::data(&test_path, "missing test batch file"));
    }
    let (tp, tl) = read_batch_file(&test_path)?;
    let stats = ChannelStats::from_pixels(&pixels);
    Ok((
        Dataset {
            pixels,
            labels,
            split: Split::Train,
            stats,
        },
        Dataset {
            pixels: tp,
            labels: tl,
            split: Split::Test,
            stats,
        },
    ))
}

/// Class-conditioned synthetic images: each class is an oriented grating with
/// its own colour balance, plus per-pixel noise. Not CIFAR-10; only a
/// format-compatible workload for tests and smoke runs.
pub fn synthetic_records(n: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(n * IMAGE_BYTES);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let k: usize = rng.random_range(0..NUM_CLASSES);
        let theta = k as f32 * std::f32::consts::PI / NUM_CLASSES as f32;
        let freq = 0.25 + 0.15 * (k % 3) as f32;
        let phase: f32 = rng.random_range(0.0..std::f32::consts::TAU);
        let (s, c) = theta.sin_cos();
        for ch in 0..3 {
            let tint = 40.0 * ((k + ch * 3) as f32 * 0.9).cos();
            for y in 0..SIDE {
                for x in 0..SIDE {
                    let u = x as f32 * c + y as f32 * s;
                    let wave = 70.0 * (freq * u + phase).sin();
                    let noise: f32 = rng.random_range(-30.0..30.0);
                    pixels.push((128.0 + tint + wave + noise).clamp(0.0, 255.0) as u8);
                }
            }
        }
        labels.push(k as u8);
    }
    (pixels, labels)
}

/// Write a synthetic dataset in the CIFAR-10 directory layout.
pub fn write_synthetic_cifar10(dir: &Path, per_train_file: usize, test: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, name) in TRAIN_FILES.iter().enumerate() {
        let (p, l) = synthetic_records(per_train_file, seed.wrapping_add(i as u64));
        write_batch_file(&dir.join(name), &p, &l)?;
    }
    let (p, l) = synthetic_records(test, seed.wrapping_add(1000));
    write_batch_file(&dir.join(TEST_FILE), &p, &l)
}

/// Derive an independent stream seed, e.g. per epoch.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed
        ^ stream
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mirror a planar image left to right.
pub fn flip_horizontal(img: &mut [u8]) {
    for row in img.chunks_exact_mut(SIDE) {
        row.reverse();
    }
}

/// Crop a 32×32 window at offset `(dy, dx)` from the image zero-padded by
/// [`CROP_PAD`] on each side; offsets lie in `0..=2·CROP_PAD`.
pub fn padded_crop(img: &[u8], dy: usize, dx: usize) -> Vec<u8> {
    let mut out = vec![0u8; IMAGE_BYTES];
    for c in 0..3 {
        for y in 0..SIDE {
            let sy = (y + dy) as isize - CROP_PAD as isize;
            if !(0..SIDE as isize).contains(&sy) {
                continue;
            }
            for x in 0..SIDE {
                let sx = (x + dx) as isize - CROP_PAD as isize;
                if (0..SIDE as isize).contains(&sx) {
                    out[c * PLANE + y * SIDE + x] = img[c * PLANE + sy as usize * SIDE + sx as usize];
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor<f32>,
    pub labels: Vec<usize>,
}

/// Seeded shuffled minibatches; the last batch may be short.
pub struct Batches<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    augment: bool,
    rng: ChaCha8Rng,
}

pub fn batches(data: &Dataset, batch_size: usize, seed: u64, augment: bool) -> Batches<'_> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    Batches {
        data,
        order,
        pos: 0,
        batch_size: batch_size.max(1),
        augment,
        rng,
    }
}

/// Records in storage order, no augmentation.
pub fn sequential(data: &Dataset, batch_size: usize) -> Batches<'_> {
    Batches {
        data,
        order: (0..data.len()).collect(),
        pos: 0,
        batch_size: batch_size.max(1),
        augment: false,
        rng: ChaCha8Rng::seed_from_u64(0),
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let mut x = Vec::with_capacity(idx.len() * IMAGE_BYTES);
        for &i in idx {
            let raw = self.data.raw_image(i);
            let img = if self.augment {
                let mut img = raw.to_vec();
                if self.rng.random_bool(0.5) {
                    flip_horizontal(&mut img);
                }
                let dy = self.rng.random_range(0..=2 * CROP_PAD);
                let dx = self.rng.random_range(0..=2 * CROP_PAD);
                padded_crop(&img, dy, dx)
            } else {
                raw.to_vec()
            };
            x.extend(standardize_image(&img, &self.data.stats));
        }
        let labels = idx.iter().map(|&i| self.data.label(i)).collect();
        let x = Tensor::new(vec![idx.len(), 3, SIDE, SIDE], x).expect("non-empty batch");
        Some(Batch { x, labels })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}
