//! Deterministic synthetic tasks and the frozen random backbone.
//!
//! Two generators stand in for the benchmark regimes: a 50x50 binary image
//! task (one family of parallel transition lines vs. two intersecting
//! families with avoided-crossing gaps) and a prototype task with a wide
//! output layer scored by exp(cross-entropy). Everything is a pure function
//! of its arguments and seed.

use crate::adapters::FrozenBackbone;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{DenseTensor, Shape};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

pub const IMAGE_SIDE: usize = 50;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

/// Generation record carried alongside the raw arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    /// Noise level used at generation; absent when loaded from a binary file.
    pub noise_level: Option<f64>,
    pub class_counts: Vec<usize>,
}

/// Labeled samples: inputs `[N x P]`, one integer label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: DenseTensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(
        inputs: DenseTensor,
        labels: Vec<usize>,
        num_classes: usize,
        seed: u64,
        noise_level: Option<f64>,
    ) -> Result<Self> {
        if inputs.shape().rank() != 2 {
            return Err(Error::ShapeMismatch("inputs must be [N x P]".into()));
        }
        if labels.len() != inputs.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                inputs.rows()
            )));
        }
        if labels.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: num_classes,
            });
        }
        let mut class_counts = vec![0usize; num_classes];
        for &l in &labels {
            class_counts[l] += 1;
        }
        Ok(Dataset {
            inputs,
            labels,
            num_classes,
            meta: DatasetMeta {
                seed,
                noise_level,
                class_counts,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Input length per sample.
    pub fn input_len(&self) -> usize {
        self.inputs.cols()
    }

    /// Copy of sample row `i`.
    pub fn sample(&self, i: usize) -> DenseTensor {
        DenseTensor::new(
            Shape::new(vec![1, self.input_len()]).expect("valid row shape"),
            self.inputs.row(i).to_vec(),
        )
        .expect("finite row")
    }

    /// Gather rows by index into a new `[k x P]` batch.
    pub fn gather(&self, indices: &[usize]) -> (DenseTensor, Vec<usize>) {
        let p = self.input_len();
        let mut values = Vec::with_capacity(indices.len() * p);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.inputs.row(i));
            labels.push(self.labels[i]);
        }
        let inputs = DenseTensor::new(
            Shape::new(vec![indices.len(), p]).expect("valid batch shape"),
            values,
        )
        .expect("finite batch");
        (inputs, labels)
    }
}

// Distance from the anti-diagonal (or diagonal) coordinate t to the nearest
// line center of a family with the given spacing and phase.
fn line_distance(t: f64, spacing: f64, phase: f64) -> f64 {
    let d = (t - phase).rem_euclid(spacing);
    d.min(spacing - d)
}

// Line profile: full intensity within half a pixel of the center, then a
// 1-pixel linear feather down to the background.
#[inline]
fn line_intensity(d: f64) -> f64 {
    if d <= 0.5 {
        1.0
    } else {
        (1.5 - d).max(0.0)
    }
}

/// Binary 50x50 image task (P = 2500, Q = 2).
///
/// Label 0: one family of parallel anti-diagonal lines, spacing drawn from
/// [6, 12] pixels, random phase, value 1.0 on a 0.0 background with 1-pixel
/// feathering. Label 1: two denser families (anti-diagonal and diagonal,
/// spacings from [5, 8]) whose intersections are broken by short
/// avoided-crossing gaps. Gaussian pixel noise of the given standard
/// deviation is added, then values are clamped back to [0, 1]. Classes
/// alternate so counts are exactly balanced.
pub fn gen_quantum_dot(n: usize, noise_level: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "sample count {n} must be positive and even"
        )));
    }
    if noise_level < 0.0 {
        return Err(Error::InvalidArgument("noise_level must be >= 0".into()));
    }
    let mut rng = Rng::new(seed);
    let mut values = Vec::with_capacity(n * IMAGE_PIXELS);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        labels.push(label);
        if label == 0 {
            let spacing = 6.0 + 6.0 * rng.uniform();
            let phase = spacing * rng.uniform();
            for r in 0..IMAGE_SIDE {
                for c in 0..IMAGE_SIDE {
                    let d = line_distance((r + c) as f64, spacing, phase);
                    let mut pixel = line_intensity(d);
                    if noise_level > 0.0 {
                        pixel += noise_level * rng.normal();
                    }
                    values.push(pixel.clamp(0.0, 1.0));
                }
            }
        } else {
            let spacing_a = 5.0 + 3.0 * rng.uniform();
            let phase_a = spacing_a * rng.uniform();
            let spacing_b = 5.0 + 3.0 * rng.uniform();
            let phase_b = spacing_b * rng.uniform();
            for r in 0..IMAGE_SIDE {
                for c in 0..IMAGE_SIDE {
                    let da = line_distance((r + c) as f64, spacing_a, phase_a);
                    let db = line_distance(r as f64 - c as f64, spacing_b, phase_b);
                    // Avoided crossing: both families go dark near an
                    // intersection.
                    let mut pixel = if da <= 1.0 && db <= 1.0 {
                        0.0
                    } else {
                        line_intensity(da).max(line_intensity(db))
                    };
                    if noise_level > 0.0 {
                        pixel += noise_level * rng.normal();
                    }
                    values.push(pixel.clamp(0.0, 1.0));
                }
            }
        }
    }
    let inputs = DenseTensor::new(Shape::new(vec![n, IMAGE_PIXELS])?, values)?;
    Dataset::new(inputs, labels, 2, seed, Some(noise_level))
}

/// Prototype classification with a wide output layer.
///
/// `Q` standard-normal prototypes in `R^{d_raw}`; each sample is its class
/// prototype plus `noise_level * N(0, I)`. Labels cycle round-robin over the
/// classes.
pub fn gen_wide_output(
    n: usize,
    d_raw: usize,
    q: usize,
    noise_level: f64,
    seed: u64,
) -> Result<Dataset> {
    if q < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    if n < q {
        return Err(Error::InvalidArgument(format!(
            "sample count {n} below class count {q}"
        )));
    }
    if noise_level < 0.0 {
        return Err(Error::InvalidArgument("noise_level must be >= 0".into()));
    }
    let mut rng = Rng::new(seed);
    let prototypes: Vec<Vec<f64>> = (0..q)
        .map(|_| (0..d_raw).map(|_| rng.normal()).collect())
        .collect();
    let mut values = Vec::with_capacity(n * d_raw);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % q;
        labels.push(label);
        for &p in &prototypes[label] {
            let noise = if noise_level > 0.0 {
                noise_level * rng.normal()
            } else {
                0.0
            };
            values.push(p + noise);
        }
    }
    let inputs = DenseTensor::new(Shape::new(vec![n, d_raw])?, values)?;
    Dataset::new(inputs, labels, q, seed, Some(noise_level))
}

/// Frozen random backbone: feature map `[P x D]` with entries `N(0, 1/P)` and
/// head `[D x Q]` with entries `N(0, 1/D)`.
pub fn make_backbone(p: usize, d: usize, q: usize, seed: u64) -> Result<FrozenBackbone> {
    if p == 0 || d == 0 || q == 0 {
        return Err(Error::InvalidArgument("dimensions must be positive".into()));
    }
    let mut fm_rng = Rng::new(rng::derive(seed, 0));
    let fm_scale = 1.0 / (p as f64).sqrt();
    let feature_map = DenseTensor::new(
        Shape::new(vec![p, d])?,
        (0..p * d).map(|_| fm_scale * fm_rng.normal()).collect(),
    )?;
    let mut w0_rng = Rng::new(rng::derive(seed, 1));
    let w0_scale = 1.0 / (d as f64).sqrt();
    let w0 = DenseTensor::new(
        Shape::new(vec![d, q])?,
        (0..d * q).map(|_| w0_scale * w0_rng.normal()).collect(),
    )?;
    FrozenBackbone::new(w0, feature_map)
}

/// Stratified split: per class, a seeded shuffle then a rounded cut, so each
/// class lands within one sample of the exact fraction.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut rng = Rng::new(seed);
    let mut train_idx: Vec<usize> = Vec::new();
    let mut test_idx: Vec<usize> = Vec::new();
    for class in 0..dataset.num_classes {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels[i] == class)
            .collect();
        rng.shuffle(&mut members);
        let take = ((members.len() as f64) * train_fraction).round() as usize;
        let take = take.min(members.len());
        train_idx.extend_from_slice(&members[..take]);
        test_idx.extend_from_slice(&members[take..]);
    }
    // Interleave classes in the train split; per-epoch shuffling happens in
    // the trainer anyway.
    rng.shuffle(&mut train_idx);
    rng.shuffle(&mut test_idx);

    let build = |indices: &[usize]| -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument(
                "split produced an empty partition".into(),
            ));
        }
        let (inputs, labels) = dataset.gather(indices);
        Dataset::new(
            inputs,
            labels,
            dataset.num_classes,
            dataset.meta.seed,
            dataset.meta.noise_level,
        )
    };
    Ok((build(&train_idx)?, build(&test_idx)?))
}

/// Write the flat binary layout: header of four little-endian u64 (`N`, `P`,
/// `Q`, `seed`), inputs row-major as little-endian f64, labels as
/// little-endian u32.
pub fn write_dataset<W: Write>(dataset: &Dataset, out: &mut W) -> Result<()> {
    for v in [
        dataset.len() as u64,
        dataset.input_len() as u64,
        dataset.num_classes as u64,
        dataset.meta.seed,
    ] {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in dataset.inputs.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    for &l in &dataset.labels {
        out.write_all(&(l as u32).to_le_bytes())?;
    }
    Ok(())
}

/// Inverse of [`write_dataset`]; the noise level lives only in the JSON
/// sidecar, so it comes back as `None`.
pub fn read_dataset<R: BufRead>(input: &mut R) -> Result<Dataset> {
    let mut header = [0u8; 32];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::MalformedFile("dataset header truncated".into()))?;
    let word = |i: usize| u64::from_le_bytes(header[i * 8..(i + 1) * 8].try_into().expect("8 bytes"));
    let n = word(0) as usize;
    let p = word(1) as usize;
    let q = word(2) as usize;
    let seed = word(3);
    if n == 0 || p == 0 || q == 0 {
        return Err(Error::MalformedFile("degenerate dataset header".into()));
    }
    let mut bytes = vec![0u8; n * p * 8];
    input
        .read_exact(&mut bytes)
        .map_err(|_| Error::MalformedFile("dataset inputs truncated".into()))?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut label_bytes = vec![0u8; n * 4];
    input
        .read_exact(&mut label_bytes)
        .map_err(|_| Error::MalformedFile("dataset labels truncated".into()))?;
    let labels: Vec<usize> = label_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")) as usize)
        .collect();
    let inputs = DenseTensor::new(Shape::new(vec![n, p])?, values)?;
    Dataset::new(inputs, labels, q, seed, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantum_dot_balanced_and_clamped() {
        let ds = gen_quantum_dot(40, 0.3, 7).unwrap();
        assert_eq!(ds.meta.class_counts, vec![20, 20]);
        assert!(ds
            .inputs
            .values()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn quantum_dot_rejects_odd_n() {
        assert!(gen_quantum_dot(7, 0.0, 1).is_err());
        assert!(gen_quantum_dot(4, -0.1, 1).is_err());
    }

    #[test]
    fn quantum_dot_clean_images_structured() {
        let ds = gen_quantum_dot(10, 0.0, 3).unwrap();
        // Clean pixels sit in [0, 1] with on-line peaks at exactly 1.
        for i in 0..10 {
            let row = ds.inputs.row(i);
            assert!(row.iter().any(|&v| v == 1.0), "image {i} has no line peak");
            assert!(row.iter().any(|&v| v == 0.0), "image {i} has no background");
        }
        // Distinct images (random spacing/phase).
        for i in 0..9 {
            assert_ne!(ds.inputs.row(i), ds.inputs.row(i + 1));
        }
    }

    #[test]
    fn quantum_dot_two_families_cover_more() {
        let ds = gen_quantum_dot(400, 0.0, 11).unwrap();
        let mut mean = [0.0f64; 2];
        let mut count = [0usize; 2];
        for i in 0..ds.len() {
            let label = ds.labels[i];
            mean[label] += ds.inputs.row(i).iter().sum::<f64>();
            count[label] += 1;
        }
        let m0 = mean[0] / (count[0] * IMAGE_PIXELS) as f64;
        let m1 = mean[1] / (count[1] * IMAGE_PIXELS) as f64;
        assert!(m1 > m0, "label-1 mean {m1} vs label-0 mean {m0}");
    }

    #[test]
    fn generators_deterministic() {
        assert_eq!(gen_quantum_dot(8, 0.2, 5).unwrap(), gen_quantum_dot(8, 0.2, 5).unwrap());
        assert_eq!(
            gen_wide_output(30, 8, 5, 0.1, 9).unwrap(),
            gen_wide_output(30, 8, 5, 0.1, 9).unwrap()
        );
        let b1 = make_backbone(20, 6, 3, 2).unwrap();
        let b2 = make_backbone(20, 6, 3, 2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn wide_output_round_robin_and_zero_noise() {
        let ds = gen_wide_output(400, 16, 100, 0.0, 13).unwrap();
        assert!(ds.meta.class_counts.iter().all(|&c| c == 4));
        // Zero noise: same-class samples equal their prototype.
        assert_eq!(ds.inputs.row(0), ds.inputs.row(100));
        assert_eq!(ds.inputs.row(1), ds.inputs.row(201));
        assert!(gen_wide_output(5, 4, 10, 0.0, 1).is_err());
    }

    #[test]
    fn backbone_column_norms_concentrate() {
        let backbone = make_backbone(2500, 64, 2, 77).unwrap();
        let fm = backbone.feature_map();
        let p = fm.rows();
        let mut within = 0usize;
        for j in 0..fm.cols() {
            let norm = (0..p).map(|i| fm.at(i, j) * fm.at(i, j)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() <= 0.2 {
                within += 1;
            }
        }
        assert!(within * 100 >= fm.cols() * 95, "{within}/{}", fm.cols());
    }

    #[test]
    fn backbone_zero_input_zero_logits() {
        let backbone = make_backbone(10, 4, 3, 5).unwrap();
        let x = DenseTensor::zeros(Shape::new(vec![2, 10]).unwrap());
        let f = backbone.features(&x).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
        let logits = backbone.base_logits(&f).unwrap();
        assert!(logits.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn split_is_stratified_partition() {
        let ds = gen_quantum_dot(2000, 0.1, 21).unwrap();
        let (train, test) = split(&ds, 0.9, 4).unwrap();
        assert_eq!(train.len(), 1800);
        assert_eq!(test.len(), 200);
        assert_eq!(train.meta.class_counts, vec![900, 900]);
        assert_eq!(test.meta.class_counts, vec![100, 100]);

        // Union is the original multiset of rows.
        let mut all: Vec<(Vec<u8>, usize)> = Vec::new();
        for ds_part in [&train, &test] {
            for i in 0..ds_part.len() {
                let bytes: Vec<u8> = ds_part.inputs.row(i).iter().flat_map(|v| v.to_le_bytes()).collect();
                all.push((bytes, ds_part.labels[i]));
            }
        }
        let mut orig: Vec<(Vec<u8>, usize)> = (0..ds.len())
            .map(|i| {
                let bytes: Vec<u8> = ds.inputs.row(i).iter().flat_map(|v| v.to_le_bytes()).collect();
                (bytes, ds.labels[i])
            })
            .collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);

        // Same seed, same split.
        let (train2, _) = split(&ds, 0.9, 4).unwrap();
        assert_eq!(train, train2);

        assert!(split(&ds, 0.0, 1).is_err());
        assert!(split(&ds, 1.0, 1).is_err());
    }

    #[test]
    fn dataset_file_round_trip() {
        let ds = gen_wide_output(12, 6, 3, 0.5, 33).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(&mut std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(back.inputs, ds.inputs);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.num_classes, ds.num_classes);
        assert_eq!(back.meta.seed, ds.meta.seed);
        assert_eq!(back.meta.noise_level, None);
    }
}
