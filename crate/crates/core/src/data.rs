//! Dataset ingestion, augmentation and the teacher regression task.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{forward_batch, init_weights, Activation, NetworkState};
use crate::numerics::Matrix;
use crate::rng::named_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub input_dim: usize,
    /// Zero for regression targets.
    pub class_count: usize,
    /// Item cap applied at load time, if any.
    pub cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Matrix),
}

/// Row-per-item inputs with class or vector targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    targets: Targets,
    pub split: Split,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Targets, split: Split, meta: DatasetMeta) -> Result<Self> {
        let n = inputs.rows();
        let m = match &targets {
            Targets::Classes(c) => {
                if let Some(&bad) = c.iter().find(|&&k| k >= meta.class_count) {
                    return Err(Error::InvalidParameter(format!(
                        "label {bad} out of range for {} classes",
                        meta.class_count
                    )));
                }
                c.len()
            }
            Targets::Values(v) => v.rows(),
        };
        if m != n {
            return Err(Error::ShapeMismatch {
                context: "dataset targets",
                expected: n,
                found: m,
            });
        }
        if inputs.cols() != meta.input_dim {
            return Err(Error::ShapeMismatch {
                context: "dataset input_dim",
                expected: meta.input_dim,
                found: inputs.cols(),
            });
        }
        Ok(Self {
            inputs,
            targets,
            split,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn target_dim(&self) -> usize {
        match &self.targets {
            Targets::Classes(_) => self.meta.class_count,
            Targets::Values(v) => v.cols(),
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes(c) => Some(c),
            Targets::Values(_) => None,
        }
    }

    /// Target rows for `indices`, one-hot encoded for class targets.
    pub fn target_rows(&self, indices: &[usize]) -> Matrix {
        match &self.targets {
            Targets::Classes(c) => {
                let mut m = Matrix::zeros(indices.len(), self.meta.class_count);
                for (r, &i) in indices.iter().enumerate() {
                    m[(r, c[i])] = 1.0;
                }
                m
            }
            Targets::Values(v) => v.select_rows(indices),
        }
    }

    /// First `n` items (or all if fewer); the cap is recorded in the metadata.
    pub fn truncated(mut self, n: usize) -> Self {
        if n >= self.len() {
            return self;
        }
        let idx: Vec<usize> = (0..n).collect();
        self.inputs = self.inputs.select_rows(&idx);
        self.targets = match self.targets {
            Targets::Classes(mut c) => {
                c.truncate(n);
                Targets::Classes(c)
            }
            Targets::Values(v) => Targets::Values(v.select_rows(&idx)),
        };
        self.meta.cap = Some(n);
        self
    }

    /// Randomly permutes the labels across items, breaking the input/label
    /// association while keeping the label histogram.
    pub fn shuffle_labels<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        match &mut self.targets {
            Targets::Classes(c) => c.shuffle(rng),
            Targets::Values(v) => {
                let mut idx: Vec<usize> = (0..v.rows()).collect();
                idx.shuffle(rng);
                *v = v.select_rows(&idx);
            }
        }
    }

    /// Standardizes each channel of CHW image rows with the given statistics.
    pub fn standardize_channels(&mut self, stats: &ChannelStats) -> Result<()> {
        let c = stats.mean.len();
        if c == 0 || self.meta.input_dim % c != 0 {
            return Err(Error::InvalidParameter(format!(
                "{} channels do not divide input_dim {}",
                c, self.meta.input_dim
            )));
        }
        let plane = self.meta.input_dim / c;
        for s in 0..self.len() {
            for (k, px) in self.inputs.row_mut(s).iter_mut().enumerate() {
                let ch = k / plane;
                *px = (*px - stats.mean[ch]) / stats.std[ch];
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-channel mean and standard deviation of CHW image rows.
pub fn channel_stats(ds: &Dataset, channels: usize) -> Result<ChannelStats> {
    if ds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if channels == 0 || ds.meta.input_dim % channels != 0 {
        return Err(Error::InvalidParameter(format!("bad channel count {channels}")));
    }
    let plane = ds.meta.input_dim / channels;
    let mut sum = vec![0.0; channels];
    let mut sq = vec![0.0; channels];
    for s in 0..ds.len() {
        for (k, &px) in ds.inputs.row(s).iter().enumerate() {
            sum[k / plane] += px;
            sq[k / plane] += px * px;
        }
    }
    let n = (ds.len() * plane) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / n - m * m).max(0.0).sqrt())
        .collect::<Vec<_>>();
    if std.contains(&0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(ChannelStats { mean, std })
}

/// Raw unsigned-byte IDX tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::Parse("IDX file shorter than its magic number".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 {
        return Err(Error::Parse(format!(
            "bad IDX magic {:02x}{:02x}{:02x}{:02x}; only unsigned-byte data is supported",
            bytes[0], bytes[1], bytes[2], bytes[3]
        )));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(Error::Parse("IDX file declares zero dimensions".into()));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Parse("IDX header truncated".into()));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|d| {
            let o = 4 + 4 * d;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Parse("IDX dimensions overflow".into()))?;
    let body = &bytes[header..];
    if body.len() != count {
        return Err(Error::Parse(format!(
            "IDX body holds {} bytes, header promises {count}",
            body.len()
        )));
    }
    Ok(IdxArray {
        dims,
        data: body.to_vec(),
    })
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    parse_idx(&fs::read(path)?)
}

pub fn write_idx(path: &Path, array: &IdxArray) -> Result<()> {
    let count: usize = array.dims.iter().product();
    if count != array.data.len() || array.dims.is_empty() || array.dims.len() > 255 {
        return Err(Error::InvalidParameter("IDX dims do not match data".into()));
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    f.write_all(&[0, 0, 0x08, array.dims.len() as u8])?;
    for &d in &array.dims {
        let d = u32::try_from(d).map_err(|_| Error::InvalidParameter("IDX dim exceeds u32".into()))?;
        f.write_all(&d.to_be_bytes())?;
    }
    f.write_all(&array.data)?;
    f.flush()?;
    Ok(())
}

/// Loads an IDX image/label pair, scaling pixels to `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path, split: Split, cap: Option<usize>) -> Result<Dataset> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    if img.dims.len() < 2 {
        return Err(Error::Parse("image IDX needs at least two dimensions".into()));
    }
    if lab.dims.len() != 1 {
        return Err(Error::Parse("label IDX must be one-dimensional".into()));
    }
    if img.dims[0] != lab.dims[0] {
        return Err(Error::ShapeMismatch {
            context: "IDX image/label count",
            expected: img.dims[0],
            found: lab.dims[0],
        });
    }
    let dim: usize = img.dims[1..].iter().product();
    let n = cap.map_or(img.dims[0], |c| c.min(img.dims[0]));
    let inputs = Matrix::from_vec(n, dim, img.data[..n * dim].iter().map(|&p| f64::from(p) / 255.0).collect())?;
    let labels: Vec<usize> = lab.data[..n].iter().map(|&l| usize::from(l)).collect();
    let class_count = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Dataset::new(
        inputs,
        Targets::Classes(labels),
        split,
        DatasetMeta {
            name: "mnist".into(),
            input_dim: dim,
            class_count,
            cap,
        },
    )
}

pub const CIFAR_IMAGE_BYTES: usize = 3072;

/// Loads CIFAR binary batches (`classes` = 10 or 100; for 100 the fine
/// label is used). Pixels are scaled to `[0, 1]` in CHW order.
pub fn load_cifar<P: AsRef<Path>>(paths: &[P], classes: usize, split: Split, cap: Option<usize>) -> Result<Dataset> {
    let label_bytes = match classes {
        10 => 1,
        100 => 2,
        _ => return Err(Error::InvalidParameter(format!("CIFAR has 10 or 100 classes, not {classes}"))),
    };
    let record = label_bytes + CIFAR_IMAGE_BYTES;
    let limit = cap.unwrap_or(usize::MAX);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        if labels.len() >= limit {
            break;
        }
        let bytes = fs::read(p.as_ref())?;
        if bytes.is_empty() || bytes.len() % record != 0 {
            return Err(Error::Parse(format!(
                "{}: {} bytes is not a whole number of {record}-byte records",
                p.as_ref().display(),
                bytes.len()
            )));
        }
        for rec in bytes.chunks_exact(record) {
            if labels.len() >= limit {
                break;
            }
            let label = usize::from(rec[label_bytes - 1]);
            if label >= classes {
                return Err(Error::Parse(format!("label {label} out of range")));
            }
            labels.push(label);
            pixels.extend(rec[label_bytes..].iter().map(|&b| f64::from(b) / 255.0));
        }
    }
    let n = labels.len();
    Dataset::new(
        Matrix::from_vec(n, CIFAR_IMAGE_BYTES, pixels)?,
        Targets::Classes(labels),
        split,
        DatasetMeta {
            name: format!("cifar{classes}"),
            input_dim: CIFAR_IMAGE_BYTES,
            class_count: classes,
            cap,
        },
    )
}

const SIDE: usize = 32;
const CHANNELS: usize = 3;
pub const CROP_PAD: usize = 4;

fn check_image(image: &[f64]) -> Result<()> {
    if image.len() != CIFAR_IMAGE_BYTES {
        return Err(Error::ShapeMismatch {
            context: "augment image",
            expected: CIFAR_IMAGE_BYTES,
            found: image.len(),
        });
    }
    Ok(())
}

/// Mirrors a 3×32×32 CHW image left to right.
pub fn flip_horizontal(image: &[f64]) -> Result<Vec<f64>> {
    check_image(image)?;
    let mut out = vec![0.0; image.len()];
    for (src, dst) in image.chunks_exact(SIDE).zip(out.chunks_exact_mut(SIDE)) {
        for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
            *d = *s;
        }
    }
    Ok(out)
}

/// Crops a 32×32 window at `(dy, dx)` out of the image zero-padded by
/// [`CROP_PAD`] pixels on every side; `(4, 4)` returns the image unchanged.
pub fn crop_padded(image: &[f64], dy: usize, dx: usize) -> Result<Vec<f64>> {
    check_image(image)?;
    if dy > 2 * CROP_PAD || dx > 2 * CROP_PAD {
        return Err(Error::InvalidParameter(format!("crop offset ({dy}, {dx}) out of range")));
    }
    let mut out = vec![0.0; image.len()];
    for c in 0..CHANNELS {
        for y in 0..SIDE {
            let sy = y + dy;
            if !(CROP_PAD..SIDE + CROP_PAD).contains(&sy) {
                continue;
            }
            for x in 0..SIDE {
                let sx = x + dx;
                if !(CROP_PAD..SIDE + CROP_PAD).contains(&sx) {
                    continue;
                }
                out[(c * SIDE + y) * SIDE + x] = image[(c * SIDE + sy - CROP_PAD) * SIDE + sx - CROP_PAD];
            }
        }
    }
    Ok(out)
}

/// Random horizontal flip (p = 0.5) followed by a random padded crop.
pub fn augment<R: Rng + ?Sized>(image: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    check_image(image)?;
    let flip = rng.random_bool(0.5);
    let dy = rng.random_range(0..=2 * CROP_PAD);
    let dx = rng.random_range(0..=2 * CROP_PAD);
    let base = if flip { flip_horizontal(image)? } else { image.to_vec() };
    crop_padded(&base, dy, dx)
}

/// Augments every row of a CIFAR batch in place.
pub fn augment_rows<R: Rng + ?Sized>(batch: &mut Matrix, rng: &mut R) -> Result<()> {
    for s in 0..batch.rows() {
        let out = augment(batch.row(s), rng)?;
        batch.row_mut(s).copy_from_slice(&out);
    }
    Ok(())
}

pub const TEACHER_WIDTHS: [usize; 4] = [2, 2, 2, 1];
pub const TEACHER_SAMPLES: usize = 100;
pub const TEACHER_SLOPE: f64 = 0.01;

/// A fixed random teacher network and its input/output pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTask {
    pub teacher: NetworkState,
    pub inputs: Matrix,
    pub targets: Matrix,
}

impl TeacherTask {
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::new(
            self.inputs.clone(),
            Targets::Values(self.targets.clone()),
            Split::Train,
            DatasetMeta {
                name: "teacher".into(),
                input_dim: self.inputs.cols(),
                class_count: 0,
                cap: None,
            },
        )
    }
}

/// 2-2-2-1 leaky-ReLU teacher with 100 standard-normal inputs. The teacher
/// draws from its own named streams so a student built from the same seed
/// does not start at the teacher's weights.
pub fn make_teacher_task(seed: u64) -> Result<TeacherTask> {
    let teacher = init_weights(
        &TEACHER_WIDTHS,
        Activation::LeakyRelu { slope: TEACHER_SLOPE },
        Activation::Linear,
        &mut named_rng(seed, "teacher-weights"),
    )?;
    let mut rng = named_rng(seed, "teacher-inputs");
    let inputs = Matrix::from_fn(TEACHER_SAMPLES, TEACHER_WIDTHS[0], |_, _| {
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    let targets = forward_batch(&teacher, &inputs, None)?.output().clone();
    Ok(TeacherTask {
        teacher,
        inputs,
        targets,
    })
}
