//! Visual features, the identity head and the feature cache format.

use std::collections::HashSet;
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, LoadError, Result};
use crate::numerics::{softmax_slice, Matrix, Tape, Var};
use crate::rng::{uniform_matrix, SeededRng};

pub const FEATURE_MAGIC: &[u8; 8] = b"ZFEAT001";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    Cached,
    Extracted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeature {
    pub z: Vec<f64>,
    pub source: FeatureSource,
}

/// A `channels × height × width` activation map, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(
                "feature map",
                (channels, height * width),
                (data.len(), 1),
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn get(&self, ch: usize, y: usize, x: usize) -> f64 {
        self.data[(ch * self.height + y) * self.width + x]
    }
}

/// Per-channel maximum over the spatial grid.
pub fn global_max_pool(map: &FeatureMap) -> Result<Vec<f64>> {
    let spatial = map.height * map.width;
    if spatial == 0 {
        return Err(Error::Contract("global max pool over an empty spatial grid".into()));
    }
    Ok(map
        .data
        .chunks_exact(spatial)
        .map(|ch| ch.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

/// Raw input grid for the built-in extractor; same layout as [`FeatureMap`].
pub type ImageGrid = FeatureMap;

/// One `k×k` valid convolution to `d` channels, ReLU, then global max
/// pooling. Convolution runs as `patches · W + b` over an im2col matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyExtractor {
    pub in_channels: usize,
    pub kernel: usize,
    /// `(in_channels·k·k) × d`
    pub weight: Matrix,
    /// `1 × d`
    pub bias: Matrix,
}

impl TinyExtractor {
    pub fn init(in_channels: usize, kernel: usize, d: usize, rng: &mut SeededRng) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            in_channels,
            kernel,
            weight: uniform_matrix(rng, fan_in, d, 1.0 / (fan_in as f64).sqrt()),
            bias: Matrix::zeros(1, d),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Rows are output positions, columns are `(channel, dy, dx)` taps.
    pub fn im2col(&self, image: &ImageGrid) -> Result<Matrix> {
        let k = self.kernel;
        if image.channels != self.in_channels {
            return Err(Error::shape(
                "tiny extractor channels",
                (self.in_channels, 1),
                (image.channels, 1),
            ));
        }
        if image.height < k || image.width < k {
            return Err(Error::Contract(format!(
                "image {}x{} smaller than kernel {k}",
                image.height, image.width
            )));
        }
        let oh = image.height - k + 1;
        let ow = image.width - k + 1;
        let taps = self.in_channels * k * k;
        let mut out = Matrix::zeros(oh * ow, taps);
        for y in 0..oh {
            for x in 0..ow {
                let row = out.row_mut(y * ow + x);
                let mut t = 0;
                for ch in 0..self.in_channels {
                    for dy in 0..k {
                        for dx in 0..k {
                            row[t] = image.get(ch, y + dy, x + dx);
                            t += 1;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Records `GMP(ReLU(patches · W + b))` and returns the `1×d` row.
    pub fn forward_tape(&self, tape: &mut Tape, weight: Var, bias: Var, image: &ImageGrid) -> Result<Var> {
        let patches = tape.leaf(self.im2col(image)?);
        let conv = tape.matmul(patches, weight)?;
        let conv = tape.add_row(conv, bias)?;
        let act = tape.relu(conv);
        tape.column_max(act)
    }

    pub fn extract(&self, image: &ImageGrid) -> Result<VisualFeature> {
        let mut tape = Tape::new();
        let w = tape.leaf(self.weight.clone());
        let b = tape.leaf(self.bias.clone());
        let out = self.forward_tape(&mut tape, w, b, image)?;
        Ok(VisualFeature {
            z: tape.value(out).as_slice().to_vec(),
            source: FeatureSource::Extracted,
        })
    }
}

/// Linear map from `[z ∥ ŷ]` (length `d + c`) to identity logits.
#[derive(Debug, Clone, PartialEq)]
pub struct IdHead {
    /// `(d + c) × n_identities`
    pub weight: Matrix,
    /// `1 × n_identities`
    pub bias: Matrix,
}

impl IdHead {
    pub fn zeros(input_dim: usize, n_identities: usize) -> Self {
        Self {
            weight: Matrix::zeros(input_dim, n_identities),
            bias: Matrix::zeros(1, n_identities),
        }
    }

    pub fn init(input_dim: usize, n_identities: usize, rng: &mut SeededRng) -> Self {
        Self {
            weight: uniform_matrix(rng, input_dim, n_identities, 1.0 / (input_dim as f64).sqrt()),
            bias: Matrix::zeros(1, n_identities),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn num_identities(&self) -> usize {
        self.weight.cols()
    }
}

/// `[z ∥ ŷ]`.
pub fn fused_descriptor(z: &[f64], y_hat: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(z.len() + y_hat.len());
    out.extend_from_slice(z);
    out.extend_from_slice(y_hat);
    out
}

/// Pre-softmax identity scores `W[z∥ŷ] + b`.
pub fn identity_scores(z: &[f64], y_hat: &[f64], head: &IdHead) -> Result<Vec<f64>> {
    let x = fused_descriptor(z, y_hat);
    if x.len() != head.input_dim() {
        return Err(Error::shape(
            "identity_logits",
            head.weight.shape(),
            (1, x.len()),
        ));
    }
    let out = Matrix::row_vector(&x).matmul(&head.weight)?.add(&head.bias)?;
    Ok(out.into_vec())
}

/// `p = softmax(W[z∥ŷ] + b)`.
pub fn identity_logits(z: &[f64], y_hat: &[f64], head: &IdHead) -> Result<Vec<f64>> {
    Ok(softmax_slice(&identity_scores(z, y_hat, head)?))
}

/// `L = L_att + λ·L_id`.
pub fn total_loss(l_att: f64, l_id: f64, lambda: f64) -> Result<f64> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::Contract(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(l_att + lambda * l_id)
}

/// Feature cache: `(image_id, z)` pairs of a fixed dimensionality, stored
/// as `f32` on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    pub dim: usize,
    pub entries: Vec<(u32, Vec<f64>)>,
}

impl FeatureCache {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, image_id: u32, z: Vec<f64>) -> Result<()> {
        if z.len() != self.dim {
            return Err(Error::shape("feature cache", (self.dim, 1), (z.len(), 1)));
        }
        self.entries.push((image_id, z));
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(FEATURE_MAGIC);
        w.u32(self.dim as u32);
        w.u32(self.entries.len() as u32);
        for (id, z) in &self.entries {
            w.u32(*id);
            for &v in z {
                w.f32(v as f32);
            }
        }
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, LoadError> {
        let mut r = Reader::new(buf);
        r.magic(FEATURE_MAGIC)?;
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        let mut seen = HashSet::new();
        for _ in 0..count {
            let id = r.u32()?;
            if !seen.insert(id) {
                return Err(LoadError::Invalid(format!("duplicate image id {id}")));
            }
            let mut z = Vec::with_capacity(dim);
            for _ in 0..dim {
                z.push(r.f32()? as f64);
            }
            entries.push((id, z));
        }
        r.finish(|| format!("d={dim}, count={count}"))?;
        Ok(Self { dim, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&buf)?)
    }
}
