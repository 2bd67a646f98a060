//! Data generation and ingestion: the norm-regression task, a synthetic
//! Gaussian-cluster classification task (the CI-friendly stand-in for image
//! data), the MNIST IDX loader, and tokenizers.

use crate::error::{Error, Result};
use crate::tensor::{frobenius_norm, sample_gaussian, Matrix, RngStream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_SIDE: usize = 28;
pub const MNIST_PIXELS: usize = MNIST_SIDE * MNIST_SIDE;

/// Regression task: inputs are vectors with i.i.d. `N(0, coord_std^2)`
/// coordinates, tokenized row-major into an `m x d` matrix; the target is the
/// Euclidean norm of the vector.
#[derive(Clone, Debug, PartialEq)]
pub struct NormTaskConfig {
    pub input_dim: usize,
    /// Tokens per input, `m`.
    pub tokens: usize,
    /// Token dimension, `d`.
    pub token_dim: usize,
    /// Per-coordinate std of the source distribution.
    pub coord_std: f64,
    /// Examples generated per batch.
    pub batch_size: usize,
}

impl NormTaskConfig {
    /// Default source std is sqrt(5) per coordinate.
    pub fn new(
        input_dim: usize,
        tokens: usize,
        token_dim: usize,
        batch_size: usize,
    ) -> Result<NormTaskConfig> {
        if tokens * token_dim != input_dim {
            return Err(Error::InvalidConfig {
                message: format!(
                    "token shape {tokens}x{token_dim} does not cover input dim {input_dim}"
                ),
            });
        }
        if batch_size < 1 {
            return Err(Error::InvalidConfig {
                message: "batch size must be >= 1".to_string(),
            });
        }
        Ok(NormTaskConfig {
            input_dim,
            tokens,
            token_dim,
            coord_std: 5.0_f64.sqrt(),
            batch_size,
        })
    }

    /// Exact expected target: for `X ~ N(0, sigma^2 I_D)`, `|X|` follows a
    /// scaled chi distribution with mean
    /// `sigma * sqrt(2) * Gamma((D + 1) / 2) / Gamma(D / 2)`.
    pub fn mean_norm(&self) -> f64 {
        self.coord_std * 2.0_f64.sqrt() * gamma_half_ratio(self.input_dim)
    }
}

/// `Gamma((d + 1) / 2) / Gamma(d / 2)` for integer `d >= 1`, by walking the
/// recurrence `Gamma(x + 1) = x Gamma(x)` down to `Gamma(1) = 1` and
/// `Gamma(1/2) = sqrt(pi)`.
fn gamma_half_ratio(d: usize) -> f64 {
    let gamma_of_half_int = |mut twice_x: usize| -> f64 {
        // argument is twice_x / 2
        let mut acc = if twice_x.is_multiple_of(2) {
            1.0 // Gamma(1)
        } else {
            std::f64::consts::PI.sqrt() // Gamma(1/2)
        };
        let base = if twice_x.is_multiple_of(2) { 2 } else { 1 };
        while twice_x > base {
            twice_x -= 2;
            acc *= twice_x as f64 / 2.0;
        }
        acc
    };
    gamma_of_half_int(d + 1) / gamma_of_half_int(d)
}

/// Reshape a length-`m*d` vector into an `m x d` token matrix, row-major:
/// row `i` holds coordinates `[i*d, (i+1)*d)`.
pub fn tokenize_vector(v: &[f64], tokens: usize, token_dim: usize) -> Result<Matrix> {
    if v.len() != tokens * token_dim {
        return Err(Error::LengthMismatch {
            op: "tokenize_vector",
            expected: tokens * token_dim,
            got: v.len(),
        });
    }
    Matrix::from_vec(tokens, token_dim, v.to_vec())
}

/// One batch of the norm task. Targets equal the Frobenius norm of the
/// emitted token matrix exactly (tokenization preserves the entries).
pub fn gen_norm_batch(
    cfg: &NormTaskConfig,
    stream: &mut RngStream,
) -> Result<(Vec<Matrix>, Vec<f64>)> {
    let mut inputs = Vec::with_capacity(cfg.batch_size);
    let mut targets = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let x = sample_gaussian(stream, cfg.tokens, cfg.token_dim, 0.0, cfg.coord_std)?;
        targets.push(frobenius_norm(&x));
        inputs.push(x);
    }
    Ok((inputs, targets))
}

/// Classification task: class `c` samples are `means[c] + N(0, std^2)` noise.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterTaskConfig {
    /// Per-class mean token matrices; all `tokens x token_dim`.
    pub means: Vec<Matrix>,
    pub within_class_std: f64,
    pub train_size: usize,
    pub test_size: usize,
}

impl ClusterTaskConfig {
    /// Draw per-class means with i.i.d. `N(0, mean_scale^2)` entries.
    #[allow(clippy::too_many_arguments)]
    pub fn with_random_means(
        classes: usize,
        tokens: usize,
        token_dim: usize,
        mean_scale: f64,
        within_class_std: f64,
        train_size: usize,
        test_size: usize,
        stream: &mut RngStream,
    ) -> Result<ClusterTaskConfig> {
        if classes < 2 {
            return Err(Error::InvalidConfig {
                message: "cluster task needs at least 2 classes".to_string(),
            });
        }
        let means = (0..classes)
            .map(|_| sample_gaussian(stream, tokens, token_dim, 0.0, mean_scale))
            .collect::<Result<Vec<_>>>()?;
        let cfg = ClusterTaskConfig {
            means,
            within_class_std,
            train_size,
            test_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.len() < 2 {
            return Err(Error::InvalidConfig {
                message: "cluster task needs at least 2 classes".to_string(),
            });
        }
        let shape = self.means[0].shape();
        for m in &self.means[1..] {
            if m.shape() != shape {
                return Err(Error::InvalidConfig {
                    message: "class means must share one token shape".to_string(),
                });
            }
        }
        for a in 0..self.means.len() {
            for b in a + 1..self.means.len() {
                if self.means[a] == self.means[b] {
                    return Err(Error::InvalidConfig {
                        message: format!("class means {a} and {b} coincide"),
                    });
                }
            }
        }
        if self.train_size < 1 || self.test_size < 1 {
            return Err(Error::InvalidConfig {
                message: "train and test sizes must be >= 1".to_string(),
            });
        }
        if self.within_class_std < 0.0 {
            return Err(Error::NegativeStd {
                std: self.within_class_std,
            });
        }
        Ok(())
    }
}

fn gen_cluster_split(
    cfg: &ClusterTaskConfig,
    size: usize,
    stream: &mut RngStream,
) -> Result<Vec<(Matrix, usize)>> {
    let (m, d) = cfg.means[0].shape();
    let mut out = Vec::with_capacity(size);
    for i in 0..size {
        let label = i % cfg.classes(); // balanced up to +-1 by construction
        let noise = sample_gaussian(stream, m, d, 0.0, cfg.within_class_std)?;
        out.push((cfg.means[label].add(&noise)?, label));
    }
    Ok(out)
}

/// Labeled examples: one token matrix and its class per entry.
pub type LabeledSet = Vec<(Matrix, usize)>;

/// Class-balanced labeled train/test sets.
pub fn gen_cluster_dataset(
    cfg: &ClusterTaskConfig,
    stream: &mut RngStream,
) -> Result<(LabeledSet, LabeledSet)> {
    cfg.validate()?;
    let train = gen_cluster_split(cfg, cfg.train_size, &mut stream.fork("train"))?;
    let test = gen_cluster_split(cfg, cfg.test_size, &mut stream.fork("test"))?;
    Ok((train, test))
}

/// Loaded MNIST-style images and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct MnistStore {
    /// `count * 784` pixel bytes, row-major per image.
    images: Vec<u8>,
    labels: Vec<u8>,
}

impl MnistStore {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Pixels of image `i`, 784 bytes.
    pub fn image(&self, i: usize) -> &[u8] {
        &self.images[i * MNIST_PIXELS..(i + 1) * MNIST_PIXELS]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::IdxTruncated {
            needed: end,
            got: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parse an IDX image payload: big-endian magic 0x00000803, then
/// (count, rows, cols) as big-endian u32, then `count*rows*cols` pixel bytes.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, Vec<u8>)> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxWrongMagic {
            expected: IDX_IMAGES_MAGIC,
            got: magic,
        });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    if rows != MNIST_SIDE || cols != MNIST_SIDE {
        return Err(Error::InvalidConfig {
            message: format!("expected 28x28 images, got {rows}x{cols}"),
        });
    }
    let needed = 16 + count * rows * cols;
    if bytes.len() < needed {
        return Err(Error::IdxTruncated {
            needed,
            got: bytes.len(),
        });
    }
    Ok((count, bytes[16..needed].to_vec()))
}

/// Parse an IDX label payload: big-endian magic 0x00000801, then count,
/// then one label byte per item.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxWrongMagic {
            expected: IDX_LABELS_MAGIC,
            got: magic,
        });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(Error::IdxTruncated {
            needed,
            got: bytes.len(),
        });
    }
    Ok(bytes[8..needed].to_vec())
}

/// Encode images in the IDX format (the exact inverse of [`parse_idx_images`]).
pub fn encode_idx_images(images: &[u8]) -> Vec<u8> {
    assert!(images.len().is_multiple_of(MNIST_PIXELS), "partial image payload");
    let count = (images.len() / MNIST_PIXELS) as u32;
    let mut out = Vec::with_capacity(16 + images.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&count.to_be_bytes());
    out.extend_from_slice(&(MNIST_SIDE as u32).to_be_bytes());
    out.extend_from_slice(&(MNIST_SIDE as u32).to_be_bytes());
    out.extend_from_slice(images);
    out
}

/// Encode labels in the IDX format (the exact inverse of [`parse_idx_labels`]).
pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Load an image/label IDX pair from disk; the two counts must match.
pub fn load_mnist_idx(
    images_path: &std::path::Path,
    labels_path: &std::path::Path,
) -> Result<MnistStore> {
    let image_bytes = std::fs::read(images_path)?;
    let label_bytes = std::fs::read(labels_path)?;
    let (image_count, images) = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if image_count != labels.len() {
        return Err(Error::IdxCountMismatch {
            images: image_count,
            labels: labels.len(),
        });
    }
    Ok(MnistStore { images, labels })
}

/// Split a 28x28 image into quadrants (top-left, top-right, bottom-left,
/// bottom-right), each flattened row-major to 196 values: a `4 x 196` token
/// matrix. With `normalize`, pixels scale from [0, 255] to [0, 1].
pub fn patchify_image(pixels: &[u8], normalize: bool) -> Result<Matrix> {
    if pixels.len() != MNIST_PIXELS {
        return Err(Error::LengthMismatch {
            op: "patchify_image",
            expected: MNIST_PIXELS,
            got: pixels.len(),
        });
    }
    let half = MNIST_SIDE / 2;
    let scale = if normalize { 1.0 / 255.0 } else { 1.0 };
    let mut out = Matrix::zeros(4, half * half);
    for (patch, (r0, c0)) in [(0, 0), (0, half), (half, 0), (half, half)]
        .into_iter()
        .enumerate()
    {
        let row = out.row_mut(patch);
        for r in 0..half {
            for c in 0..half {
                row[r * half + c] = f64::from(pixels[(r0 + r) * MNIST_SIDE + (c0 + c)]) * scale;
            }
        }
    }
    Ok(out)
}

/// Tokenized, labeled view of an [`MnistStore`].
pub fn patchify_store(store: &MnistStore, normalize: bool) -> Result<Vec<(Matrix, usize)>> {
    (0..store.len())
        .map(|i| Ok((patchify_image(store.image(i), normalize)?, store.label(i))))
        .collect()
}
