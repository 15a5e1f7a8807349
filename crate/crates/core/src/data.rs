//! Synthetic image datasets, raw image ingestion, and ground-truth quality
//! metrics (PSNR and the seeded random-projection perceptual score).

use crate::checkpoint::fnv1a;
use crate::error::{Error, Result};
use crate::rng::{purpose, stream_rng};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

/// A source sample: `channels x height x width` reals in `[0,1]`,
/// channel-first row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "image needs {} pixels for {}x{}x{}, got {}",
                channels * height * width,
                channels,
                height,
                width,
                pixels.len()
            )));
        }
        if pixels.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Domain("pixel value outside [0,1]".into()));
        }
        Ok(Image { channels, height, width, pixels })
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.channels == other.channels
            && self.height == other.height
            && self.width == other.width
    }

    /// Hash of the exact bit pattern, used for split disjointness checks.
    pub fn content_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.pixels.len() * 8);
        for &p in &self.pixels {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        fnv1a(&bytes)
    }
}

/// Role of a dataset split; splits use disjoint generator streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRole {
    CodecTrain,
    AgentTrain,
    Test,
}

impl SplitRole {
    pub fn tag(self) -> &'static str {
        match self {
            SplitRole::CodecTrain => "codec_train",
            SplitRole::AgentTrain => "agent_train",
            SplitRole::Test => "test",
        }
    }

    fn stream_offset(self) -> u64 {
        match self {
            SplitRole::CodecTrain => 0,
            SplitRole::AgentTrain => 1 << 32,
            SplitRole::Test => 2 << 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub role: SplitRole,
    pub images: Vec<Image>,
    pub seed: u64,
}

/// Deterministic synthetic image: a clipped sum of 2-4 Gaussian blobs, one
/// 2-D sinusoid, and low-amplitude pixel noise.
pub fn generate_image(seed: u64, index: u64, c: usize, h: usize, w: usize) -> Image {
    let mut rng = stream_rng(seed, purpose::DATA_GEN, index);
    let n_blobs = rng.random_range(2..=4usize);
    struct Blob {
        cx: f64,
        cy: f64,
        radius: f64,
        amp: f64,
    }
    let blobs: Vec<Blob> = (0..n_blobs)
        .map(|_| Blob {
            cx: rng.random_range(0.0..1.0),
            cy: rng.random_range(0.0..1.0),
            radius: rng.random_range(0.05..0.45),
            amp: rng.random_range(0.15..1.0),
        })
        .collect();
    let freq_x = rng.random_range(0.5..4.0);
    let freq_y = rng.random_range(0.5..4.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let sin_amp = rng.random_range(0.03..0.30);
    let channel_gain: Vec<f64> = (0..c).map(|_| rng.random_range(0.7..1.0)).collect();
    let noise = Normal::new(0.0, 0.02).unwrap();

    let mut pixels = vec![0.0; c * h * w];
    for ch in 0..c {
        for row in 0..h {
            let y = (row as f64 + 0.5) / h as f64;
            for col in 0..w {
                let x = (col as f64 + 0.5) / w as f64;
                let mut v = 0.12;
                for b in &blobs {
                    let d2 = (x - b.cx).powi(2) + (y - b.cy).powi(2);
                    v += b.amp * (-d2 / (2.0 * b.radius * b.radius)).exp();
                }
                v += sin_amp
                    * (std::f64::consts::TAU * (freq_x * x + freq_y * y) + phase).sin();
                v = v * channel_gain[ch] + noise.sample(&mut rng);
                pixels[(ch * h + row) * w + col] = v.clamp(0.0, 1.0);
            }
        }
    }
    Image { channels: c, height: h, width: w, pixels }
}

/// Generate a split; each image's stream index is offset by the role so roles
/// never collide even under the same master seed.
pub fn generate_split(role: SplitRole, count: usize, seed: u64, c: usize, h: usize, w: usize) -> DatasetSplit {
    let images = (0..count as u64)
        .map(|i| generate_image(seed, role.stream_offset() + i, c, h, w))
        .collect();
    DatasetSplit { role, images, seed }
}

/// Generate all three splits and verify they share no identical image.
pub fn generate_splits(
    seed: u64,
    sizes: (usize, usize, usize),
    c: usize,
    h: usize,
    w: usize,
) -> Result<(DatasetSplit, DatasetSplit, DatasetSplit)> {
    let codec = generate_split(SplitRole::CodecTrain, sizes.0, seed, c, h, w);
    let agent = generate_split(SplitRole::AgentTrain, sizes.1, seed, c, h, w);
    let test = generate_split(SplitRole::Test, sizes.2, seed, c, h, w);
    let mut seen = HashSet::new();
    for split in [&codec, &agent, &test] {
        for img in &split.images {
            if !seen.insert(img.content_hash()) {
                return Err(Error::Domain(format!(
                    "duplicate image across splits (hash collision in {})",
                    split.role.tag()
                )));
            }
        }
    }
    Ok((codec, agent, test))
}

/// Write a split in the raw byte format:
/// `JS3C-IMGS v1 <count> <c> <h> <w>\n` then `count*c*h*w` u8 pixels.
pub fn save_raw_images(path: &Path, images: &[Image]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::Usage("cannot save an empty image list".into()));
    }
    let (c, h, w) = (images[0].channels, images[0].height, images[0].width);
    let mut f = fs::File::create(path)?;
    writeln!(f, "JS3C-IMGS v1 {} {} {} {}", images.len(), c, h, w)?;
    let mut buf = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if img.channels != c || img.height != h || img.width != w {
            return Err(Error::Dimension("mixed image dimensions in one file".into()));
        }
        for &p in img.pixels() {
            buf.push((p * 255.0).round() as u8);
        }
    }
    f.write_all(&buf)?;
    Ok(())
}

/// Read the raw byte format back; bytes scale to `[0,1]` as `b / 255`.
pub fn load_raw_images(path: &Path, c: usize, h: usize, w: usize) -> Result<Vec<Image>> {
    let file = fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let header_len = header.len() as u64;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 6 || fields[0] != "JS3C-IMGS" || fields[1] != "v1" {
        return Err(Error::Ingestion { offset: 0, msg: format!("bad header: {}", header.trim()) });
    }
    let parse = |s: &str, what: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Ingestion { offset: 0, msg: format!("bad {what}: {s}") })
    };
    let count = parse(fields[2], "count")?;
    let (fc, fh, fw) = (parse(fields[3], "c")?, parse(fields[4], "h")?, parse(fields[5], "w")?);
    if (fc, fh, fw) != (c, h, w) {
        return Err(Error::Dimension(format!(
            "file holds {fc}x{fh}x{fw} images, expected {c}x{h}x{w}"
        )));
    }
    let per_image = c * h * w;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != count * per_image {
        let offset = header_len + bytes.len() as u64;
        return Err(Error::Ingestion {
            offset,
            msg: format!(
                "expected {} pixel bytes for {count} images, found {}",
                count * per_image,
                bytes.len()
            ),
        });
    }
    let images = bytes
        .chunks_exact(per_image)
        .map(|chunk| {
            let pixels = chunk.iter().map(|&b| b as f64 / 255.0).collect();
            Image { channels: c, height: h, width: w, pixels }
        })
        .collect();
    Ok(images)
}

/// Peak signal-to-noise ratio in dB with peak value 1, capped at 99 dB.
pub fn psnr(p: &Image, q: &Image) -> Result<f64> {
    if !p.same_dims(q) {
        return Err(Error::Dimension("psnr on images of different dimensions".into()));
    }
    let mse: f64 = p
        .pixels()
        .iter()
        .zip(q.pixels())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        / p.len() as f64;
    if mse == 0.0 {
        return Ok(99.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(99.0))
}

/// Seeded random-projection perceptual score: bounded `[0,1)`, lower is
/// better, zero only for identical projections. Stands in for a learned
/// perceptual metric while staying deterministic.
#[derive(Debug, Clone)]
pub struct PerceptualProjector {
    pub seed: u64,
    pub feature_count: usize,
    input_dim: usize,
    /// `[feature_count, input_dim]`, rows unit-norm.
    projection: Vec<f64>,
}

impl PerceptualProjector {
    pub fn new(seed: u64, feature_count: usize, c: usize, h: usize, w: usize) -> Self {
        let input_dim = c * h * w;
        let mut rng = stream_rng(seed, purpose::PROJECTOR, 0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut projection = vec![0.0; feature_count * input_dim];
        for row in projection.chunks_exact_mut(input_dim) {
            let mut norm2: f64 = 0.0;
            for v in row.iter_mut() {
                *v = normal.sample(&mut rng);
                norm2 += *v * *v;
            }
            let inv = 1.0 / norm2.sqrt();
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        PerceptualProjector { seed, feature_count, input_dim, projection }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// `1 - exp(-||P(p - q)|| / sqrt(F))`.
    pub fn score(&self, p: &Image, q: &Image) -> Result<f64> {
        if !p.same_dims(q) || p.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "projector built for {} pixels, images have {} and {}",
                self.input_dim,
                p.len(),
                q.len()
            )));
        }
        let diff: Vec<f64> = p.pixels().iter().zip(q.pixels()).map(|(&a, &b)| a - b).collect();
        let mut dist2 = 0.0;
        for row in self.projection.chunks_exact(self.input_dim) {
            let mut acc = 0.0;
            for (&r, &d) in row.iter().zip(&diff) {
                acc += r * d;
            }
            dist2 += acc * acc;
        }
        let d = dist2.sqrt() / (self.feature_count as f64).sqrt();
        Ok(1.0 - (-d).exp())
    }

    /// Row unit-norm invariant, exposed for tests.
    pub fn max_row_norm_error(&self) -> f64 {
        self.projection
            .chunks_exact(self.input_dim)
            .map(|row| (row.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}
