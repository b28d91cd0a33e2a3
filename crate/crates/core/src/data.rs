//! Dataset generation, file formats, augmentation, and batch sampling.
//!
//! Two dataset families are supported. Feature datasets are plain vectors
//! plus labels, stored as CSV, and are what the synthetic benchmark uses.
//! Raster datasets are small square 8-bit grayscale images (background 255,
//! ink 0), stored in a little-endian binary format (magic `SKB1`), and feed
//! the encoder through a crop-flatten-rescale bridge.
//!
//! Augmentation follows the usual sketch recipe: a random affine
//! (translate + shear), a bounded random rotation, a horizontal flip, and
//! per-pixel jitter. The geometric steps compose into a single
//! nearest-neighbor resampling pass so repeated interpolation does not
//! stack up error.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;

/// Square grayscale images with labels; background is 255, ink is 0.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterDataset {
    pixels: Vec<u8>,
    side: usize,
    labels: Vec<usize>,
    num_classes: usize,
    /// Optional display names; not part of the file format.
    pub class_names: Option<Vec<String>>,
}

impl RasterDataset {
    pub fn new(
        pixels: Vec<u8>,
        h: usize,
        w: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if h != w {
            return Err(Error::NotSquare { h, w });
        }
        if labels.is_empty() {
            return Err(Error::EmptyInput("raster dataset labels"));
        }
        if pixels.len() != labels.len() * h * w {
            return Err(Error::ShapeMismatch {
                context: "raster pixel buffer",
            });
        }
        if num_classes == 0 || num_classes > 256 {
            return Err(Error::InvalidConfig(format!(
                "raster class count must lie in 1..=256, got {num_classes}"
            )));
        }
        for &label in &labels {
            if label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: num_classes,
                });
            }
        }
        Ok(RasterDataset {
            pixels,
            side: h,
            labels,
            num_classes,
            class_names: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let px = self.side * self.side;
        &self.pixels[i * px..(i + 1) * px]
    }
}

/// Plain feature vectors with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    vectors: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl FeatureDataset {
    pub fn new(vectors: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if vectors.rows() == 0 {
            return Err(Error::EmptyInput("feature dataset"));
        }
        if labels.len() != vectors.rows() {
            return Err(Error::DimensionMismatch {
                context: "feature dataset labels",
                expected: vectors.rows(),
                got: labels.len(),
            });
        }
        if !vectors.is_finite() {
            return Err(Error::InvalidConfig(
                "feature dataset contains non-finite values".into(),
            ));
        }
        if num_classes == 0 {
            return Err(Error::InvalidConfig("class count must be positive".into()));
        }
        for &label in &labels {
            if label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: num_classes,
                });
            }
        }
        Ok(FeatureDataset {
            vectors,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    /// Rows of `indices` stacked into a new matrix with matching labels.
    pub fn select(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        let mut m = Matrix::zeros(indices.len(), self.dim());
        let mut labels = Vec::with_capacity(indices.len());
        for (k, &i) in indices.iter().enumerate() {
            m.row_mut(k).copy_from_slice(self.vectors.row(i));
            labels.push(self.labels[i]);
        }
        (m, labels)
    }
}

/// Knobs for the augmentation pipeline.
#[derive(Clone, Copy, Debug)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Rotation drawn uniformly from [-rotation_max_deg, +rotation_max_deg].
    pub rotation_max_deg: f64,
    pub hflip_prob: f64,
    /// Translation per axis drawn from +/- this fraction of the side length.
    pub translate_frac: f64,
    /// Horizontal shear angle drawn from +/- this many degrees.
    pub shear_max_deg: f64,
    /// Per-pixel additive jitter drawn from [-amplitude, +amplitude].
    pub jitter_amplitude: u8,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            rotation_max_deg: 10.0,
            hflip_prob: 0.5,
            translate_frac: 0.05,
            shear_max_deg: 5.0,
            jitter_amplitude: 8,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rotation_max_deg < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "rotation bound must be non-negative, got {}",
                self.rotation_max_deg
            )));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::InvalidConfig(format!(
                "flip probability must lie in [0, 1], got {}",
                self.hflip_prob
            )));
        }
        if self.translate_frac < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "translation fraction must be non-negative, got {}",
                self.translate_frac
            )));
        }
        if self.shear_max_deg < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "shear bound must be non-negative, got {}",
                self.shear_max_deg
            )));
        }
        Ok(())
    }
}

const BACKGROUND: u8 = 255;

/// Applies the augmentation chain to one square image.
///
/// Draw order is fixed: translation x, translation y, shear, rotation,
/// flip, then one jitter draw per pixel in row-major order. With
/// `enabled = false` the image is returned unchanged and the rng is left
/// untouched.
pub fn augment(
    pixels: &[u8],
    h: usize,
    w: usize,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Result<Vec<u8>> {
    if h != w {
        return Err(Error::NotSquare { h, w });
    }
    if pixels.len() != h * w {
        return Err(Error::ShapeMismatch {
            context: "augment pixel buffer",
        });
    }
    cfg.validate()?;
    if !cfg.enabled {
        return Ok(pixels.to_vec());
    }
    let side = h;
    let center = (side as f64 - 1.0) / 2.0;
    let bound = cfg.translate_frac * side as f64;
    let dx = rng.uniform(-bound, bound);
    let dy = rng.uniform(-bound, bound);
    let shear = rng
        .uniform(-cfg.shear_max_deg, cfg.shear_max_deg)
        .to_radians()
        .tan();
    let theta = rng
        .uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg)
        .to_radians();
    let flip = rng.next_f64() < cfg.hflip_prob;

    // Forward geometry is affine (shear about the center, then translate)
    // followed by rotation about the center; each output pixel pulls from
    // the inverse-mapped source location.
    let (sin_t, cos_t) = theta.sin_cos();
    let mut out = vec![BACKGROUND; side * side];
    for row in 0..side {
        for col in 0..side {
            // undo the rotation
            let xr = col as f64 - center;
            let yr = row as f64 - center;
            let xa = cos_t * xr + sin_t * yr + center;
            let ya = -sin_t * xr + cos_t * yr + center;
            // undo translate, then shear
            let ys = ya - dy;
            let xs = xa - dx - shear * (ys - center);
            let src_col = xs.round();
            let src_row = ys.round();
            if src_col >= 0.0
                && src_row >= 0.0
                && (src_col as usize) < side
                && (src_row as usize) < side
            {
                out[row * side + col] = pixels[src_row as usize * side + src_col as usize];
            }
        }
    }
    if flip {
        for row in 0..side {
            out[row * side..(row + 1) * side].reverse();
        }
    }
    if cfg.jitter_amplitude > 0 {
        let amp = cfg.jitter_amplitude as i32;
        for v in &mut out {
            let delta = rng.below(2 * amp as usize + 1) as i32 - amp;
            *v = (*v as i32 + delta).clamp(0, 255) as u8;
        }
    }
    Ok(out)
}

/// Keeps the central `fraction` of each side (rounded to whole pixels).
pub fn central_crop(pixels: &[u8], side: usize, fraction: f64) -> Result<(Vec<u8>, usize)> {
    if pixels.len() != side * side {
        return Err(Error::ShapeMismatch {
            context: "central_crop pixel buffer",
        });
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "crop fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let cropped = ((side as f64 * fraction).round() as usize).clamp(1, side);
    let start = (side - cropped) / 2;
    let mut out = Vec::with_capacity(cropped * cropped);
    for row in start..start + cropped {
        out.extend_from_slice(&pixels[row * side + start..row * side + start + cropped]);
    }
    Ok((out, cropped))
}

/// Crops every image centrally, flattens, and rescales pixels to [0, 1].
pub fn raster_to_features(dataset: &RasterDataset, crop_fraction: f64) -> Result<FeatureDataset> {
    let mut rows = Vec::with_capacity(dataset.len());
    let mut dim = 0;
    for i in 0..dataset.len() {
        let (cropped, cside) = central_crop(dataset.image(i), dataset.side(), crop_fraction)?;
        dim = cside * cside;
        rows.push(
            cropped
                .iter()
                .map(|&p| p as f64 / 255.0)
                .collect::<Vec<f64>>(),
        );
    }
    let mut m = Matrix::zeros(rows.len(), dim);
    for (i, row) in rows.iter().enumerate() {
        m.row_mut(i).copy_from_slice(row);
    }
    FeatureDataset::new(m, dataset.labels().to_vec(), dataset.num_classes())
}

/// Synthetic hypersphere clusters: class means uniform on the unit sphere,
/// samples offset by isotropic Gaussian noise of the given spread.
///
/// Samples are stored class-major (all of class 0, then class 1, ...), and
/// the draw order is fixed, so a seed fully determines the dataset.
pub fn gen_synthetic(
    rng: &mut Rng,
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
) -> Result<FeatureDataset> {
    if classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if per_class < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 samples per class, got {per_class}"
        )));
    }
    if dim == 0 {
        return Err(Error::InvalidConfig(
            "feature dimension must be positive".into(),
        ));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "spread must be a non-negative real, got {spread}"
        )));
    }

    let n = classes * per_class;
    let mut vectors = Matrix::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        let mean = loop {
            let raw: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            if let Ok(unit) = crate::linalg::l2_normalize(&raw) {
                break unit;
            }
        };
        for s in 0..per_class {
            let row = vectors.row_mut(c * per_class + s);
            for (v, m) in row.iter_mut().zip(&mean) {
                *v = m + spread * rng.normal();
            }
            labels.push(c);
        }
    }
    FeatureDataset::new(vectors, labels, classes)
}

/// Synthetic stroke rasters: each class is a thick line through the image
/// center at a class-specific angle, with small per-sample angle and offset
/// perturbations. Background 255, ink 0.
pub fn gen_synthetic_rasters(
    rng: &mut Rng,
    classes: usize,
    per_class: usize,
    side: usize,
) -> Result<RasterDataset> {
    if !(2..=256).contains(&classes) {
        return Err(Error::InvalidConfig(format!(
            "raster class count must lie in 2..=256, got {classes}"
        )));
    }
    if per_class < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 samples per class, got {per_class}"
        )));
    }
    if side < 8 {
        return Err(Error::InvalidConfig(format!(
            "raster side must be at least 8, got {side}"
        )));
    }

    let n = classes * per_class;
    let mut pixels = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    let center = (side as f64 - 1.0) / 2.0;
    let thickness = side as f64 / 12.0 + 0.5;
    for c in 0..classes {
        let base_angle = std::f64::consts::PI * c as f64 / classes as f64;
        for _ in 0..per_class {
            let angle = base_angle + rng.uniform(-0.05, 0.05);
            let offset = rng.uniform(-(side as f64) / 10.0, side as f64 / 10.0);
            // unit normal of the stroke line
            let (ny, nx) = angle.sin_cos();
            let (nx, ny) = (-ny, nx);
            for row in 0..side {
                for col in 0..side {
                    let d = (col as f64 - center) * nx + (row as f64 - center) * ny - offset;
                    pixels.push(if d.abs() <= thickness { 0 } else { BACKGROUND });
                }
            }
            labels.push(c);
        }
    }
    RasterDataset::new(pixels, side, side, labels, classes)
}

/// Draws a class-balanced batch: P distinct classes uniformly among those
/// with at least Q samples, then Q of each class's indices without
/// replacement. Returns dataset indices, class-major.
pub fn sample_batch(
    labels: &[usize],
    rng: &mut Rng,
    batch_size: usize,
    classes_per_batch: usize,
    samples_per_class: usize,
) -> Result<Vec<usize>> {
    let (p, q) = (classes_per_batch, samples_per_class);
    if p == 0 || q == 0 || p * q != batch_size {
        return Err(Error::InvalidConfig(format!(
            "batch size {batch_size} must equal classes_per_batch {p} * samples_per_class {q}"
        )));
    }
    let max_label = labels.iter().copied().max().unwrap_or(0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); max_label + 1];
    for (i, &label) in labels.iter().enumerate() {
        by_class[label].push(i);
    }
    let qualified: Vec<usize> = (0..by_class.len())
        .filter(|&c| by_class[c].len() >= q)
        .collect();
    if qualified.len() < p {
        return Err(Error::InsufficientClassSamples {
            classes: p,
            per_class: q,
            available: qualified.len(),
        });
    }

    let mut batch = Vec::with_capacity(batch_size);
    for ci in rng.choose_distinct(qualified.len(), p) {
        let members = &by_class[qualified[ci]];
        for si in rng.choose_distinct(members.len(), q) {
            batch.push(members[si]);
        }
    }
    Ok(batch)
}

// ---------------------------------------------------------------------------
// Raster file format: little-endian binary, magic "SKB1".
//
//   magic   4 bytes  "SKB1"
//   n       u32      sample count
//   h, w    u32      image height and width (equal)
//   C       u32      class count, at most 256
//   pixels  n*h*w bytes
//   labels  n bytes
// ---------------------------------------------------------------------------

pub const RASTER_MAGIC: &[u8; 4] = b"SKB1";

pub fn save_raster(path: &Path, dataset: &RasterDataset) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(RASTER_MAGIC);
    buf.extend_from_slice(&(dataset.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.side() as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.side() as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.num_classes() as u32).to_le_bytes());
    buf.extend_from_slice(&dataset.pixels);
    for &label in dataset.labels() {
        buf.push(label as u8);
    }
    std::fs::write(path, &buf)?;
    Ok(())
}

pub fn load_raster(path: &Path) -> Result<RasterDataset> {
    let bytes = std::fs::read(path)?;
    let path_str = path.display().to_string();
    if bytes.len() < 4 || &bytes[..4] != RASTER_MAGIC {
        return Err(Error::BadMagic {
            path: path_str,
            expected: String::from_utf8_lossy(RASTER_MAGIC).into_owned(),
        });
    }
    if bytes.len() < 20 {
        return Err(Error::TruncatedFile {
            path: path_str,
            detail: "header shorter than 20 bytes".into(),
        });
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (n, h, w, c) = (word(4), word(8), word(12), word(16));
    if h != w {
        return Err(Error::Parse {
            path: path_str,
            detail: format!("raster images must be square, got {h}x{w}"),
        });
    }
    if n == 0 || c == 0 || c > 256 {
        return Err(Error::Parse {
            path: path_str,
            detail: format!("invalid counts: n={n}, classes={c}"),
        });
    }
    let pixel_bytes = n * h * w;
    let expected_len = 20 + pixel_bytes + n;
    if bytes.len() < expected_len {
        return Err(Error::TruncatedFile {
            path: path_str,
            detail: format!("expected {expected_len} bytes, got {}", bytes.len()),
        });
    }
    if bytes.len() > expected_len {
        return Err(Error::Parse {
            path: path_str,
            detail: format!("{} trailing bytes", bytes.len() - expected_len),
        });
    }
    let pixels = bytes[20..20 + pixel_bytes].to_vec();
    let labels: Vec<usize> = bytes[20 + pixel_bytes..]
        .iter()
        .map(|&b| b as usize)
        .collect();
    for &label in &labels {
        if label >= c {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
    }
    RasterDataset::new(pixels, h, w, labels, c)
}

// ---------------------------------------------------------------------------
// Feature file format: UTF-8 CSV with header "label,f0,...,f{D-1}".
// Values use the shortest decimal form that round-trips, so a
// save -> load -> save cycle is byte-identical.
// ---------------------------------------------------------------------------

pub fn save_features(path: &Path, dataset: &FeatureDataset) -> Result<()> {
    let mut out = String::from("label");
    for j in 0..dataset.dim() {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for i in 0..dataset.len() {
        out.push_str(&dataset.labels()[i].to_string());
        for &v in dataset.vector(i) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<FeatureDataset> {
    let text = std::fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let parse_err = |line: usize, detail: String| Error::Parse {
        path: path_str.clone(),
        detail: format!("line {}: {detail}", line + 1),
    };

    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::TruncatedFile {
        path: path_str.clone(),
        detail: "missing header line".into(),
    })?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.first() != Some(&"label") || columns.len() < 2 {
        return Err(parse_err(0, format!("bad header {header:?}")));
    }
    let dim = columns.len() - 1;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(parse_err(
                lineno + 1,
                format!("expected {} fields, got {}", dim + 1, fields.len()),
            ));
        }
        let label: usize = fields[0]
            .parse()
            .map_err(|e| parse_err(lineno + 1, format!("bad label {:?}: {e}", fields[0])))?;
        let mut row = Vec::with_capacity(dim);
        for f in &fields[1..] {
            let v: f64 = f
                .parse()
                .map_err(|e| parse_err(lineno + 1, format!("bad value {f:?}: {e}")))?;
            if !v.is_finite() {
                return Err(parse_err(lineno + 1, format!("non-finite value {f:?}")));
            }
            row.push(v);
        }
        labels.push(label);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path_str,
            detail: "no data rows".into(),
        });
    }
    let mut vectors = Matrix::zeros(rows.len(), dim);
    for (i, row) in rows.iter().enumerate() {
        vectors.row_mut(i).copy_from_slice(row);
    }
    let num_classes = labels.iter().copied().max().unwrap() + 1;
    FeatureDataset::new(vectors, labels, num_classes)
}
