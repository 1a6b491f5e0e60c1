//! MNIST-format data and the imbalanced training sets.
//!
//! Pixels are kept as the raw bytes of the IDX files; every accessor that
//! feeds a network scales them by `1/255` into `[0, 1]`.

use std::path::{Path, PathBuf};

use advloss_autodiff::Tensor;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SIDE: usize = 28;
pub const IMAGE_LEN: usize = SIDE * SIDE;
pub const CLASSES: usize = 10;

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

/// Environment variable naming the directory with the four IDX files.
pub const DATA_DIR_ENV: &str = "ADVLOSS_DATA_DIR";

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed IDX data: {0}")]
    Format(String),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot build {variant:?}: {detail}")]
    Variant { variant: Variant, detail: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Standard,
    /// Five times as many zeros: each zero plus its four one-pixel shifts.
    Imbalanced,
    /// Seven times as many zeros: the above plus two-pixel left and right shifts.
    VeryImbalanced,
}

impl Variant {
    /// `(dx, dy)` shifts applied to every zero, the identity included.
    pub fn zero_shifts(self) -> &'static [(i32, i32)] {
        match self {
            Variant::Standard => &[(0, 0)],
            Variant::Imbalanced => &[(0, 0), (0, -1), (0, 1), (-1, 0), (1, 0)],
            Variant::VeryImbalanced => &[(0, 0), (0, -1), (0, 1), (-1, 0), (1, 0), (-2, 0), (2, 0)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    images: Vec<u8>,
    labels: Vec<u8>,
    pub variant: Variant,
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Format("truncated header".into()))
}

/// Parses in-memory IDX image and label files.
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset, DataError> {
    if be_u32(image_bytes, 0)? != IMAGE_MAGIC {
        return Err(DataError::Format("image file magic is not 2051".into()));
    }
    if be_u32(label_bytes, 0)? != LABEL_MAGIC {
        return Err(DataError::Format("label file magic is not 2049".into()));
    }
    let n = be_u32(image_bytes, 4)? as usize;
    let (rows, cols) = (be_u32(image_bytes, 8)? as usize, be_u32(image_bytes, 12)? as usize);
    if (rows, cols) != (SIDE, SIDE) {
        return Err(DataError::Format(format!("images are {rows}x{cols}, expected 28x28")));
    }
    let n_labels = be_u32(label_bytes, 4)? as usize;
    if n_labels != n {
        return Err(DataError::Format(format!("{n} images but {n_labels} labels")));
    }
    let images = image_bytes.get(16..16 + n * IMAGE_LEN).ok_or_else(|| DataError::Format("image data truncated".into()))?;
    let labels = label_bytes.get(8..8 + n).ok_or_else(|| DataError::Format("label data truncated".into()))?;
    Dataset::new(images.to_vec(), labels.to_vec(), Variant::Standard)
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    parse_idx(&read(images_path)?, &read(labels_path)?)
}

/// `$ADVLOSS_DATA_DIR`, else the nearest `data/mnist` in the current
/// directory or one of its ancestors, else `data/mnist`.
pub fn data_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
        return PathBuf::from(dir);
    }
    let relative = Path::new("data").join("mnist");
    std::env::current_dir()
        .ok()
        .and_then(|cwd| cwd.ancestors().map(|a| a.join(&relative)).find(|d| d.is_dir()))
        .unwrap_or(relative)
}

/// Loads the standard training and test sets from `dir`.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset), DataError> {
    let train = load_idx(&dir.join(TRAIN_IMAGES), &dir.join(TRAIN_LABELS))?;
    let test = load_idx(&dir.join(TEST_IMAGES), &dir.join(TEST_LABELS))?;
    Ok((train, test))
}

impl Dataset {
    pub fn new(images: Vec<u8>, labels: Vec<u8>, variant: Variant) -> Result<Self, DataError> {
        if images.len() != labels.len() * IMAGE_LEN {
            return Err(DataError::Format(format!("{} pixel bytes for {} labels", images.len(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= CLASSES) {
            return Err(DataError::Format(format!("label {bad} out of range")));
        }
        Ok(Self { images, labels, variant })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.images[i * IMAGE_LEN..(i + 1) * IMAGE_LEN]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn count(&self, label: usize) -> usize {
        self.labels.iter().filter(|&&l| l as usize == label).count()
    }

    /// Images at `idx` as a `[B, 28, 28, 1]` tensor in `[0, 1]`.
    pub fn image_batch(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * IMAGE_LEN);
        for &i in idx {
            data.extend(self.image(i).iter().map(|&p| p as f64 / 255.0));
        }
        Tensor::new(&[idx.len(), SIDE, SIDE, 1], data).expect("batch shape")
    }

    /// One-hot labels at `idx` as a `[B, 10]` tensor.
    pub fn onehot_batch(&self, idx: &[usize]) -> Tensor {
        let mut data = vec![0.0; idx.len() * CLASSES];
        for (row, &i) in idx.iter().enumerate() {
            data[row * CLASSES + self.label(i)] = 1.0;
        }
        Tensor::new(&[idx.len(), CLASSES], data).expect("batch shape")
    }

    /// `n` samples drawn uniformly without replacement, in their original order.
    pub fn subset(&self, n: usize, seed: u64) -> Dataset {
        if n >= self.len() {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, self.len(), n).into_vec();
        idx.sort_unstable();
        self.select(&idx)
    }

    fn select(&self, idx: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(idx.len() * IMAGE_LEN);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Dataset { images, labels, variant: self.variant }
    }
}

/// Translates a 28×28 image by `dx` columns (positive is right) and `dy`
/// rows (positive is down), filling the exposed border with zeros.
pub fn shift_image(image: &[u8], dx: i32, dy: i32) -> Vec<u8> {
    let mut out = vec![0u8; IMAGE_LEN];
    let side = SIDE as i32;
    for r in 0..side {
        for c in 0..side {
            let (sr, sc) = (r - dy, c - dx);
            if (0..side).contains(&sr) && (0..side).contains(&sc) {
                out[(r * side + c) as usize] = image[(sr * side + sc) as usize];
            }
        }
    }
    out
}

/// Splits `total` across groups in proportion to `sizes`, largest remainder
/// first (ties to the lower index), so the parts sum to `total` exactly.
fn proportional(sizes: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = sizes.iter().sum();
    let mut parts: Vec<usize> = sizes.iter().map(|&s| s * total / sum).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse((sizes[i] * total) % sum), i));
    let missing = total - parts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        parts[i] += 1;
    }
    parts
}

/// Builds a training set with extra shifted zeros and fewer other digits,
/// keeping the size of `standard`.
///
/// All zeros and their shifted copies come first, followed by the kept
/// non-zero samples in their original order. Non-zero digits are subsampled
/// uniformly without replacement, each digit keeping its share of the
/// non-zero pool.
pub fn make_variant(standard: &Dataset, variant: Variant, seed: u64) -> Result<Dataset, DataError> {
    let shifts = variant.zero_shifts();
    let zeros: Vec<usize> = (0..standard.len()).filter(|&i| standard.label(i) == 0).collect();
    let total = standard.len();
    let zero_total = zeros.len() * shifts.len();
    if zero_total > total {
        return Err(DataError::Variant { variant, detail: format!("{zero_total} zeros exceed {total} samples") });
    }

    let mut images = Vec::with_capacity(total * IMAGE_LEN);
    let mut labels = Vec::with_capacity(total);
    for &i in &zeros {
        for &(dx, dy) in shifts {
            images.extend(shift_image(standard.image(i), dx, dy));
            labels.push(0u8);
        }
    }

    let by_digit: Vec<Vec<usize>> = (1..CLASSES).map(|d| (0..standard.len()).filter(|&i| standard.label(i) == d).collect()).collect();
    let sizes: Vec<usize> = by_digit.iter().map(Vec::len).collect();
    let keep = proportional(&sizes, total - zero_total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::with_capacity(total - zero_total);
    for (pool, &k) in by_digit.iter().zip(&keep) {
        kept.extend(sample(&mut rng, pool.len(), k).into_iter().map(|j| pool[j]));
    }
    kept.sort_unstable();
    for i in kept {
        images.extend_from_slice(standard.image(i));
        labels.push(standard.labels[i]);
    }
    Ok(Dataset { images, labels, variant })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_files(n: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
        let mut im = Vec::new();
        for v in [IMAGE_MAGIC, n as u32, 28, 28] {
            im.extend(v.to_be_bytes());
        }
        im.extend((0..n * IMAGE_LEN).map(|i| (i % 256) as u8));
        let mut lb = Vec::new();
        for v in [LABEL_MAGIC, n as u32] {
            lb.extend(v.to_be_bytes());
        }
        lb.extend_from_slice(labels);
        (im, lb)
    }

    #[test]
    fn parses_synthetic_idx() {
        let (im, lb) = idx_files(3, &[7, 0, 9]);
        let d = parse_idx(&im, &lb).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.label(2), 9);
        assert_eq!(d.image(1)[0], (IMAGE_LEN % 256) as u8);
        let t = d.image_batch(&[0]);
        assert!(t.data().iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(t.data()[255], 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (im, lb) = idx_files(3, &[7, 0, 9]);
        assert!(matches!(parse_idx(&im[..im.len() - 1], &lb), Err(DataError::Format(_))));
        assert!(matches!(parse_idx(&lb, &im), Err(DataError::Format(_))));
        assert!(matches!(parse_idx(&im, &lb[..9]), Err(DataError::Format(_))));
        let (im, lb) = idx_files(1, &[12]);
        assert!(parse_idx(&im, &lb).is_err());
    }

    #[test]
    fn shifting_moves_a_single_pixel() {
        let mut img = vec![0u8; IMAGE_LEN];
        img[10 * SIDE + 10] = 255;
        assert_eq!(shift_image(&img, 0, 0), img);
        let right = shift_image(&img, 1, 0);
        assert_eq!(right[10 * SIDE + 11], 255);
        assert_eq!(right.iter().filter(|&&p| p > 0).count(), 1);
        let down = shift_image(&img, 0, 2);
        assert_eq!(down[12 * SIDE + 10], 255);
        assert_eq!(shift_image(&right, -1, 0), img);
    }

    #[test]
    fn shifting_off_the_edge_drops_pixels() {
        let mut img = vec![0u8; IMAGE_LEN];
        img[27] = 9;
        assert!(shift_image(&img, 1, 0).iter().all(|&p| p == 0));
    }

    #[test]
    fn proportional_split_is_exact() {
        assert_eq!(proportional(&[1, 1, 1], 2), vec![1, 1, 0]);
        assert_eq!(proportional(&[10, 30], 8), vec![2, 6]);
        let p = proportional(&[6742, 5958, 6131], 10_000);
        assert_eq!(p.iter().sum::<usize>(), 10_000);
    }

    #[test]
    fn variants_on_a_toy_set() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 10) as u8).collect();
        let (im, lb) = idx_files(100, &labels);
        let d = parse_idx(&im, &lb).unwrap();
        let v = make_variant(&d, Variant::Imbalanced, 1).unwrap();
        assert_eq!(v.len(), 100);
        assert_eq!(v.count(0), 50);
        let vv = make_variant(&d, Variant::VeryImbalanced, 1).unwrap();
        assert_eq!(vv.count(0), 70);
        assert_eq!(vv.len(), 100);
        assert_eq!(make_variant(&d, Variant::VeryImbalanced, 1).unwrap(), vv);
    }
}
