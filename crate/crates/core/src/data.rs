//! Datasets as sequences: MNIST (IDX) and CIFAR-10 (binary) readers, pixel
//! orderings, Gaussian noise padding and a synthetic planted-signal task.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SeededRng};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_BYTES: usize = 3073;

/// Images with per-pixel interleaved channels (`HWC`, row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<usize>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// First `n` images (all if fewer).
    pub fn truncate(mut self, n: usize) -> Self {
        self.images.truncate(n);
        self.labels.truncate(n);
        self
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Parses an IDX image file and label file already in memory.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<ImageSet> {
    let magic = be_u32(images, 0, "IDX images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("IDX images: wrong magic {magic:#010x}")));
    }
    let count = be_u32(images, 4, "IDX images")? as usize;
    let rows = be_u32(images, 8, "IDX images")? as usize;
    let cols = be_u32(images, 12, "IDX images")? as usize;
    let magic = be_u32(labels, 0, "IDX labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("IDX labels: wrong magic {magic:#010x}")));
    }
    let label_count = be_u32(labels, 4, "IDX labels")? as usize;
    if label_count != count {
        return Err(Error::Format(format!(
            "IDX count mismatch: {count} images vs {label_count} labels"
        )));
    }
    let px = rows * cols;
    let payload = &images[16..];
    if payload.len() < count * px {
        return Err(Error::Format(format!(
            "IDX images: truncated payload ({} of {} bytes)",
            payload.len(),
            count * px
        )));
    }
    let lbl = &labels[8..];
    if lbl.len() < count {
        return Err(Error::Format("IDX labels: truncated payload".into()));
    }
    Ok(ImageSet {
        height: rows,
        width: cols,
        channels: 1,
        classes: 10,
        images: payload.chunks_exact(px.max(1)).take(count).map(<[u8]>::to_vec).collect(),
        labels: lbl[..count].iter().map(|&l| l as usize).collect(),
    })
}

pub fn read_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<ImageSet> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

/// Serializes a single-channel set to `(images, labels)` IDX bytes.
pub fn encode_idx(set: &ImageSet) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + set.len() * set.height * set.width);
    for v in [IDX_IMAGES_MAGIC, set.len() as u32, set.height as u32, set.width as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    for im in &set.images {
        img.extend_from_slice(im);
    }
    let mut lbl = Vec::with_capacity(8 + set.len());
    for v in [IDX_LABELS_MAGIC, set.len() as u32] {
        lbl.extend_from_slice(&v.to_be_bytes());
    }
    lbl.extend(set.labels.iter().map(|&l| l as u8));
    (img, lbl)
}

/// Parses CIFAR-10 binary records: one label byte, then 1024 red, 1024
/// green and 1024 blue bytes.
pub fn parse_cifar10(bytes: &[u8]) -> Result<ImageSet> {
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::Format(format!(
            "CIFAR-10: {} bytes is not a whole number of {CIFAR_RECORD_BYTES}-byte records",
            bytes.len()
        )));
    }
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD_BYTES);
    let mut labels = Vec::with_capacity(images.capacity());
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label > 9 {
            return Err(Error::Format(format!("CIFAR-10: record {r} has label {label}")));
        }
        let planes = &rec[1..];
        let mut img = Vec::with_capacity(3072);
        for p in 0..1024 {
            img.extend([planes[p], planes[1024 + p], planes[2048 + p]]);
        }
        images.push(img);
        labels.push(label);
    }
    Ok(ImageSet {
        height: 32,
        width: 32,
        channels: 3,
        classes: 10,
        images,
        labels,
    })
}

pub fn read_cifar10(path: impl AsRef<Path>) -> Result<ImageSet> {
    parse_cifar10(&std::fs::read(path)?)
}

/// Inverse of [`parse_cifar10`].
pub fn encode_cifar10(set: &ImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(set.len() * CIFAR_RECORD_BYTES);
    for (img, &label) in set.images.iter().zip(&set.labels) {
        out.push(label as u8);
        for c in 0..3 {
            out.extend((0..1024).map(|p| img[p * 3 + c]));
        }
    }
    out
}

/// Fisher–Yates shuffle of `0..length` driven by `SeededRng::new(seed)`.
pub fn fixed_permutation(length: usize, seed: u64) -> Vec<usize> {
    let mut rng = SeededRng::new(seed);
    let mut perm: Vec<usize> = (0..length).collect();
    for i in (1..length).rev() {
        let j = rng.index(i + 1);
        perm.swap(i, j);
    }
    perm
}

/// Labelled fixed-length sequences; each sequence is `steps × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDataset {
    pub sequences: Vec<Matrix>,
    pub labels: Vec<usize>,
    pub steps: usize,
    pub width: usize,
    pub classes: usize,
    pub provenance: String,
}

impl SequenceDataset {
    pub fn new(
        sequences: Vec<Matrix>,
        labels: Vec<usize>,
        steps: usize,
        width: usize,
        classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if sequences.len() != labels.len() {
            return Err(Error::shape(
                "SequenceDataset",
                format!("{} sequences, {} labels", sequences.len(), labels.len()),
            ));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        if sequences.iter().any(|s| s.rows() != steps || s.cols() != width) {
            return Err(Error::shape("SequenceDataset", format!("every sequence must be {steps}x{width}")));
        }
        Ok(SequenceDataset {
            sequences,
            labels,
            steps,
            width,
            classes,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// How images become sequences.
#[derive(Clone, Debug, PartialEq)]
pub enum PixelOrder {
    /// One pixel per step, top-left to bottom-right; `m = C`.
    Scanline,
    /// Scanline with time steps reordered by a fixed permutation.
    /// Build it once and reuse it for train and test.
    Permuted(Vec<usize>),
    /// One image row per step; `m = W·C`.
    Rows,
}

impl PixelOrder {
    pub fn permuted(pixels: usize, seed: u64) -> Self {
        PixelOrder::Permuted(fixed_permutation(pixels, seed))
    }
}

pub fn sequence_view(set: &ImageSet, order: &PixelOrder, normalize: bool) -> Result<SequenceDataset> {
    let (h, w, c) = (set.height, set.width, set.channels);
    let scale = if normalize { 1.0 / 255.0 } else { 1.0 };
    let (steps, width, tag) = match order {
        PixelOrder::Scanline => (h * w, c, "scanline".to_string()),
        PixelOrder::Permuted(p) => {
            if p.len() != h * w {
                return Err(Error::shape("sequence_view", "permutation length must equal H·W"));
            }
            (h * w, c, "permuted".to_string())
        }
        PixelOrder::Rows => (h, w * c, "rows".to_string()),
    };
    let sequences = set
        .images
        .iter()
        .map(|img| {
            let data: Vec<f64> = match order {
                PixelOrder::Permuted(p) => p
                    .iter()
                    .flat_map(|&px| img[px * c..(px + 1) * c].iter())
                    .map(|&b| b as f64 * scale)
                    .collect(),
                _ => img.iter().map(|&b| b as f64 * scale).collect(),
            };
            Matrix::from_vec(steps, width, data)
        })
        .collect::<Result<Vec<_>>>()?;
    SequenceDataset::new(
        sequences,
        set.labels.clone(),
        steps,
        width,
        set.classes,
        format!("{tag}{}", if normalize { ",normalized" } else { "" }),
    )
}

/// Extends every sequence to `t_total` steps with i.i.d. `N(0, 1)` values.
/// Sample `i` draws from substream `i` of `seed`.
pub fn noise_pad(ds: &SequenceDataset, t_total: usize, seed: u64) -> Result<SequenceDataset> {
    if t_total < ds.steps {
        return Err(Error::invalid(format!(
            "cannot pad {} steps down to {t_total}",
            ds.steps
        )));
    }
    if t_total == ds.steps {
        return Ok(ds.clone());
    }
    let extra = (t_total - ds.steps) * ds.width;
    let sequences = ds
        .sequences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = SeededRng::substream(seed, i as u64);
            let mut data = s.as_slice().to_vec();
            data.extend((0..extra).map(|_| rng.standard_normal()));
            Matrix::from_vec(t_total, ds.width, data)
        })
        .collect::<Result<Vec<_>>>()?;
    SequenceDataset::new(
        sequences,
        ds.labels.clone(),
        t_total,
        ds.width,
        ds.classes,
        format!("{},noise_padded({t_total})", ds.provenance),
    )
}

/// Largest power of two dividing `len`: the number of mutually orthogonal
/// ±1 templates the construction below can provide.
pub fn max_planted_classes(len: usize) -> usize {
    if len == 0 {
        0
    } else {
        1 << len.trailing_zeros()
    }
}

/// Synthetic long-range task. Each class owns a ±1 template over the first
/// `signal_steps × m` inputs (templates are mutually orthogonal); samples
/// are template + `N(0, 0.1²)` jitter followed by `N(0, 1)` noise up to
/// `t_total`. Classes are balanced and split 80/20 per class.
pub fn planted_signal_dataset(
    samples: usize,
    signal_steps: usize,
    t_total: usize,
    m: usize,
    classes: usize,
    seed: u64,
) -> Result<(SequenceDataset, SequenceDataset)> {
    if classes < 2 {
        return Err(Error::invalid("planted task needs at least 2 classes"));
    }
    if signal_steps == 0 || signal_steps > t_total {
        return Err(Error::invalid(format!(
            "signal_steps must be in 1..={t_total}, got {signal_steps}"
        )));
    }
    let len = signal_steps * m;
    let block = max_planted_classes(len);
    if classes > block {
        return Err(Error::invalid(format!(
            "only {block} orthogonal ±1 templates of length {len}; asked for {classes} classes"
        )));
    }
    let templates = planted_templates(len, block, classes, seed);

    let mut by_class: Vec<Vec<Matrix>> = vec![Vec::new(); classes];
    for i in 0..samples {
        let label = i % classes;
        let mut rng = SeededRng::substream(seed, i as u64);
        let mut data = Vec::with_capacity(t_total * m);
        data.extend(templates[label].iter().map(|&t| t + 0.1 * rng.standard_normal()));
        data.extend((len..t_total * m).map(|_| rng.standard_normal()));
        by_class[label].push(Matrix::from_vec(t_total, m, data)?);
    }

    let mut train = (Vec::new(), Vec::new());
    let mut test = (Vec::new(), Vec::new());
    for (label, seqs) in by_class.into_iter().enumerate() {
        let cut = seqs.len() * 4 / 5;
        for (k, s) in seqs.into_iter().enumerate() {
            let dst = if k < cut { &mut train } else { &mut test };
            dst.0.push(s);
            dst.1.push(label);
        }
    }
    let tag = format!("planted(signal_steps={signal_steps},t_total={t_total},seed={seed})");
    Ok((
        SequenceDataset::new(train.0, train.1, t_total, m, classes, &tag)?,
        SequenceDataset::new(test.0, test.1, t_total, m, classes, &tag)?,
    ))
}

/// Rows of a Sylvester–Hadamard matrix of order `block`, tiled to `len` and
/// multiplied by a shared random sign vector.
fn planted_templates(len: usize, block: usize, classes: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SeededRng::new(seed);
    let rows = fixed_permutation(block, rng.next_u64());
    let signs: Vec<f64> = (0..len).map(|_| if rng.coin() { 1.0 } else { -1.0 }).collect();
    rows[..classes]
        .iter()
        .map(|&r| {
            (0..len)
                .map(|j| {
                    let h = if (r & (j % block)).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                    h * signs[j]
                })
                .collect()
        })
        .collect()
}

/// Endless stream of index batches drawn uniformly with replacement.
#[derive(Clone, Debug)]
pub struct Batches {
    len: usize,
    batch_size: usize,
    rng: SeededRng,
}

impl Iterator for Batches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some((0..self.batch_size).map(|_| self.rng.index(self.len)).collect())
    }
}

pub fn batches(ds: &SequenceDataset, batch_size: usize, rng: SeededRng) -> Result<Batches> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    Ok(Batches {
        len: ds.len(),
        batch_size,
        rng,
    })
}

/// Dataset selectors understood by the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    PermutedMnist,
    CifarPixel,
    CifarNoise,
    Planted,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mnist" => DatasetKind::Mnist,
            "pmnist" => DatasetKind::PermutedMnist,
            "cifar_pixel" => DatasetKind::CifarPixel,
            "cifar_noise" => DatasetKind::CifarNoise,
            "planted" => DatasetKind::Planted,
            other => return Err(Error::invalid(format!("unknown dataset {other:?}"))),
        })
    }
}

/// Parses `key=value` pairs separated by commas or semicolons.
pub fn parse_dataset_args(s: &str) -> Result<BTreeMap<String, String>> {
    s.split([',', ';'])
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::invalid(format!("dataset argument {p:?} is not key=value")))
        })
        .collect()
}

fn arg<T: std::str::FromStr>(args: &BTreeMap<String, String>, key: &str, default: Option<T>) -> Result<T> {
    match args.get(key) {
        Some(v) => v
            .parse()
            .map_err(|_| Error::invalid(format!("dataset argument {key}={v:?} is malformed"))),
        None => default.ok_or_else(|| Error::invalid(format!("dataset argument {key} is required"))),
    }
}

/// Builds `(train, test)` for a selector.
///
/// Arguments: `dir` (MNIST IDX files or CIFAR-10 `*.bin` batches under their
/// standard names), `normalize` (default true), `limit_train`,
/// `limit_test`, `perm_seed` (pmnist, default 42), `t_total` and `seed`
/// (cifar_noise, defaults 1000 and 0), and for `planted`: `samples`,
/// `signal_steps`, `t_total`, `m`, `classes`, `seed`.
pub fn load_datasets(kind: DatasetKind, args: &BTreeMap<String, String>) -> Result<(SequenceDataset, SequenceDataset)> {
    let normalize: bool = arg(args, "normalize", Some(true))?;
    let limit = |set: ImageSet, key: &str| -> Result<ImageSet> {
        Ok(match args.get(key) {
            Some(_) => set.truncate(arg(args, key, None::<usize>)?),
            None => set,
        })
    };
    let view = |train: ImageSet, test: ImageSet, order: PixelOrder| -> Result<(SequenceDataset, SequenceDataset)> {
        let train = limit(train, "limit_train")?;
        let test = limit(test, "limit_test")?;
        Ok((
            sequence_view(&train, &order, normalize)?,
            sequence_view(&test, &order, normalize)?,
        ))
    };
    match kind {
        DatasetKind::Mnist | DatasetKind::PermutedMnist => {
            let dir: String = arg(args, "dir", None)?;
            let dir = Path::new(&dir);
            let train = read_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
            let test = read_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?;
            let order = if kind == DatasetKind::PermutedMnist {
                PixelOrder::permuted(train.height * train.width, arg(args, "perm_seed", Some(42))?)
            } else {
                PixelOrder::Scanline
            };
            view(train, test, order)
        }
        DatasetKind::CifarPixel | DatasetKind::CifarNoise => {
            let dir: String = arg(args, "dir", None)?;
            let dir = Path::new(&dir);
            let mut train = read_cifar10(dir.join("data_batch_1.bin"))?;
            for b in 2..=5 {
                let more = read_cifar10(dir.join(format!("data_batch_{b}.bin")))?;
                train.images.extend(more.images);
                train.labels.extend(more.labels);
            }
            let test = read_cifar10(dir.join("test_batch.bin"))?;
            if kind == DatasetKind::CifarPixel {
                view(train, test, PixelOrder::Scanline)
            } else {
                let (train, test) = view(train, test, PixelOrder::Rows)?;
                let t_total = arg(args, "t_total", Some(1000))?;
                let seed: u64 = arg(args, "seed", Some(0))?;
                Ok((
                    noise_pad(&train, t_total, seed)?,
                    noise_pad(&test, t_total, seed.wrapping_add(1))?,
                ))
            }
        }
        DatasetKind::Planted => planted_signal_dataset(
            arg(args, "samples", Some(2500))?,
            arg(args, "signal_steps", Some(20))?,
            arg(args, "t_total", Some(120))?,
            arg(args, "m", Some(4))?,
            arg(args, "classes", Some(2))?,
            arg(args, "seed", Some(0))?,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes(count: u32, rows: u32, cols: u32, payload: usize) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IDX_IMAGES_MAGIC, count, rows, cols] {
            v.extend(x.to_be_bytes());
        }
        v.extend(std::iter::repeat_n(7u8, payload));
        v
    }

    fn label_bytes(magic: u32, count: u32) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend(magic.to_be_bytes());
        v.extend(count.to_be_bytes());
        v.extend(std::iter::repeat_n(3u8, count as usize));
        v
    }

    #[test]
    fn idx_two_images() {
        let img = idx_bytes(2, 28, 28, 1568);
        assert_eq!(&img[..16], &[0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 0x1c, 0, 0, 0, 0x1c]);
        let set = parse_idx(&img, &label_bytes(IDX_LABELS_MAGIC, 2)).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!((set.height, set.width, set.channels), (28, 28, 1));
        assert_eq!(set.images[1].len(), 784);
    }

    #[test]
    fn idx_errors() {
        let img = idx_bytes(2, 28, 28, 1568);
        assert!(matches!(parse_idx(&img, &label_bytes(0x0802, 2)), Err(Error::Format(m)) if m.contains("magic")));
        let img10 = idx_bytes(10, 2, 2, 40);
        assert!(matches!(parse_idx(&img10, &label_bytes(IDX_LABELS_MAGIC, 9)), Err(Error::Format(m)) if m.contains("mismatch")));
        let short = idx_bytes(2, 28, 28, 1000);
        assert!(matches!(parse_idx(&short, &label_bytes(IDX_LABELS_MAGIC, 2)), Err(Error::Format(m)) if m.contains("truncated")));
    }

    #[test]
    fn cifar_records() {
        let mut bytes = vec![0u8; 10 * CIFAR_RECORD_BYTES];
        bytes[0] = 7;
        bytes[1] = 200; // red of pixel 0
        bytes[1 + 1024] = 100; // green of pixel 0
        let set = parse_cifar10(&bytes).unwrap();
        assert_eq!(set.len(), 10);
        assert_eq!(set.labels[0], 7);
        assert_eq!(&set.images[0][..3], &[200, 100, 0]);
        assert!(matches!(parse_cifar10(&[0u8; 3000]), Err(Error::Format(_))));
        let mut bad = vec![0u8; CIFAR_RECORD_BYTES];
        bad[0] = 10;
        assert!(parse_cifar10(&bad).is_err());
    }

    #[test]
    fn permutation_properties() {
        assert_eq!(fixed_permutation(1, 5), vec![0]);
        let p = fixed_permutation(784, 42);
        let mut s = p.clone();
        s.sort_unstable();
        assert_eq!(s, (0..784).collect::<Vec<_>>());
        assert_eq!(p, fixed_permutation(784, 42));
        assert_ne!(p, fixed_permutation(784, 43));
    }

    fn fake_set(h: usize, w: usize, c: usize, n: usize) -> ImageSet {
        ImageSet {
            height: h,
            width: w,
            channels: c,
            classes: 10,
            images: (0..n)
                .map(|k| (0..h * w * c).map(|i| ((i + k) % 256) as u8).collect())
                .collect(),
            labels: (0..n).map(|k| k % 10).collect(),
        }
    }

    #[test]
    fn view_shapes() {
        let mnist = fake_set(28, 28, 1, 2);
        let s = sequence_view(&mnist, &PixelOrder::Scanline, true).unwrap();
        assert_eq!((s.steps, s.width), (784, 1));
        let cifar = fake_set(32, 32, 3, 2);
        let s = sequence_view(&cifar, &PixelOrder::Scanline, true).unwrap();
        assert_eq!((s.steps, s.width), (1024, 3));
        let r = sequence_view(&cifar, &PixelOrder::Rows, false).unwrap();
        assert_eq!((r.steps, r.width), (32, 96));
        assert_eq!(r.sequences[0][(1, 0)], cifar.images[0][96] as f64);
        assert!(s.sequences[0].as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn permuted_view_reorders_steps() {
        let set = fake_set(4, 4, 1, 1);
        let order = PixelOrder::permuted(16, 42);
        let PixelOrder::Permuted(p) = &order else { unreachable!() };
        let s = sequence_view(&set, &order, false).unwrap();
        for (t, &px) in p.iter().enumerate() {
            assert_eq!(s.sequences[0][(t, 0)], set.images[0][px] as f64);
        }
    }

    #[test]
    fn noise_padding() {
        let set = fake_set(32, 32, 3, 2);
        let rows = sequence_view(&set, &PixelOrder::Rows, true).unwrap();
        assert_eq!(noise_pad(&rows, 32, 1).unwrap(), rows);
        let padded = noise_pad(&rows, 1000, 1).unwrap();
        assert_eq!(padded.steps, 1000);
        let head = &padded.sequences[0].as_slice()[..32 * 96];
        assert_eq!(head, rows.sequences[0].as_slice());
        assert!(noise_pad(&rows, 10, 1).is_err());
    }

    #[test]
    fn noise_statistics() {
        let base = SequenceDataset::new(vec![Matrix::zeros(1, 100); 1000], vec![0; 1000], 1, 100, 1, "zeros").unwrap();
        let padded = noise_pad(&base, 2, 9).unwrap();
        let vals: Vec<f64> = padded
            .sequences
            .iter()
            .flat_map(|s| s.row(1).to_vec())
            .collect();
        assert_eq!(vals.len(), 100_000);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!(mean.abs() < 0.02 && (std - 1.0).abs() < 0.02, "{mean} {std}");
    }

    #[test]
    fn planted_balance_and_split() {
        let (train, test) = planted_signal_dataset(1000, 20, 120, 4, 2, 3).unwrap();
        let count = |ds: &SequenceDataset, c: usize| ds.labels.iter().filter(|&&l| l == c).count();
        assert_eq!(count(&train, 0) + count(&test, 0), 500);
        assert_eq!(count(&train, 1) + count(&test, 1), 500);
        assert_eq!((train.len(), test.len()), (800, 200));
        assert_eq!((train.steps, train.width), (120, 4));
    }

    #[test]
    fn planted_templates_are_orthogonal() {
        let t = planted_templates(80, 16, 8, 11);
        for a in 0..8 {
            assert!(t[a].iter().all(|v| v.abs() == 1.0));
            for b in 0..a {
                let d: f64 = t[a].iter().zip(&t[b]).map(|(x, y)| x * y).sum();
                assert_eq!(d, 0.0);
            }
        }
        assert!(planted_signal_dataset(10, 20, 120, 4, 17, 0).is_err());
    }

    #[test]
    fn batch_stream() {
        let (train, _) = planted_signal_dataset(50, 2, 4, 1, 2, 0).unwrap();
        let a: Vec<_> = batches(&train, 3, SeededRng::new(1)).unwrap().take(20).collect();
        let b: Vec<_> = batches(&train, 3, SeededRng::new(1)).unwrap().take(20).collect();
        assert_eq!(a, b);
        assert!(a.iter().flatten().all(|&i| i < train.len()));
        assert!(batches(&train, 1, SeededRng::new(2)).unwrap().take(5).all(|b| b.len() == 1));
        let empty = SequenceDataset::new(vec![], vec![], 1, 1, 2, "").unwrap();
        assert!(batches(&empty, 1, SeededRng::new(0)).is_err());
    }

    #[test]
    fn dataset_args() {
        let a = parse_dataset_args("dir=/tmp/x, seed=3;t_total=100").unwrap();
        assert_eq!(a["dir"], "/tmp/x");
        assert_eq!(a["t_total"], "100");
        assert!(parse_dataset_args("oops").is_err());
    }
}
