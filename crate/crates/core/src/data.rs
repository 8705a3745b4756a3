//! Image datasets, split construction and minibatch ordering.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use slscom_autograd::Tensor;

use crate::config::{DatasetKind, SplitSpec};
use crate::error::{Error, Result};
use crate::seed::{derive_rng, Rng};

pub const CIFAR_RECORD: usize = 3073;
pub const DATA_DIR_ENV: &str = "SLSCOM_DATA_DIR";

/// One image with pixels scaled to `[0, 1]`, channel-planar.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub pixels: Vec<f64>,
    pub label: Option<usize>,
}

/// Images kept as bytes; conversion to `[0, 1]` happens per batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub shape: (usize, usize, usize),
    pub classes: usize,
    pixels: Vec<u8>,
    labels: Vec<u16>,
}

impl Dataset {
    pub fn new(shape: (usize, usize, usize), classes: usize, pixels: Vec<u8>, labels: Vec<u16>) -> Result<Self> {
        let image_len = shape.0 * shape.1 * shape.2;
        if pixels.len() != image_len * labels.len() {
            return Err(Error::DimensionMismatch {
                expected: image_len * labels.len(),
                got: pixels.len(),
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= classes) {
            return Err(Error::UnknownLabel {
                label: label as u32,
                index,
            });
        }
        Ok(Self {
            shape,
            classes,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    pub fn raw_pixels(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().map(|&l| l as usize)
    }

    pub fn sample(&self, i: usize, labeled: bool) -> ImageSample {
        ImageSample {
            pixels: self.raw_pixels(i).iter().map(|&b| b as f64 / 255.0).collect(),
            label: labeled.then(|| self.label(i)),
        }
    }

    /// `[n, c, h, w]` tensor of the selected images in `[0, 1]`.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend(self.raw_pixels(i).iter().map(|&b| b as f64 / 255.0));
        }
        let (c, h, w) = self.shape;
        Tensor::from_vec(&[indices.len(), c, h, w], data).expect("batch shape")
    }

    /// One-hot `[n, classes]` targets for the selected images.
    pub fn one_hot(&self, indices: &[usize]) -> Tensor {
        one_hot(indices.iter().map(|&i| self.label(i)), indices.len(), self.classes)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut pixels = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            pixels.extend_from_slice(self.raw_pixels(i));
        }
        Dataset {
            shape: self.shape,
            classes: self.classes,
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn class_counts(&self, indices: &[usize]) -> BTreeMap<usize, usize> {
        let mut m = BTreeMap::new();
        for &i in indices {
            *m.entry(self.label(i)).or_insert(0) += 1;
        }
        m
    }
}

pub fn one_hot(labels: impl Iterator<Item = usize>, n: usize, classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n, classes]);
    for (row, l) in labels.enumerate() {
        t.data_mut()[row * classes + l] = 1.0;
    }
    t
}

// ---- CIFAR-10 binary ----

/// Parse one CIFAR-10 binary batch file.
pub fn read_cifar_file(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    parse_cifar_bytes(&bytes, path)
}

pub fn parse_cifar_bytes(bytes: &[u8], path: &Path) -> Result<Dataset> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::TruncatedRecord {
            path: path.to_path_buf(),
            len: bytes.len(),
            record: CIFAR_RECORD,
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut pixels = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for (index, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::UnknownLabel {
                label: rec[0] as u32,
                index,
            });
        }
        labels.push(rec[0] as u16);
        pixels.extend_from_slice(&rec[1..]);
    }
    Dataset::new((3, 32, 32), 10, pixels, labels)
}

pub fn write_cifar_file(path: &Path, data: &Dataset) -> Result<()> {
    if data.shape != (3, 32, 32) || data.classes > 10 {
        return Err(Error::ShapeMismatch("CIFAR layout needs 3x32x32 images and <= 10 classes".into()));
    }
    let mut out = Vec::with_capacity(data.len() * CIFAR_RECORD);
    for i in 0..data.len() {
        out.push(data.labels[i] as u8);
        out.extend_from_slice(data.raw_pixels(i));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Locate the batch directory: `dir` itself or `dir/cifar-10-batches-bin`.
fn cifar_dir(dir: &Path) -> Option<PathBuf> {
    [dir.to_path_buf(), dir.join("cifar-10-batches-bin")]
        .into_iter()
        .find(|d| d.join("data_batch_1.bin").is_file() && d.join("test_batch.bin").is_file())
}

/// Train (five batches, 50,000 images) and test (10,000 images) sets.
pub fn import_cifar10_binary(dir: &Path) -> Result<(Dataset, Dataset)> {
    let root = cifar_dir(dir).ok_or_else(|| {
        Error::DatasetMissing(format!(
            "no CIFAR-10 binary batches under {} (expected data_batch_1..5.bin and test_batch.bin)",
            dir.display()
        ))
    })?;
    let mut train = read_cifar_file(&root.join("data_batch_1.bin"))?;
    for k in 2..=5 {
        let part = read_cifar_file(&root.join(format!("data_batch_{k}.bin")))?;
        train.pixels.extend(part.pixels);
        train.labels.extend(part.labels);
    }
    let test = read_cifar_file(&root.join("test_batch.bin"))?;
    Ok((train, test))
}

pub fn cifar_available(dir: &Path) -> bool {
    cifar_dir(dir).is_some()
}

// ---- raw container ----

/// Container for other datasets (SVHN, Flowers, ...).
///
/// Little-endian header: magic `SLSRAW01`, then u32 channels, height, width, count,
/// classes, and one byte label width (1 or 2). The body holds `count` records, each a
/// label followed by `channels * height * width` planar u8 pixels.
pub mod raw {
    use super::*;

    pub const MAGIC: &[u8; 8] = b"SLSRAW01";
    const HEADER: usize = 8 + 5 * 4 + 1;

    pub fn write(path: &Path, data: &Dataset) -> Result<()> {
        let label_width: u8 = if data.classes > 256 { 2 } else { 1 };
        let mut out = Vec::with_capacity(HEADER + data.len() * (data.image_len() + 2));
        out.extend_from_slice(MAGIC);
        for v in [data.shape.0, data.shape.1, data.shape.2, data.len(), data.classes] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(label_width);
        for i in 0..data.len() {
            if label_width == 1 {
                out.push(data.labels[i] as u8);
            } else {
                out.extend_from_slice(&data.labels[i].to_le_bytes());
            }
            out.extend_from_slice(data.raw_pixels(i));
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Dataset> {
        let bytes = fs::read(path)?;
        if bytes.len() < HEADER || &bytes[..8] != MAGIC {
            return Err(Error::BadContainer(format!("{}: missing SLSRAW01 header", path.display())));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
        let (c, h, w, count, classes) = (u32_at(8), u32_at(12), u32_at(16), u32_at(20), u32_at(24));
        let label_width = bytes[28] as usize;
        if label_width != 1 && label_width != 2 {
            return Err(Error::BadContainer(format!("label width {label_width}")));
        }
        let record = label_width + c * h * w;
        let body = &bytes[HEADER..];
        if body.len() != record * count {
            return Err(Error::TruncatedRecord {
                path: path.to_path_buf(),
                len: body.len(),
                record,
            });
        }
        let mut pixels = Vec::with_capacity(count * c * h * w);
        let mut labels = Vec::with_capacity(count);
        for rec in body.chunks_exact(record) {
            labels.push(if label_width == 1 {
                rec[0] as u16
            } else {
                u16::from_le_bytes([rec[0], rec[1]])
            });
            pixels.extend_from_slice(&rec[label_width..]);
        }
        Dataset::new((c, h, w), classes, pixels, labels)
    }
}

// ---- synthetic shapes ----

/// Ten classes of geometric patterns with random colors, placement and clutter.
/// Class identity survives flips, color changes, grayscale and blur.
pub fn synthetic(count: usize, seed: u64, tag: &str) -> Dataset {
    let mut rng = derive_rng(seed, &format!("synthetic/{tag}"));
    let (h, w) = (32usize, 32usize);
    let mut pixels = Vec::with_capacity(count * 3 * h * w);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % 10;
        labels.push(class as u16);
        pixels.extend(synthetic_image(class, &mut rng));
    }
    // Shuffle so classes are not interleaved deterministically.
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng);
    let ds = Dataset::new((3, h, w), 10, pixels, labels).expect("synthetic shape");
    ds.subset(&order)
}

fn synthetic_image(class: usize, rng: &mut Rng) -> Vec<u8> {
    const N: usize = 32;
    let color = |rng: &mut Rng| -> [f64; 3] { [rng.gen(), rng.gen(), rng.gen()] };
    let bg = color(rng);
    let mut fg = color(rng);
    while (0..3).map(|k| (fg[k] - bg[k]).abs()).sum::<f64>() < 0.8 {
        fg = color(rng);
    }
    let cx = rng.gen_range(11.0..21.0);
    let cy = rng.gen_range(11.0..21.0);
    let r = rng.gen_range(6.0..10.0);
    let period = rng.gen_range(3.0..5.0);
    let noise = 0.08;
    // clutter: one small blob of a third color
    let clutter = color(rng);
    let (bx, by, br) = (rng.gen_range(0.0..32.0), rng.gen_range(0.0..32.0), rng.gen_range(1.5..3.5));

    let mut img = vec![0u8; 3 * N * N];
    for y in 0..N {
        for x in 0..N {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let inside = dx.abs() <= r && dy.abs() <= r;
            let d = (dx * dx + dy * dy).sqrt();
            let on = match class {
                0 => d <= r,
                1 => d <= r && d >= r * 0.6,
                2 => inside,
                3 => inside && (dx.abs() >= r * 0.6 || dy.abs() >= r * 0.6),
                4 => dy <= r && dy >= -r && dx.abs() <= (dy + r) * 0.5,
                5 => inside && ((dy + r) / period).floor() as i64 % 2 == 0,
                6 => inside && ((dx + r) / period).floor() as i64 % 2 == 0,
                7 => inside && (dx.abs() <= r * 0.25 || dy.abs() <= r * 0.25),
                8 => inside && ((dx - dy).abs() <= r * 0.3 || (dx + dy).abs() <= r * 0.3),
                _ => inside && (((dx + r) / period).floor() as i64 + ((dy + r) / period).floor() as i64) % 2 == 0,
            };
            let in_blob = ((x as f64 - bx).powi(2) + (y as f64 - by).powi(2)).sqrt() <= br;
            for k in 0..3 {
                let base = if on {
                    fg[k]
                } else if in_blob {
                    clutter[k]
                } else {
                    bg[k]
                };
                let v = base + noise * (rng.gen::<f64>() - 0.5) * 2.0;
                img[k * N * N + y * N + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    img
}

// ---- loading by config ----

pub fn data_root(explicit: Option<&Path>) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
}

/// Train and test sets for a dataset kind. Raw containers are read from
/// `train.slsraw` / `test.slsraw` under the data directory.
pub fn load(
    kind: DatasetKind,
    dir: Option<&Path>,
    synthetic_sizes: (usize, usize),
    tag: &str,
) -> Result<(Dataset, Dataset)> {
    match kind {
        DatasetKind::Synthetic => Ok((
            synthetic(synthetic_sizes.0, 0, &format!("{tag}/train")),
            synthetic(synthetic_sizes.1, 0, &format!("{tag}/test")),
        )),
        DatasetKind::Cifar10 => {
            let root = data_root(dir)
                .ok_or_else(|| Error::DatasetMissing(format!("set data_dir or {DATA_DIR_ENV} to the CIFAR-10 directory")))?;
            import_cifar10_binary(&root)
        }
        DatasetKind::Raw => {
            let root = data_root(dir)
                .ok_or_else(|| Error::DatasetMissing(format!("set data_dir or {DATA_DIR_ENV} for raw containers")))?;
            Ok((raw::read(&root.join("train.slsraw"))?, raw::read(&root.join("test.slsraw"))?))
        }
    }
}

// ---- splits ----

/// Index lists: `unlabeled`, `labeled` and `val` into the training set, `test` into the test set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub unlabeled: Vec<usize>,
    pub labeled: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Held out of every other split (source data for transfer stand-in weights).
    pub reserved: Vec<usize>,
}

impl SplitSpec {
    pub fn val_count(&self) -> usize {
        (self.val_fraction * self.labeled as f64).ceil() as usize
    }
}

/// Draw the unlabeled, labeled and validation splits from `train` after holding
/// back `reserve` samples, and pick up to
/// `test_limit` test images (0 keeps all, in order).
pub fn make_splits(
    train: &Dataset,
    test_len: usize,
    spec: &SplitSpec,
    reserve: usize,
    test_limit: usize,
    rng: &mut Rng,
) -> Result<Splits> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    if spec.unlabeled + reserve > order.len() {
        return Err(Error::InfeasibleSplit(format!(
            "{} unlabeled and {reserve} reserved samples requested, {} available",
            spec.unlabeled,
            order.len()
        )));
    }
    let reserved = order.split_off(order.len() - reserve);
    // D_r is drawn first so it does not depend on the labeled-set size.
    let unlabeled = order[..spec.unlabeled].to_vec();
    let pool = if spec.allow_overlap { &order[..] } else { &order[spec.unlabeled..] };
    let eligible = |i: &usize| !spec.excluded_classes.contains(&train.label(*i));
    let allowed_classes: BTreeSet<usize> = (0..train.classes).filter(|c| !spec.excluded_classes.contains(c)).collect();
    if allowed_classes.is_empty() {
        return Err(Error::InfeasibleSplit("every class is excluded".into()));
    }

    let labeled: Vec<usize> = if spec.per_class_uniform {
        let k = allowed_classes.len();
        if spec.labeled % k != 0 {
            return Err(Error::InfeasibleSplit(format!(
                "{} labels cannot be split evenly over {k} classes",
                spec.labeled
            )));
        }
        let quota = spec.labeled / k;
        let mut taken: BTreeMap<usize, usize> = BTreeMap::new();
        let mut out = vec![];
        for &i in pool.iter().filter(|i| eligible(i)) {
            let c = taken.entry(train.label(i)).or_insert(0);
            if *c < quota {
                *c += 1;
                out.push(i);
            }
        }
        if out.len() < spec.labeled {
            return Err(Error::InfeasibleSplit(format!("fewer than {quota} samples in some class")));
        }
        out
    } else {
        let out: Vec<usize> = pool.iter().copied().filter(eligible).take(spec.labeled).collect();
        if out.len() < spec.labeled {
            return Err(Error::InfeasibleSplit(format!(
                "{} labeled samples requested, {} eligible",
                spec.labeled,
                out.len()
            )));
        }
        out
    };
    let used: HashSet<usize> = labeled.iter().copied().collect();
    let val: Vec<usize> = pool
        .iter()
        .copied()
        .filter(|i| eligible(i) && !used.contains(i))
        .take(spec.val_count())
        .collect();
    if val.len() < spec.val_count() {
        return Err(Error::InfeasibleSplit("not enough samples left for validation".into()));
    }
    let test_n = if test_limit == 0 { test_len } else { test_limit.min(test_len) };
    Ok(Splits {
        unlabeled,
        labeled,
        val,
        test: (0..test_n).collect(),
        reserved,
    })
}

/// Shuffled full batches for one epoch; the remainder is dropped.
pub fn minibatches(split: &[usize], batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order = split.to_vec();
    order.shuffle(rng);
    order.chunks_exact(batch_size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::derive_rng;

    fn tiny_cifar(labels: &[u8]) -> Vec<u8> {
        let mut out = vec![];
        for &l in labels {
            out.push(l);
            out.extend((0..3072).map(|i| (i % 251) as u8));
        }
        out
    }

    #[test]
    fn cifar_record_parsing() {
        let mut bytes = tiny_cifar(&[7, 3]);
        bytes[1] = 255;
        let ds = parse_cifar_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(ds.len(), 2);
        let s = ds.sample(0, true);
        assert_eq!(s.label, Some(7));
        assert_eq!(s.pixels[0], 1.0);
        assert!(matches!(
            parse_cifar_bytes(&bytes[..100], Path::new("x")),
            Err(Error::TruncatedRecord { .. })
        ));
        let bad = tiny_cifar(&[10]);
        assert!(matches!(parse_cifar_bytes(&bad, Path::new("x")), Err(Error::UnknownLabel { label: 10, .. })));
    }

    #[test]
    fn cifar_directory_of_five_batches() {
        let dir = tempfile::tempdir().unwrap();
        for k in 1..=5 {
            fs::write(dir.path().join(format!("data_batch_{k}.bin")), tiny_cifar(&[1, 2, 3])).unwrap();
        }
        fs::write(dir.path().join("test_batch.bin"), tiny_cifar(&[4])).unwrap();
        let (train, test) = import_cifar10_binary(dir.path()).unwrap();
        assert_eq!((train.len(), test.len()), (15, 1));
    }

    #[test]
    fn raw_container_roundtrip() {
        let ds = synthetic(30, 1, "raw");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.slsraw");
        raw::write(&p, &ds).unwrap();
        assert_eq!(raw::read(&p).unwrap(), ds);
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, bytes).unwrap();
        assert!(matches!(raw::read(&p), Err(Error::TruncatedRecord { .. })));
    }

    fn spec(m1: usize, m2: usize) -> SplitSpec {
        SplitSpec {
            unlabeled: m1,
            labeled: m2,
            val_fraction: 0.1,
            ..SplitSpec::default()
        }
    }

    #[test]
    fn uniform_per_class_and_exclusions() {
        let ds = synthetic(2000, 0, "split");
        let mut s = spec(1000, 500);
        s.per_class_uniform = true;
        let sp = make_splits(&ds, 0, &s, 0, 0, &mut derive_rng(0, "t")).unwrap();
        let counts = ds.class_counts(&sp.labeled);
        assert_eq!(counts.len(), 10);
        assert!(counts.values().all(|&c| c == 50));

        let mut s = spec(1000, 400);
        s.excluded_classes = [0, 1].into_iter().collect();
        let sp = make_splits(&ds, 0, &s, 0, 0, &mut derive_rng(0, "t")).unwrap();
        assert!(sp.labeled.iter().all(|&i| ds.label(i) > 1));
        assert!(sp.val.iter().all(|&i| ds.label(i) > 1));

        s.per_class_uniform = true;
        s.labeled = 500;
        assert!(matches!(
            make_splits(&ds, 0, &s, 0, 0, &mut derive_rng(0, "t")),
            Err(Error::InfeasibleSplit(_))
        ));
    }

    #[test]
    fn splits_are_disjoint_and_deterministic() {
        let ds = synthetic(3000, 0, "split");
        let s = spec(2000, 500);
        let a = make_splits(&ds, 100, &s, 0, 50, &mut derive_rng(5, "t")).unwrap();
        let b = make_splits(&ds, 100, &s, 0, 50, &mut derive_rng(5, "t")).unwrap();
        assert_eq!(a, b);
        let sets: Vec<HashSet<usize>> = [&a.unlabeled, &a.labeled, &a.val]
            .iter()
            .map(|v| v.iter().copied().collect())
            .collect();
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(sets[i].is_disjoint(&sets[j]));
            }
        }
        assert_eq!(a.test.len(), 50);
        let r = make_splits(&ds, 100, &s, 300, 50, &mut derive_rng(5, "t")).unwrap();
        assert_eq!(r.reserved.len(), 300);
        let reserved: HashSet<usize> = r.reserved.iter().copied().collect();
        for part in [&r.unlabeled, &r.labeled, &r.val] {
            assert!(part.iter().all(|i| !reserved.contains(i)));
        }
        assert!(matches!(
            make_splits(&ds, 0, &spec(2900, 500), 0, 0, &mut derive_rng(5, "t")),
            Err(Error::InfeasibleSplit(_))
        ));
    }

    #[test]
    fn minibatch_counts_and_order() {
        let idx: Vec<usize> = (0..1000).collect();
        let b = minibatches(&idx, 128, &mut derive_rng(0, "b"));
        assert_eq!(b.len(), 7);
        assert!(b.iter().all(|x| x.len() == 128));
        let all = minibatches(&idx, 1000, &mut derive_rng(0, "b"));
        assert_eq!(all.len(), 1);
        let mut sorted = all[0].clone();
        sorted.sort_unstable();
        assert_eq!(sorted, idx);
        assert_eq!(minibatches(&idx, 128, &mut derive_rng(0, "b")), b);
    }

    #[test]
    fn synthetic_is_balanced_and_reproducible() {
        let a = synthetic(200, 3, "x");
        assert_eq!(a, synthetic(200, 3, "x"));
        let counts = a.class_counts(&(0..200).collect::<Vec<_>>());
        assert!(counts.values().all(|&c| c == 20));
    }
}
