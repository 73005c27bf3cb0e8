//! Labeled observation sets: manifest parsing, image decoding to normalized
//! grayscale and deterministic stratified splits.

use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default side length images are resampled to before any cell statistics.
pub const DEFAULT_CANONICAL_SIZE: usize = 512;

/// Row-major normalized intensities in `[0, 1]`, indexed `[[row, col]]`.
pub type Pixels = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Anomalous,
    NonAnomalous,
}

impl Label {
    pub fn is_anomalous(self) -> bool {
        self == Label::Anomalous
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Anomalous => "anomalous",
            Label::NonAnomalous => "non_anomalous",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "anomalous" | "1" => Ok(Label::Anomalous),
            "non_anomalous" | "0" => Ok(Label::NonAnomalous),
            _ => Err(()),
        }
    }
}

/// A decoded observation with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub pixels: Pixels,
    pub label: Label,
}

impl LabeledImage {
    pub fn new(id: impl Into<String>, pixels: Pixels, label: Label) -> Self {
        Self {
            id: id.into(),
            pixels,
            label,
        }
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub label: Label,
}

impl ManifestRecord {
    /// File stem of the image path, used as the observation id.
    pub fn id(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.path.to_string_lossy().into_owned())
    }
}

/// Reads a headerless two-column `path,label` CSV.
///
/// Relative image paths are resolved against the manifest's directory.
/// Records are returned in file order; no image is opened.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record.position().map_or(out.len() + 1, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                row,
                reason: format!("expected 2 columns, found {}", record.len()),
            });
        }
        if record[0].is_empty() {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                row,
                reason: "empty image path".into(),
            });
        }
        let label = record[1].parse().map_err(|()| Error::UnknownLabel {
            path: path.to_path_buf(),
            row,
            token: record[1].to_string(),
        })?;
        out.push(ManifestRecord {
            path: base.join(&record[0]),
            label,
        });
    }
    Ok(out)
}

/// Writes records as a manifest, storing paths relative to the manifest's
/// directory when possible.
pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        let p = r.path.strip_prefix(base).unwrap_or(&r.path);
        writeln!(file, "{},{}", p.display(), r.label).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Decodes a PNG or JPEG, converts to luma, area-resamples to
/// `canonical_size × canonical_size` and scales bytes into `[0, 1]`.
pub fn decode_image(path: &Path, canonical_size: usize) -> Result<Pixels> {
    if canonical_size == 0 {
        return Err(Error::invalid("canonical size must be positive"));
    }
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage);
    }
    let raw = Array2::from_shape_vec((h as usize, w as usize), gray.into_raw())
        .expect("luma buffer matches its dimensions");
    let resized = area_resample(&raw.mapv(f64::from), canonical_size, canonical_size)?;
    Ok(resized.mapv(|v| (v / 255.0).clamp(0.0, 1.0)))
}

/// Box-filter resampling: each output pixel is the overlap-weighted mean of
/// the source pixels its footprint covers.
pub fn area_resample(src: &Array2<f64>, out_h: usize, out_w: usize) -> Result<Array2<f64>> {
    let (h, w) = src.dim();
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::EmptyImage);
    }
    if (h, w) == (out_h, out_w) {
        return Ok(src.clone());
    }
    let rows = axis_weights(h, out_h);
    let cols = axis_weights(w, out_w);
    // Separable: resample columns first, then rows.
    let mut tmp = Array2::<f64>::zeros((h, out_w));
    for r in 0..h {
        for (oc, taps) in cols.iter().enumerate() {
            tmp[[r, oc]] = taps.iter().map(|&(c, wt)| src[[r, c]] * wt).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((out_h, out_w));
    for (or, taps) in rows.iter().enumerate() {
        for oc in 0..out_w {
            out[[or, oc]] = taps.iter().map(|&(r, wt)| tmp[[r, oc]] * wt).sum();
        }
    }
    Ok(out)
}

/// Per output index, the (source index, weight) taps; weights sum to one.
fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let start = o as f64 * scale;
            let end = start + scale;
            let first = start.floor() as usize;
            let last = (end.ceil() as usize).min(src);
            (first..last)
                .filter_map(|i| {
                    let overlap = end.min(i as f64 + 1.0) - start.max(i as f64);
                    (overlap > 0.0).then_some((i, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Decodes every manifest record in parallel; output order follows the manifest.
pub fn load_images(records: &[ManifestRecord], canonical_size: usize) -> Result<Vec<LabeledImage>> {
    records
        .par_iter()
        .map(|r| {
            decode_image(&r.path, canonical_size).map(|px| LabeledImage::new(r.id(), px, r.label))
        })
        .collect()
}

/// Split membership as indices into the input list, each list ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub seed: u64,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// JSON form of a split: ids per part plus the seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub seed: u64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn select<'a, T>(indices: &[usize], items: &'a [T]) -> Vec<&'a T> {
        indices.iter().map(|&i| &items[i]).collect()
    }

    pub fn cloned<T: Clone>(indices: &[usize], items: &[T]) -> Vec<T> {
        indices.iter().map(|&i| items[i].clone()).collect()
    }

    pub fn to_record(&self, ids: &[String]) -> SplitRecord {
        let names = |ix: &[usize]| ix.iter().map(|&i| ids[i].clone()).collect();
        SplitRecord {
            seed: self.seed,
            train: names(&self.train),
            validation: names(&self.validation),
            test: names(&self.test),
        }
    }
}

/// Shuffles each class with `seed` and assigns contiguous runs to the
/// validation and test parts (`max(1, round(ratio · count))` each); the
/// remainder goes to train.
pub fn stratified_split_labels(
    labels: &[Label],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    let (r_train, r_val, r_test) = ratios;
    if [r_train, r_val, r_test].iter().any(|&r| !(r > 0.0)) {
        return Err(Error::invalid("split ratios must be positive"));
    }
    if ((r_train + r_val + r_test) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("split ratios must sum to 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit {
        seed,
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for class in [Label::Anomalous, Label::NonAnomalous] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let count = members.len();
        if count < 3 {
            return Err(Error::ClassTooSmall {
                label: class.to_string(),
                count,
            });
        }
        members.shuffle(&mut rng);
        let take = |r: f64| ((r * count as f64).round() as usize).max(1);
        let (n_val, n_test) = (take(r_val), take(r_test));
        if n_val + n_test >= count {
            return Err(Error::invalid(format!(
                "class {class} with {count} members leaves no training images"
            )));
        }
        split.validation.extend_from_slice(&members[..n_val]);
        split.test.extend_from_slice(&members[n_val..n_val + n_test]);
        split.train.extend_from_slice(&members[n_val + n_test..]);
    }
    split.train.sort_unstable();
    split.validation.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

pub fn stratified_split(
    images: &[LabeledImage],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    let labels: Vec<Label> = images.iter().map(|i| i.label).collect();
    stratified_split_labels(&labels, ratios, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb, RgbImage};
    use proptest::prelude::*;

    fn labels(anom: usize, normal: usize) -> Vec<Label> {
        let mut v = vec![Label::Anomalous; anom];
        v.extend(std::iter::repeat_n(Label::NonAnomalous, normal));
        v
    }

    #[test]
    fn manifest_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "img/a.png,anomalous\r\nimg/b.png,0\nimg/d.png, NON_ANOMALOUS\nimg/e.png,1\n").unwrap();
        let recs = load_manifest(&path).unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[0].path, dir.path().join("img/a.png"));
        assert_eq!(recs[0].label, Label::Anomalous);
        assert_eq!(recs[1].label, Label::NonAnomalous);
        assert_eq!(recs[2].label, Label::NonAnomalous);
        assert_eq!(recs[3].label, Label::Anomalous);
        assert_eq!(recs[0].id(), "a");
    }

    #[test]
    fn manifest_unknown_label_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "img/a.png,anomalous\nimg/b.png,0\nimg/c.png,maybe\n").unwrap();
        match load_manifest(&path) {
            Err(Error::UnknownLabel { row, token, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(token, "maybe");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_manifest(&dir.path().join("nope.csv")), Err(Error::Io { .. })));
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "a.png,0\nb.png\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::MalformedRow { row: 2, .. })));
    }

    #[test]
    fn manifest_write_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        let recs = vec![
            ManifestRecord { path: dir.path().join("x.png"), label: Label::Anomalous },
            ManifestRecord { path: dir.path().join("sub/y.png"), label: Label::NonAnomalous },
        ];
        write_manifest(&path, &recs).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "x.png,anomalous\nsub/y.png,non_anomalous\n");
        assert_eq!(load_manifest(&path).unwrap(), recs);
    }

    #[test]
    fn decode_extremes_and_checkerboard() {
        let dir = tempfile::tempdir().unwrap();
        let white = dir.path().join("w.png");
        GrayImage::from_pixel(8, 8, Luma([255])).save(&white).unwrap();
        assert!(decode_image(&white, 4).unwrap().iter().all(|&v| v == 1.0));

        let black = dir.path().join("b.jpg");
        RgbImage::from_pixel(8, 8, Rgb([0, 0, 0])).save(&black).unwrap();
        assert!(decode_image(&black, 4).unwrap().iter().all(|&v| v == 0.0));

        let checker = dir.path().join("c.png");
        GrayImage::from_fn(4, 4, |x, y| Luma([if (x + y) % 2 == 0 { 0 } else { 255 }]))
            .save(&checker)
            .unwrap();
        let px = decode_image(&checker, 2).unwrap();
        assert_eq!(px.dim(), (2, 2));
        assert!(px.iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn decode_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.png");
        std::fs::write(&bad, b"not an image").unwrap();
        assert!(matches!(decode_image(&bad, 4), Err(Error::Decode { .. })));
        assert!(decode_image(&bad, 0).is_err());
    }

    #[test]
    fn area_resample_non_integer_ratio() {
        // 3 -> 2: output 0 covers source [0, 1.5), output 1 covers [1.5, 3).
        let src = Array2::from_shape_vec((1, 3), vec![0.0, 3.0, 6.0]).unwrap();
        let out = area_resample(&src, 1, 2).unwrap();
        assert!((out[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((out[[0, 1]] - 5.0).abs() < 1e-12);
        // Upsampling replicates.
        let up = area_resample(&src, 2, 6).unwrap();
        assert_eq!(up.row(1).to_vec(), vec![0.0, 0.0, 3.0, 3.0, 6.0, 6.0]);
    }

    #[test]
    fn split_default_sizes() {
        let s = stratified_split_labels(&labels(1000, 1000), (0.7, 0.1, 0.2), 7).unwrap();
        let count = |ix: &[usize], anom: bool| ix.iter().filter(|&&i| (i < 1000) == anom).count();
        assert_eq!((count(&s.train, true), count(&s.train, false)), (700, 700));
        assert_eq!((count(&s.validation, true), count(&s.validation, false)), (100, 100));
        assert_eq!((count(&s.test, true), count(&s.test, false)), (200, 200));
    }

    #[test]
    fn split_deterministic() {
        let l = labels(10, 10);
        assert_eq!(
            stratified_split_labels(&l, (0.7, 0.1, 0.2), 42).unwrap(),
            stratified_split_labels(&l, (0.7, 0.1, 0.2), 42).unwrap()
        );
        assert_ne!(
            stratified_split_labels(&l, (0.7, 0.1, 0.2), 42).unwrap(),
            stratified_split_labels(&l, (0.7, 0.1, 0.2), 43).unwrap()
        );
    }

    #[test]
    fn split_minimum_classes() {
        let s = stratified_split_labels(&labels(3, 3), (0.7, 0.1, 0.2), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (2, 2, 2));
        assert!(matches!(
            stratified_split_labels(&labels(2, 5), (0.7, 0.1, 0.2), 1),
            Err(Error::ClassTooSmall { count: 2, .. })
        ));
        assert!(stratified_split_labels(&labels(5, 5), (0.7, 0.1, 0.3), 1).is_err());
        assert!(stratified_split_labels(&labels(5, 5), (1.0, 0.0, 0.0), 1).is_err());
    }

    #[test]
    fn split_record_lists_ids() {
        let l = labels(3, 3);
        let ids: Vec<String> = (0..6).map(|i| format!("img{i}")).collect();
        let rec = stratified_split_labels(&l, (0.7, 0.1, 0.2), 3).unwrap().to_record(&ids);
        assert_eq!(rec.seed, 3);
        let json = serde_json::to_string(&rec).unwrap();
        assert_eq!(serde_json::from_str::<SplitRecord>(&json).unwrap(), rec);
    }

    proptest! {
        #[test]
        fn split_is_a_partition(anom in 10usize..80, normal in 10usize..80, seed: u64) {
            let l = labels(anom, normal);
            let s = stratified_split_labels(&l, (0.7, 0.1, 0.2), seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..anom + normal).collect::<Vec<_>>());
            for (class_n, is_anom) in [(anom, true), (normal, false)] {
                for (part, r) in [(&s.train, 0.7), (&s.validation, 0.1), (&s.test, 0.2)] {
                    let got = part.iter().filter(|&&i| (i < anom) == is_anom).count() as f64;
                    prop_assert!((got - r * class_n as f64).abs() <= 1.0 + 1e-9);
                }
            }
        }
    }
}
