//! Image decoding (PGM, PNG), bilinear resizing, dataset manifests and
//! train/test splits, checkpoint persistence, and a synthetic corpus.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::rng::{shuffle, Stream};
use crate::scalar::Scalar;
use crate::tensor::Image;

pub mod checkpoint;
pub mod pgm;
pub mod png_io;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, FORMAT_VERSION};
pub use synth::{synth_corpus, synth_image};

const SALT_DATASET: u64 = 0x64617461;

/// How many images each dataset contributes to training in per-dataset mode.
pub const TRAIN_PER_DATASET: usize = 300;
/// Test set size in combined mode.
pub const COMBINED_TEST: usize = 100;
/// Training set cap in combined mode, reachable only with a large corpus.
pub const COMBINED_TRAIN_CAP: usize = 721;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unrecognized file magic: {detail}")]
    BadMagic { detail: String },
    #[error("unsupported format: {detail}")]
    UnsupportedFormat { detail: String },
    #[error("truncated input: {detail}")]
    Truncated { detail: String },
    #[error("malformed input: {detail}")]
    Malformed { detail: String },
    #[error("checkpoint checksum does not match its contents")]
    ChecksumMismatch,
    #[error("checkpoint format version {found}, this build reads version {supported}")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("manifest line {line}: {reason}")]
    BadManifest { line: usize, reason: String },
    #[error("{what} needs {required} images, only {available} available")]
    InsufficientImages {
        what: String,
        required: usize,
        available: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DatasetTag {
    Mmm,
    Dx,
    Other,
}

impl DatasetTag {
    pub const ALL: [DatasetTag; 3] = [DatasetTag::Mmm, DatasetTag::Dx, DatasetTag::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetTag::Mmm => "MMM",
            DatasetTag::Dx => "DX",
            DatasetTag::Other => "OTHER",
        }
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "MMM" => Ok(DatasetTag::Mmm),
            "DX" => Ok(DatasetTag::Dx),
            "OTHER" => Ok(DatasetTag::Other),
            other => Err(format!("unknown dataset tag {other:?}, expected MMM, DX or OTHER")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub tag: DatasetTag,
}

/// Plain-text listing of corpus images, one `path<TAB>tag` per line.
/// Blank lines and lines starting with `#` are skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices_with_tag(&self, tag: DatasetTag) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.tag == tag)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut entries: Vec<ManifestEntry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (path_part, tag_part) = raw.split_once('\t').ok_or_else(|| {
                DataError::BadManifest {
                    line,
                    reason: "expected `path<TAB>tag`".into(),
                }
            })?;
            let path = PathBuf::from(path_part.trim());
            if path.as_os_str().is_empty() {
                return Err(DataError::BadManifest {
                    line,
                    reason: "empty path".into(),
                });
            }
            let tag = DatasetTag::from_str(tag_part.trim())
                .map_err(|reason| DataError::BadManifest { line, reason })?;
            if entries.iter().any(|e| e.path == path) {
                return Err(DataError::BadManifest {
                    line,
                    reason: format!("duplicate path {}", path.display()),
                });
            }
            entries.push(ManifestEntry { path, tag });
        }
        Ok(DatasetManifest { entries })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\n", e.path.display(), e.tag));
        }
        out
    }

    pub fn read_from(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn write_to(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    PerDataset,
    Combined,
}

impl FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-dataset" | "per_dataset" => Ok(SplitMode::PerDataset),
            "combined" => Ok(SplitMode::Combined),
            other => Err(format!("unknown split mode {other:?}, expected per-dataset or combined")),
        }
    }
}

/// One train/test partition over manifest indices. `label` names the
/// dataset tag in per-dataset mode and is "combined" otherwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitGroup {
    pub label: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub groups: Vec<SplitGroup>,
    pub note: String,
}

/// Partitions the manifest deterministically in the seed. Per-dataset mode
/// draws 300 training images from each tag present and leaves the remainder
/// for testing. Combined mode draws the 100 test images first from the
/// shuffled union and trains on at most 721 of the rest; with fewer images
/// the training set shrinks and the note records the actual count.
pub fn make_splits(
    manifest: &DatasetManifest,
    mode: SplitMode,
    seed: u64,
) -> Result<SplitPlan, DataError> {
    match mode {
        SplitMode::PerDataset => {
            let mut groups = Vec::new();
            for (gi, tag) in DatasetTag::ALL.into_iter().enumerate() {
                let mut indices = manifest.indices_with_tag(tag);
                if indices.is_empty() {
                    continue;
                }
                if indices.len() < TRAIN_PER_DATASET + 1 {
                    return Err(DataError::InsufficientImages {
                        what: format!("per-dataset split of {tag}"),
                        required: TRAIN_PER_DATASET + 1,
                        available: indices.len(),
                    });
                }
                let mut stream = Stream::keyed(seed, SALT_DATASET, gi as u64);
                shuffle(&mut indices, &mut stream);
                let mut train: Vec<usize> = indices[..TRAIN_PER_DATASET].to_vec();
                let mut test: Vec<usize> = indices[TRAIN_PER_DATASET..].to_vec();
                train.sort_unstable();
                test.sort_unstable();
                groups.push(SplitGroup {
                    label: tag.to_string(),
                    train,
                    test,
                });
            }
            if groups.is_empty() {
                return Err(DataError::InsufficientImages {
                    what: "per-dataset split".into(),
                    required: TRAIN_PER_DATASET + 1,
                    available: 0,
                });
            }
            let note = groups
                .iter()
                .map(|g| format!("{}: {} train / {} test", g.label, g.train.len(), g.test.len()))
                .collect::<Vec<_>>()
                .join("; ");
            Ok(SplitPlan { groups, note })
        }
        SplitMode::Combined => {
            let n = manifest.len();
            if n < COMBINED_TEST + 1 {
                return Err(DataError::InsufficientImages {
                    what: "combined split".into(),
                    required: COMBINED_TEST + 1,
                    available: n,
                });
            }
            let mut indices: Vec<usize> = (0..n).collect();
            let mut stream = Stream::keyed(seed, SALT_DATASET, u64::MAX);
            shuffle(&mut indices, &mut stream);
            let mut test: Vec<usize> = indices[..COMBINED_TEST].to_vec();
            let train_n = (n - COMBINED_TEST).min(COMBINED_TRAIN_CAP);
            let mut train: Vec<usize> = indices[COMBINED_TEST..COMBINED_TEST + train_n].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            let note = if train_n == COMBINED_TRAIN_CAP {
                format!(
                    "combined split: {COMBINED_TRAIN_CAP} train / {COMBINED_TEST} test (literal published counts; {} images unused)",
                    n - COMBINED_TRAIN_CAP - COMBINED_TEST
                )
            } else {
                format!(
                    "combined split: {train_n} train / {COMBINED_TEST} test (721/100 not satisfiable with {n} images; test drawn first)"
                )
            };
            Ok(SplitPlan {
                groups: vec![SplitGroup {
                    label: "combined".into(),
                    train,
                    test,
                }],
                note,
            })
        }
    }
}

const PNG_SIGNATURE: [u8; 8] = [137, 80, 78, 71, 13, 10, 26, 10];

/// Decodes a grayscale image by file magic: PGM P2/P5, or 8-bit PNG
/// (RGB collapsed by luminance weights). Values land in [0, 1].
pub fn load_grayscale(path: &Path) -> Result<Image<f32>, DataError> {
    let bytes = std::fs::read(path)?;
    decode_grayscale(&bytes)
}

/// Same dispatch as `load_grayscale`, working from bytes already in memory.
pub fn decode_grayscale(bytes: &[u8]) -> Result<Image<f32>, DataError> {
    if bytes.len() >= 8 && bytes[..8] == PNG_SIGNATURE {
        return png_io::parse(bytes);
    }
    match bytes.get(..2) {
        Some(b"P2") | Some(b"P5") => pgm::parse(bytes),
        Some(magic @ (b"P1" | b"P3" | b"P4" | b"P6" | b"P7")) => {
            Err(DataError::UnsupportedFormat {
                detail: format!(
                    "PNM type {} (only P2 and P5 grayscale maps are readable)",
                    String::from_utf8_lossy(magic)
                ),
            })
        }
        _ => Err(DataError::BadMagic {
            detail: format!(
                "first bytes {:02x?} match neither PNM nor PNG",
                &bytes[..bytes.len().min(8)]
            ),
        }),
    }
}

/// Bilinear resampling with half-pixel-centered coordinates: output pixel
/// (y, x) samples the input at ((y + 0.5) * inH / outH - 0.5, ...) clamped
/// to the image, so equal sizes round-trip exactly and values stay within
/// the input's range.
pub fn resize_bilinear<S: Scalar>(img: &Image<S>, out_h: usize, out_w: usize) -> Image<S> {
    assert!(img.height() >= 1 && img.width() >= 1, "resize of empty image");
    assert!(out_h >= 1 && out_w >= 1, "resize to empty image");
    let (in_h, in_w) = (img.height(), img.width());
    let scale_y = in_h as f64 / out_h as f64;
    let scale_x = in_w as f64 / out_w as f64;
    let sample_axis = |dst: usize, scale: f64, max: usize| -> (usize, usize, f64) {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (max - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(max - 1);
        (lo, hi, src - lo as f64)
    };
    Image::from_fn(out_h, out_w, |y, x| {
        let (y0, y1, fy) = sample_axis(y, scale_y, in_h);
        let (x0, x1, fx) = sample_axis(x, scale_x, in_w);
        let p00 = img.at(y0, x0).to_f64();
        let p01 = img.at(y0, x1).to_f64();
        let p10 = img.at(y1, x0).to_f64();
        let p11 = img.at(y1, x1).to_f64();
        let top = p00 + (p01 - p00) * fx;
        let bot = p10 + (p11 - p10) * fx;
        S::from_f64(top + (bot - top) * fy)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest_of(counts: &[(DatasetTag, usize)]) -> DatasetManifest {
        let mut entries = Vec::new();
        for &(tag, n) in counts {
            for i in 0..n {
                entries.push(ManifestEntry {
                    path: PathBuf::from(format!("{}/img_{i:04}.pgm", tag.as_str().to_lowercase())),
                    tag,
                });
            }
        }
        DatasetManifest::new(entries)
    }

    #[test]
    fn manifest_round_trips_through_text() {
        let m = manifest_of(&[(DatasetTag::Mmm, 2), (DatasetTag::Other, 1)]);
        let text = m.to_text();
        assert_eq!(text, "mmm/img_0000.pgm\tMMM\nmmm/img_0001.pgm\tMMM\nother/img_0000.pgm\tOTHER\n");
        assert_eq!(DatasetManifest::parse(&text).unwrap(), m);
    }

    #[test]
    fn manifest_skips_comments_and_blanks() {
        let m = DatasetManifest::parse("# corpus\n\na.pgm\tDX\n").unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.entries[0].tag, DatasetTag::Dx);
    }

    #[test]
    fn manifest_rejects_bad_lines() {
        let missing_tab = DatasetManifest::parse("a.pgm MMM\n").unwrap_err();
        assert!(matches!(missing_tab, DataError::BadManifest { line: 1, .. }));

        let bad_tag = DatasetManifest::parse("a.pgm\tmmm\n").unwrap_err();
        match bad_tag {
            DataError::BadManifest { line, reason } => {
                assert_eq!(line, 1);
                assert!(reason.contains("mmm"));
            }
            other => panic!("unexpected {other:?}"),
        }

        let dup = DatasetManifest::parse("a.pgm\tMMM\nb.pgm\tDX\na.pgm\tDX\n").unwrap_err();
        assert!(matches!(dup, DataError::BadManifest { line: 3, .. }));
    }

    #[test]
    fn per_dataset_split_matches_published_counts() {
        let m = manifest_of(&[(DatasetTag::Mmm, 322), (DatasetTag::Dx, 400)]);
        let plan = make_splits(&m, SplitMode::PerDataset, 7).unwrap();
        assert_eq!(plan.groups.len(), 2);
        let mmm = &plan.groups[0];
        let dx = &plan.groups[1];
        assert_eq!((mmm.label.as_str(), mmm.train.len(), mmm.test.len()), ("MMM", 300, 22));
        assert_eq!((dx.label.as_str(), dx.train.len(), dx.test.len()), ("DX", 300, 100));
        assert!(plan.note.contains("MMM: 300 train / 22 test"));

        for g in &plan.groups {
            let mut all: Vec<usize> = g.train.iter().chain(&g.test).copied().collect();
            all.sort_unstable();
            all.dedup();
            assert_eq!(all.len(), g.train.len() + g.test.len(), "overlap in {}", g.label);
        }
        let mut union: Vec<usize> = plan
            .groups
            .iter()
            .flat_map(|g| g.train.iter().chain(&g.test).copied())
            .collect();
        union.sort_unstable();
        assert_eq!(union, (0..722).collect::<Vec<_>>());
    }

    #[test]
    fn per_dataset_split_is_seeded() {
        let m = manifest_of(&[(DatasetTag::Mmm, 322)]);
        let a = make_splits(&m, SplitMode::PerDataset, 7).unwrap();
        let b = make_splits(&m, SplitMode::PerDataset, 7).unwrap();
        let c = make_splits(&m, SplitMode::PerDataset, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.groups[0].train, c.groups[0].train);
    }

    #[test]
    fn per_dataset_split_needs_more_than_the_training_quota() {
        let m = manifest_of(&[(DatasetTag::Mmm, 300)]);
        match make_splits(&m, SplitMode::PerDataset, 0).unwrap_err() {
            DataError::InsufficientImages {
                required,
                available,
                ..
            } => {
                assert_eq!((required, available), (301, 300));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn combined_split_draws_test_first_and_caps_training() {
        let m = manifest_of(&[(DatasetTag::Mmm, 322), (DatasetTag::Dx, 400)]);
        let plan = make_splits(&m, SplitMode::Combined, 3).unwrap();
        let g = &plan.groups[0];
        assert_eq!((g.train.len(), g.test.len()), (622, 100));
        assert!(plan.note.contains("622 train / 100 test"));
        let mut union: Vec<usize> = g.train.iter().chain(&g.test).copied().collect();
        union.sort_unstable();
        union.dedup();
        assert_eq!(union, (0..722).collect::<Vec<_>>());

        let big = manifest_of(&[(DatasetTag::Other, 900)]);
        let plan = make_splits(&big, SplitMode::Combined, 3).unwrap();
        let g = &plan.groups[0];
        assert_eq!((g.train.len(), g.test.len()), (721, 100));
        assert!(plan.note.contains("721 train / 100 test"));

        let small = manifest_of(&[(DatasetTag::Other, 100)]);
        assert!(matches!(
            make_splits(&small, SplitMode::Combined, 3).unwrap_err(),
            DataError::InsufficientImages {
                required: 101,
                available: 100,
                ..
            }
        ));
    }

    #[test]
    fn grayscale_dispatch_recognizes_magics() {
        let pgm = b"P5\n2 1\n255\n\x00\xff";
        let img = decode_grayscale(pgm).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);

        assert!(matches!(
            decode_grayscale(b"P7\nWIDTH 2\n"),
            Err(DataError::UnsupportedFormat { .. })
        ));
        assert!(matches!(
            decode_grayscale(b"GIF89a whatever"),
            Err(DataError::BadMagic { .. })
        ));
        assert!(matches!(decode_grayscale(b"P"), Err(DataError::BadMagic { .. })));
    }

    #[test]
    fn load_grayscale_reads_both_formats_from_disk() {
        let dir = std::env::temp_dir().join("denoise_io_dispatch");
        std::fs::create_dir_all(&dir).unwrap();
        let img = Image::from_vec(1, 3, vec![0.0f32, 0.5, 1.0]).unwrap();

        let pgm_path = dir.join("x.pgm");
        std::fs::write(&pgm_path, pgm::write_p5(&img)).unwrap();
        let back = load_grayscale(&pgm_path).unwrap();
        assert!((back.at(0, 1) - 0.5).abs() < 1.0 / 255.0);

        let png_path = dir.join("x.png");
        png_io::write_gray8(&img, &png_path).unwrap();
        let back = load_grayscale(&png_path).unwrap();
        assert!((back.at(0, 1) - 0.5).abs() < 1.0 / 255.0);
    }

    #[test]
    fn resize_same_size_is_identity() {
        let img = Image::from_vec(2, 2, vec![0.1f32, 0.9, 0.4, 0.6]).unwrap();
        let out = resize_bilinear(&img, 2, 2);
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn resize_checkerboard_averages_to_half() {
        let img: Image<f64> = Image::from_fn(4, 4, |y, x| if (y + x) % 2 == 0 { 1.0 } else { 0.0 });
        let out = resize_bilinear(&img, 2, 2);
        for &v in out.data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_preserves_constants_and_bounds() {
        let flat: Image<f32> = Image::filled(3, 5, 0.25);
        let out = resize_bilinear(&flat, 64, 64);
        assert!(out.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));

        let structured = synth_image(11, 0);
        let (lo, hi) = structured.min_max();
        for (h, w) in [(17, 31), (64, 64), (128, 80), (1, 1)] {
            let resized = resize_bilinear(&structured, h, w);
            let (rlo, rhi) = resized.min_max();
            assert!(rlo >= lo - 1e-6 && rhi <= hi + 1e-6);
        }
    }

    #[test]
    fn resize_upscale_keeps_corners() {
        let img = Image::from_vec(2, 2, vec![0.0f32, 1.0, 0.25, 0.75]).unwrap();
        let out = resize_bilinear(&img, 4, 4);
        assert_eq!(out.at(0, 0), 0.0);
        assert_eq!(out.at(0, 3), 1.0);
        assert_eq!(out.at(3, 0), 0.25);
        assert_eq!(out.at(3, 3), 0.75);
    }
}
